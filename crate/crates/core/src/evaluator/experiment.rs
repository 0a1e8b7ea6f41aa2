use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::corpus::CaseId;
use crate::inference::{
    check_budget, InferenceError, Outcome, ProviderRunner, Verdict, VerdictKey, VerdictRecord, VerdictStore,
};
use crate::promptkit::{
    build_conversation, rq5_followup, select_enrichment, CodeLevel, Conversation, Enrichment, EnrichmentCandidate,
    ExperimentCondition, PromptError, ReportLevel, Stage, TemplateSet,
};
use crate::simsearch::{embed_corpus, EmbedScope, Embedder, EmbeddingIndex, SimError};
use crate::store::DatasetCase;
use crate::taxonomy::RootCauseClass;

use super::{binary_metrics, weighted_f1, EvalError, Totals};

/// Metrics for one (model, condition, stage) cell. RQ3 cells are keyed by
/// the report-only condition and shared by both code levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_id: String,
    pub condition: ExperimentCondition,
    pub stage: Stage,
    pub f1: Option<f64>,
    pub weighted_f1: Option<f64>,
    pub mcc: Option<f64>,
    pub recall: Option<f64>,
    pub totals: Totals,
    /// Cases left out before any request, by reason.
    #[serde(default)]
    pub excluded: BTreeMap<String, u64>,
    #[serde(default)]
    pub multi_label_credit: u64,
    /// Set when a provider error aborted part of the cell.
    #[serde(default)]
    pub incomplete: Option<String>,
    /// Why a metric is absent although the cell completed.
    #[serde(default)]
    pub note: Option<String>,
}

impl MetricsReport {
    fn empty(model_id: &str, condition: ExperimentCondition, stage: Stage) -> Self {
        Self {
            model_id: model_id.to_string(),
            condition,
            stage,
            f1: None,
            weighted_f1: None,
            mcc: None,
            recall: None,
            totals: Totals::default(),
            excluded: BTreeMap::new(),
            multi_label_credit: 0,
            incomplete: None,
            note: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub run_id: String,
    /// Code-bearing conditions; RQ3 runs once per distinct (R, E) among them.
    pub conditions: Vec<ExperimentCondition>,
    /// Refuse to start when more requests than this would be sent.
    pub request_cap: Option<usize>,
    /// A case without comments has no full-report entry, so it is left out
    /// of `R_f` code-bearing cells. RQ3 still scores it on its description.
    pub skip_uncommented_full: bool,
    /// Conversations in flight per model; the runner's own cap also applies.
    pub parallelism: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            run_id: "run-1".into(),
            conditions: crate::promptkit::enumerate_conditions(true),
            request_cap: None,
            skip_uncommented_full: true,
            parallelism: 8,
        }
    }
}

pub struct ExperimentInputs<'a> {
    pub dataset: &'a [DatasetCase],
    pub templates: &'a TemplateSet,
    /// One index per enrichment level used by the conditions.
    pub enrichment_indexes: &'a BTreeMap<Enrichment, EmbeddingIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub reports: Vec<MetricsReport>,
    pub requests_sent: usize,
    pub reused: usize,
}

impl ExperimentOutcome {
    pub fn any_incomplete(&self) -> bool {
        self.reports.iter().any(|r| r.incomplete.is_some())
    }

    pub fn get(&self, model_id: &str, condition: &ExperimentCondition, stage: Stage) -> Option<&MetricsReport> {
        self.reports
            .iter()
            .find(|r| r.model_id == model_id && &r.condition == condition && r.stage == stage)
    }
}

/// Embeds the dataset once per enrichment scope: `E_p` over descriptions,
/// `E_f` over descriptions and comments.
pub async fn build_enrichment_indexes(
    dataset: &[DatasetCase],
    embedder: Arc<dyn Embedder>,
) -> Result<BTreeMap<Enrichment, EmbeddingIndex>, SimError> {
    let cases: Vec<_> = dataset.iter().map(|c| c.labeled.case.clone()).collect();
    let mut out = BTreeMap::new();
    for (e, scope) in [
        (Enrichment::Partial, EmbedScope::DescriptionOnly),
        (Enrichment::Full, EmbedScope::WithComments),
    ] {
        let (index, _) = embed_corpus(&cases, scope, embedder.clone(), 8).await?;
        out.insert(e, index);
    }
    Ok(out)
}

/// RQ4 conversation plus whether its RQ5 follow-up is scored.
struct CodeJob {
    conversation: Conversation,
    gold: Vec<RootCauseClass>,
}

struct CellPlan {
    condition: ExperimentCondition,
    jobs: Vec<CodeJob>,
    excluded: BTreeMap<String, u64>,
    rq5_excluded: BTreeMap<String, u64>,
}

struct Rq3Plan {
    condition: ExperimentCondition,
    jobs: Vec<(Conversation, bool)>,
    excluded: BTreeMap<String, u64>,
}

fn bump(map: &mut BTreeMap<String, u64>, reason: impl Into<String>) {
    *map.entry(reason.into()).or_default() += 1;
}

fn exclusion_reason(e: &PromptError) -> Option<&'static str> {
    match e {
        PromptError::EmptyDescription(_) => Some("empty_description"),
        PromptError::NoEligibleExample(_) => Some("no_enrichment_example"),
        PromptError::MissingCodeContext { .. } => Some("missing_code_context"),
        _ => None,
    }
}

struct Planner<'a> {
    inputs: &'a ExperimentInputs<'a>,
    options: &'a ExperimentOptions,
}

impl Planner<'_> {
    fn conversation(&self, case: &DatasetCase, condition: ExperimentCondition) -> Result<Conversation, PromptError> {
        let level = condition.code_level.context_level();
        let code = level.map(|l| case.context(l));
        let example = match condition.enrichment {
            Enrichment::None => None,
            e => {
                let index = self
                    .inputs
                    .enrichment_indexes
                    .get(&e)
                    .ok_or_else(|| PromptError::Template(format!("no embedding index for {}", e.short())))?;
                let candidates: Vec<EnrichmentCandidate<'_>> = self
                    .inputs
                    .dataset
                    .iter()
                    .map(|c| EnrichmentCandidate {
                        case: &c.labeled.case,
                        flaky: c.labeled.flaky,
                        code: level.map(|l| c.context(l)),
                    })
                    .collect();
                Some(select_enrichment(
                    case.id(),
                    e,
                    condition.code_level,
                    &candidates,
                    index,
                )?)
            }
        };
        build_conversation(
            &case.labeled.case,
            condition,
            code,
            example.as_ref(),
            self.inputs.templates,
        )
    }

    fn rq3(&self, condition: ExperimentCondition) -> Result<Rq3Plan, EvalError> {
        let mut plan = Rq3Plan {
            condition,
            jobs: Vec::new(),
            excluded: BTreeMap::new(),
        };
        for case in self.inputs.dataset {
            match self.conversation(case, condition) {
                Ok(conv) => plan.jobs.push((conv, case.labeled.flaky)),
                Err(e) => match exclusion_reason(&e) {
                    Some(reason) => bump(&mut plan.excluded, reason),
                    None => return Err(e.into()),
                },
            }
        }
        Ok(plan)
    }

    fn code_cell(&self, condition: ExperimentCondition) -> Result<CellPlan, EvalError> {
        let level = condition
            .code_level
            .context_level()
            .ok_or_else(|| EvalError::Config(format!("{condition} has no code level")))?;
        let mut plan = CellPlan {
            condition,
            jobs: Vec::new(),
            excluded: BTreeMap::new(),
            rq5_excluded: BTreeMap::new(),
        };
        for case in self.inputs.dataset.iter().filter(|c| c.labeled.flaky) {
            let ctx = case.context(level);
            if let Some(reason) = ctx.missing_reason {
                bump(&mut plan.excluded, format!("missing_context:{reason}"));
                continue;
            }
            if self.options.skip_uncommented_full
                && condition.report_level == ReportLevel::Full
                && case.labeled.case.comments.is_empty()
            {
                bump(&mut plan.excluded, "no_full_report");
                continue;
            }
            let conversation = match self.conversation(case, condition) {
                Ok(c) => c,
                Err(e) => match exclusion_reason(&e) {
                    Some(reason) => {
                        bump(&mut plan.excluded, reason);
                        continue;
                    }
                    None => return Err(e.into()),
                },
            };
            let gold: Vec<RootCauseClass> = case.labeled.root_causes.iter().filter_map(|r| r.class()).collect();
            if gold.is_empty() {
                bump(&mut plan.rq5_excluded, "unknown_root_cause");
            }
            plan.jobs.push(CodeJob { conversation, gold });
        }
        Ok(plan)
    }
}

struct Exec<'a> {
    runner: &'a ProviderRunner,
    store: &'a VerdictStore,
    run_id: &'a str,
    templates: &'a TemplateSet,
}

#[derive(Default)]
struct Tally {
    sent: usize,
    reused: usize,
}

impl Exec<'_> {
    fn key(&self, conv: &Conversation) -> VerdictKey {
        VerdictKey {
            case_id: conv.case_id.clone(),
            condition: conv.condition,
            model_id: self.runner.model_id().to_string(),
            run_id: self.run_id.to_string(),
            stage: conv.stage,
        }
    }

    fn is_stored(&self, conv: &Conversation) -> bool {
        self.store.get(&self.key(conv)).is_some()
    }

    /// Stored verdict when present, else one provider call persisted
    /// before it is returned. The bool is true when a request was sent.
    async fn verdict(&self, conv: &Conversation) -> Result<(Verdict, bool), InferenceError> {
        let key = self.key(conv);
        if let Some(rec) = self.store.get(&key) {
            return Ok((rec.verdict, false));
        }
        let verdict = self.runner.run_conversation(conv).await?;
        self.store.append(VerdictRecord::new(key, conv, verdict.clone()))?;
        Ok((verdict, true))
    }

    async fn rq3(&self, plan: &Rq3Plan, parallelism: usize, tally: &mut Tally) -> MetricsReport {
        let mut report = MetricsReport::empty(self.runner.model_id(), plan.condition, Stage::Rq3);
        report.excluded = plan.excluded.clone();
        let results: Vec<_> = stream::iter(plan.jobs.iter())
            .map(|(conv, gold)| async move { (conv.case_id.clone(), *gold, self.verdict(conv).await) })
            .buffer_unordered(parallelism.max(1))
            .collect()
            .await;
        let mut preds = BTreeMap::new();
        let mut gold = BTreeMap::new();
        for (id, g, res) in results {
            match res {
                Ok((v, sent)) => {
                    count(tally, sent);
                    preds.insert(id.clone(), v.outcome);
                    gold.insert(id, g);
                }
                Err(e) => {
                    report.incomplete.get_or_insert_with(|| format!("{id}: {e}"));
                }
            }
        }
        match binary_metrics(&preds, &gold) {
            Ok(m) => {
                report.totals = m.totals;
                if report.incomplete.is_none() {
                    report.f1 = Some(m.f1);
                    report.mcc = Some(m.mcc);
                    report.recall = Some(m.recall);
                }
            }
            Err(e) => report.note = Some(e.to_string()),
        }
        report
    }

    async fn code_cell(
        &self,
        plan: &CellPlan,
        parallelism: usize,
        tally: &mut Tally,
    ) -> (MetricsReport, MetricsReport) {
        let model = self.runner.model_id();
        let mut rq4 = MetricsReport::empty(model, plan.condition, Stage::Rq4);
        let mut rq5 = MetricsReport::empty(model, plan.condition, Stage::Rq5);
        rq4.excluded = plan.excluded.clone();
        rq5.excluded = plan.excluded.clone();
        for (k, v) in &plan.rq5_excluded {
            *rq5.excluded.entry(k.clone()).or_default() += v;
        }

        type ChainResult = (
            CaseId,
            Result<(Verdict, bool), InferenceError>,
            Option<Result<(Verdict, bool), InferenceError>>,
        );
        let results: Vec<ChainResult> = stream::iter(plan.jobs.iter())
            .map(|job| async move {
                let id = job.conversation.case_id.clone();
                let first = self.verdict(&job.conversation).await;
                let second = match (&first, job.gold.is_empty()) {
                    (Ok((v, _)), false) => {
                        Some(match rq5_followup(&job.conversation, &v.raw_response, self.templates) {
                            Ok(conv) => self.verdict(&conv).await,
                            Err(e) => Err(InferenceError::Store(e.to_string())),
                        })
                    }
                    _ => None,
                };
                (id, first, second)
            })
            .buffer_unordered(parallelism.max(1))
            .collect()
            .await;

        let gold_by_id: BTreeMap<&CaseId, &Vec<RootCauseClass>> =
            plan.jobs.iter().map(|j| (&j.conversation.case_id, &j.gold)).collect();
        let mut p4 = BTreeMap::new();
        let mut g4 = BTreeMap::new();
        let mut p5 = BTreeMap::new();
        let mut g5 = BTreeMap::new();
        for (id, first, second) in results {
            match first {
                Ok((v, sent)) => {
                    count(tally, sent);
                    p4.insert(id.clone(), v.outcome);
                    g4.insert(id.clone(), true);
                }
                Err(e) => {
                    rq4.incomplete.get_or_insert_with(|| format!("{id}: {e}"));
                    rq5.incomplete.get_or_insert_with(|| format!("{id}: rq4 turn failed"));
                    continue;
                }
            }
            match second {
                Some(Ok((v, sent))) => {
                    count(tally, sent);
                    p5.insert(id.clone(), v.outcome);
                    g5.insert(id.clone(), gold_by_id[&id].clone());
                }
                Some(Err(e)) => {
                    rq5.incomplete.get_or_insert_with(|| format!("{id}: {e}"));
                }
                None => {}
            }
        }

        match binary_metrics(&p4, &g4) {
            Ok(m) => {
                rq4.totals = m.totals;
                if rq4.incomplete.is_none() {
                    rq4.recall = Some(m.recall);
                }
            }
            Err(e) => rq4.note = Some(e.to_string()),
        }
        let mut attempted = Totals::default();
        for o in p5.values() {
            attempted.attempted += 1;
            if matches!(o, Outcome::RootCause(_)) {
                attempted.usable += 1;
            } else {
                attempted.unusable += 1;
            }
        }
        rq5.totals = attempted;
        match weighted_f1(&p5, &g5) {
            Ok(m) => {
                rq5.multi_label_credit = m.multi_label_credit;
                if rq5.incomplete.is_none() {
                    rq5.weighted_f1 = Some(m.weighted_f1);
                    rq5.mcc = Some(m.mcc);
                }
            }
            Err(e) => rq5.note = Some(e.to_string()),
        }
        (rq4, rq5)
    }
}

fn count(tally: &mut Tally, sent: bool) {
    if sent {
        tally.sent += 1;
    } else {
        tally.reused += 1;
    }
}

fn dedup(conditions: &[ExperimentCondition]) -> Vec<ExperimentCondition> {
    let mut seen = BTreeSet::new();
    conditions.iter().copied().filter(|c| seen.insert(c.key())).collect()
}

/// Runs every condition against every model, reusing verdicts already in
/// `store`. Output order: per model, RQ3 cells by (E, R), then RQ4 and RQ5
/// per condition in the given order.
pub async fn run_experiment(
    inputs: &ExperimentInputs<'_>,
    runners: &[ProviderRunner],
    store: &VerdictStore,
    options: &ExperimentOptions,
) -> Result<ExperimentOutcome, EvalError> {
    let conditions = dedup(&options.conditions);
    if let Some(c) = conditions.iter().find(|c| c.code_level == CodeLevel::None) {
        return Err(EvalError::Config(format!(
            "{c} is report-only; list code-bearing conditions"
        )));
    }
    for c in &conditions {
        if c.enrichment != Enrichment::None && !inputs.enrichment_indexes.contains_key(&c.enrichment) {
            return Err(EvalError::Config(format!(
                "no embedding index for {}",
                c.enrichment.short()
            )));
        }
    }
    let mut rq3_conditions = Vec::new();
    for c in &conditions {
        let r = c.report_only();
        if !rq3_conditions.contains(&r) {
            rq3_conditions.push(r);
        }
    }

    let planner = Planner { inputs, options };
    let rq3_plans = rq3_conditions
        .iter()
        .map(|c| planner.rq3(*c))
        .collect::<Result<Vec<_>, _>>()?;
    let cell_plans = conditions
        .iter()
        .map(|c| planner.code_cell(*c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut planned = 0;
    for runner in runners {
        let exec = Exec {
            runner,
            store,
            run_id: &options.run_id,
            templates: inputs.templates,
        };
        planned += rq3_plans
            .iter()
            .flat_map(|p| &p.jobs)
            .filter(|(c, _)| !exec.is_stored(c))
            .count();
        for plan in &cell_plans {
            for job in &plan.jobs {
                let stored = exec.is_stored(&job.conversation);
                planned += usize::from(!stored);
                if !job.gold.is_empty() {
                    // the follow-up can only be looked up once the first reply exists
                    let known = stored
                        && store
                            .get(&exec.key(&job.conversation))
                            .and_then(|r| {
                                rq5_followup(&job.conversation, &r.verdict.raw_response, inputs.templates).ok()
                            })
                            .is_some_and(|f| exec.is_stored(&f));
                    planned += usize::from(!known);
                }
            }
        }
    }
    check_budget(planned, options.request_cap)?;
    tracing::info!(
        planned,
        models = runners.len(),
        cells = cell_plans.len(),
        "starting experiment"
    );

    let mut tally = Tally::default();
    let mut reports = Vec::new();
    for runner in runners {
        let exec = Exec {
            runner,
            store,
            run_id: &options.run_id,
            templates: inputs.templates,
        };
        for plan in &rq3_plans {
            reports.push(exec.rq3(plan, options.parallelism, &mut tally).await);
        }
        for plan in &cell_plans {
            let (rq4, rq5) = exec.code_cell(plan, options.parallelism, &mut tally).await;
            reports.push(rq4);
            reports.push(rq5);
        }
        tracing::info!(model = runner.model_id(), "model finished");
    }
    Ok(ExperimentOutcome {
        reports,
        requests_sent: tally.sent,
        reused: tally.reused,
    })
}
