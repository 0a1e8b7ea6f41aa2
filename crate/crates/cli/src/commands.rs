use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use qflake_core::codectx::{build_code_context, ContextLevel, ContextOptions};
use qflake_core::corpus::{
    build_cases, ingest, read_snapshot, write_snapshot, CaseId, FetchConfig, HostingClient, Snapshot,
};
use qflake_core::evaluator::{
    build_enrichment_indexes, read_results_jsonl, render_repo_table, render_results_table, render_taxonomy, repo_stats,
    run_experiment, taxonomy_report, write_results_jsonl, ExperimentInputs, ExperimentOptions, ExperimentOutcome,
    PUBLISHED_REPO_TABLE,
};
use qflake_core::inference::{build_provider, ProviderConfig, ProviderKind, ProviderRunner, VerdictStore};
use qflake_core::promptkit::{enumerate_conditions, ExperimentCondition, TemplateSet};
use qflake_core::replica::{build_replica, DEFAULT_SEED};
use qflake_core::simsearch::{
    embed_corpus, sample_non_flaky, Aggregation, EmbeddingIndex, ExpansionState, NegativeOptions,
    DEFAULT_NEGATIVE_THRESHOLD,
};
use qflake_core::store::{
    export_flat, load_dataset, persist_dataset, summarize, validate_dataset, validate_layout, DatasetCase,
    ValidationOptions,
};
use tracing::info;

use crate::config::{parse_repo, RunConfig, DEFAULT_CONFIG_FILE};
use crate::labels::{attach, read_label_rows};
use crate::{triage, CliError};

#[derive(Debug, Parser)]
#[command(name = "qflake", version, about = "Mine, expand and classify flaky-test reports")]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = DEFAULT_CONFIG_FILE)]
    pub config: PathBuf,
    /// Repeat for more logging.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Table {
    Taxonomy,
    Repos,
    Results,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Partial,
    Full,
}

impl From<Level> for ContextLevel {
    fn from(l: Level) -> Self {
        match l {
            Level::Partial => ContextLevel::Partial,
            Level::Full => ContextLevel::Full,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine closed issues, pull requests and fix payloads into a snapshot.
    Ingest {
        /// `owner/name`; repeatable. Overrides `hosting.repositories`.
        #[arg(long = "repo")]
        repos: Vec<String>,
        #[arg(long)]
        base_url: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed the snapshot and rank candidates against the seed cases.
    Rank {
        /// File of case ids, one per line. Required on the first run.
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long)]
        queue_size: Option<usize>,
        /// Average over seeds instead of taking the maximum.
        #[arg(long)]
        mean: bool,
        /// Recompute embeddings even when a matching index exists.
        #[arg(long)]
        reembed: bool,
    },
    /// Serve the triage API over the expansion state.
    TriageServe {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Build code contexts for labeled cases and write the dataset.
    ExtractCode {
        /// Label file (JSON lines); writes the dataset.
        #[arg(long, conflicts_with = "case")]
        labels: Option<PathBuf>,
        /// Print the context of one case instead.
        #[arg(long)]
        case: Option<String>,
        #[arg(long, value_enum, default_value = "partial")]
        level: Level,
        #[arg(long)]
        char_budget: Option<usize>,
    },
    /// Sample non-flaky candidates far from every seed.
    SampleNegatives {
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long, default_value_t = 71)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_NEGATIVE_THRESHOLD)]
        threshold: f64,
        /// Include cases rejected during triage first.
        #[arg(long)]
        hard_negatives: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Query the configured models under every condition and score them.
    Experiment {
        /// Provider names from the config, or `mock`. Repeatable.
        #[arg(long = "provider", default_value = "mock")]
        providers: Vec<String>,
        /// `all`, `base` (no enrichment) or comma-separated condition keys.
        #[arg(long)]
        conditions: Option<String>,
        #[arg(long, default_value = "run-1")]
        run_id: String,
        #[arg(long)]
        request_cap: Option<usize>,
        #[arg(long)]
        parallelism: Option<usize>,
        /// Keep cases without comments in full-report cells.
        #[arg(long)]
        include_uncommented_full: bool,
    },
    /// Print a results table.
    Report {
        #[arg(long, value_enum)]
        table: Table,
        /// Compare the repository table against the published percentages.
        #[arg(long)]
        published: bool,
    },
    /// Check dataset labels and layout; exits 1 on violations.
    Validate {
        #[arg(long)]
        balanced: bool,
        #[arg(long, default_value_t = 2)]
        min_reviewers: usize,
    },
    /// Write a flat publication archive of the dataset.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the bundled synthetic replica (snapshot, dataset, repo totals, config).
    MakeReplica {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

pub async fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    if let Command::MakeReplica { out: dir, seed } = &cli.command {
        return make_replica(dir, *seed, out);
    }
    let config = RunConfig::load(&cli.config)?;
    match cli.command {
        Command::Ingest {
            repos,
            base_url,
            out: dir,
        } => cmd_ingest(&config, repos, base_url, dir, out).await,
        Command::Rank {
            seeds,
            queue_size,
            mean,
            reembed,
        } => cmd_rank(&config, seeds, queue_size, mean, reembed, out).await,
        Command::TriageServe { bind, ui_dir } => cmd_triage_serve(&config, bind, ui_dir, out).await,
        Command::ExtractCode {
            labels,
            case,
            level,
            char_budget,
        } => cmd_extract(&config, labels, case, level.into(), char_budget, out),
        Command::SampleNegatives {
            seeds,
            n,
            threshold,
            hard_negatives,
            seed,
            out: path,
        } => {
            let options = NegativeOptions {
                threshold,
                n,
                hard_negatives: Vec::new(),
                seed,
            };
            cmd_negatives(&config, seeds, options, hard_negatives, path, out).await
        }
        Command::Experiment {
            providers,
            conditions,
            run_id,
            request_cap,
            parallelism,
            include_uncommented_full,
        } => {
            let options = ExperimentOptions {
                run_id,
                conditions: parse_conditions(conditions.as_deref().unwrap_or(&config.conditions))?,
                request_cap: request_cap.or(config.request_cap),
                skip_uncommented_full: !include_uncommented_full,
                parallelism: parallelism.unwrap_or(config.parallelism),
            };
            cmd_experiment(&config, &providers, options, out).await
        }
        Command::Report { table, published } => cmd_report(&config, table, published, out),
        Command::Validate {
            balanced,
            min_reviewers,
        } => cmd_validate(
            &config,
            &ValidationOptions {
                min_reviewers_flaky: min_reviewers,
                require_balanced: balanced,
            },
            out,
        ),
        Command::Export { out: dir } => cmd_export(&config, &dir, out),
        Command::MakeReplica { .. } => unreachable!(),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Config(format!("writing output: {e}")))
}

pub fn parse_conditions(spec: &str) -> Result<Vec<ExperimentCondition>, CliError> {
    match spec.trim() {
        "all" => Ok(enumerate_conditions(true)),
        "base" => Ok(enumerate_conditions(false)),
        list => list
            .split(',')
            .map(|k| {
                k.trim()
                    .parse()
                    .map_err(|e| CliError::Config(format!("condition `{}`: {e}", k.trim())))
            })
            .collect(),
    }
}

fn read_seed_ids(path: &Path) -> Result<BTreeSet<CaseId>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse()
                .map_err(|_| CliError::Validation(format!("{}: bad case id `{l}`", path.display())))
        })
        .collect()
}

fn load_snapshot(config: &RunConfig) -> Result<Snapshot, CliError> {
    if !config.snapshot.exists() {
        return Err(CliError::Config(format!(
            "no snapshot at {}",
            config.snapshot.display()
        )));
    }
    Ok(read_snapshot(&config.snapshot)?)
}

fn load_data(config: &RunConfig) -> Result<Vec<DatasetCase>, CliError> {
    if !config.dataset.is_dir() {
        return Err(CliError::Config(format!("no dataset at {}", config.dataset.display())));
    }
    Ok(load_dataset(&config.dataset)?)
}

async fn cmd_ingest(
    config: &RunConfig,
    repos: Vec<String>,
    base_url: Option<String>,
    dir: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let repos = if repos.is_empty() {
        config.repositories()?
    } else {
        repos.iter().map(|r| parse_repo(r)).collect::<Result<_, _>>()?
    };
    if repos.is_empty() {
        return Err(CliError::Config("no repositories to ingest".into()));
    }
    let fetch = FetchConfig {
        base_url: base_url.unwrap_or_else(|| config.hosting.base_url.clone()),
        max_in_flight: config.hosting.max_in_flight,
        exclude_authors: config.hosting.exclude_authors.clone(),
        ..FetchConfig::default()
    }
    .with_token_from_env(&config.hosting.token_env);
    let client = HostingClient::new(fetch).map_err(|e| CliError::Config(e.to_string()))?;
    let snapshot = ingest(&client, &repos, chrono::Utc::now()).await?;
    let dir = dir.unwrap_or_else(|| config.snapshot.clone());
    write_snapshot(&snapshot, &dir).map_err(|e| CliError::Config(e.to_string()))?;
    emit(
        out,
        &format!(
            "{} artifacts, {} commits, {} payloads, {} fetch failures -> {}\n",
            snapshot.artifacts.len(),
            snapshot.commits.len(),
            snapshot.file_payloads.len(),
            snapshot.fetch_failures.len(),
            dir.display()
        ),
    )
}

/// The stored index when it matches the configured model and scope,
/// otherwise a fresh one (saved).
async fn corpus_index(config: &RunConfig, snapshot: &Snapshot, reembed: bool) -> Result<EmbeddingIndex, CliError> {
    let embedder = config.embedding.embedder()?;
    if !reembed && config.embeddings.exists() {
        let index = EmbeddingIndex::load(&config.embeddings).map_err(|e| CliError::io(&config.embeddings, e))?;
        if index.model_id == embedder.model_id() && index.scope == config.embedding.scope {
            return Ok(index);
        }
        info!("stored embeddings were built with another model or scope; recomputing");
    }
    let cases = build_cases(snapshot);
    let (index, skipped) = embed_corpus(&cases, config.embedding.scope, embedder, config.parallelism).await?;
    if !skipped.is_empty() {
        info!(count = skipped.len(), "cases without text were not embedded");
    }
    index
        .save(&config.embeddings)
        .map_err(|e| CliError::io(&config.embeddings, e))?;
    Ok(index)
}

async fn cmd_rank(
    config: &RunConfig,
    seeds: Option<PathBuf>,
    queue_size: Option<usize>,
    mean: bool,
    reembed: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let snapshot = load_snapshot(config)?;
    let index = corpus_index(config, &snapshot, reembed).await?;
    let mut state = if config.expansion_state.exists() {
        if seeds.is_some() {
            return Err(CliError::Config(format!(
                "{} already exists; remove it to start from new seeds",
                config.expansion_state.display()
            )));
        }
        ExpansionState::load(&config.expansion_state)?
    } else {
        let Some(path) = seeds else {
            return Err(CliError::Config("first ranking needs --seeds".into()));
        };
        let ids = read_seed_ids(&path)?;
        if let Some(missing) = ids.iter().find(|id| !index.vectors.contains_key(*id)) {
            return Err(CliError::Validation(format!("seed {missing} has no embedding")));
        }
        let aggregation = if mean { Aggregation::Mean } else { Aggregation::Max };
        ExpansionState::new(ids, queue_size.unwrap_or(config.triage.queue_size), aggregation)
    };
    if let Some(k) = queue_size {
        state.k = k;
    }
    let corpus: BTreeSet<CaseId> = index.vectors.keys().cloned().collect();
    state.refresh(&corpus, &index)?;
    state
        .save(&config.expansion_state)
        .map_err(|e| CliError::io(&config.expansion_state, e))?;
    let mut text = String::from("rank\tcase\tscore\tnearest_seed\n");
    for (i, c) in state.pending_queue.iter().enumerate() {
        text.push_str(&format!(
            "{}\t{}\t{:.4}\t{}\n",
            i + 1,
            c.case_id,
            c.score,
            c.nearest_seed_id
        ));
    }
    emit(out, &text)
}

async fn cmd_triage_serve(
    config: &RunConfig,
    bind: Option<String>,
    ui_dir: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let snapshot = load_snapshot(config)?;
    if !config.expansion_state.exists() {
        return Err(CliError::Config("no expansion state; run `rank --seeds` first".into()));
    }
    let state = ExpansionState::load(&config.expansion_state)?;
    let index = corpus_index(config, &snapshot, false).await?;
    let handle = triage::spawn(
        state,
        triage::TriageContext {
            index,
            snapshot: Arc::new(snapshot),
            state_path: Some(config.expansion_state.clone()),
            reviewer: config.triage.reviewer.clone(),
        },
    )?;
    let ui = ui_dir.or_else(|| config.triage.ui_dir.clone());
    let app = triage::router(handle, ui.as_deref());
    let bind = bind.unwrap_or_else(|| config.triage.bind.clone());
    let listener = tokio::net::TcpListener::bind(&bind)
        .await
        .map_err(|e| CliError::Config(format!("binding {bind}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| CliError::Config(e.to_string()))?;
    emit(out, &format!("triage service on http://{addr}\n"))?;
    out.flush().ok();
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Config(e.to_string()))
}

fn cmd_extract(
    config: &RunConfig,
    labels: Option<PathBuf>,
    case: Option<String>,
    level: ContextLevel,
    char_budget: Option<usize>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let snapshot = load_snapshot(config)?;
    let options = ContextOptions {
        char_budget: char_budget.unwrap_or(ContextOptions::default().char_budget),
    };
    if let Some(raw) = case {
        let id: CaseId = raw
            .parse()
            .map_err(|_| CliError::Config(format!("`{raw}` is not a case id")))?;
        let artifact = snapshot
            .artifact(&id)
            .ok_or_else(|| CliError::Validation(format!("{id} is not in the snapshot")))?;
        let ctx = build_code_context(artifact, level, &snapshot, &options);
        let json = serde_json::to_string_pretty(&ctx).expect("context serializes");
        return emit(out, &format!("{json}\n"));
    }
    let Some(path) = labels else {
        return Err(CliError::Config("extract-code needs --labels or --case".into()));
    };
    let labeled = attach(&read_label_rows(&path)?, &snapshot)?;
    let dataset: Vec<DatasetCase> = labeled
        .into_iter()
        .map(|l| DatasetCase {
            partial: build_code_context(&l.case, ContextLevel::Partial, &snapshot, &options),
            full: build_code_context(&l.case, ContextLevel::Full, &snapshot, &options),
            labeled: l,
        })
        .collect();
    persist_dataset(&dataset, &config.dataset, &ValidationOptions::default())?;
    let s = summarize(&dataset);
    emit(
        out,
        &format!(
            "{} cases ({} flaky); partial context {} / full context {} -> {}\n",
            s.total,
            s.flaky,
            s.partial_present,
            s.full_present,
            config.dataset.display()
        ),
    )
}

async fn cmd_negatives(
    config: &RunConfig,
    seeds: Option<PathBuf>,
    mut options: NegativeOptions,
    hard: bool,
    path: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let snapshot = load_snapshot(config)?;
    let index = corpus_index(config, &snapshot, false).await?;
    let state = if config.expansion_state.exists() {
        Some(ExpansionState::load(&config.expansion_state)?)
    } else {
        None
    };
    let seed_ids = match (&seeds, &state) {
        (Some(p), _) => read_seed_ids(p)?,
        (None, Some(s)) => s.anchors(),
        (None, None) => return Err(CliError::Config("no seeds: pass --seeds or run `rank` first".into())),
    };
    if hard {
        let Some(s) = &state else {
            return Err(CliError::Config("--hard-negatives needs an expansion state".into()));
        };
        options.hard_negatives = s.rejected_ids.iter().cloned().collect();
    }
    let corpus: BTreeSet<CaseId> = index.vectors.keys().cloned().collect();
    let picked = sample_non_flaky(&corpus, &seed_ids, &index, &options)?;
    let mut text = String::new();
    for c in &picked {
        text.push_str(&serde_json::to_string(c).expect("candidate serializes"));
        text.push('\n');
    }
    match path {
        Some(p) => {
            std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
            emit(out, &format!("{} candidates -> {}\n", picked.len(), p.display()))
        }
        None => emit(out, &text),
    }
}

fn runner_for(config: &RunConfig, name: &str) -> Result<ProviderRunner, CliError> {
    let provider = match config.provider(name) {
        Some(p) => p.clone(),
        None if name == "mock" => ProviderConfig {
            rate_limit_per_minute: 6_000_000,
            max_concurrent: 32,
            ..ProviderConfig::default()
        },
        None => return Err(CliError::Config(format!("provider `{name}` is not configured"))),
    };
    provider.validate().map_err(CliError::Config)?;
    if provider.kind != ProviderKind::Mock {
        if let Some(var) = &provider.auth_env {
            if std::env::var(var).is_err() {
                return Err(CliError::Config(format!("{var} is not set for provider `{name}`")));
            }
        }
    }
    Ok(ProviderRunner::new(build_provider(&provider), &provider))
}

async fn cmd_experiment(
    config: &RunConfig,
    providers: &[String],
    options: ExperimentOptions,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let dataset = load_data(config)?;
    let templates = TemplateSet::builtin(&config.template).map_err(|e| CliError::Config(e.to_string()))?;
    let runners = providers
        .iter()
        .map(|p| runner_for(config, p))
        .collect::<Result<Vec<_>, _>>()?;
    let needs_index = options.conditions.iter().any(|c| c.enrichment.report_level().is_some());
    let indexes = if needs_index {
        build_enrichment_indexes(&dataset, config.embedding.embedder()?).await?
    } else {
        BTreeMap::new()
    };
    let store = VerdictStore::open(&config.verdicts)?;
    let inputs = ExperimentInputs {
        dataset: &dataset,
        templates: &templates,
        enrichment_indexes: &indexes,
    };
    let outcome = run_experiment(&inputs, &runners, &store, &options).await?;
    let file = std::fs::File::create(&config.results).map_err(|e| CliError::io(&config.results, e))?;
    write_results_jsonl(&outcome, std::io::BufWriter::new(file)).map_err(|e| CliError::io(&config.results, e))?;
    emit(out, &render_results_table(&outcome))?;
    emit(
        out,
        &format!(
            "# {} requests sent, {} answered from {}\n",
            outcome.requests_sent,
            outcome.reused,
            config.verdicts.display()
        ),
    )?;
    let incomplete: Vec<String> = outcome
        .reports
        .iter()
        .filter(|r| r.incomplete.is_some())
        .map(|r| format!("{} {} {:?}", r.model_id, r.condition.key(), r.stage))
        .collect();
    if incomplete.is_empty() {
        Ok(())
    } else {
        Err(CliError::Provider(format!(
            "{} cells incomplete ({}); rerun to resume",
            incomplete.len(),
            incomplete.join(", ")
        )))
    }
}

fn cmd_report(config: &RunConfig, table: Table, published: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let text = match table {
        Table::Taxonomy => render_taxonomy(&taxonomy_report(&load_data(config)?)),
        Table::Repos => {
            let dataset = load_data(config)?;
            let path = &config.repo_totals;
            let raw = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let totals: BTreeMap<String, u64> =
                serde_json::from_str(&raw).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            render_repo_table(
                &repo_stats(&dataset, &totals),
                published.then_some(&PUBLISHED_REPO_TABLE[..]),
            )
        }
        Table::Results => {
            let path = &config.results;
            let raw = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let reports =
                read_results_jsonl(&raw).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            render_results_table(&ExperimentOutcome {
                reports,
                requests_sent: 0,
                reused: 0,
            })
        }
    };
    emit(out, &text)
}

fn cmd_validate(config: &RunConfig, options: &ValidationOptions, out: &mut dyn Write) -> Result<(), CliError> {
    if !config.dataset.is_dir() {
        return Err(CliError::Config(format!("no dataset at {}", config.dataset.display())));
    }
    let mut violations = validate_layout(&config.dataset)?;
    match load_dataset(&config.dataset) {
        Ok(dataset) => violations.extend(validate_dataset(&dataset, options)),
        Err(e) => return Err(CliError::Validation(format!("dataset does not load: {e}"))),
    }
    let mut text = String::new();
    for v in &violations {
        let case = v.case_id.as_ref().map(ToString::to_string).unwrap_or_default();
        text.push_str(&format!("{:?}\t{case}\t{}\n", v.kind, v.message));
    }
    emit(out, &text)?;
    if violations.is_empty() {
        emit(out, "ok\n")
    } else {
        Err(CliError::Validation(format!("{} violations", violations.len())))
    }
}

fn cmd_export(config: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let dataset = load_data(config)?;
    let snapshot = if config.snapshot.exists() {
        Some(read_snapshot(&config.snapshot)?)
    } else {
        None
    };
    let s = export_flat(&dataset, snapshot.as_ref(), dir)?;
    emit(
        out,
        &format!("{} cases, {} files -> {}\n", s.cases, s.files, dir.display()),
    )
}

const REPLICA_CONFIG: &str = "# Offline replica: all paths are relative to this file.\n\
snapshot = \"snapshot\"\n\
dataset = \"dataset\"\n\
repo_totals = \"repo_totals.json\"\n\
conditions = \"all\"\n";

fn make_replica(dir: &Path, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let r = build_replica(seed);
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_snapshot(&r.snapshot, &dir.join("snapshot")).map_err(|e| CliError::Config(e.to_string()))?;
    let options = ValidationOptions {
        require_balanced: true,
        ..Default::default()
    };
    persist_dataset(&r.dataset, &dir.join("dataset"), &options)?;
    let totals = serde_json::to_string_pretty(&r.repo_totals).expect("totals serialize");
    let totals_path = dir.join("repo_totals.json");
    std::fs::write(&totals_path, totals + "\n").map_err(|e| CliError::io(&totals_path, e))?;
    let config_path = dir.join(DEFAULT_CONFIG_FILE);
    if !config_path.exists() {
        std::fs::write(&config_path, REPLICA_CONFIG).map_err(|e| CliError::io(&config_path, e))?;
    }
    let s = summarize(&r.dataset);
    emit(
        out,
        &format!(
            "replica (seed {seed}): {} cases, {} flaky, {} multi-label -> {}\n",
            s.total,
            s.flaky,
            s.multi_label,
            dir.display()
        ),
    )
}
