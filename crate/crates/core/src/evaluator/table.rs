use std::io::Write;

use crate::promptkit::Stage;

use super::{ExperimentOutcome, MetricsReport, Totals};

pub const RESULTS_HEADER: &str =
    "Model\tContext\tF1 RQ3\tF1 RQ5\tMCC RQ3\tMCC RQ5\tRecall RQ3\tRecall RQ4\tTotal RQ3\tTotal RQ4\tTotal RQ5";

fn metric(report: Option<&MetricsReport>, pick: fn(&MetricsReport) -> Option<f64>) -> String {
    match report {
        None => String::new(),
        Some(r) if r.incomplete.is_some() => "incomplete".into(),
        Some(r) => pick(r).map_or_else(|| "n/a".into(), |v| format!("{v:.4}")),
    }
}

/// Usable observations, starred when unusable outputs reduced the count.
pub fn total_cell(totals: &Totals) -> String {
    if totals.is_reduced() {
        format!("{}*", totals.usable)
    } else {
        totals.usable.to_string()
    }
}

/// Delimited results table, one row per code-bearing condition. RQ3 values
/// are printed on the first row of each report-level pair, as they do not
/// depend on code.
pub fn render_results_table(outcome: &ExperimentOutcome) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    let mut models: Vec<&str> = Vec::new();
    for r in &outcome.reports {
        if !models.contains(&r.model_id.as_str()) {
            models.push(&r.model_id);
        }
    }
    for model in models {
        let mut last_pair = None;
        for rq4 in outcome
            .reports
            .iter()
            .filter(|r| r.model_id == model && r.stage == Stage::Rq4)
        {
            let c = rq4.condition;
            let rq5 = outcome.get(model, &c, Stage::Rq5);
            let pair = c.report_only();
            let rq3 = (last_pair != Some(pair))
                .then(|| outcome.get(model, &pair, Stage::Rq3))
                .flatten();
            last_pair = Some(pair);
            let cols = [
                model.to_string(),
                c.table_label(),
                metric(rq3, |r| r.f1),
                metric(rq5, |r| r.weighted_f1),
                metric(rq3, |r| r.mcc),
                metric(rq5, |r| r.mcc),
                metric(rq3, |r| r.recall),
                metric(Some(rq4), |r| r.recall),
                rq3.map(|r| total_cell(&r.totals)).unwrap_or_default(),
                total_cell(&rq4.totals),
                rq5.map(|r| total_cell(&r.totals)).unwrap_or_default(),
            ];
            out.push_str(&cols.join("\t"));
            out.push('\n');
        }
    }
    out
}

/// One JSON record per cell.
pub fn write_results_jsonl(outcome: &ExperimentOutcome, mut w: impl Write) -> std::io::Result<()> {
    for r in &outcome.reports {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_results_jsonl(text: &str) -> Result<Vec<MetricsReport>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
