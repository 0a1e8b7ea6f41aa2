//! Classification metrics, the experiment runner and the table renderers.

mod experiment;
mod metrics;
mod stats;
mod table;
mod taxonomy;

pub use experiment::{
    build_enrichment_indexes, run_experiment, ExperimentInputs, ExperimentOptions, ExperimentOutcome, MetricsReport,
};
pub use metrics::{
    binary_metrics, effective_gold, weighted_f1, BinaryCounts, BinaryReport, ClassCounts, MulticlassReport, Totals,
};
pub use stats::{
    overall_rate, render_repo_table, repo_stats, PrintedRow, RepoStats, RowConsistency, PUBLISHED_F_TOTAL,
    PUBLISHED_REPO_TABLE, PUBLISHED_T_TOTAL,
};
pub use table::{read_results_jsonl, render_results_table, total_cell, write_results_jsonl, RESULTS_HEADER};
pub use taxonomy::{render_taxonomy, taxonomy_report, TaxonomyCell, TaxonomyReport, CAUSE_ROWS};

use crate::inference::InferenceError;
use crate::promptkit::PromptError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("predictions and gold labels disagree: {0}")]
    KeyMismatch(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}
