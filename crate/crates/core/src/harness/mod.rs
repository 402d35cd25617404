//! Experiment configuration, the training loop for every reward mode and
//! run summaries.

mod config;
mod report;
mod run;

pub use config::{load_config, ExperimentConfig, Mode, RewardModelConfig, Seeds};
pub use report::{compare_report, final_window, median, summarize, RunSummary, REPORT_HEADER};
pub use run::{run_experiment, EpisodeRow, RunOutcome, METRICS_HEADER};

use crate::error::{domain, Result};

/// Model queries served per ground-truth query.
pub fn speedup(oracle_queries: u64, model_queries: u64) -> Result<f64> {
    if oracle_queries == 0 {
        return domain("speed-up is undefined without oracle queries");
    }
    Ok(model_queries as f64 / oracle_queries as f64)
}
