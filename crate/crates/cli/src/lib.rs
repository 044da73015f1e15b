//! Configuration, orchestration and reporting for greenlab experiments.
//!
//! An experiment is a TOML file naming a space and the checks to run on it.
//! [`run_experiment`] executes the configured stages and writes a bundle
//! into the output directory:
//!
//! | File | Content |
//! |------|---------|
//! | `report.json` | every checked quantity with its bound, the failure record, plot series |
//! | `rows.csv` | the same rows as a flat ledger |
//! | `space.json` | the space description |
//! | `green_ratio.csv`, `maximal.csv`, `transport_plan.csv`, `dimension.csv` | per-stage ledgers |
//! | `plots/*.dat` | whitespace-separated `x y series` columns |

pub mod config;
pub mod pipeline;
pub mod plot;
pub mod report;

use thiserror::Error;

pub use config::ExperimentConfig;
pub use pipeline::{run_experiment, Stage};
pub use plot::emit_plot_data;
pub use report::Bundle;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("configuration parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("configuration has no [{0}] section")]
    MissingSection(&'static str),

    #[error("unknown plot series: {0}")]
    UnknownSeries(String),

    #[error(transparent)]
    Module(#[from] greenlab::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
