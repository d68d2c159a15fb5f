//! `patt-lab`: data generation, training, calibration, evaluation and
//! reporting over a shared output directory.
//!
//! | subcommand  | reads                                              | writes |
//! |-------------|----------------------------------------------------|--------|
//! | `gen-data`  | config                                             | `train.csv`, `val_id.csv`, `test_id.csv`, `train_ood.csv`, `test_ood.csv`, `manifest.txt` |
//! | `train`     | `train.csv`, `train_ood.csv`, `val_id.csv` if present | `model.ckpt`, `history.csv` |
//! | `calibrate` | `model.ckpt`, `train.csv`, `train_ood.csv`         | `attention.csv` |
//! | `eval`      | `model.ckpt`, `train.csv`, `test_id.csv`, `test_ood.csv`, `attention.csv` if present | `scores.csv`, `report.csv` |
//! | `report`    | `scores.csv`, `train.csv`                          | `hist.csv`, `head_tail.csv` |

pub mod commands;
pub mod config;

use patt_core::PattError;

pub use commands::run;
pub use config::{ConfigError, Method, RunConfig};

/// Short error category printed in the machine-readable error line.
pub fn error_kind(e: &anyhow::Error) -> &'static str {
    if e.downcast_ref::<ConfigError>().is_some() {
        return "config";
    }
    if e.downcast_ref::<commands::MissingFile>().is_some() {
        return "missing-file";
    }
    match e.downcast_ref::<PattError>() {
        Some(PattError::Io { .. }) => "io",
        Some(PattError::Parse { .. } | PattError::Format(_)) => "format",
        Some(PattError::DegenerateEmbedding { .. } | PattError::NonFinite { .. }) => "numeric",
        Some(_) => "contract",
        None => "internal",
    }
}

/// `patt-lab: error[<kind>]: <message>` on a single line.
pub fn error_line(e: &anyhow::Error) -> String {
    let msg = format!("{e:#}").replace(['\n', '\r'], " ");
    format!("patt-lab: error[{}]: {msg}", error_kind(e))
}
