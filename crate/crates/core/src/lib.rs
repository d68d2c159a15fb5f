//! Long-tailed out-of-distribution detection on hypersphere embeddings.
//!
//! The crate models in-distribution features as a mixture of von Mises–Fisher
//! distributions and trains a small encoder/classifier with a closed-form
//! implicitly augmented contrastive loss, temperature-scaled logit adjustment
//! and outlier exposure. At inference a per-channel attention weight,
//! extracted from a class-balanced training subset and surrogate outliers,
//! recalibrates features before energy scoring.
//!
//! Module map:
//! - [`vmf`]: special functions, vMF densities, mixtures, MGF, estimation, sampling
//! - [`losses`]: OE, SCL, LA, ISAC, TLA and the combined objective, with gradients
//! - [`model`]: encoder + linear classifier, optimizers, training loop, checkpoints
//! - [`calibration`]: channel importance, attention weight, scoring, post-hoc baselines
//! - [`metrics`]: AUROC, AUPR, FPR95, head/tail accuracy
//! - [`data`]: synthetic long-tailed generator, feature CSV IO, balanced subsets
//! - [`pipeline`]: end-to-end train → calibrate → evaluate helpers

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod vmf;

pub use calibration::AttentionWeight;
pub use data::{LabeledSet, SynthConfig, OOD_LABEL};
pub use error::{PattError, Result};
pub use losses::{LossValue, PattHyper};
pub use metrics::EvalReport;
pub use model::{EncoderClassifier, TrainConfig, TrainHistory};
pub use vmf::{UnitFeature, VmfMixture, VmfParams};
