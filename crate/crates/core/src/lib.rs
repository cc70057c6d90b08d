//! Post-hoc out-of-distribution scoring for dual-encoder (image/text)
//! embeddings.
//!
//! The central score is the contrastive logit score: a confidence score
//! computed from cosine logits (max logit for CLS-M, energy for CLS-E) minus
//! `beta` times the similarity to a class-name-free context embedding, with
//! `beta` fitted in closed form on ID training scores
//! ([`calibration::estimate_beta`]). Baselines, detection metrics and a
//! seeded synthetic benchmark live alongside it.

pub mod calibration;
pub mod error;
pub mod metrics;
pub mod scoring;
pub mod store;
pub mod synth;

pub use calibration::{estimate_beta, residual_covariance, sweep_beta, BetaSweepCurve, CalibrationResult, ClsVariant};
pub use error::{Error, Result};
pub use metrics::{auroc, fpr_at_tpr, roc_curve, DetectionReport};
pub use scoring::{LogitMatrix, Method, ScoreVector};
pub use store::{EmbeddingMatrix, LabelVector, PromptBank};
pub use synth::{default_config, generate, SynthConfig, SynthDataset};
