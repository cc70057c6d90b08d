//! Score computation shared by `score`, `sweep-beta` and `compare`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clsood::calibration::{estimate_beta, CalibrationResult, ClsVariant};
use clsood::scoring::{self, fit_gaussian_stats, GaussianStats, Shrinkage};
use clsood::store::{load_embeddings, load_labels, load_prompt_bank};
use clsood::{EmbeddingMatrix, LabelVector, Method, PromptBank, ScoreVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Where the CLS scaling factor comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaSource {
    Estimated,
    Zero,
    Explicit(f64),
}

impl FromStr for BetaSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "estimated" | "estimate" => Ok(BetaSource::Estimated),
            "zero" => Ok(BetaSource::Zero),
            _ => s
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(BetaSource::Explicit)
                .ok_or_else(|| format!("beta must be `estimated`, `zero` or a number, got {s:?}")),
        }
    }
}

impl fmt::Display for BetaSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaSource::Estimated => f.write_str("estimated"),
            BetaSource::Zero => f.write_str("zero"),
            BetaSource::Explicit(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for BetaSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BetaSource::Explicit(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for BetaSource {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(BetaSource::Explicit(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

pub fn parse_shrinkage(s: &str) -> Result<Shrinkage, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Shrinkage::Auto);
    }
    s.parse::<f64>()
        .map(Shrinkage::Fixed)
        .map_err(|_| format!("shrinkage must be `auto` or a number, got {s:?}"))
}

/// How beta was obtained for one CLS score; written to sidecars.
#[derive(Debug, Clone, Serialize)]
pub struct BetaInfo {
    pub beta: f64,
    pub beta_source: BetaSource,
    pub beta_fallback: bool,
    pub calibration: Option<CalibrationResult>,
}

pub fn read_embeddings(path: &Path) -> CliResult<EmbeddingMatrix> {
    load_embeddings(path).map_err(|e| CliError::from(e).context(path.display()))
}

pub fn read_bank(path: &Path) -> CliResult<PromptBank> {
    load_prompt_bank(path).map_err(|e| CliError::from(e).context(path.display()))
}

pub fn read_labels(path: &Path) -> CliResult<LabelVector> {
    load_labels(path).map_err(|e| CliError::from(e).context(path.display()))
}

/// Inputs needed beyond the scored images themselves.
pub struct Pipeline {
    pub bank: PromptBank,
    pub train: Option<EmbeddingMatrix>,
    pub train_labels: Option<LabelVector>,
    pub beta: BetaSource,
    pub knn_k: usize,
    pub shrinkage: Shrinkage,
    gaussian: Option<GaussianStats>,
}

impl Pipeline {
    pub fn new(
        bank: PromptBank,
        train: Option<EmbeddingMatrix>,
        train_labels: Option<LabelVector>,
        beta: BetaSource,
        knn_k: usize,
        shrinkage: Shrinkage,
    ) -> Self {
        Self {
            bank,
            train,
            train_labels,
            beta,
            knn_k,
            shrinkage,
            gaussian: None,
        }
    }

    fn train(&self, what: &str) -> CliResult<&EmbeddingMatrix> {
        self.train
            .as_ref()
            .ok_or_else(|| CliError::usage(format!("{what} needs training embeddings (--train)")))
    }

    /// Beta for a CLS variant. A constant context score on the training
    /// set falls back to beta = 0 with a warning.
    pub fn beta_for(&self, variant: ClsVariant) -> CliResult<BetaInfo> {
        let source = self.beta;
        match source {
            BetaSource::Zero => Ok(BetaInfo {
                beta: 0.0,
                beta_source: source,
                beta_fallback: false,
                calibration: None,
            }),
            BetaSource::Explicit(beta) => Ok(BetaInfo {
                beta,
                beta_source: source,
                beta_fallback: false,
                calibration: None,
            }),
            BetaSource::Estimated => {
                let train = self.train("beta estimation")?;
                match calibrate(train, &self.bank, variant) {
                    Ok(cal) => Ok(BetaInfo {
                        beta: cal.beta,
                        beta_source: source,
                        beta_fallback: false,
                        calibration: Some(cal),
                    }),
                    Err(clsood::Error::DegenerateVariance(v)) => {
                        eprintln!(
                            "warning: context scores on the training set are constant (variance {v:e}); using beta = 0"
                        );
                        Ok(BetaInfo {
                            beta: 0.0,
                            beta_source: source,
                            beta_fallback: true,
                            calibration: None,
                        })
                    }
                    Err(e) => Err(e.into()),
                }
            }
        }
    }

    fn gaussian(&mut self) -> CliResult<&GaussianStats> {
        if self.gaussian.is_none() {
            let train = self.train("Mahalanobis scoring")?;
            let labels = self
                .train_labels
                .as_ref()
                .ok_or_else(|| CliError::usage("Mahalanobis scoring needs training labels (--train-labels)"))?;
            self.gaussian = Some(fit_gaussian_stats(train, labels, self.shrinkage)?);
        }
        Ok(self.gaussian.as_ref().unwrap())
    }

    /// Scores `images` with `method`; CLS methods also return their beta.
    pub fn score(&mut self, method: Method, images: &EmbeddingMatrix) -> CliResult<(ScoreVector, Option<BetaInfo>)> {
        let bank = &self.bank;
        let scores = match method {
            Method::Msp => scoring::msp(&scoring::cosine_logits(images, bank)?, bank.temperature_mcm())?,
            Method::Mcm => scoring::mcm(&scoring::cosine_logits(images, bank)?, bank.temperature_mcm())?,
            Method::MaxLogit => scoring::max_logit(&scoring::cosine_logits(images, bank)?),
            Method::Energy => scoring::energy(&scoring::cosine_logits(images, bank)?, bank.temperature_energy())?,
            Method::Context => scoring::context_score(images, bank)?,
            Method::ClsM | Method::ClsE => {
                let variant = if method == Method::ClsM {
                    ClsVariant::MaxLogit
                } else {
                    ClsVariant::Energy
                };
                let info = self.beta_for(variant)?;
                let bank = &self.bank;
                let logits = scoring::cosine_logits(images, bank)?;
                let context = scoring::context_score(images, bank)?;
                let scores = variant.score(&logits, &context, info.beta, bank.temperature_energy())?;
                return Ok((scores, Some(info)));
            }
            Method::Mahalanobis => scoring::mahalanobis_score(self.gaussian()?, images)?,
            Method::Rmds => scoring::rmds_score(self.gaussian()?, images)?,
            Method::Knn => scoring::knn_score(self.train("KNN scoring")?, images, self.knn_k)?,
        };
        Ok((scores, None))
    }
}

/// Closed-form beta from training images for one CLS variant.
pub fn calibrate(train: &EmbeddingMatrix, bank: &PromptBank, variant: ClsVariant) -> clsood::Result<CalibrationResult> {
    let logits = scoring::cosine_logits(train, bank)?;
    let context = scoring::context_score(train, bank)?;
    let base = match variant {
        ClsVariant::MaxLogit => scoring::max_logit(&logits),
        ClsVariant::Energy => scoring::energy(&logits, bank.temperature_energy())?,
    };
    estimate_beta(&context, &base)
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
