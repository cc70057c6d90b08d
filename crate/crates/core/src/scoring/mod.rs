//! Per-sample OOD scores. Every score follows the same orientation: higher
//! means more in-distribution.

mod distance;
mod gaussian;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{EmbeddingMatrix, LabelVector, PromptBank};

pub use distance::{knn_score, mean_distance_to_train};
pub use gaussian::{fit_gaussian_stats, mahalanobis_score, rmds_score, GaussianStats, Shrinkage};

/// Score function tag carried by every [`ScoreVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MSP")]
    Msp,
    MaxLogit,
    Energy,
    #[serde(rename = "MCM")]
    Mcm,
    Context,
    #[serde(rename = "CLS-M")]
    ClsM,
    #[serde(rename = "CLS-E")]
    ClsE,
    Mahalanobis,
    #[serde(rename = "RMDS")]
    Rmds,
    #[serde(rename = "KNN")]
    Knn,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Msp,
        Method::MaxLogit,
        Method::Energy,
        Method::Mcm,
        Method::Context,
        Method::ClsM,
        Method::ClsE,
        Method::Mahalanobis,
        Method::Rmds,
        Method::Knn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Msp => "MSP",
            Method::MaxLogit => "MaxLogit",
            Method::Energy => "Energy",
            Method::Mcm => "MCM",
            Method::Context => "Context",
            Method::ClsM => "CLS-M",
            Method::ClsE => "CLS-E",
            Method::Mahalanobis => "Mahalanobis",
            Method::Rmds => "RMDS",
            Method::Knn => "KNN",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Case-insensitive; accepts the display names plus `cls_m`/`clsm`
    /// style spellings and `mds` for Mahalanobis.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_'))
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "msp" => Method::Msp,
            "maxlogit" => Method::MaxLogit,
            "energy" => Method::Energy,
            "mcm" => Method::Mcm,
            "context" => Method::Context,
            "clsm" => Method::ClsM,
            "clse" => Method::ClsE,
            "mahalanobis" | "mds" => Method::Mahalanobis,
            "rmds" => Method::Rmds,
            "knn" => Method::Knn,
            _ => return Err(Error::UnknownMethod(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub method: Method,
    pub values: Vec<f64>,
}

impl ScoreVector {
    pub fn new(method: Method, values: Vec<f64>) -> Self {
        Self { method, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Splits into `(id, ood)` score lists by a `{0,1}` mask (1 = ID).
    pub fn split_by_mask(&self, mask: &LabelVector) -> Result<(Vec<f64>, Vec<f64>)> {
        if mask.len() != self.len() {
            return Err(Error::LengthMismatch {
                left: self.len(),
                right: mask.len(),
            });
        }
        let mut id = Vec::new();
        let mut ood = Vec::new();
        for (&s, &m) in self.values.iter().zip(mask.values()) {
            if m == 1 {
                id.push(s);
            } else {
                ood.push(s);
            }
        }
        Ok((id, ood))
    }
}

/// `N x K` cosine similarities between samples and class prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    rows: usize,
    classes: usize,
    values: Vec<f64>,
}

impl LogitMatrix {
    pub fn new(rows: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::ZeroDim);
        }
        if values.len() != rows * classes {
            return Err(Error::ShapeMismatch {
                rows,
                dim: classes,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: pos / classes,
                col: pos % classes,
            });
        }
        Ok(Self { rows, classes, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let classes = rows.first().map(|r| r.as_ref().len()).unwrap_or(1);
        let mut values = Vec::with_capacity(rows.len() * classes);
        for r in rows {
            if r.as_ref().len() != classes {
                return Err(Error::DimensionMismatch {
                    expected: classes,
                    found: r.as_ref().len(),
                });
            }
            values.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), classes, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.classes)
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.classes != other.classes {
            return Err(Error::DimensionMismatch {
                expected: self.classes,
                found: other.classes,
            });
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Self {
            rows: self.rows + other.rows,
            classes: self.classes,
            values,
        })
    }
}

/// Row-stochastic `N x K` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    rows: usize,
    classes: usize,
    values: Vec<f64>,
}

impl ProbMatrix {
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let l = LogitMatrix::from_rows(rows)?;
        Ok(Self {
            rows: l.rows,
            classes: l.classes,
            values: l.values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.classes)
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

fn check_images(images: &EmbeddingMatrix, bank: &PromptBank) -> Result<()> {
    if images.dim() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: images.dim(),
        });
    }
    if !images.is_normalized() {
        return Err(Error::NotNormalized);
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTemperature(tau))
    }
}

pub fn cosine_logits(images: &EmbeddingMatrix, bank: &PromptBank) -> Result<LogitMatrix> {
    check_images(images, bank)?;
    let prompts = bank.class_embeddings();
    let mut values = Vec::with_capacity(images.rows() * prompts.rows());
    for img in images.iter_rows() {
        values.extend(prompts.iter_rows().map(|p| dot(img, p)));
    }
    LogitMatrix::new(images.rows(), prompts.rows(), values)
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Row-wise softmax of `logits / tau`, shifted by the row max.
pub fn softmax_probs(logits: &LogitMatrix, tau: f64) -> Result<ProbMatrix> {
    check_tau(tau)?;
    let mut values = Vec::with_capacity(logits.values.len());
    for row in logits.iter_rows() {
        let m = row_max(row);
        let start = values.len();
        let mut total = 0.0;
        for &l in row {
            let e = ((l - m) / tau).exp();
            total += e;
            values.push(e);
        }
        for v in &mut values[start..] {
            *v /= total;
        }
    }
    Ok(ProbMatrix {
        rows: logits.rows,
        classes: logits.classes,
        values,
    })
}

fn max_softmax(logits: &LogitMatrix, tau: f64, method: Method) -> Result<ScoreVector> {
    let probs = softmax_probs(logits, tau)?;
    Ok(ScoreVector::new(method, probs.iter_rows().map(row_max).collect()))
}

/// Maximum softmax probability.
pub fn msp(logits: &LogitMatrix, tau: f64) -> Result<ScoreVector> {
    max_softmax(logits, tau, Method::Msp)
}

/// Maximum concept matching: the same quantity as [`msp`], evaluated at the
/// bank's MCM temperature and tagged separately.
pub fn mcm(logits: &LogitMatrix, tau: f64) -> Result<ScoreVector> {
    max_softmax(logits, tau, Method::Mcm)
}

pub fn max_logit(logits: &LogitMatrix) -> ScoreVector {
    ScoreVector::new(Method::MaxLogit, logits.iter_rows().map(row_max).collect())
}

fn energy_values(logits: &LogitMatrix, tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    Ok(logits
        .iter_rows()
        .map(|row| {
            let m = row_max(row);
            let sum: f64 = row.iter().map(|&l| ((l - m) / tau).exp()).sum();
            m + tau * sum.ln()
        })
        .collect())
}

/// `tau * logsumexp(logits / tau)`.
pub fn energy(logits: &LogitMatrix, tau: f64) -> Result<ScoreVector> {
    Ok(ScoreVector::new(Method::Energy, energy_values(logits, tau)?))
}

/// Similarity of each sample to the class-name-free context embedding.
pub fn context_score(images: &EmbeddingMatrix, bank: &PromptBank) -> Result<ScoreVector> {
    check_images(images, bank)?;
    let v = bank.context();
    Ok(ScoreVector::new(
        Method::Context,
        images.iter_rows().map(|img| dot(img, v)).collect(),
    ))
}

fn subtract_context(base: Vec<f64>, context: &ScoreVector, beta: f64) -> Result<Vec<f64>> {
    if base.len() != context.len() {
        return Err(Error::LengthMismatch {
            left: base.len(),
            right: context.len(),
        });
    }
    Ok(base
        .into_iter()
        .zip(&context.values)
        .map(|(b, &c)| b - beta * c)
        .collect())
}

/// Contrastive logit score on the max-logit base: `max_i logit_i - beta * context`.
pub fn cls_m(logits: &LogitMatrix, context: &ScoreVector, beta: f64) -> Result<ScoreVector> {
    let base = max_logit(logits).values;
    Ok(ScoreVector::new(Method::ClsM, subtract_context(base, context, beta)?))
}

/// Contrastive logit score on the energy base: `energy(tau) - beta * context`.
pub fn cls_e(logits: &LogitMatrix, context: &ScoreVector, beta: f64, tau: f64) -> Result<ScoreVector> {
    let base = energy_values(logits, tau)?;
    Ok(ScoreVector::new(Method::ClsE, subtract_context(base, context, beta)?))
}

/// Confidence threshold `c` of the reject option.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectionConfig {
    c: f64,
}

impl RejectionConfig {
    pub fn new(c: f64) -> Result<Self> {
        if (0.0..1.0).contains(&c) {
            Ok(Self { c })
        } else {
            Err(Error::InvalidRejection(c))
        }
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

/// Predicts `argmax + 1` per row, or `0` (reject) when the top probability
/// is at most `1 - c`. Argmax ties go to the lowest class index.
pub fn classify_with_rejection(probs: &ProbMatrix, config: RejectionConfig) -> LabelVector {
    let cutoff = 1.0 - config.c;
    let labels = probs
        .iter_rows()
        .map(|row| {
            let (best, p) = argmax(row);
            if p <= cutoff {
                0
            } else {
                best as u32 + 1
            }
        })
        .collect();
    LabelVector::new(labels)
}

pub(crate) fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    (best, row[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::EmbeddingMatrix;

    fn bank(prompts: &[&[f32]], context: &[f32]) -> PromptBank {
        PromptBank::new(
            EmbeddingMatrix::from_rows(prompts).unwrap(),
            EmbeddingMatrix::from_rows(&[context]).unwrap(),
            (0..prompts.len()).map(|i| i.to_string()).collect(),
            0.01,
            1.0,
        )
        .unwrap()
    }

    fn logits(rows: &[&[f64]]) -> LogitMatrix {
        LogitMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn cosine_logits_examples() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]], &[1.0, 0.0]);
        let imgs = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.6, 0.8]]).unwrap();
        let l = cosine_logits(&imgs, &b).unwrap();
        assert_eq!(l.row(0), &[1.0, 0.0]);
        assert!((l.row(1)[0] - 0.6).abs() < 1e-7);
    }

    #[test]
    fn cosine_logits_errors() {
        let b = bank(&[&[1.0, 0.0]], &[0.0, 1.0]);
        let wrong_dim = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            cosine_logits(&wrong_dim, &b),
            Err(Error::DimensionMismatch { .. })
        ));
        let raw = EmbeddingMatrix::from_rows(&[[3.0f32, 4.0]]).unwrap();
        assert!(matches!(cosine_logits(&raw, &b), Err(Error::NotNormalized)));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_probs(&logits(&[&[0.0, 0.0]]), 1.0).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        let p = softmax_probs(&logits(&[&[1.0, 0.0]]), 0.01).unwrap();
        assert!(p.row(0)[0] > 1.0 - 1e-10);
        assert!(matches!(
            softmax_probs(&logits(&[&[1.0]]), 0.0),
            Err(Error::NonPositiveTemperature(_))
        ));
        assert!(softmax_probs(&logits(&[&[1.0]]), -1.0).is_err());
    }

    #[test]
    fn msp_examples() {
        assert_eq!(msp(&logits(&[&[0.0, 0.0]]), 1.0).unwrap().values, vec![0.5]);
        let e5 = 5f64.exp();
        let got = msp(&logits(&[&[5.0, 0.0, 0.0]]), 1.0).unwrap().values[0];
        assert!((got - e5 / (e5 + 2.0)).abs() < 1e-12);
        assert_eq!(msp(&logits(&[&[0.3]]), 1.0).unwrap().values, vec![1.0]);
    }

    #[test]
    fn mcm_examples() {
        assert_eq!(mcm(&logits(&[&[0.0, 0.0]]), 1.0).unwrap().values, vec![0.5]);
        let e = 1f64.exp();
        let got = mcm(&logits(&[&[1.0, -1.0, -1.0]]), 1.0).unwrap().values[0];
        assert!((got - e / (e + 2.0 / e)).abs() < 1e-12);
        assert_eq!(mcm(&logits(&[&[1.0]]), 1.0).unwrap().method, Method::Mcm);
    }

    #[test]
    fn max_logit_examples() {
        assert_eq!(max_logit(&logits(&[&[0.2, 0.8, -0.1]])).values, vec![0.8]);
        assert_eq!(max_logit(&logits(&[&[0.3]])).values, vec![0.3]);
    }

    #[test]
    fn energy_examples() {
        let e = energy(&logits(&[&[0.0, 0.0]]), 1.0).unwrap().values[0];
        assert!((e - 2f64.ln()).abs() < 1e-15);
        for tau in [0.01, 1.0, 7.5] {
            for x in [-0.7, 0.0, 0.42, 1e6] {
                assert_eq!(energy(&logits(&[&[x]]), tau).unwrap().values[0], x);
            }
        }
        let e = energy(&logits(&[&[1.0, 0.0]]), 0.01).unwrap().values[0];
        assert!((e - 1.0).abs() < 1e-12);
        assert!(energy(&logits(&[&[1.0]]), 0.0).is_err());
    }

    #[test]
    fn context_examples() {
        let b = bank(&[&[1.0, 0.0]], &[0.6, 0.8]);
        let imgs = EmbeddingMatrix::from_rows(&[[0.6f32, 0.8], [-0.8, 0.6]]).unwrap();
        let s = context_score(&imgs, &b).unwrap();
        assert!((s.values[0] - 1.0).abs() < 1e-6);
        assert!(s.values[1].abs() < 1e-7);
    }

    #[test]
    fn cls_examples() {
        let l = logits(&[&[0.8, 0.1]]);
        let ctx = ScoreVector::new(Method::Context, vec![0.5]);
        let s = cls_m(&l, &ctx, 2.0).unwrap();
        assert!((s.values[0] - -0.2).abs() < 1e-15);
        assert_eq!(s.method, Method::ClsM);

        let s = cls_e(
            &logits(&[&[0.9]]),
            &ScoreVector::new(Method::Context, vec![0.3]),
            1.0,
            1.0,
        )
        .unwrap();
        assert!((s.values[0] - 0.6).abs() < 1e-15);

        let short = ScoreVector::new(Method::Context, vec![]);
        assert!(matches!(cls_m(&l, &short, 1.0), Err(Error::LengthMismatch { .. })));
        assert!(cls_e(&l, &ctx, 1.0, -1.0).is_err());
    }

    #[test]
    fn empty_inputs_give_empty_scores() {
        let b = bank(&[&[1.0, 0.0]], &[0.0, 1.0]);
        let imgs = EmbeddingMatrix::empty(2).unwrap();
        let l = cosine_logits(&imgs, &b).unwrap();
        assert_eq!(l.rows(), 0);
        assert!(max_logit(&l).is_empty());
        assert!(energy(&l, 0.01).unwrap().is_empty());
        assert!(context_score(&imgs, &b).unwrap().is_empty());
    }

    #[test]
    fn rejection_examples() {
        let c = RejectionConfig::new(0.2).unwrap();
        let p = ProbMatrix::from_rows(&[[0.9, 0.1], [0.6, 0.4], [0.8, 0.2], [0.1, 0.9], [0.5, 0.5]]).unwrap();
        assert_eq!(classify_with_rejection(&p, c).values(), &[1, 0, 0, 2, 0]);
        let lenient = RejectionConfig::new(0.9).unwrap();
        let tie = ProbMatrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert_eq!(classify_with_rejection(&tie, lenient).values(), &[1]);
        assert!(RejectionConfig::new(1.0).is_err());
        assert!(RejectionConfig::new(-0.1).is_err());
    }

    #[test]
    fn method_names_parse_back() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        assert_eq!("cls_m".parse::<Method>().unwrap(), Method::ClsM);
        assert_eq!("mds".parse::<Method>().unwrap(), Method::Mahalanobis);
        assert!("odin".parse::<Method>().is_err());
    }
}
