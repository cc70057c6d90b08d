//! Closed-form scaling factor for the contrastive logit scores.
//!
//! Fitting a bivariate Gaussian by maximum likelihood to `(x, y - beta * x)`,
//! where `x` is the context score and `y` the base score on ID training
//! images, the off-diagonal covariance vanishes exactly when
//! `beta = cov(x, y) / var(x)`. Subtracting `beta * x` thus removes the part
//! of the base score that is linearly explained by the context score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::scoring::{cls_e, cls_m, LogitMatrix, Method, ScoreVector};
use crate::store::LabelVector;

/// Context-score variances at or below this are treated as constant.
pub const MIN_CONTEXT_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub beta: f64,
    pub mu_x: f64,
    pub mu_y: f64,
    pub var_x: f64,
    pub cov_xy: f64,
    pub n: usize,
    pub base_method: Method,
}

fn check_lengths(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Estimates `beta` from context scores `x` and base scores `y` of ID
/// training samples. Moments use the `1/n` (MLE) normalisation.
pub fn estimate_beta(context_scores: &ScoreVector, base_scores: &ScoreVector) -> Result<CalibrationResult> {
    let x = context_scores.values();
    let y = base_scores.values();
    check_lengths(x, y)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mu_x = mean(x);
    let mu_y = mean(y);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mu_x;
        sxx += dx * dx;
        sxy += dx * (yi - mu_y);
    }
    let var_x = sxx / n as f64;
    if var_x <= MIN_CONTEXT_VARIANCE {
        return Err(Error::DegenerateVariance(var_x));
    }
    Ok(CalibrationResult {
        beta: sxy / sxx,
        mu_x,
        mu_y,
        var_x,
        cov_xy: sxy / n as f64,
        n,
        base_method: base_scores.method,
    })
}

/// MLE covariance between `x` and the residual `y - beta * x`. Zero (up to
/// rounding) at the estimated `beta`.
pub fn residual_covariance(context_scores: &[f64], base_scores: &[f64], beta: f64) -> Result<f64> {
    check_lengths(context_scores, base_scores)?;
    if context_scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let residual: Vec<f64> = context_scores
        .iter()
        .zip(base_scores)
        .map(|(&x, &y)| y - beta * x)
        .collect();
    let mu_x = mean(context_scores);
    let mu_r = mean(&residual);
    let s: f64 = context_scores
        .iter()
        .zip(&residual)
        .map(|(&x, &r)| (x - mu_x) * (r - mu_r))
        .sum();
    Ok(s / context_scores.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClsVariant {
    #[serde(rename = "CLS-M")]
    MaxLogit,
    #[serde(rename = "CLS-E")]
    Energy,
}

impl ClsVariant {
    /// Base score whose correlation with the context score is removed.
    pub fn base_method(self) -> Method {
        match self {
            ClsVariant::MaxLogit => Method::MaxLogit,
            ClsVariant::Energy => Method::Energy,
        }
    }

    pub fn score(self, logits: &LogitMatrix, context: &ScoreVector, beta: f64, tau: f64) -> Result<ScoreVector> {
        match self {
            ClsVariant::MaxLogit => cls_m(logits, context, beta),
            ClsVariant::Energy => cls_e(logits, context, beta, tau),
        }
    }
}

impl std::str::FromStr for ClsVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<Method>()? {
            Method::ClsM => Ok(ClsVariant::MaxLogit),
            Method::ClsE => Ok(ClsVariant::Energy),
            _ => Err(Error::UnknownMethod(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSweepCurve {
    pub variant: ClsVariant,
    pub points: Vec<SweepPoint>,
    pub estimated_beta: Option<f64>,
    pub argmax_beta: f64,
    pub argmax_auroc: f64,
}

impl BetaSweepCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta,auroc\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{}\n",
                crate::store::format_sig9(p.beta),
                crate::store::format_sig9(p.auroc)
            ));
        }
        out
    }
}

/// Builds `min, min+step, ...` up to `max` inclusive (with a half-step
/// tolerance on the end point). Points are computed as `min + i * step` so
/// rounding does not accumulate.
pub fn beta_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) || max < min || step <= 0.0 {
        return Err(Error::InvalidGrid);
    }
    let count = ((max - min) / step + 0.5).floor() as usize + 1;
    Ok((0..count).map(|i| min + i as f64 * step).collect())
}

/// AUROC of a CLS variant at every `beta` in `grid`, separating rows with
/// mask 1 (ID) from rows with mask 0 (OOD). Needs OOD labels, so this is a
/// diagnostic and never part of the calibration itself.
pub fn sweep_beta(
    logits: &LogitMatrix,
    context: &ScoreVector,
    id_mask: &LabelVector,
    grid: &[f64],
    variant: ClsVariant,
    tau: f64,
    estimated_beta: Option<f64>,
) -> Result<BetaSweepCurve> {
    if grid.is_empty()
        || grid
            .windows(2)
            .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
    {
        return Err(Error::InvalidGrid);
    }
    let mut points = Vec::with_capacity(grid.len());
    for &beta in grid {
        let scores = variant.score(logits, context, beta, tau)?;
        let (id, ood) = scores.split_by_mask(id_mask)?;
        points.push(SweepPoint {
            beta,
            auroc: auroc(&id, &ood)?,
        });
    }
    let best = points
        .iter()
        .fold(&points[0], |best, p| if p.auroc > best.auroc { p } else { best });
    Ok(BetaSweepCurve {
        variant,
        argmax_beta: best.beta,
        argmax_auroc: best.auroc,
        points,
        estimated_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(method: Method, v: &[f64]) -> ScoreVector {
        ScoreVector::new(method, v.to_vec())
    }

    #[test]
    fn exact_linear_relation() {
        let r = estimate_beta(
            &sv(Method::Context, &[0.0, 1.0, 2.0]),
            &sv(Method::MaxLogit, &[1.0, 3.0, 5.0]),
        )
        .unwrap();
        assert_eq!(r.beta, 2.0);
        assert_eq!(r.mu_x, 1.0);
        assert_eq!(r.mu_y, 3.0);
        assert!((r.var_x - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.cov_xy - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.n, 3);
        assert_eq!(r.base_method, Method::MaxLogit);
    }

    #[test]
    fn constant_base_gives_zero() {
        let r = estimate_beta(&sv(Method::Context, &[1.0, 2.0, 3.0]), &sv(Method::Energy, &[5.0; 3])).unwrap();
        assert_eq!(r.beta, 0.0);
        assert_eq!(r.base_method, Method::Energy);
    }

    #[test]
    fn errors() {
        let x = sv(Method::Context, &[0.5, 0.5, 0.5]);
        let y = sv(Method::MaxLogit, &[1.0, 2.0, 3.0]);
        assert!(matches!(estimate_beta(&x, &y), Err(Error::DegenerateVariance(_))));
        assert!(matches!(
            estimate_beta(&sv(Method::Context, &[1.0]), &sv(Method::MaxLogit, &[1.0])),
            Err(Error::TooFewSamples(1))
        ));
        assert!(matches!(
            estimate_beta(&sv(Method::Context, &[1.0, 2.0]), &y),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(residual_covariance(&[1.0], &[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn residual_covariance_cases() {
        let x = [0.1, 0.4, 0.35, 0.8];
        let y = [0.3, 0.2, 0.9, 0.5];
        let r = estimate_beta(&sv(Method::Context, &x), &sv(Method::MaxLogit, &y)).unwrap();
        assert!(residual_covariance(&x, &y, r.beta).unwrap().abs() < 1e-15);
        assert!((residual_covariance(&x, &y, 0.0).unwrap() - r.cov_xy).abs() < 1e-15);
        assert_eq!(residual_covariance(&[0.3; 4], &y, 1.7).unwrap(), 0.0);
    }

    #[test]
    fn grid_construction() {
        let g = beta_grid(0.0, 4.0, 0.1).unwrap();
        assert_eq!(g.len(), 41);
        assert_eq!(g[0], 0.0);
        assert!((g[40] - 4.0).abs() < 1e-12);
        assert_eq!(beta_grid(0.0, 0.0, 1.0).unwrap(), vec![0.0]);
        assert!(beta_grid(1.0, 0.0, 0.1).is_err());
        assert!(beta_grid(0.0, 1.0, 0.0).is_err());
    }

    fn toy() -> (LogitMatrix, ScoreVector, LabelVector) {
        let logits = LogitMatrix::from_rows(&[[0.9, 0.1], [0.7, 0.2], [0.3, 0.1], [0.2, 0.15]]).unwrap();
        let ctx = sv(Method::Context, &[0.5, 0.4, 0.1, 0.3]);
        (logits, ctx, LabelVector::binary(vec![1, 1, 0, 0]).unwrap())
    }

    #[test]
    fn sweep_single_zero_is_base_auroc() {
        let (logits, ctx, mask) = toy();
        let c = sweep_beta(&logits, &ctx, &mask, &[0.0], ClsVariant::MaxLogit, 0.01, None).unwrap();
        let base = crate::scoring::max_logit(&logits);
        let (id, ood) = base.split_by_mask(&mask).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.points[0].auroc, auroc(&id, &ood).unwrap());
        assert_eq!(c.argmax_beta, 0.0);
    }

    #[test]
    fn separable_stays_flat() {
        let (logits, _, mask) = toy();
        let ctx = sv(Method::Context, &[0.0; 4]);
        let grid = beta_grid(0.0, 4.0, 0.5).unwrap();
        for variant in [ClsVariant::MaxLogit, ClsVariant::Energy] {
            let c = sweep_beta(&logits, &ctx, &mask, &grid, variant, 0.01, Some(1.0)).unwrap();
            assert!(c.points.iter().all(|p| p.auroc == 1.0));
            assert_eq!(c.estimated_beta, Some(1.0));
        }
    }

    #[test]
    fn sweep_rejects_bad_grid() {
        let (logits, ctx, mask) = toy();
        for grid in [&[][..], &[1.0, 0.5][..], &[0.0, 0.0][..]] {
            assert!(matches!(
                sweep_beta(&logits, &ctx, &mask, grid, ClsVariant::MaxLogit, 0.01, None),
                Err(Error::InvalidGrid)
            ));
        }
    }

    #[test]
    fn curve_csv() {
        let c = BetaSweepCurve {
            variant: ClsVariant::MaxLogit,
            points: vec![
                SweepPoint { beta: 0.0, auroc: 0.5 },
                SweepPoint { beta: 0.1, auroc: 0.75 },
            ],
            estimated_beta: None,
            argmax_beta: 0.1,
            argmax_auroc: 0.75,
        };
        assert_eq!(c.to_csv(), "beta,auroc\n0,0.5\n0.1,0.75\n");
    }
}
