//! Class-conditional Gaussians with a shared covariance, for the
//! Mahalanobis and relative-Mahalanobis (RMDS) baselines.
//!
//! Covariances are factored with Cholesky after shrinkage and distances are
//! evaluated by triangular solves; no explicit inverse is formed on the
//! scoring path.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{Method, ScoreVector};
use crate::error::{Error, Result};
use crate::store::{EmbeddingMatrix, LabelVector};

/// Ridge added to the covariance diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shrinkage {
    Fixed(f64),
    /// `1e-6 * trace(cov) / D`, computed from the pooled class covariance.
    Auto,
}

const AUTO_SHRINKAGE_FACTOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GaussianStats {
    class_means: Vec<DVector<f64>>,
    covariance: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    background_mean: DVector<f64>,
    background_covariance: DMatrix<f64>,
    background_factor: Cholesky<f64, Dyn>,
    shrinkage: f64,
    // L^{-1} mu for each class / the background, cached for scoring.
    whitened_means: Vec<DVector<f64>>,
    whitened_background: DVector<f64>,
}

impl GaussianStats {
    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn dim(&self) -> usize {
        self.background_mean.len()
    }

    pub fn class_means(&self) -> &[DVector<f64>] {
        &self.class_means
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn background_mean(&self) -> &DVector<f64> {
        &self.background_mean
    }

    pub fn background_covariance(&self) -> &DMatrix<f64> {
        &self.background_covariance
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    /// Inverse of the shared covariance, reconstructed from its Cholesky
    /// factor. For inspection only; scoring does not use it.
    pub fn precision(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }

    pub fn background_precision(&self) -> DMatrix<f64> {
        self.background_factor.inverse()
    }

    /// Squared Mahalanobis distance of `z` to every class mean, followed by
    /// the distance to the background mean.
    fn distances(&self, z: &[f32]) -> (Vec<f64>, f64) {
        let z = DVector::from_iterator(z.len(), z.iter().map(|&v| f64::from(v)));
        let w = self.factor.l_dirty().solve_lower_triangular(&z).unwrap();
        let class = self.whitened_means.iter().map(|m| (&w - m).norm_squared()).collect();
        let wb = self.background_factor.l_dirty().solve_lower_triangular(&z).unwrap();
        (class, (wb - &self.whitened_background).norm_squared())
    }
}

fn factor(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(cov.clone()).ok_or(Error::SingularAfterShrinkage)?;
    // Reject factors too ill-conditioned to invert at the stated accuracy.
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if lo.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || (hi / lo).powi(2) > 1e12 {
        return Err(Error::SingularAfterShrinkage);
    }
    Ok(chol)
}

fn whiten(chol: &Cholesky<f64, Dyn>, v: &DVector<f64>) -> DVector<f64> {
    chol.l_dirty().solve_lower_triangular(v).unwrap()
}

/// Fits per-class means, the pooled within-class MLE covariance and a
/// label-free background Gaussian, each with the same diagonal shrinkage.
///
/// Labels are class ids `1..=K` with `K` the largest label present; every
/// class in that range needs at least one sample.
pub fn fit_gaussian_stats(
    train: &EmbeddingMatrix,
    labels: &LabelVector,
    shrinkage: Shrinkage,
) -> Result<GaussianStats> {
    if train.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: train.rows(),
            right: labels.len(),
        });
    }
    if train.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let d = train.dim();
    let k = labels.max_label() as usize;
    if let Some((index, _)) = labels.values().iter().enumerate().find(|(_, &l)| l == 0) {
        return Err(Error::LabelOutOfRange {
            index,
            label: 0,
            max: k as u32,
        });
    }
    let n = train.rows() as f64;

    let mut sums = vec![DVector::<f64>::zeros(d); k];
    let mut counts = vec![0usize; k];
    let mut total = DVector::<f64>::zeros(d);
    for (row, &label) in train.iter_rows().zip(labels.values()) {
        let c = label as usize - 1;
        counts[c] += 1;
        for (j, &v) in row.iter().enumerate() {
            sums[c][j] += f64::from(v);
            total[j] += f64::from(v);
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(empty as u32 + 1));
    }
    let class_means: Vec<DVector<f64>> = sums.into_iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let background_mean = total / n;

    let mut covariance = DMatrix::<f64>::zeros(d, d);
    let mut background_covariance = DMatrix::<f64>::zeros(d, d);
    let mut centered = DVector::<f64>::zeros(d);
    for (row, &label) in train.iter_rows().zip(labels.values()) {
        let mu = &class_means[label as usize - 1];
        for j in 0..d {
            centered[j] = f64::from(row[j]) - mu[j];
        }
        covariance.ger(1.0, &centered, &centered, 1.0);
        for j in 0..d {
            centered[j] = f64::from(row[j]) - background_mean[j];
        }
        background_covariance.ger(1.0, &centered, &centered, 1.0);
    }
    covariance /= n;
    background_covariance /= n;

    let eps = match shrinkage {
        Shrinkage::Fixed(e) if e >= 0.0 && e.is_finite() => e,
        Shrinkage::Fixed(e) => return Err(Error::InvalidShrinkage(e)),
        Shrinkage::Auto => AUTO_SHRINKAGE_FACTOR * covariance.trace() / d as f64,
    };
    for j in 0..d {
        covariance[(j, j)] += eps;
        background_covariance[(j, j)] += eps;
    }

    let factor_c = factor(&covariance)?;
    let factor_b = factor(&background_covariance)?;
    let whitened_means = class_means.iter().map(|m| whiten(&factor_c, m)).collect();
    let whitened_background = whiten(&factor_b, &background_mean);

    Ok(GaussianStats {
        class_means,
        covariance,
        factor: factor_c,
        background_mean,
        background_covariance,
        background_factor: factor_b,
        shrinkage: eps,
        whitened_means,
        whitened_background,
    })
}

fn check_dim(stats: &GaussianStats, images: &EmbeddingMatrix) -> Result<()> {
    if images.dim() != stats.dim() {
        return Err(Error::DimensionMismatch {
            expected: stats.dim(),
            found: images.dim(),
        });
    }
    Ok(())
}

/// Negative squared Mahalanobis distance to the closest class mean.
pub fn mahalanobis_score(stats: &GaussianStats, images: &EmbeddingMatrix) -> Result<ScoreVector> {
    check_dim(stats, images)?;
    let values = images
        .iter_rows()
        .map(|z| {
            let (class, _) = stats.distances(z);
            -class.into_iter().fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(ScoreVector::new(Method::Mahalanobis, values))
}

/// `-min_k [MD_k(z) - MD_0(z)]` with `MD_0` the background distance.
pub fn rmds_score(stats: &GaussianStats, images: &EmbeddingMatrix) -> Result<ScoreVector> {
    check_dim(stats, images)?;
    let values = images
        .iter_rows()
        .map(|z| {
            let (class, background) = stats.distances(z);
            -class
                .into_iter()
                .map(|md| md - background)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(ScoreVector::new(Method::Rmds, values))
}
