use super::{Method, ScoreVector};
use crate::error::{Error, Result};
use crate::store::EmbeddingMatrix;

pub(crate) fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn check_dims(train: &EmbeddingMatrix, images: &EmbeddingMatrix) -> Result<()> {
    if train.dim() != images.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: images.dim(),
        });
    }
    Ok(())
}

/// Negative distance to the `k`-th nearest training row (exhaustive search).
pub fn knn_score(train: &EmbeddingMatrix, images: &EmbeddingMatrix, k: usize) -> Result<ScoreVector> {
    check_dims(train, images)?;
    if k == 0 || k > train.rows() {
        return Err(Error::InvalidNeighbors { k, rows: train.rows() });
    }
    let mut dists = vec![0.0; train.rows()];
    let values = images
        .iter_rows()
        .map(|z| {
            for (d, t) in dists.iter_mut().zip(train.iter_rows()) {
                *d = euclidean(z, t);
            }
            let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
            -*kth
        })
        .collect();
    Ok(ScoreVector::new(Method::Knn, values))
}

/// Mean over query rows of the mean Euclidean distance to every training row.
pub fn mean_distance_to_train(train: &EmbeddingMatrix, images: &EmbeddingMatrix) -> Result<f64> {
    check_dims(train, images)?;
    if train.rows() == 0 || images.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let n_train = train.rows() as f64;
    let total: f64 = images
        .iter_rows()
        .map(|z| train.iter_rows().map(|t| euclidean(z, t)).sum::<f64>() / n_train)
        .sum();
    Ok(total / images.rows() as f64)
}
