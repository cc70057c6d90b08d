//! Independent brute-force oracles shared by the integration and acceptance
//! tests. Nothing here calls into the routines it is used to check.
#![allow(dead_code)]

use clsood::{EmbeddingMatrix, LabelVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, to stay independent of rand_distr.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let values = (0..rows * dim).map(|_| gaussian(rng) as f32).collect();
    EmbeddingMatrix::new(rows, dim, values).unwrap()
}

pub fn random_unit_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let mut values = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        values.extend(v.iter().map(|x| (x / n) as f32));
    }
    EmbeddingMatrix::new(rows, dim, values).unwrap()
}

pub fn to_f64_rows(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|&v| f64::from(v)).collect())
        .collect()
}

/// Pairwise AUROC with exact integer counting: 2 per win, 1 per tie.
pub fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut u2: u64 = 0;
    for &a in id {
        for &b in ood {
            if a > b {
                u2 += 2;
            } else if a == b {
                u2 += 1;
            }
        }
    }
    u2 as f64 / (2 * id.len() as u64 * ood.len() as u64) as f64
}

/// Enumerates every observed score as a threshold and keeps the largest one
/// whose TPR reaches `level`.
pub fn brute_fpr_at_tpr(id: &[f64], ood: &[f64], level: f64) -> (f64, f64) {
    let mut best: Option<f64> = None;
    for &t in id.iter().chain(ood) {
        let tp = id.iter().filter(|&&s| s >= t).count();
        if tp as f64 / id.len() as f64 >= level && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    let t = best.expect("the minimum ID score always qualifies");
    let fp = ood.iter().filter(|&&s| s >= t).count();
    (fp as f64 / ood.len() as f64, t)
}

/// Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular");
        for v in &mut m[col] {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (v, p) in m[r].iter_mut().zip(&pivot_row) {
                        *v -= f * p;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub struct DenseGaussians {
    pub means: Vec<Vec<f64>>,
    pub cov: Vec<Vec<f64>>,
    pub bg_mean: Vec<f64>,
    pub bg_cov: Vec<Vec<f64>>,
}

fn outer_mean(rows: &[Vec<f64>], centers: &[&Vec<f64>], eps: f64) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut cov = vec![vec![0.0; d]; d];
    for (z, mu) in rows.iter().zip(centers) {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (z[i] - mu[i]) * (z[j] - mu[j]);
            }
        }
    }
    for (i, row) in cov.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= n;
        }
        row[i] += eps;
    }
    cov
}

/// Textbook pooled within-class MLE covariance plus `eps * I`.
pub fn dense_gaussians(train: &EmbeddingMatrix, labels: &LabelVector, eps: f64) -> DenseGaussians {
    let rows = to_f64_rows(train);
    let d = train.dim();
    let k = *labels.values().iter().max().unwrap() as usize;
    let mut means = vec![vec![0.0; d]; k];
    let mut counts = vec![0.0; k];
    for (z, &y) in rows.iter().zip(labels.values()) {
        counts[y as usize - 1] += 1.0;
        for j in 0..d {
            means[y as usize - 1][j] += z[j];
        }
    }
    for (m, c) in means.iter_mut().zip(&counts) {
        for v in m.iter_mut() {
            *v /= c;
        }
    }
    let mut bg_mean = vec![0.0; d];
    for z in &rows {
        for j in 0..d {
            bg_mean[j] += z[j] / rows.len() as f64;
        }
    }
    let centers: Vec<&Vec<f64>> = labels.values().iter().map(|&y| &means[y as usize - 1]).collect();
    let cov = outer_mean(&rows, &centers, eps);
    let bg_cov = outer_mean(&rows, &vec![&bg_mean; rows.len()], eps);
    DenseGaussians {
        means,
        cov,
        bg_mean,
        bg_cov,
    }
}

pub fn quad_form(inv: &[Vec<f64>], z: &[f64], mu: &[f64]) -> f64 {
    let d = z.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += (z[i] - mu[i]) * inv[i][j] * (z[j] - mu[j]);
        }
    }
    s
}

/// `(mahalanobis, rmds)` scores via explicit inverses.
pub fn dense_scores(g: &DenseGaussians, queries: &EmbeddingMatrix) -> (Vec<f64>, Vec<f64>) {
    let inv = gauss_jordan_inverse(&g.cov);
    let bg_inv = gauss_jordan_inverse(&g.bg_cov);
    let mut md = Vec::new();
    let mut rmds = Vec::new();
    for z in to_f64_rows(queries) {
        let dists: Vec<f64> = g.means.iter().map(|mu| quad_form(&inv, &z, mu)).collect();
        let bg = quad_form(&bg_inv, &z, &g.bg_mean);
        md.push(-dists.iter().cloned().fold(f64::INFINITY, f64::min));
        rmds.push(-dists.iter().map(|d| d - bg).fold(f64::INFINITY, f64::min));
    }
    (md, rmds)
}

/// Negative distance to the k-th nearest training row by sorting all
/// distances.
pub fn knn_oracle(train: &EmbeddingMatrix, queries: &EmbeddingMatrix, k: usize) -> Vec<f64> {
    let train = to_f64_rows(train);
    to_f64_rows(queries)
        .iter()
        .map(|z| {
            let mut d: Vec<f64> = train
                .iter()
                .map(|t| z.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            -d[k - 1]
        })
        .collect()
}

pub fn mean_distance_oracle(train: &EmbeddingMatrix, queries: &EmbeddingMatrix) -> f64 {
    let train = to_f64_rows(train);
    let queries = to_f64_rows(queries);
    let mut total = 0.0;
    for q in &queries {
        for t in &train {
            total += q.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    total / (train.len() * queries.len()) as f64
}

/// Least-squares slope of `y` on `x` from the 2x2 normal equations.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// MLE covariance of `x` and `y - beta x`, expanded as in the derivation:
/// `(1/N) sum (x_i - mu_x)(y_i - beta x_i - mu_y + beta mu_x)`.
pub fn residual_cov_oracle(x: &[f64], y: &[f64], beta: f64) -> f64 {
    let n = x.len() as f64;
    let mu_x = x.iter().sum::<f64>() / n;
    let mu_y = y.iter().sum::<f64>() / n;
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| (xi - mu_x) * (yi - beta * xi - mu_y + beta * mu_x))
        .sum::<f64>()
        / n
}

/// Scores drawn from a small integer set (heavy ties) or a continuum.
pub fn random_scores(rng: &mut ChaCha8Rng, n: usize, tied: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if tied {
                f64::from(rng.gen_range(0..6))
            } else {
                gaussian(rng)
            }
        })
        .collect()
}
