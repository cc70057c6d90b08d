//! ID-vs-OOD detection metrics. ID is the positive class; a sample is
//! called ID when its score is `>=` the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::Method;
use crate::store::{format_sig9, LabelVector};

/// Threshold convention recorded in every report.
pub const THRESHOLD_CONVENTION: &str =
    "largest threshold t with TPR(score >= t) >= level; FPR = fraction of OOD with score >= t";

pub const FPR95_LEVEL: f64 = 0.95;

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(row) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteValue { row, col: 0 });
    }
    Ok(())
}

/// `(score, is_id)` pairs sorted ascending; `-0.0` is folded into `0.0` so
/// the sort order agrees with `==`.
fn pooled(id: &[f64], ood: &[f64]) -> Vec<(f64, bool)> {
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s + 0.0, true))
        .chain(ood.iter().map(|&s| (s + 0.0, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all
}

/// Runs of equal scores as `(score, id_count, ood_count)`, ascending.
fn tie_groups(id: &[f64], ood: &[f64]) -> Vec<(f64, u64, u64)> {
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for (s, is_id) in pooled(id, ood) {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if is_id {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, is_id as u64, !is_id as u64)),
        }
    }
    groups
}

/// Twice the Mann-Whitney U statistic: each (ID, OOD) pair scores 2 for an
/// ID win and 1 for a tie.
pub fn mann_whitney_u2(id_scores: &[f64], ood_scores: &[f64]) -> Result<u64> {
    check_scores(id_scores)?;
    check_scores(ood_scores)?;
    let mut u2 = 0u64;
    let mut ood_below = 0u64;
    for (_, a, b) in tie_groups(id_scores, ood_scores) {
        u2 += 2 * a * ood_below + a * b;
        ood_below += b;
    }
    Ok(u2)
}

/// Probability that a random ID score exceeds a random OOD score, ties
/// counting one half. `O((n + m) log(n + m))`.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    let u2 = mann_whitney_u2(id_scores, ood_scores)?;
    let pairs = 2 * id_scores.len() as u64 * ood_scores.len() as u64;
    Ok(u2 as f64 / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points at every distinct threshold, from `(0,0)` to `(1,1)`.
pub fn roc_curve(id_scores: &[f64], ood_scores: &[f64]) -> Result<Vec<RocPoint>> {
    check_scores(id_scores)?;
    check_scores(ood_scores)?;
    let n = id_scores.len() as f64;
    let m = ood_scores.len() as f64;
    let groups = tie_groups(id_scores, ood_scores);
    let mut points = Vec::with_capacity(groups.len() + 1);
    points.push(RocPoint { fpr: 0.0, tpr: 0.0 });
    let (mut tp, mut fp) = (0u64, 0u64);
    for &(_, a, b) in groups.iter().rev() {
        tp += a;
        fp += b;
        points.push(RocPoint {
            fpr: fp as f64 / m,
            tpr: tp as f64 / n,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a sequence of ROC points.
pub fn roc_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FprAtTpr {
    pub level: f64,
    pub fpr: f64,
    pub threshold: f64,
}

/// FPR on OOD at the largest threshold that keeps at least `level` of the
/// ID scores at or above it.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], level: f64) -> Result<FprAtTpr> {
    check_scores(id_scores)?;
    check_scores(ood_scores)?;
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    let n = id_scores.len();
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // Smallest count k with k/n >= level, evaluated exactly as the ratio.
    let mut k = ((level * n as f64).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / n as f64 >= level {
        k -= 1;
    }
    while (k as f64 / n as f64) < level && k < n {
        k += 1;
    }
    let threshold = sorted[k - 1];
    let false_pos = ood_scores.iter().filter(|&&s| s >= threshold).count();
    Ok(FprAtTpr {
        level,
        fpr: false_pos as f64 / ood_scores.len() as f64,
        threshold,
    })
}

/// Thresholded detector: 1 (ID) when `score >= alpha`, else 0 (OOD).
pub fn apply_detector(scores: &[f64], alpha: f64) -> LabelVector {
    LabelVector::new(scores.iter().map(|&s| u32::from(s >= alpha)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: Option<Method>,
    pub auroc: f64,
    pub fpr_at_tpr: Vec<FprAtTpr>,
    pub n_id: usize,
    pub n_ood: usize,
    pub threshold_convention: String,
}

impl DetectionReport {
    pub fn fpr_at(&self, level: f64) -> Option<f64> {
        self.fpr_at_tpr.iter().find(|r| r.level == level).map(|r| r.fpr)
    }
}

pub fn evaluate(
    method: Option<Method>,
    id_scores: &[f64],
    ood_scores: &[f64],
    levels: &[f64],
) -> Result<DetectionReport> {
    let auroc = auroc(id_scores, ood_scores)?;
    let fpr_at_tpr = levels
        .iter()
        .map(|&l| fpr_at_tpr(id_scores, ood_scores, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionReport {
        method,
        auroc,
        fpr_at_tpr,
        n_id: id_scores.len(),
        n_ood: ood_scores.len(),
        threshold_convention: THRESHOLD_CONVENTION.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub auroc: f64,
    pub fpr95: f64,
    pub delta_auroc: f64,
    pub delta_fpr95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline: Method,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, method: Method) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,auroc,fpr95,delta_auroc,delta_fpr95\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method,
                format_sig9(r.auroc),
                format_sig9(r.fpr95),
                format_sig9(r.delta_auroc),
                format_sig9(r.delta_fpr95)
            ));
        }
        out
    }
}

/// One row per method with AUROC, FPR95 and their differences from the
/// baseline (`method - baseline` for both columns).
pub fn compare_methods(score_sets: &[(Method, &[f64], &[f64])], baseline: Method) -> Result<ComparisonTable> {
    let mut rows = Vec::with_capacity(score_sets.len());
    for &(method, id, ood) in score_sets {
        rows.push(ComparisonRow {
            method,
            auroc: auroc(id, ood)?,
            fpr95: fpr_at_tpr(id, ood, FPR95_LEVEL)?.fpr,
            delta_auroc: 0.0,
            delta_fpr95: 0.0,
        });
    }
    let base = rows
        .iter()
        .find(|r| r.method == baseline)
        .map(|r| (r.auroc, r.fpr95))
        .ok_or_else(|| Error::UnknownBaseline(baseline.to_string()))?;
    for r in &mut rows {
        r.delta_auroc = r.auroc - base.0;
        r.delta_fpr95 = r.fpr95 - base.1;
    }
    Ok(ComparisonTable { baseline, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&[1.0], &[1.0]).unwrap(), 0.5);
        assert_eq!(auroc(&[3.0, 1.0], &[2.0, 0.0]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.0], &[-0.0]).unwrap(), 0.5);
        assert!(matches!(auroc(&[], &[1.0]), Err(Error::EmptyInput)));
        assert!(matches!(auroc(&[1.0], &[]), Err(Error::EmptyInput)));
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn roc_examples() {
        let pts = roc_curve(&[1.0], &[0.0]).unwrap();
        let xy: Vec<_> = pts.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(xy, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        let flat = roc_curve(&[0.3; 4], &[0.3; 7]).unwrap();
        assert_eq!(roc_area(&flat), 0.5);
        assert!(roc_curve(&[], &[1.0]).is_err());
    }

    #[test]
    fn fpr_examples() {
        let id: Vec<f64> = (1..=20).map(f64::from).collect();
        let r = fpr_at_tpr(&id, &[0.0, 1.0, 2.0, 3.0], 0.95).unwrap();
        assert_eq!((r.threshold, r.fpr), (2.0, 0.5));

        let r = fpr_at_tpr(&[10.0, 11.0], &[0.0, 1.0], 0.95).unwrap();
        assert_eq!(r.fpr, 0.0);

        let s = [0.1, 0.5, 0.5, 0.9];
        assert_eq!(fpr_at_tpr(&s, &s, 1.0).unwrap().fpr, 1.0);

        assert!(matches!(fpr_at_tpr(&s, &s, 0.0), Err(Error::InvalidLevel(_))));
        assert!(matches!(fpr_at_tpr(&s, &s, 1.5), Err(Error::InvalidLevel(_))));
        assert!(matches!(fpr_at_tpr(&[], &s, 0.5), Err(Error::EmptyInput)));
    }

    #[test]
    fn detector_examples() {
        assert_eq!(apply_detector(&[0.5], 0.5).values(), &[1]);
        assert_eq!(apply_detector(&[0.4999], 0.5).values(), &[0]);
        let s = [0.3, -2.0, 7.5];
        let floor = s.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        assert_eq!(apply_detector(&s, floor).values(), &[1, 1, 1]);
    }

    #[test]
    fn compare_examples() {
        let id = [0.9, 0.8, 0.7];
        let ood = [0.75, 0.1];
        let t = compare_methods(&[(Method::MaxLogit, &id, &ood)], Method::MaxLogit).unwrap();
        assert_eq!(t.rows[0].delta_auroc, 0.0);
        assert_eq!(t.rows[0].delta_fpr95, 0.0);

        let better = [0.9, 0.85, 0.8];
        let t = compare_methods(
            &[(Method::MaxLogit, &id, &ood), (Method::ClsM, &better, &ood)],
            Method::MaxLogit,
        )
        .unwrap();
        let cls = t.row(Method::ClsM).unwrap();
        assert!((cls.delta_auroc - (cls.auroc - t.rows[0].auroc)).abs() < 1e-15);
        assert!(cls.delta_auroc > 0.0);
        assert!(cls.delta_fpr95 < 0.0);
        assert!(t
            .to_csv()
            .starts_with("method,auroc,fpr95,delta_auroc,delta_fpr95\nMaxLogit,"));

        assert!(matches!(
            compare_methods(&[(Method::MaxLogit, &id, &ood)], Method::Energy),
            Err(Error::UnknownBaseline(_))
        ));
    }

    #[test]
    fn report_counts_and_levels() {
        let r = evaluate(Some(Method::Energy), &[1.0, 2.0, 3.0], &[0.0, 2.5], &[0.95, 0.5]).unwrap();
        assert_eq!((r.n_id, r.n_ood), (3, 2));
        assert_eq!(r.fpr_at_tpr.len(), 2);
        assert_eq!(r.fpr_at(0.5), Some(0.5));
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"method\":\"Energy\""));
    }
}
