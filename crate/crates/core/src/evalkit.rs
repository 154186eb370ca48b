//! Reciprocal evaluation: confusion counts over scored pairs, the
//! precision/recall/F1 family, ROC sweep with trapezoidal AUC, train-split
//! threshold selection, and 2-D embedding projection for plot export.
//!
//! Two recall flavors are reported. The set-based formulas define recall as
//! `|RL| / |R|` (recommended matches over all recommended), which equals
//! precision whenever every recommended pair carries a label, as is the
//! case here; it shrinks with the recommendation set. The standard recall
//! `|RL| / P` (over all positives) is emitted alongside under a separate
//! name, and threshold selection maximizes the standard F1.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::UserId;

/// One scored unordered pair with its ground-truth label
/// (1 = match, 0 = like-dislike).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScoredPair {
    pub x: UserId,
    pub y: UserId,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need both labels present to evaluate")]
    DegenerateLabels,
    #[error("no pairs to evaluate")]
    Empty,
}

/// Counts at a threshold: recommended matches (`rl`), recommended
/// like-dislikes (`rn`), and the recommendation set size (`r`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub rl: usize,
    pub rn: usize,
    pub r: usize,
}

/// Pairs with `score >= t` are recommended.
pub fn confusion_at_threshold(pairs: &[ScoredPair], t: f64) -> Confusion {
    let mut c = Confusion { rl: 0, rn: 0, r: 0 };
    for p in pairs {
        if p.score >= t {
            c.r += 1;
            if p.label == 1 {
                c.rl += 1;
            } else {
                c.rn += 1;
            }
        }
    }
    c
}

/// The metric family at one threshold. `recall_set` / `f1_set` follow the
/// set-based formulas; `recall_std` / `f1_std` use total positives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall_set: f64,
    pub f1_set: f64,
    pub recall_std: f64,
    pub f1_std: f64,
}

/// Compute the metric family from counts. Zero-denominator convention:
/// precision and recall are 0 when `|R| = 0`; F1 is 0 when its denominator
/// vanishes.
pub fn prf1(counts: Confusion, total_positives: usize) -> Prf {
    let precision = if counts.rl + counts.rn == 0 { 0.0 } else { counts.rl as f64 / (counts.rl + counts.rn) as f64 };
    let recall_set = if counts.r == 0 { 0.0 } else { counts.rl as f64 / counts.r as f64 };
    let f1_set =
        if precision + recall_set == 0.0 { 0.0 } else { 2.0 * precision * recall_set / (precision + recall_set) };
    let recall_std = if total_positives == 0 { 0.0 } else { counts.rl as f64 / total_positives as f64 };
    let f1_std =
        if precision + recall_std == 0.0 { 0.0 } else { 2.0 * precision * recall_std / (precision + recall_std) };
    Prf { precision, recall_set, f1_set, recall_std, f1_std }
}

/// One point of the ROC curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Threshold sweep over all distinct scores (plus sentinels); AUC by the
/// trapezoidal rule over false-positive rate.
pub fn roc_and_auc(pairs: &[ScoredPair]) -> Result<(Vec<RocPoint>, f64), EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let positives = pairs.iter().filter(|p| p.label == 1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    let mut sorted: Vec<&ScoredPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        // Consume the whole tie group before emitting a point.
        while i < sorted.len() && sorted[i].score == score {
            if sorted[i].label == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: score,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0;
    }
    Ok((points, auc))
}

/// The threshold (among observed scores) maximizing the standard F1 on the
/// given pairs; ties resolved toward the lowest threshold.
pub fn best_f1_threshold(pairs: &[ScoredPair]) -> Result<f64, EvalError> {
    let positives = pairs.iter().filter(|p| p.label == 1).count();
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    if positives == 0 || positives == pairs.len() {
        return Err(EvalError::DegenerateLabels);
    }
    let mut sorted: Vec<&ScoredPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));

    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_t = sorted[0].score;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].score;
        while i < sorted.len() && sorted[i].score == score {
            if sorted[i].label == 1 {
                tp += 1;
            }
            seen += 1;
            i += 1;
        }
        let precision = tp as f64 / seen as f64;
        let recall = tp as f64 / positives as f64;
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        // `>=` walks ties toward lower thresholds.
        if f1 >= best_f1 {
            best_f1 = f1;
            best_t = score;
        }
    }
    Ok(best_t)
}

/// A deterministic 128-d -> 2-d projector.
pub trait Projector {
    fn project(&self, embeddings: &[Array1<f64>]) -> Vec<[f64; 2]>;
}

/// Variance-maximizing linear projection (top two principal directions via
/// power iteration with deflation). Deterministic; no randomness involved.
#[derive(Clone, Copy, Debug, Default)]
pub struct VarianceProjector;

impl VarianceProjector {
    fn top_direction(cov: &Array2<f64>) -> (Array1<f64>, f64) {
        let d = cov.shape()[0];
        let mut v = Array1::<f64>::from_elem(d, 1.0 / (d as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..200 {
            let mut w = cov.dot(&v);
            let norm = w.dot(&w).sqrt();
            if norm < 1e-300 {
                return (v, 0.0);
            }
            w /= norm;
            lambda = norm;
            v = w;
        }
        // Canonical sign: the largest-magnitude coordinate is positive.
        let (mut max_abs, mut max_idx) = (0.0, 0);
        for (i, &x) in v.iter().enumerate() {
            if x.abs() > max_abs {
                max_abs = x.abs();
                max_idx = i;
            }
        }
        if v[max_idx] < 0.0 {
            v.mapv_inplace(|x| -x);
        }
        (v, lambda)
    }
}

impl Projector for VarianceProjector {
    fn project(&self, embeddings: &[Array1<f64>]) -> Vec<[f64; 2]> {
        assert!(embeddings.len() >= 2, "projection needs at least two embeddings");
        let n = embeddings.len();
        let d = embeddings[0].len();
        let mut mean = Array1::<f64>::zeros(d);
        for e in embeddings {
            mean = &mean + e;
        }
        mean /= n as f64;
        let mut centered = Array2::<f64>::zeros((n, d));
        for (i, e) in embeddings.iter().enumerate() {
            centered.row_mut(i).assign(&(e - &mean));
        }
        let cov = centered.t().dot(&centered) / n as f64;
        let (v1, l1) = Self::top_direction(&cov);
        let deflated = &cov - &(l1 * &v1.view().insert_axis(ndarray::Axis(1)).dot(&v1.view().insert_axis(ndarray::Axis(0))));
        let (v2, _) = Self::top_direction(&deflated);
        embeddings.iter().map(|e| [(e - &mean).dot(&v1), (e - &mean).dot(&v2)]).collect()
    }
}

/// Project labeled embeddings to 2-D plot rows.
pub fn project_embeddings<P: Projector>(
    embeddings: &[Array1<f64>],
    labels: &[u8],
    projector: &P,
) -> Vec<([f64; 2], u8)> {
    assert_eq!(embeddings.len(), labels.len());
    projector.project(embeddings).into_iter().zip(labels.iter().copied()).collect()
}

/// A full evaluation of one model over a shared eval pair set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub threshold: f64,
    pub counts: Confusion,
    pub total_positives: usize,
    pub total_pairs: usize,
    pub metrics: Prf,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    /// Digest of the eval pair set; reports over the same split share it.
    pub eval_pairs_digest: String,
    /// Set when the set-based recall/F1 equal precision because every
    /// recommended pair carries a label.
    pub note: String,
}

impl EvalReport {
    /// Build a report at a chosen threshold.
    pub fn build(
        model: impl Into<String>,
        pairs: &[ScoredPair],
        threshold: f64,
        eval_pairs_digest: impl Into<String>,
    ) -> Result<Self, EvalError> {
        let counts = confusion_at_threshold(pairs, threshold);
        let total_positives = pairs.iter().filter(|p| p.label == 1).count();
        let metrics = prf1(counts, total_positives);
        let (roc, auc) = roc_and_auc(pairs)?;
        let note = "set-based recall uses |RL|/|R| and equals precision on fully labeled pairs; \
                    recall_std uses total positives"
            .to_string();
        Ok(EvalReport {
            model: model.into(),
            threshold,
            counts,
            total_positives,
            total_pairs: pairs.len(),
            metrics,
            roc,
            auc,
            eval_pairs_digest: eval_pairs_digest.into(),
            note,
        })
    }

    /// Recompute the metric family from the stored counts; must match the
    /// stored metrics exactly.
    pub fn metrics_consistent(&self) -> bool {
        prf1(self.counts, self.total_positives) == self.metrics
    }

    /// ROC points as a two-column (fpr, tpr) tab-separated table.
    pub fn roc_table(&self) -> String {
        let mut out = String::from("fpr\ttpr\n");
        for p in &self.roc {
            out.push_str(&format!("{:.6}\t{:.6}\n", p.fpr, p.tpr));
        }
        out
    }
}

/// Projection rows as a three-column (x, y, label) tab-separated table.
pub fn projection_table(rows: &[([f64; 2], u8)]) -> String {
    let mut out = String::from("x\ty\tlabel\n");
    for (xy, label) in rows {
        out.push_str(&format!("{:.6}\t{:.6}\t{}\n", xy[0], xy[1], label));
    }
    out
}

/// Digest of a scored pair set (order-sensitive on the canonical listing).
pub fn scored_pairs_digest(pairs: &[ScoredPair]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for p in pairs {
        hasher.update(format!("{}\t{}\t{}\n", p.x, p.y, p.label).as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(score: f64, label: u8) -> ScoredPair {
        ScoredPair { x: UserId::x(0), y: UserId::y(0), score, label }
    }

    #[test]
    fn threshold_zero_recommends_everything() {
        let pairs = vec![pair(0.9, 1), pair(0.1, 0), pair(0.5, 1)];
        let c = confusion_at_threshold(&pairs, 0.0);
        assert_eq!(c, Confusion { rl: 2, rn: 1, r: 3 });
    }

    #[test]
    fn threshold_above_max_recommends_nothing() {
        let pairs = vec![pair(0.9, 1), pair(0.1, 0)];
        let c = confusion_at_threshold(&pairs, 0.95);
        assert_eq!(c, Confusion { rl: 0, rn: 0, r: 0 });
    }

    #[test]
    fn four_pair_enumeration() {
        let pairs = vec![pair(0.9, 1), pair(0.8, 0), pair(0.6, 1), pair(0.2, 0)];
        let c = confusion_at_threshold(&pairs, 0.5);
        assert_eq!(c, Confusion { rl: 2, rn: 1, r: 3 });
    }

    #[test]
    fn precision_arithmetic() {
        let m = prf1(Confusion { rl: 3, rn: 1, r: 4 }, 10);
        assert!((m.precision - 0.75).abs() < 1e-15);
    }

    #[test]
    fn set_recall_uses_recommendation_size() {
        let m = prf1(Confusion { rl: 2, rn: 2, r: 4 }, 100);
        assert!((m.recall_set - 0.5).abs() < 1e-15);
        assert!((m.recall_std - 0.02).abs() < 1e-15);
    }

    #[test]
    fn f1_of_equal_precision_recall() {
        let m = prf1(Confusion { rl: 3, rn: 1, r: 4 }, 4);
        // precision = recall_set = 0.75 here -> f1_set = 0.75.
        assert!((m.f1_set - 0.75).abs() < 1e-15);
    }

    #[test]
    fn zero_denominators_give_zero() {
        let m = prf1(Confusion { rl: 0, rn: 0, r: 0 }, 0);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall_set, 0.0);
        assert_eq!(m.f1_set, 0.0);
        assert_eq!(m.recall_std, 0.0);
        assert_eq!(m.f1_std, 0.0);
    }

    #[test]
    fn perfect_separation_gives_auc_exactly_one() {
        let pairs: Vec<ScoredPair> =
            (0..10).map(|i| pair(0.9 - i as f64 * 0.01, 1)).chain((0..10).map(|i| pair(0.3 - i as f64 * 0.01, 0))).collect();
        let (_, auc) = roc_and_auc(&pairs).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn reversed_scores_give_one_minus_auc() {
        let pairs: Vec<ScoredPair> = (0..40)
            .map(|i| pair((i as f64 * 0.7).sin().abs(), if i % 3 == 0 { 1 } else { 0 }))
            .collect();
        let (_, auc) = roc_and_auc(&pairs).unwrap();
        let reversed: Vec<ScoredPair> = pairs.iter().map(|p| ScoredPair { score: -p.score, ..*p }).collect();
        let (_, auc_rev) = roc_and_auc(&reversed).unwrap();
        assert!((auc + auc_rev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shuffled_labels_give_half_auc() {
        // Seeded Monte-Carlo: labels independent of scores.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(123);
        let pairs: Vec<ScoredPair> =
            (0..10_000).map(|_| pair(rng.gen::<f64>(), if rng.gen_bool(0.4) { 1 } else { 0 })).collect();
        let (_, auc) = roc_and_auc(&pairs).unwrap();
        assert!((auc - 0.5).abs() < 0.02, "auc {auc}");
    }

    #[test]
    fn roc_is_monotone_and_bounded() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let pairs: Vec<ScoredPair> = (0..500)
            .map(|_| {
                let label = rng.gen_bool(0.5);
                let score = if label { rng.gen::<f64>() * 0.8 + 0.2 } else { rng.gen::<f64>() * 0.8 };
                pair(score, label as u8)
            })
            .collect();
        let (points, auc) = roc_and_auc(&pairs).unwrap();
        for w in points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr);
            assert!(w[1].tpr >= w[0].tpr);
        }
        assert!((0.0..=1.0).contains(&auc));
        assert_eq!(points.first().unwrap().fpr, 0.0);
        assert_eq!(points.last().unwrap().tpr, 1.0);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let all_pos = vec![pair(0.5, 1), pair(0.6, 1)];
        assert_eq!(roc_and_auc(&all_pos).unwrap_err(), EvalError::DegenerateLabels);
        assert_eq!(best_f1_threshold(&all_pos).unwrap_err(), EvalError::DegenerateLabels);
    }

    #[test]
    fn perfectly_separated_picks_lowest_maximizing_threshold() {
        let pairs = vec![pair(0.9, 1), pair(0.8, 1), pair(0.7, 1), pair(0.2, 0), pair(0.1, 0)];
        // F1 = 1.0 anywhere in the gap; the lowest candidate achieving it is
        // the lowest positive score.
        let t = best_f1_threshold(&pairs).unwrap();
        assert_eq!(t, 0.7);
    }

    #[test]
    fn single_positive_at_top_selects_that_score() {
        let pairs = vec![pair(0.95, 1), pair(0.5, 0), pair(0.4, 0)];
        assert_eq!(best_f1_threshold(&pairs).unwrap(), 0.95);
    }

    #[test]
    fn identical_embeddings_project_identically() {
        let e = Array1::from_shape_fn(16, |i| i as f64 * 0.1);
        let rows = project_embeddings(&[e.clone(), e.clone(), Array1::zeros(16)], &[1, 1, 0], &VarianceProjector);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].0, rows[1].0);
    }

    #[test]
    fn projection_row_count_matches_input() {
        let embeddings: Vec<Array1<f64>> =
            (0..20).map(|i| Array1::from_shape_fn(8, |k| ((i * k) as f64).sin())).collect();
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let rows = project_embeddings(&embeddings, &labels, &VarianceProjector);
        assert_eq!(rows.len(), 20);
    }

    #[test]
    fn variance_projector_finds_dominant_axis() {
        // Points spread along one axis: first projected coordinate carries
        // nearly all variance.
        let embeddings: Vec<Array1<f64>> = (0..50)
            .map(|i| {
                let mut v = Array1::zeros(6);
                v[2] = i as f64; // dominant direction
                v[4] = (i % 3) as f64 * 0.01;
                v
            })
            .collect();
        let rows = VarianceProjector.project(&embeddings);
        let var1: f64 = {
            let mean = rows.iter().map(|r| r[0]).sum::<f64>() / rows.len() as f64;
            rows.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / rows.len() as f64
        };
        let var2: f64 = {
            let mean = rows.iter().map(|r| r[1]).sum::<f64>() / rows.len() as f64;
            rows.iter().map(|r| (r[1] - mean).powi(2)).sum::<f64>() / rows.len() as f64
        };
        assert!(var1 > 100.0 * var2.max(1e-12), "var1 {var1}, var2 {var2}");
    }

    #[test]
    fn report_metrics_are_recomputable() {
        let pairs: Vec<ScoredPair> =
            (0..50).map(|i| pair(1.0 / (1.0 + i as f64), if i % 4 == 0 { 1 } else { 0 })).collect();
        let report = EvalReport::build("test", &pairs, 0.1, scored_pairs_digest(&pairs)).unwrap();
        assert!(report.metrics_consistent());
        assert!(report.roc_table().starts_with("fpr\ttpr\n"));
    }

    /// Hand-computed metric table. Each row: (rl, rn, r, total_positives)
    /// with expected (precision, recall_set, f1_set, recall_std) worked out
    /// by hand from the formulas.
    #[test]
    fn metric_arithmetic_table() {
        #[rustfmt::skip]
        let cases: Vec<(usize, usize, usize, usize, f64, f64, f64, f64)> = vec![
            // rl, rn,  r, pos, precision, recall_set, f1_set, recall_std
            (  3,  1,  4,  4, 0.75,       0.75,        0.75,    0.75),
            (  2,  2,  4,  4, 0.5,        0.5,         0.5,     0.5),
            (  2,  0,  2,  4, 1.0,        1.0,         1.0,     0.5),
            (  0,  4,  4,  4, 0.0,        0.0,         0.0,     0.0),
            (  1,  3,  4,  2, 0.25,       0.25,        0.25,    0.5),
            (  5,  5, 10, 20, 0.5,        0.5,         0.5,     0.25),
            ( 10,  0, 10, 10, 1.0,        1.0,         1.0,     1.0),
            (  0,  0,  0, 10, 0.0,        0.0,         0.0,     0.0),
            (  1,  0,  1, 100, 1.0,       1.0,         1.0,     0.01),
            (  4,  4,  8,  8, 0.5,        0.5,         0.5,     0.5),
            (  6,  2,  8,  9, 0.75,       0.75,        0.75,    2.0/3.0),
            (  9,  3, 12, 18, 0.75,       0.75,        0.75,    0.5),
            (  8,  8, 16, 16, 0.5,        0.5,         0.5,     0.5),
            (  7,  1,  8, 14, 0.875,      0.875,       0.875,   0.5),
            ( 12,  4, 16, 24, 0.75,       0.75,        0.75,    0.5),
            (  3,  9, 12,  6, 0.25,       0.25,        0.25,    0.5),
            (  5,  0,  5,  5, 1.0,        1.0,         1.0,     1.0),
            (  2,  6,  8, 10, 0.25,       0.25,        0.25,    0.2),
            ( 15,  5, 20, 30, 0.75,       0.75,        0.75,    0.5),
            (  1,  1,  2,  2, 0.5,        0.5,         0.5,     0.5),
            (  4,  1,  5,  8, 0.8,        0.8,         0.8,     0.5),
            ( 20, 20, 40, 50, 0.5,        0.5,         0.5,     0.4),
        ];
        assert!(cases.len() >= 20);
        for (rl, rn, r, pos, ep, ers, ef1, erstd) in cases {
            let m = prf1(Confusion { rl, rn, r }, pos);
            assert!((m.precision - ep).abs() < 1e-12, "precision rl={rl} rn={rn}");
            assert!((m.recall_set - ers).abs() < 1e-12, "recall_set rl={rl} r={r}");
            assert!((m.f1_set - ef1).abs() < 1e-12, "f1_set rl={rl}");
            assert!((m.recall_std - erstd).abs() < 1e-12, "recall_std rl={rl} pos={pos}");
            // Standard F1 re-derivable from its parts.
            let expect_f1_std = if m.precision + m.recall_std == 0.0 {
                0.0
            } else {
                2.0 * m.precision * m.recall_std / (m.precision + m.recall_std)
            };
            assert!((m.f1_std - expect_f1_std).abs() < 1e-12);
        }
    }
}
