//! AUROC family, regression score, significance tests and the transfer and
//! subgroup analyses built on top of them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::tasks::Category;

/// Rank-sum AUROC with midranks for ties: `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`.
/// `None` when only one class is present.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += mid * tied_pos as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean over the labels that are not degenerate; `None` if all are.
pub fn macro_mean(per_label: &[Option<f64>]) -> Option<f64> {
    let valid: Vec<f64> = per_label.iter().flatten().copied().collect();
    if valid.is_empty() {
        None
    } else {
        Some(valid.iter().sum::<f64>() / valid.len() as f64)
    }
}

/// One-vs-rest AUROC per column of a row-major `[n × k]` score matrix.
pub fn one_vs_rest(scores: &[f64], k: usize, classes: &[usize]) -> Vec<Option<f64>> {
    assert_eq!(scores.len(), classes.len() * k);
    (0..k)
        .map(|c| {
            let s: Vec<f64> = scores.chunks(k).map(|row| row[c]).collect();
            let l: Vec<bool> = classes.iter().map(|&y| y == c).collect();
            auroc(&s, &l)
        })
        .collect()
}

/// Score used in place of AUROC for regression targets.
pub fn regression_analog(r_squared: f64) -> f64 {
    2f64.powf(r_squared - 1.0)
}

/// `1 − SSE/SST` pooled over all entries; `None` with fewer than two points
/// or zero target variance.
pub fn r_squared(pred: &[f64], target: &[f64]) -> Option<f64> {
    if pred.len() < 2 || pred.len() != target.len() {
        return None;
    }
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let sst: f64 = target.iter().map(|y| (y - mean).powi(2)).sum();
    if sst == 0.0 {
        return None;
    }
    let sse: f64 = pred.iter().zip(target).map(|(p, y)| (p - y).powi(2)).sum();
    Some(1.0 - sse / sst)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1); zero for a single value.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    Welch,
    Student,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

impl TTest {
    pub fn significant(&self) -> bool {
        self.p < 0.05
    }
}

/// Two-sided two-sample t-test. `None` when either sample has fewer than two
/// values.
pub fn t_test(a: &[f64], b: &[f64], kind: TTestKind) -> Option<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (std_dev(a).powi(2), std_dev(b).powi(2));
    let (se2, df) = match kind {
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let denom = qa * qa / (na - 1.0) + qb * qb / (nb - 1.0);
            (se2, if denom > 0.0 { se2 * se2 / denom } else { na + nb - 2.0 })
        }
        TTestKind::Student => {
            let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0);
            (pooled * (1.0 / na + 1.0 / nb), na + nb - 2.0)
        }
    };
    let diff = ma - mb;
    if se2 == 0.0 {
        let p = if diff == 0.0 { 1.0 } else { 0.0 };
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        return Some(TTest { t, df, p });
    }
    let t = diff / se2.sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Some(TTest { t, df, p })
}

/// Per-seed category scores for one condition (for example full MT, or MT
/// with one category omitted).
pub type SeedScores = BTreeMap<u64, BTreeMap<Category, f64>>;

/// One cell of a transfer matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransferCell {
    Delta { mean: f64, seeds: usize },
    /// No seed had both the omitted run and the full run.
    Missing,
    /// Omitted task equals reported task.
    Diagonal,
}

impl TransferCell {
    pub fn value(&self) -> Option<f64> {
        match self {
            TransferCell::Delta { mean, .. } => Some(*mean),
            _ => None,
        }
    }
}

/// `Δ(t, r) = M_¬t(r) − M(r)` averaged over the seeds present in both runs.
/// Rows are omitted tasks, columns reported tasks. Positive values mean that
/// dropping `t` helped `r`.
pub fn negative_transfer_matrix(
    full: &SeedScores,
    omitted: &BTreeMap<Category, SeedScores>,
    categories: &[Category],
) -> BTreeMap<(Category, Category), TransferCell> {
    let mut out = BTreeMap::new();
    for &t in categories {
        for &r in categories {
            if t == r {
                out.insert((t, r), TransferCell::Diagonal);
                continue;
            }
            let mut deltas = Vec::new();
            if let Some(om) = omitted.get(&t) {
                for (seed, scores) in om {
                    let Some(with) = full.get(seed).and_then(|s| s.get(&r)) else { continue };
                    if let Some(without) = scores.get(&r) {
                        deltas.push(without - with);
                    }
                }
            }
            out.insert(
                (t, r),
                if deltas.is_empty() {
                    TransferCell::Missing
                } else {
                    TransferCell::Delta {
                        mean: mean(&deltas),
                        seeds: deltas.len(),
                    }
                },
            );
        }
    }
    out
}

/// The same matrix read the other way: `M(r) − M_¬t(r)`, the benefit of
/// including `t` for `r`.
pub fn transfer_benefit(matrix: &BTreeMap<(Category, Category), TransferCell>) -> BTreeMap<(Category, Category), TransferCell> {
    matrix
        .iter()
        .map(|(&k, &c)| {
            (
                k,
                match c {
                    TransferCell::Delta { mean, seeds } => TransferCell::Delta { mean: -mean, seeds },
                    other => other,
                },
            )
        })
        .collect()
}

/// Male minus female AUROC, in AUROC×100 units. `None` if either subgroup
/// is degenerate.
pub fn sex_discrepancy(scores: &[f64], labels: &[bool], male: &[bool]) -> Option<f64> {
    let pick = |want: bool| -> (Vec<f64>, Vec<bool>) {
        scores
            .iter()
            .zip(labels)
            .zip(male)
            .filter(|(_, &m)| m == want)
            .map(|((&s, &l), _)| (s, l))
            .unzip()
    };
    let (sm, lm) = pick(true);
    let (sf, lf) = pick(false);
    Some(100.0 * (auroc(&sm, &lm)? - auroc(&sf, &lf)?))
}
