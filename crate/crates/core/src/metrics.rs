//! OOD-detection and classification metrics.
//!
//! Scores follow the convention "higher = more in-distribution". FPR95 treats
//! OOD detection as the positive event: it is the fraction of ID samples that
//! fall at or below the smallest threshold flagging at least 95% of the OOD
//! samples.

use std::cmp::Ordering;

use crate::error::{PattError, Result};

/// One scored test sample; `labels` is `(true, predicted)` for ID samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    pub is_id: bool,
    pub labels: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Positive {
    Id,
    Ood,
}

fn check_sides(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(PattError::contract("metric needs ID and OOD scores"));
    }
    if id.iter().chain(ood).any(|s| !s.is_finite()) {
        return Err(PattError::contract("scores must be finite"));
    }
    Ok(())
}

/// `P(id > ood) + P(id = ood) / 2` from midranks of the pooled scores.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_sides(id_scores, ood_scores)?;
    let mut pooled: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_id = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share the midrank.
        let mid = (i + 1 + j) as f64 / 2.0;
        let n_id = pooled[i..j].iter().filter(|p| p.1).count();
        rank_sum_id += mid * n_id as f64;
        i = j;
    }
    let n = id_scores.len() as f64;
    let m = ood_scores.len() as f64;
    Ok((rank_sum_id - n * (n + 1.0) / 2.0) / (n * m))
}

/// Average precision: `Σ (R_t - R_{t-1}) P_t` over distinct thresholds in
/// descending order, tied scores forming one threshold.
pub fn aupr(id_scores: &[f64], ood_scores: &[f64], positive: Positive) -> Result<f64> {
    check_sides(id_scores, ood_scores)?;
    let (pos, neg, sign) = match positive {
        Positive::Id => (id_scores, ood_scores, 1.0),
        Positive::Ood => (ood_scores, id_scores, -1.0),
    };
    let mut pooled: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (sign * s, true))
        .chain(neg.iter().map(|&s| (sign * s, false)))
        .collect();
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = pos.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            if pooled[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Number of OOD samples that must be flagged: `ceil(0.95 n)`.
fn required_ood(n: usize) -> usize {
    (95 * n).div_ceil(100)
}

pub fn fpr_at_95_tpr(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_sides(id_scores, ood_scores)?;
    let mut ood = ood_scores.to_vec();
    ood.sort_by(f64::total_cmp);
    let threshold = ood[required_ood(ood.len()) - 1];
    let fp = id_scores.iter().filter(|&&s| s <= threshold).count();
    Ok(fp as f64 / id_scores.len() as f64)
}

/// Overall accuracy plus accuracies over head and tail classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationReport {
    pub acc: f64,
    /// `None` when no test sample has a head-class label.
    pub acc_head: Option<f64>,
    pub acc_tail: Option<f64>,
    pub n_head: usize,
    pub n_tail: usize,
}

/// Indices of the `ceil(K * tail_fraction)` classes with the fewest training
/// samples; ties are broken toward higher class indices.
pub fn tail_classes(class_counts: &[usize], tail_fraction: f64) -> Result<Vec<bool>> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(PattError::contract(format!(
            "tail_fraction {tail_fraction} not in (0, 1)"
        )));
    }
    let k = class_counts.len();
    let n_tail = ((k as f64 * tail_fraction).ceil() as usize).min(k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| class_counts[b].cmp(&class_counts[a]).then(a.cmp(&b)));
    let mut is_tail = vec![false; k];
    for &c in &order[k - n_tail..] {
        is_tail[c] = true;
    }
    Ok(is_tail)
}

pub fn classification_report(
    pairs: &[(usize, usize)],
    class_counts: &[usize],
    tail_fraction: f64,
) -> Result<ClassificationReport> {
    if pairs.is_empty() {
        return Err(PattError::contract("classification report of no samples"));
    }
    let is_tail = tail_classes(class_counts, tail_fraction)?;
    let (mut correct, mut head, mut head_ok, mut tail, mut tail_ok) = (0, 0, 0, 0, 0);
    for &(t, p) in pairs {
        let ok = usize::from(t == p);
        correct += ok;
        match is_tail.get(t) {
            Some(true) => {
                tail += 1;
                tail_ok += ok;
            }
            Some(false) => {
                head += 1;
                head_ok += ok;
            }
            None => {
                return Err(PattError::UnknownClass {
                    class: t,
                    classes: class_counts.len(),
                })
            }
        }
    }
    let rate = |ok: usize, n: usize| (n > 0).then(|| ok as f64 / n as f64);
    Ok(ClassificationReport {
        acc: correct as f64 / pairs.len() as f64,
        acc_head: rate(head_ok, head),
        acc_tail: rate(tail_ok, tail),
        n_head: head,
        n_tail: tail,
    })
}

/// Detection and classification summary of one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub fpr95: f64,
    pub acc: f64,
    pub acc_head: Option<f64>,
    pub acc_tail: Option<f64>,
    pub n_id: usize,
    pub n_ood: usize,
    pub n_head: usize,
    pub n_tail: usize,
}

impl EvalReport {
    /// Column order of [`EvalReport::csv_row`]; absent group accuracies are empty fields.
    pub const CSV_HEADER: &'static str = "auroc,aupr_in,aupr_out,fpr95,acc,acc_head,acc_tail";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        format!(
            "{:?},{:?},{:?},{:?},{:?},{},{}",
            self.auroc,
            self.aupr_in,
            self.aupr_out,
            self.fpr95,
            self.acc,
            opt(self.acc_head),
            opt(self.acc_tail)
        )
    }
}

pub fn evaluate(
    samples: &[ScoredSample],
    class_counts: &[usize],
    tail_fraction: f64,
) -> Result<EvalReport> {
    let id: Vec<f64> = samples
        .iter()
        .filter(|s| s.is_id)
        .map(|s| s.score)
        .collect();
    let ood: Vec<f64> = samples
        .iter()
        .filter(|s| !s.is_id)
        .map(|s| s.score)
        .collect();
    let pairs: Vec<(usize, usize)> = samples
        .iter()
        .filter(|s| s.is_id)
        .map(|s| {
            s.labels
                .ok_or_else(|| PattError::contract("ID sample without labels"))
        })
        .collect::<Result<_>>()?;
    let cls = classification_report(&pairs, class_counts, tail_fraction)?;
    Ok(EvalReport {
        auroc: auroc(&id, &ood)?,
        aupr_in: aupr(&id, &ood, Positive::Id)?,
        aupr_out: aupr(&id, &ood, Positive::Ood)?,
        fpr95: fpr_at_95_tpr(&id, &ood)?,
        acc: cls.acc,
        acc_head: cls.acc_head,
        acc_tail: cls.acc_tail,
        n_id: id.len(),
        n_ood: ood.len(),
        n_head: cls.n_head,
        n_tail: cls.n_tail,
    })
}

/// Fraction of ID and OOD scores per bin over `[lo, hi]` of all scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    pub id_freq: Vec<f64>,
    pub ood_freq: Vec<f64>,
}

pub fn score_histogram(
    id_scores: &[f64],
    ood_scores: &[f64],
    bins: usize,
) -> Result<ScoreHistogram> {
    check_sides(id_scores, ood_scores)?;
    if bins == 0 {
        return Err(PattError::contract("histogram needs at least one bin"));
    }
    let all = id_scores.iter().chain(ood_scores);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let fill = |scores: &[f64]| {
        let mut h = vec![0.0; bins];
        for &s in scores {
            let b = (((s - lo) / width) as usize).min(bins - 1);
            h[b] += 1.0;
        }
        h.iter_mut().for_each(|v| *v /= scores.len() as f64);
        h
    };
    Ok(ScoreHistogram {
        edges,
        id_freq: fill(id_scores),
        ood_freq: fill(ood_scores),
    })
}

/// Median of a nonempty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
