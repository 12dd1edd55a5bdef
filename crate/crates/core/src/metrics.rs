//! Evaluation of predicted force lists against labels.
//!
//! Per-force errors are computed after pairing predicted and true contacts
//! by minimum total circular impact-angle distance. Angular errors are
//! reported in degrees.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::elastic::{circular_distance, net_force, ForceTriplet, MAX_FORCES, MIN_FORCES};
use crate::error::{Error, Result};

/// Pairing of predicted to true contacts: `pairs[k] = (pred_index, truth_index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    /// Total circular impact-angle distance (radians).
    pub cost: f64,
}

/// Advances `perm` to the next lexicographic permutation; false when done.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Exhaustive minimum-cost assignment; ties keep the lexicographically
/// first permutation.
pub fn match_forces(pred: &[ForceTriplet], truth: &[ForceTriplet]) -> Result<Matching> {
    if pred.len() != truth.len() {
        return Err(Error::Domain(format!(
            "cannot pair {} predicted forces with {} true forces",
            pred.len(),
            truth.len()
        )));
    }
    let n = pred.len();
    let cost_of = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| circular_distance(pred[i].impact_angle, truth[j].impact_angle))
            .sum()
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = cost_of(&perm);
    while next_permutation(&mut perm) {
        let c = cost_of(&perm);
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
    }
    Ok(Matching {
        pairs: best.into_iter().enumerate().collect(),
        cost: best_cost,
    })
}

/// Pairs of `(predicted, true)` contacts after matching.
pub fn paired(pred: &[ForceTriplet], truth: &[ForceTriplet]) -> Result<Vec<(ForceTriplet, ForceTriplet)>> {
    let m = match_forces(pred, truth)?;
    Ok(m.pairs.iter().map(|&(i, j)| (pred[i], truth[j])).collect())
}

fn non_empty<T>(pairs: &[T]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Domain("metric over an empty pairing".into()));
    }
    Ok(())
}

/// Mean circular impact-angle error in degrees.
pub fn angle_mae(pairs: &[(ForceTriplet, ForceTriplet)]) -> Result<f64> {
    non_empty(pairs)?;
    let total: f64 = pairs
        .iter()
        .map(|(p, t)| circular_distance(p.impact_angle, t.impact_angle).to_degrees())
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Mean absolute tangent-angle error in degrees.
pub fn tangent_mae(pairs: &[(ForceTriplet, ForceTriplet)]) -> Result<f64> {
    non_empty(pairs)?;
    let total: f64 = pairs
        .iter()
        .map(|(p, t)| (p.tangent_angle - t.tangent_angle).abs().to_degrees())
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Mean absolute magnitude error in Newtons.
pub fn magnitude_mae(pairs: &[(ForceTriplet, ForceTriplet)]) -> Result<f64> {
    non_empty(pairs)?;
    let total: f64 = pairs.iter().map(|(p, t)| (p.magnitude - t.magnitude).abs()).sum();
    Ok(total / pairs.len() as f64)
}

/// Mean absolute percentage error of magnitudes, truth as denominator.
pub fn magnitude_mape(pairs: &[(ForceTriplet, ForceTriplet)]) -> Result<f64> {
    non_empty(pairs)?;
    let mut total = 0.0;
    for (p, t) in pairs {
        if t.magnitude == 0.0 {
            return Err(Error::Domain("zero true magnitude in MAPE".into()));
        }
        total += ((p.magnitude - t.magnitude) / t.magnitude).abs();
    }
    Ok(100.0 * total / pairs.len() as f64)
}

/// Equal-width bins over the mean true magnitude `⟨F⟩` of a particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanForceBins {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Default for MeanForceBins {
    fn default() -> Self {
        MeanForceBins { lo: 0.01, hi: 0.9, count: 8 }
    }
}

impl MeanForceBins {
    /// Bin of `value`; out-of-range values land in the edge bins.
    pub fn index(&self, value: f64) -> usize {
        let t = (value - self.lo) / (self.hi - self.lo) * self.count as f64;
        (t.floor().max(0.0) as usize).min(self.count - 1)
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.count as f64;
        (self.lo + k as f64 * w, self.lo + (k + 1) as f64 * w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
    /// `None` for an empty bin.
    pub mape: Option<f64>,
}

/// MAPE per `⟨F⟩` bin; each sample is a list of matched pairs for one particle.
pub fn magnitude_mape_by_bin(samples: &[Vec<(ForceTriplet, ForceTriplet)>], bins: &MeanForceBins) -> Result<Vec<BinReport>> {
    let mut grouped: Vec<Vec<(ForceTriplet, ForceTriplet)>> = vec![Vec::new(); bins.count];
    let mut counts = vec![0usize; bins.count];
    for pairs in samples {
        non_empty(pairs)?;
        let mean = pairs.iter().map(|(_, t)| t.magnitude).sum::<f64>() / pairs.len() as f64;
        let k = bins.index(mean);
        grouped[k].extend_from_slice(pairs);
        counts[k] += 1;
    }
    grouped
        .iter()
        .enumerate()
        .map(|(k, pairs)| {
            let (lo, hi) = bins.edges(k);
            let mape = if pairs.is_empty() { None } else { Some(magnitude_mape(pairs)?) };
            Ok(BinReport { lo, hi, samples: counts[k], mape })
        })
        .collect()
}

/// `(mean |Σf|, mean |Σf| / ⟨F⟩)` over predicted lists.
pub fn net_force_stats(lists: &[Vec<ForceTriplet>]) -> (f64, f64) {
    let mut abs = 0.0;
    let mut rel = 0.0;
    let mut n = 0usize;
    for forces in lists.iter().filter(|l| !l.is_empty()) {
        let (sx, sy) = net_force(forces);
        let v = sx.hypot(sy);
        let mean = forces.iter().map(|f| f.magnitude).sum::<f64>() / forces.len() as f64;
        abs += v;
        rel += v / mean;
        n += 1;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    (abs / n as f64, rel / n as f64)
}

/// Confusion counts indexed `[truth M][predicted M]` for `M` in `0..=MAX_FORCES`.
pub type Confusion = Vec<Vec<u64>>;

/// Exact-match fraction and confusion matrix of predicted force counts.
pub fn count_accuracy(pred: &[usize], truth: &[usize]) -> Result<(f64, Confusion)> {
    if pred.len() != truth.len() {
        return Err(Error::Domain(format!(
            "{} predicted counts vs {} true counts",
            pred.len(),
            truth.len()
        )));
    }
    let size = MAX_FORCES + 1;
    let mut confusion = vec![vec![0u64; size]; size];
    let mut hits = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[t.min(MAX_FORCES)][p.min(MAX_FORCES)] += 1;
        hits += (p == t) as usize;
    }
    let acc = if truth.is_empty() { 0.0 } else { hits as f64 / truth.len() as f64 };
    Ok((acc, confusion))
}

/// A labelled force list, keyed by sample id. Extra fields are ignored so
/// manifests can be used directly as the truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledForces {
    pub id: String,
    pub forces: Vec<ForceTriplet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerMReport {
    pub m: usize,
    pub samples: usize,
    pub count_accuracy: f64,
    /// Samples whose predicted count matched and entered the per-force errors.
    pub matched: usize,
    pub mae_magnitude: Option<f64>,
    pub mae_impact_deg: Option<f64>,
    pub mae_tangent_deg: Option<f64>,
    pub mape_magnitude: Option<f64>,
    pub mean_net_force: f64,
    pub mean_relative_net_force: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub count_accuracy: f64,
    pub confusion: Confusion,
    pub per_m: Vec<PerMReport>,
    pub mape_by_mean_force: Vec<BinReport>,
}

/// Joins predictions to labels by id and computes every metric.
pub fn evaluate(pred: &[LabeledForces], truth: &[LabeledForces], bins: &MeanForceBins) -> Result<EvalReport> {
    let by_id: HashMap<&str, &LabeledForces> = pred.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut joined = Vec::with_capacity(truth.len());
    for t in truth {
        let p = by_id
            .get(t.id.as_str())
            .ok_or_else(|| Error::Domain(format!("no prediction for sample {}", t.id)))?;
        joined.push((*p, t));
    }

    let pred_ms: Vec<usize> = joined.iter().map(|(p, _)| p.forces.len()).collect();
    let truth_ms: Vec<usize> = joined.iter().map(|(_, t)| t.forces.len()).collect();
    let (accuracy, confusion) = count_accuracy(&pred_ms, &truth_ms)?;

    let mut per_m = Vec::new();
    let mut all_matched = Vec::new();
    for m in MIN_FORCES..=MAX_FORCES {
        let group: Vec<_> = joined.iter().filter(|(_, t)| t.forces.len() == m).collect();
        if group.is_empty() {
            continue;
        }
        let hits = group.iter().filter(|(p, _)| p.forces.len() == m).count();
        let mut samples = Vec::new();
        for (p, t) in group.iter().filter(|(p, _)| p.forces.len() == m) {
            samples.push(paired(&p.forces, &t.forces)?);
        }
        let flat: Vec<_> = samples.iter().flatten().copied().collect();
        let predicted: Vec<Vec<ForceTriplet>> = group.iter().map(|(p, _)| p.forces.clone()).collect();
        let (mean_net_force, mean_relative_net_force) = net_force_stats(&predicted);
        let opt = |r: Result<f64>| r.ok();
        per_m.push(PerMReport {
            m,
            samples: group.len(),
            count_accuracy: hits as f64 / group.len() as f64,
            matched: samples.len(),
            mae_magnitude: opt(magnitude_mae(&flat)),
            mae_impact_deg: opt(angle_mae(&flat)),
            mae_tangent_deg: opt(tangent_mae(&flat)),
            mape_magnitude: opt(magnitude_mape(&flat)),
            mean_net_force,
            mean_relative_net_force,
        });
        all_matched.extend(samples);
    }

    Ok(EvalReport {
        samples: joined.len(),
        count_accuracy: accuracy,
        confusion,
        per_m,
        mape_by_mean_force: magnitude_mape_by_bin(&all_matched, bins)?,
    })
}

fn cell(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples: {}   count accuracy: {:.4}", self.samples, self.count_accuracy)?;
        writeln!(
            f,
            "{:>2} {:>7} {:>8} {:>10} {:>9} {:>9} {:>8} {:>10} {:>9}",
            "M", "samples", "acc", "MAE F (N)", "MAE α°", "MAE τ°", "MAPE %", "|Σf| (N)", "|Σf|/⟨F⟩"
        )?;
        for r in &self.per_m {
            writeln!(
                f,
                "{:>2} {:>7} {:>8.4} {:>10} {:>9} {:>9} {:>8} {:>10.4} {:>9.4}",
                r.m,
                r.samples,
                r.count_accuracy,
                cell(r.mae_magnitude, 4),
                cell(r.mae_impact_deg, 3),
                cell(r.mae_tangent_deg, 3),
                cell(r.mape_magnitude, 2),
                r.mean_net_force,
                r.mean_relative_net_force
            )?;
        }
        writeln!(f, "MAPE by ⟨F⟩:")?;
        for b in &self.mape_by_mean_force {
            writeln!(f, "  [{:.4}, {:.4})  n={:<6} {}", b.lo, b.hi, b.samples, cell(b.mape, 2))?;
        }
        Ok(())
    }
}
