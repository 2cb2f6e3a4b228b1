//! A-posteriori score maximization over the decision threshold.
//!
//! Any score of the classical confusion matrix is piecewise constant in
//! `tau`, with breakpoints only at distinct prediction values. Scoring
//! one midpoint per piece is therefore an exact global maximization, not
//! a grid approximation.

use crate::confusion::{classical_cm, LabeledBatch};
use crate::scores::SkillScore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two pieces with scores within this tolerance are treated as one
/// plateau.
const PLATEAU_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SweepError {
    #[error("histogram input is empty")]
    EmptyInput,
    #[error("histogram needs at least one bin")]
    ZeroBins,
    #[error("threshold {0} lies outside (0, 1)")]
    ValueOutOfRange(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweepResult {
    /// Midpoint of the widest maximizing plateau.
    pub tau_star: f64,
    pub best_score: f64,
    /// One `(tau, score)` evaluation per constant piece of the curve.
    pub score_curve: Vec<(f64, f64)>,
}

/// Exact maximization of `score(classical_cm(batch, tau))` over
/// `tau` in `(0, 1)`.
pub fn sweep(batch: &LabeledBatch, score: &dyn SkillScore) -> ThresholdSweepResult {
    // Piece boundaries: 0, the distinct predictions strictly inside
    // (0, 1), and 1. Predictions at exactly 0 or 1 never flip a sample
    // for interior tau, so they are not breakpoints.
    let mut boundaries: Vec<f64> = vec![0.0];
    let mut preds: Vec<f64> = batch
        .predictions()
        .iter()
        .copied()
        .filter(|p| *p > 0.0 && *p < 1.0)
        .collect();
    preds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    preds.dedup();
    boundaries.extend(preds);
    boundaries.push(1.0);

    let mut curve = Vec::with_capacity(boundaries.len() - 1);
    for pair in boundaries.windows(2) {
        let mid = 0.5 * (pair[0] + pair[1]);
        let cm = classical_cm(batch, mid).expect("piece midpoints lie in (0, 1)");
        curve.push((mid, score.value(&cm.entries())));
    }

    let best_score = curve
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);

    // Merge adjacent maximizing pieces and keep the widest plateau.
    let mut best_lo = 0.0;
    let mut best_hi = 0.0;
    let mut i = 0;
    while i < curve.len() {
        if curve[i].1 >= best_score - PLATEAU_TOL {
            let lo = boundaries[i];
            let mut j = i;
            while j + 1 < curve.len() && curve[j + 1].1 >= best_score - PLATEAU_TOL {
                j += 1;
            }
            let hi = boundaries[j + 1];
            if hi - lo > best_hi - best_lo {
                best_lo = lo;
                best_hi = hi;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    ThresholdSweepResult {
        tau_star: 0.5 * (best_lo + best_hi),
        best_score,
        score_curve: curve,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub density: f64,
}

/// Normalized histogram of optimal thresholds over `(0, 1)`, with the
/// mean and (population) standard deviation of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdHistogram {
    pub bins: Vec<HistogramBin>,
    pub mean: f64,
    pub std: f64,
}

pub fn optimal_threshold_histogram(
    tau_stars: &[f64],
    bins: usize,
) -> Result<ThresholdHistogram, SweepError> {
    if tau_stars.is_empty() {
        return Err(SweepError::EmptyInput);
    }
    if bins == 0 {
        return Err(SweepError::ZeroBins);
    }
    for &t in tau_stars {
        if !(t > 0.0 && t < 1.0) || t.is_nan() {
            return Err(SweepError::ValueOutOfRange(t));
        }
    }
    let n = tau_stars.len() as f64;
    let width = 1.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &t in tau_stars {
        let idx = ((t / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let out_bins = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| HistogramBin {
            left: i as f64 * width,
            right: (i + 1) as f64 * width,
            density: c as f64 / (n * width),
        })
        .collect();
    let mean = tau_stars.iter().sum::<f64>() / n;
    let var = tau_stars.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    Ok(ThresholdHistogram {
        bins: out_bins,
        mean,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{sample, RaisedCosine, ThresholdDist};
    use crate::scores::{Accuracy, Csi, Tss};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separated_pair() {
        let b = LabeledBatch::new(vec![0.2, 0.8], vec![0, 1]).unwrap();
        let r = sweep(&b, &Accuracy);
        assert_eq!(r.best_score, 1.0);
        assert!((r.tau_star - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_positives_gives_flat_zero_csi() {
        let b = LabeledBatch::new(vec![0.1, 0.4, 0.9], vec![0, 0, 0]).unwrap();
        let r = sweep(&b, &Csi);
        assert_eq!(r.best_score, 0.0);
        assert!(r.score_curve.iter().all(|(_, s)| *s == 0.0));
        // Flat curve: the whole (0, 1) is one plateau.
        assert!((r.tau_star - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let n = 15;
            let preds: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.4) as u8).collect();
            let b = LabeledBatch::new(preds, labels).unwrap();
            let r = sweep(&b, &Tss);
            let grid = 100_000;
            let mut grid_best = f64::NEG_INFINITY;
            for g in 1..grid {
                let tau = g as f64 / grid as f64;
                let s = Tss.value(&classical_cm(&b, tau).unwrap().entries());
                grid_best = grid_best.max(s);
            }
            assert!(
                (r.best_score - grid_best).abs() < 1e-12,
                "sweep = {}, grid = {grid_best}",
                r.best_score
            );
        }
    }

    #[test]
    fn sweep_dominates_random_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let preds: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
        let labels: Vec<u8> = (0..20).map(|_| rng.gen_bool(0.5) as u8).collect();
        let b = LabeledBatch::new(preds, labels).unwrap();
        let r = sweep(&b, &Accuracy);
        for _ in 0..10_000 {
            let tau = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let s = Accuracy.value(&classical_cm(&b, tau).unwrap().entries());
            assert!(s <= r.best_score + 1e-15);
        }
        // tau_star itself achieves the maximum.
        let at_star = Accuracy.value(&classical_cm(&b, r.tau_star).unwrap().entries());
        assert!((at_star - r.best_score).abs() < 1e-15);
    }

    #[test]
    fn curve_is_piecewise_constant_in_tau() {
        let b = LabeledBatch::new(vec![0.25, 0.25, 0.6, 0.9], vec![0, 1, 1, 0]).unwrap();
        let r = sweep(&b, &Accuracy);
        // 3 distinct interior predictions -> at most 4 pieces.
        assert_eq!(r.score_curve.len(), 4);
    }

    #[test]
    fn tau_star_is_stable_under_monotone_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let preds: Vec<f64> = (0..12).map(|_| rng.gen()).collect();
        let labels: Vec<u8> = (0..12).map(|_| rng.gen_bool(0.5) as u8).collect();
        let b = LabeledBatch::new(preds.clone(), labels.clone()).unwrap();
        let r = sweep(&b, &Tss);

        // Order-preserving map of the predictions; the piecewise
        // structure (and thus the classifications at tau*) must match.
        let mapped: Vec<f64> = preds.iter().map(|p| p * p).collect();
        let mb = LabeledBatch::new(mapped, labels).unwrap();
        let mr = sweep(&mb, &Tss);
        assert!((r.best_score - mr.best_score).abs() < 1e-12);
        assert_eq!(
            classical_cm(&b, r.tau_star).unwrap(),
            classical_cm(&mb, mr.tau_star).unwrap()
        );
    }

    #[test]
    fn histogram_examples() {
        let h = optimal_threshold_histogram(&vec![0.5; 100], 10).unwrap();
        let nonzero: Vec<&HistogramBin> =
            h.bins.iter().filter(|b| b.density > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!(nonzero[0].left <= 0.5 && 0.5 < nonzero[0].right);
        assert_eq!(nonzero[0].density, 10.0);
        assert_eq!(h.mean, 0.5);
        assert_eq!(h.std, 0.0);

        let h = optimal_threshold_histogram(&[0.1, 0.9], 2).unwrap();
        assert_eq!(h.bins[0].density, 1.0);
        assert_eq!(h.bins[1].density, 1.0);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let values: Vec<f64> = (0..777).map(|_| rng.gen_range(0.01..0.99)).collect();
        let h = optimal_threshold_histogram(&values, 13).unwrap();
        let mass: f64 = h.bins.iter().map(|b| b.density * (b.right - b.left)).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_errors() {
        assert_eq!(
            optimal_threshold_histogram(&[], 10),
            Err(SweepError::EmptyInput)
        );
        assert!(optimal_threshold_histogram(&[1.5], 10).is_err());
        assert_eq!(
            optimal_threshold_histogram(&[0.5], 0),
            Err(SweepError::ZeroBins)
        );
    }

    #[test]
    fn histogram_tracks_sampling_density() {
        let rc = RaisedCosine::new(0.5, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = sample(&rc, &mut rng, 100_000);
        let h = optimal_threshold_histogram(&draws, 50).unwrap();
        let mut sup = 0.0f64;
        for b in &h.bins {
            let center = 0.5 * (b.left + b.right);
            sup = sup.max((b.density - rc.pdf(center).unwrap()).abs());
        }
        assert!(sup < 0.1, "sup distance = {sup}");
    }
}
