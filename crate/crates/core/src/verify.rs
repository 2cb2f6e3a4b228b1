//! Monte-Carlo verification of the concentration and linearity results
//! behind the score-oriented losses.
//!
//! Each check estimates an empirical quantity from sampled thresholds
//! and compares it to the corresponding theoretical bound or identity:
//! entry and trace deviation tails against their sub-Gaussian bounds,
//! the expectation identity for linear scores, the second-order Taylor
//! correction for nonlinear ones, and the mean-absolute-deviation bound
//! for Lipschitz scores. Acceptance is statistical, at three standard
//! errors.

use crate::confusion::{expected_cm, ClassicalConfusion, ConfusionEntries, LabeledBatch};
use crate::distributions::{sample, ThresholdDist};
use crate::scores::SkillScore;
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Statistical acceptance margin, in standard errors.
const SIGMA_MARGIN: f64 = 3.0;

/// Confusion-matrix entry selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entry {
    Tn,
    Fp,
    Fn,
    Tp,
}

impl Entry {
    pub const ALL: [Entry; 4] = [Entry::Tn, Entry::Fp, Entry::Fn, Entry::Tp];

    fn of(self, cm: &ClassicalConfusion) -> f64 {
        match self {
            Entry::Tn => cm.tn as f64,
            Entry::Fp => cm.fp as f64,
            Entry::Fn => cm.fn_ as f64,
            Entry::Tp => cm.tp as f64,
        }
    }

    fn of_expected(self, cm: &ConfusionEntries) -> f64 {
        match self {
            Entry::Tn => cm.tn,
            Entry::Fp => cm.fp,
            Entry::Fn => cm.fn_,
            Entry::Tp => cm.tp,
        }
    }

    /// The row the entry lives in is fixed by the labels; its size is
    /// the range of the entry and the denominator of the tail bound.
    fn row_size(self, batch: &LabeledBatch) -> f64 {
        match self {
            Entry::Tn | Entry::Fp => batch.n_neg() as f64,
            Entry::Fn | Entry::Tp => batch.n_pos() as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Entry::Tn => "tn",
            Entry::Fp => "fp",
            Entry::Fn => "fn",
            Entry::Tp => "tp",
        }
    }
}

/// Fast classical-matrix evaluation for Monte-Carlo loops: counts via
/// binary search over the sorted per-class predictions. Agrees with
/// [`classical_cm`] exactly (checked in tests).
pub(crate) struct CmSampler {
    sorted_pos: Vec<f64>,
    sorted_neg: Vec<f64>,
}

impl CmSampler {
    pub fn new(batch: &LabeledBatch) -> Self {
        let mut sorted_pos = Vec::with_capacity(batch.n_pos());
        let mut sorted_neg = Vec::with_capacity(batch.n_neg());
        for (p, y) in batch.predictions().iter().zip(batch.labels()) {
            if *y == 1 {
                sorted_pos.push(*p);
            } else {
                sorted_neg.push(*p);
            }
        }
        sorted_pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted_neg.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self {
            sorted_pos,
            sorted_neg,
        }
    }

    pub fn cm_at(&self, tau: f64) -> ClassicalConfusion {
        // Predicted negative iff prediction <= tau, matching the tie rule.
        let fn_ = self.sorted_pos.partition_point(|p| *p <= tau);
        let tn = self.sorted_neg.partition_point(|p| *p <= tau);
        ClassicalConfusion {
            tn: tn as u64,
            fp: (self.sorted_neg.len() - tn) as u64,
            fn_: fn_ as u64,
            tp: (self.sorted_pos.len() - fn_) as u64,
        }
    }
}

fn binomial_se(p_hat: f64, draws: usize) -> f64 {
    (p_hat * (1.0 - p_hat) / draws as f64).sqrt()
}

/// One epsilon of a tail-bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub epsilon: f64,
    pub empirical_tail: f64,
    pub theoretical_bound: f64,
    pub standard_error: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub check: String,
    pub draws: usize,
    pub points: Vec<TailPoint>,
}

impl BoundCheckReport {
    pub fn passes(&self) -> bool {
        self.points.iter().all(|p| !p.violated)
    }
}

fn tail_report(
    check: String,
    deviations: &[f64],
    denominator: f64,
    epsilon_grid: &[f64],
) -> BoundCheckReport {
    let draws = deviations.len();
    let points = epsilon_grid
        .iter()
        .map(|&eps| {
            let hits = deviations.iter().filter(|d| **d >= eps).count();
            let empirical_tail = hits as f64 / draws as f64;
            let theoretical_bound = if denominator == 0.0 {
                // Degenerate row: the entry is constant, the tail is 0
                // for eps > 0 and the bound is vacuous.
                if eps > 0.0 {
                    0.0
                } else {
                    2.0
                }
            } else {
                2.0 * (-2.0 * eps * eps / denominator).exp()
            };
            let standard_error = binomial_se(empirical_tail, draws);
            TailPoint {
                epsilon: eps,
                empirical_tail,
                theoretical_bound,
                standard_error,
                violated: empirical_tail > theoretical_bound + SIGMA_MARGIN * standard_error,
            }
        })
        .collect();
    BoundCheckReport {
        check,
        draws,
        points,
    }
}

/// Tail of `|entry(tau) - expected entry|` against its sub-Gaussian
/// bound with the squared row size as denominator.
pub fn check_entry_concentration(
    batch: &LabeledBatch,
    dist: &dyn ThresholdDist,
    entry: Entry,
    epsilon_grid: &[f64],
    mc_draws: usize,
    rng: &mut dyn RngCore,
) -> BoundCheckReport {
    let expected = entry.of_expected(&expected_cm(batch, dist).entries());
    let sampler = CmSampler::new(batch);
    let deviations: Vec<f64> = sample(dist, rng, mc_draws)
        .iter()
        .map(|&tau| (entry.of(&sampler.cm_at(tau)) - expected).abs())
        .collect();
    let row = entry.row_size(batch);
    tail_report(
        format!("entry_concentration_{}_{}", entry.name(), dist.name()),
        &deviations,
        row * row,
        epsilon_grid,
    )
}

/// Tail of the trace deviation against its bound with denominator
/// `(n-)^2 + (n+)^2`.
pub fn check_trace_concentration(
    batch: &LabeledBatch,
    dist: &dyn ThresholdDist,
    epsilon_grid: &[f64],
    mc_draws: usize,
    rng: &mut dyn RngCore,
) -> BoundCheckReport {
    let expected = expected_cm(batch, dist).trace();
    let sampler = CmSampler::new(batch);
    let deviations: Vec<f64> = sample(dist, rng, mc_draws)
        .iter()
        .map(|&tau| (sampler.cm_at(tau).trace() as f64 - expected).abs())
        .collect();
    let n_neg = batch.n_neg() as f64;
    let n_pos = batch.n_pos() as f64;
    tail_report(
        format!("trace_concentration_{}", dist.name()),
        &deviations,
        n_neg * n_neg + n_pos * n_pos,
        epsilon_grid,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreExpectationReport {
    pub check: String,
    pub score: String,
    pub linear: bool,
    pub mc_mean: f64,
    pub expected_score: f64,
    pub gap: f64,
    pub standard_error: f64,
    /// For linear scores: the gap lies within the sigma margin. For
    /// nonlinear scores the gap is informational and this is `true`.
    pub passes: bool,
}

/// Monte-Carlo mean of `score(cm(tau))` versus the score of the
/// expected matrix. Equal (up to noise) exactly when the score is
/// linear in the entries.
pub fn check_score_expectation(
    batch: &LabeledBatch,
    dist: &dyn ThresholdDist,
    score: &dyn SkillScore,
    mc_draws: usize,
    rng: &mut dyn RngCore,
) -> ScoreExpectationReport {
    let expected_score = score.value(&expected_cm(batch, dist).entries());
    let sampler = CmSampler::new(batch);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for tau in sample(dist, rng, mc_draws) {
        let s = score.value(&sampler.cm_at(tau).entries());
        sum += s;
        sum_sq += s * s;
    }
    let mc_mean = sum / mc_draws as f64;
    let var = (sum_sq / mc_draws as f64 - mc_mean * mc_mean).max(0.0);
    let standard_error = (var / mc_draws as f64).sqrt();
    let gap = mc_mean - expected_score;
    let passes = !score.is_linear() || gap.abs() <= SIGMA_MARGIN * standard_error + 1e-12;
    ScoreExpectationReport {
        check: format!("score_expectation_{}_{}", score.name(), dist.name()),
        score: score.name().to_string(),
        linear: score.is_linear(),
        mc_mean,
        expected_score,
        gap,
        standard_error,
        passes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorReport {
    pub check: String,
    pub zeroth_gap: f64,
    /// Leading Taylor correction. The first-order moments vanish by
    /// construction (the expected matrix is the mean), so the first
    /// nonvanishing term is the second-order one reported here.
    pub second_order_term: f64,
    pub corrected_gap: f64,
}

/// Second-order Taylor explanation of the gap between the Monte-Carlo
/// score mean and the score of the expected matrix.
pub fn taylor_correction(
    batch: &LabeledBatch,
    dist: &dyn ThresholdDist,
    score: &dyn SkillScore,
    mc_draws: usize,
    rng: &mut dyn RngCore,
) -> TaylorReport {
    let center = expected_cm(batch, dist).entries();
    let expected_score = score.value(&center);
    let sampler = CmSampler::new(batch);
    let mut mean = 0.0;
    let mut moments = [[0.0f64; 4]; 4];
    let c = center.as_array();
    for tau in sample(dist, rng, mc_draws) {
        let v = sampler.cm_at(tau).entries().as_array();
        mean += score.value(&ConfusionEntries::from_array(v));
        for j in 0..4 {
            for k in 0..4 {
                moments[j][k] += (v[j] - c[j]) * (v[k] - c[k]);
            }
        }
    }
    mean /= mc_draws as f64;
    for row in &mut moments {
        for m in row.iter_mut() {
            *m /= mc_draws as f64;
        }
    }

    // Hessian of the score at the center by central differences of the
    // analytic gradient.
    let h = 1e-4 * (1.0 + batch.len() as f64);
    let mut hessian = [[0.0f64; 4]; 4];
    for k in 0..4 {
        let mut up = c;
        let mut dn = c;
        up[k] += h;
        dn[k] -= h;
        let gu = score.gradient(&ConfusionEntries::from_array(up));
        let gd = score.gradient(&ConfusionEntries::from_array(dn));
        for j in 0..4 {
            hessian[j][k] = (gu[j] - gd[j]) / (2.0 * h);
        }
    }

    let mut second_order_term = 0.0;
    for j in 0..4 {
        for k in 0..4 {
            second_order_term += 0.5 * hessian[j][k] * moments[j][k];
        }
    }
    let zeroth_gap = mean - expected_score;
    TaylorReport {
        check: format!("taylor_{}_{}", score.name(), dist.name()),
        zeroth_gap,
        second_order_term,
        corrected_gap: zeroth_gap - second_order_term,
    }
}

/// Lipschitz constant of a score over the row-sum polytope, estimated
/// as the max gradient sup-norm over the full integer lattice
/// `tn in [0, n-] x tp in [0, n+]`.
pub fn k_s_lattice(score: &dyn SkillScore, n_neg: usize, n_pos: usize) -> f64 {
    let mut sup = 0.0f64;
    for tn in 0..=n_neg {
        for tp in 0..=n_pos {
            let cm = ConfusionEntries {
                tn: tn as f64,
                fp: (n_neg - tn) as f64,
                fn_: (n_pos - tp) as f64,
                tp: tp as f64,
            };
            let g = score.gradient(&cm);
            sup = sup.max(g.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
    }
    sup
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MadBoundReport {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub k_s: f64,
    pub j_f: f64,
    pub mad_tn: f64,
    pub mad_tp: f64,
    pub standard_error: f64,
    pub passes: bool,
}

/// Mean absolute deviation of the score against the Lipschitz bound
/// `(1/2) K_s (J_F + mad[tn] + mad[tp])`.
pub fn check_mad_bound(
    batch: &LabeledBatch,
    dist: &dyn ThresholdDist,
    score: &dyn SkillScore,
    mc_draws: usize,
    rng: &mut dyn RngCore,
) -> MadBoundReport {
    let center = expected_cm(batch, dist).entries();
    let expected_score = score.value(&center);
    let sampler = CmSampler::new(batch);
    let mut lhs_sum = 0.0;
    let mut lhs_sq = 0.0;
    let mut mad_tn = 0.0;
    let mut mad_tp = 0.0;
    let mut j_f = 0.0;
    for tau in sample(dist, rng, mc_draws) {
        let cm = sampler.cm_at(tau);
        let dev = (score.value(&cm.entries()) - expected_score).abs();
        lhs_sum += dev;
        lhs_sq += dev * dev;
        let d_tn = (cm.tn as f64 - center.tn).abs();
        let d_tp = (cm.tp as f64 - center.tp).abs();
        mad_tn += d_tn;
        mad_tp += d_tp;
        j_f += (d_tn - d_tp).abs();
    }
    let m = mc_draws as f64;
    let lhs = lhs_sum / m;
    let lhs_var = (lhs_sq / m - lhs * lhs).max(0.0);
    let standard_error = (lhs_var / m).sqrt();
    mad_tn /= m;
    mad_tp /= m;
    j_f /= m;
    let k_s = k_s_lattice(score, batch.n_neg(), batch.n_pos());
    let rhs = 0.5 * k_s * (j_f + mad_tn + mad_tp);
    MadBoundReport {
        check: format!("mad_bound_{}_{}", score.name(), dist.name()),
        lhs,
        rhs,
        k_s,
        j_f,
        mad_tn,
        mad_tp,
        standard_error,
        passes: lhs <= rhs + SIGMA_MARGIN * standard_error,
    }
}

/// One row of the default suite, flat enough for CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub check: String,
    pub lhs: f64,
    pub rhs: f64,
    pub standard_error: f64,
    pub passed: bool,
}

/// Run every check over a small matrix of random batches and both
/// distribution families. All rows must pass for the suite to pass.
pub fn run_default_suite(seed: u64, mc_draws: usize) -> Vec<SuiteRow> {
    use crate::distributions::{RaisedCosine, Uniform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let dists: Vec<Box<dyn ThresholdDist>> = vec![
        Box::new(Uniform),
        Box::new(RaisedCosine::new(0.5, 0.3).unwrap()),
    ];
    for b in 0..3 {
        let n = 20 + 10 * b;
        let predictions: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.4) as u8).collect();
        let batch = LabeledBatch::new(predictions, labels).unwrap();
        let eps_grid = [1.0, 3.0, 5.0, 10.0];
        for dist in &dists {
            for entry in Entry::ALL {
                let r = check_entry_concentration(
                    &batch,
                    dist.as_ref(),
                    entry,
                    &eps_grid,
                    mc_draws,
                    &mut rng,
                );
                for p in &r.points {
                    rows.push(SuiteRow {
                        check: format!("{}_n{}_eps{}", r.check, n, p.epsilon),
                        lhs: p.empirical_tail,
                        rhs: p.theoretical_bound,
                        standard_error: p.standard_error,
                        passed: !p.violated,
                    });
                }
            }
            let r = check_trace_concentration(&batch, dist.as_ref(), &eps_grid, mc_draws, &mut rng);
            for p in &r.points {
                rows.push(SuiteRow {
                    check: format!("{}_n{}_eps{}", r.check, n, p.epsilon),
                    lhs: p.empirical_tail,
                    rhs: p.theoretical_bound,
                    standard_error: p.standard_error,
                    passed: !p.violated,
                });
            }
            for score in crate::scores::ALL_SCORES {
                let r =
                    check_score_expectation(&batch, dist.as_ref(), *score, mc_draws, &mut rng);
                rows.push(SuiteRow {
                    check: format!("{}_n{}", r.check, n),
                    lhs: r.mc_mean,
                    rhs: r.expected_score,
                    standard_error: r.standard_error,
                    passed: r.passes,
                });
                let r = check_mad_bound(&batch, dist.as_ref(), *score, mc_draws, &mut rng);
                rows.push(SuiteRow {
                    check: format!("{}_n{}", r.check, n),
                    lhs: r.lhs,
                    rhs: r.rhs,
                    standard_error: r.standard_error,
                    passed: r.passes,
                });
            }
        }
    }
    rows
}
