//! Skill scores on confusion matrices and the loss family built from
//! them.
//!
//! Every score implements [`SkillScore`] and is registered by name
//! (`"accuracy"`, `"f1"`, `"tss"`, `"csi"`); [`by_name`] is the runtime
//! selection point. A score evaluated on the expected confusion matrix
//! and negated is a score-oriented loss ([`SolLoss`]); binary cross
//! entropy ([`CrossEntropy`]) sits behind the same [`Loss`] trait for
//! comparison runs.
//!
//! All ratio scores follow the `0/0 := 0` convention, which makes every
//! score total on nonnegative entries; the affected partials are 0 at
//! such a degenerate point.

use crate::confusion::{expected_cm, expected_cm_gradient, ConfusionEntries, LabeledBatch};
use crate::distributions::{self, DistConfig, ThresholdDist};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScoreError {
    #[error("unknown score `{0}` (expected one of accuracy, f1, tss, csi)")]
    UnknownScore(String),
    #[error("unknown loss kind `{0}` (expected `sol` or `cross_entropy`)")]
    UnknownLossKind(String),
    #[error("sol loss requires a `score` field")]
    MissingScore,
    #[error("sol loss requires a `dist` field")]
    MissingDist,
    #[error(transparent)]
    Dist(#[from] distributions::DistError),
}

/// `num / den` under the `0/0 := 0` convention.
///
/// A zero denominator with nonzero numerator cannot occur for the
/// registered scores: each denominator dominates its numerator on
/// nonnegative entries.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        debug_assert!(num == 0.0, "0/0 convention invoked with nonzero numerator");
        0.0
    } else {
        num / den
    }
}

/// A skill score as a function of `(tn, fp, fn, tp)`.
pub trait SkillScore: Send + Sync {
    fn name(&self) -> &'static str;

    fn value(&self, cm: &ConfusionEntries) -> f64;

    /// Partials with respect to `(tn, fp, fn, tp)`, in that order.
    /// Partials touched by a `0/0` subexpression are 0.
    fn gradient(&self, cm: &ConfusionEntries) -> [f64; 4];

    /// Whether the score is linear in the entries once the row sums are
    /// fixed. Linear scores have `E[s(tau)] = s(expected cm)` exactly.
    fn is_linear(&self) -> bool {
        false
    }

    /// The score's range `[min, max]` over valid matrices.
    fn range(&self) -> (f64, f64);
}

/// `(tp + tn) / n`.
pub struct Accuracy;

impl SkillScore for Accuracy {
    fn name(&self) -> &'static str {
        "accuracy"
    }

    fn value(&self, cm: &ConfusionEntries) -> f64 {
        ratio(cm.tp + cm.tn, cm.total())
    }

    fn gradient(&self, cm: &ConfusionEntries) -> [f64; 4] {
        let s = cm.total();
        if s == 0.0 {
            return [0.0; 4];
        }
        let diag = cm.tn + cm.tp;
        let off = cm.fp + cm.fn_;
        let s2 = s * s;
        [off / s2, -diag / s2, -diag / s2, off / s2]
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}

/// `2 tp / (2 tp + fp + fn)`, the harmonic mean of precision and recall.
pub struct F1;

impl SkillScore for F1 {
    fn name(&self) -> &'static str {
        "f1"
    }

    fn value(&self, cm: &ConfusionEntries) -> f64 {
        ratio(2.0 * cm.tp, 2.0 * cm.tp + cm.fp + cm.fn_)
    }

    fn gradient(&self, cm: &ConfusionEntries) -> [f64; 4] {
        let d = 2.0 * cm.tp + cm.fp + cm.fn_;
        if d == 0.0 {
            return [0.0; 4];
        }
        let d2 = d * d;
        [
            0.0,
            -2.0 * cm.tp / d2,
            -2.0 * cm.tp / d2,
            2.0 * (cm.fp + cm.fn_) / d2,
        ]
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}

/// True skill statistic: `tp/(tp + fn) + tn/(tn + fp) - 1`.
///
/// Linear in the entries once row sums are fixed, because the two
/// denominators are exactly the (fixed) row sums.
pub struct Tss;

impl SkillScore for Tss {
    fn name(&self) -> &'static str {
        "tss"
    }

    fn value(&self, cm: &ConfusionEntries) -> f64 {
        ratio(cm.tp, cm.tp + cm.fn_) + ratio(cm.tn, cm.tn + cm.fp) - 1.0
    }

    fn gradient(&self, cm: &ConfusionEntries) -> [f64; 4] {
        let pos = cm.tp + cm.fn_;
        let neg = cm.tn + cm.fp;
        let mut g = [0.0; 4];
        if neg != 0.0 {
            g[0] = cm.fp / (neg * neg);
            g[1] = -cm.tn / (neg * neg);
        }
        if pos != 0.0 {
            g[2] = -cm.tp / (pos * pos);
            g[3] = cm.fn_ / (pos * pos);
        }
        g
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
}

/// Critical success index: `tp / (tp + fp + fn)`.
pub struct Csi;

impl SkillScore for Csi {
    fn name(&self) -> &'static str {
        "csi"
    }

    fn value(&self, cm: &ConfusionEntries) -> f64 {
        ratio(cm.tp, cm.tp + cm.fp + cm.fn_)
    }

    fn gradient(&self, cm: &ConfusionEntries) -> [f64; 4] {
        let d = cm.tp + cm.fp + cm.fn_;
        if d == 0.0 {
            return [0.0; 4];
        }
        let d2 = d * d;
        [0.0, -cm.tp / d2, -cm.tp / d2, (cm.fp + cm.fn_) / d2]
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
}

/// The registered scores, in CLI/config name order.
pub static ALL_SCORES: &[&dyn SkillScore] = &[&Accuracy, &F1, &Tss, &Csi];

/// Look a score up by its config/CLI name.
pub fn by_name(name: &str) -> Result<&'static dyn SkillScore, ScoreError> {
    ALL_SCORES
        .iter()
        .find(|s| s.name() == name)
        .copied()
        .ok_or_else(|| ScoreError::UnknownScore(name.to_string()))
}

/// A batch loss with per-prediction gradients, the contract the training
/// loop and the network backward pass consume.
pub trait Loss: Send + Sync {
    fn name(&self) -> String;

    fn value(&self, batch: &LabeledBatch) -> f64;

    /// `d loss / d prediction_i` for every sample.
    fn prediction_gradient(&self, batch: &LabeledBatch) -> Vec<f64>;
}

/// Score-oriented loss: the chosen score evaluated on the expected
/// confusion matrix, negated.
pub struct SolLoss {
    score: &'static dyn SkillScore,
    dist: Box<dyn ThresholdDist>,
}

impl SolLoss {
    pub fn new(score: &'static dyn SkillScore, dist: Box<dyn ThresholdDist>) -> Self {
        Self { score, dist }
    }

    pub fn score(&self) -> &'static dyn SkillScore {
        self.score
    }

    pub fn dist(&self) -> &dyn ThresholdDist {
        self.dist.as_ref()
    }
}

impl Loss for SolLoss {
    fn name(&self) -> String {
        format!("sol_{}_{}", self.score.name(), self.dist.name())
    }

    fn value(&self, batch: &LabeledBatch) -> f64 {
        -self
            .score
            .value(&expected_cm(batch, self.dist.as_ref()).entries())
    }

    fn prediction_gradient(&self, batch: &LabeledBatch) -> Vec<f64> {
        let cm = expected_cm(batch, self.dist.as_ref()).entries();
        let [g_tn, g_fp, g_fn, g_tp] = self.score.gradient(&cm);
        expected_cm_gradient(batch, self.dist.as_ref())
            .iter()
            .map(|e| -(g_tn * e.tn + g_fp * e.fp + g_fn * e.fn_ + g_tp * e.tp))
            .collect()
    }
}

/// Clamp bound guarding the logarithms against sigmoid saturation.
const CE_CLAMP: f64 = 1e-7;

/// Standard binary cross entropy, averaged over the batch.
pub struct CrossEntropy;

impl Loss for CrossEntropy {
    fn name(&self) -> String {
        "cross_entropy".to_string()
    }

    fn value(&self, batch: &LabeledBatch) -> f64 {
        let n = batch.len() as f64;
        let sum: f64 = batch
            .predictions()
            .iter()
            .zip(batch.labels())
            .map(|(p, y)| {
                let p = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
                if *y == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        sum / n
    }

    fn prediction_gradient(&self, batch: &LabeledBatch) -> Vec<f64> {
        let n = batch.len() as f64;
        batch
            .predictions()
            .iter()
            .zip(batch.labels())
            .map(|(p, y)| {
                let p = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
                if *y == 1 {
                    -1.0 / (p * n)
                } else {
                    1.0 / ((1.0 - p) * n)
                }
            })
            .collect()
    }
}

/// Config fragment naming a loss.
///
/// `{"kind":"cross_entropy"}` or
/// `{"kind":"sol","score":"tss","dist":{"kind":"uniform"}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<DistConfig>,
}

impl LossConfig {
    pub fn cross_entropy() -> Self {
        LossConfig {
            kind: "cross_entropy".into(),
            score: None,
            dist: None,
        }
    }

    pub fn sol(score: &str, dist: DistConfig) -> Self {
        LossConfig {
            kind: "sol".into(),
            score: Some(score.to_string()),
            dist: Some(dist),
        }
    }
}

/// Build a loss from its config fragment.
pub fn loss_from_config(config: &LossConfig) -> Result<Box<dyn Loss>, ScoreError> {
    match config.kind.as_str() {
        "cross_entropy" => Ok(Box::new(CrossEntropy)),
        "sol" => {
            let score = by_name(config.score.as_deref().ok_or(ScoreError::MissingScore)?)?;
            let dist_cfg = config.dist.as_ref().ok_or(ScoreError::MissingDist)?;
            Ok(Box::new(SolLoss::new(
                score,
                distributions::from_config(dist_cfg)?,
            )))
        }
        other => Err(ScoreError::UnknownLossKind(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{RaisedCosine, Uniform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn entries(tn: f64, fp: f64, fn_: f64, tp: f64) -> ConfusionEntries {
        ConfusionEntries { tn, fp, fn_, tp }
    }

    #[test]
    fn score_value_examples() {
        assert_eq!(Accuracy.value(&entries(1.0, 0.0, 0.0, 1.0)), 1.0);
        // All-positive predictor: sensitivity 1, specificity 0.
        assert_eq!(Tss.value(&entries(0.0, 7.0, 0.0, 3.0)), 0.0);
        assert!((F1.value(&entries(3.0, 1.0, 2.0, 4.0)) - 8.0 / 11.0).abs() < 1e-15);
        // No positives anywhere: 0/0 convention.
        assert_eq!(Csi.value(&entries(5.0, 0.0, 0.0, 0.0)), 0.0);
        assert_eq!(Tss.value(&entries(5.0, 0.0, 0.0, 0.0)), 0.0);
        assert_eq!(F1.value(&entries(5.0, 0.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn registry_lookup() {
        for name in ["accuracy", "f1", "tss", "csi"] {
            assert_eq!(by_name(name).unwrap().name(), name);
        }
        assert!(by_name("hss").is_err());
        assert!(Tss.is_linear());
        assert!(!F1.is_linear());
        assert!(!Csi.is_linear());
    }

    // The published accuracy gradient lists its middle components in
    // (tp, fp) order rather than (fp, fn); the partials here are the
    // standard ones, checked against finite differences below. The
    // sup-norm over the row-sum polytope is max(n - tn - tp, tn + tp)/n^2
    // either way, so the 1/n Lipschitz constant is unaffected.
    #[test]
    fn accuracy_gradient_example() {
        let g = Accuracy.gradient(&entries(2.0, 1.0, 1.0, 2.0));
        let want = [2.0 / 36.0, -4.0 / 36.0, -4.0 / 36.0, 2.0 / 36.0];
        for k in 0..4 {
            assert!((g[k] - want[k]).abs() < 1e-15, "entry {k}");
        }
    }

    #[test]
    fn accuracy_lipschitz_constant_is_one_over_n() {
        // Integer lattice draws over C(S_n); the sup sits at the corners,
        // which 10^4 draws hit almost surely for this n.
        let (n_neg, n_pos) = (6u64, 4u64);
        let n = (n_neg + n_pos) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sup = 0.0f64;
        for _ in 0..10_000 {
            let tn = rng.gen_range(0..=n_neg) as f64;
            let tp = rng.gen_range(0..=n_pos) as f64;
            let g = Accuracy.gradient(&entries(tn, n_neg as f64 - tn, n_pos as f64 - tp, tp));
            sup = sup.max(g.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        assert!((sup - 1.0 / n).abs() < 1e-12, "sup = {sup}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-5;
        for _ in 0..50 {
            let cm = entries(
                1.0 + 9.0 * rng.gen::<f64>(),
                1.0 + 9.0 * rng.gen::<f64>(),
                1.0 + 9.0 * rng.gen::<f64>(),
                1.0 + 9.0 * rng.gen::<f64>(),
            );
            for score in ALL_SCORES {
                let g = score.gradient(&cm);
                for k in 0..4 {
                    let mut up = cm.as_array();
                    let mut dn = cm.as_array();
                    up[k] += h;
                    dn[k] -= h;
                    let fd = (score.value(&ConfusionEntries::from_array(up))
                        - score.value(&ConfusionEntries::from_array(dn)))
                        / (2.0 * h);
                    let scale = g[k].abs().max(1e-3);
                    assert!(
                        (fd - g[k]).abs() / scale < 1e-8,
                        "{} entry {k}: fd = {fd}, analytic = {}",
                        score.name(),
                        g[k]
                    );
                }
            }
        }
    }

    #[test]
    fn scores_are_scale_invariant() {
        let cm = entries(3.0, 1.0, 2.0, 4.0);
        for score in ALL_SCORES {
            let v = score.value(&cm);
            for k in [2.0, 5.0] {
                assert!(
                    (score.value(&cm.scale(k)) - v).abs() < 1e-12,
                    "{} at scale {k}",
                    score.name()
                );
            }
        }
    }

    #[test]
    fn sol_loss_examples() {
        let b = LabeledBatch::new(vec![0.3], vec![1]).unwrap();
        let loss = SolLoss::new(&Accuracy, Box::new(Uniform));
        assert!((loss.value(&b) - (-0.3)).abs() < 1e-15);

        // Saturated predictions with an interior-support distribution
        // give the perfect score for every kind.
        let b = LabeledBatch::new(vec![1.0, 0.0, 1.0, 0.0], vec![1, 0, 1, 0]).unwrap();
        let rc = || Box::new(RaisedCosine::new(0.5, 0.2).unwrap());
        for score in ALL_SCORES {
            let loss = SolLoss::new(*score, rc());
            assert!((loss.value(&b) - (-score.range().1)).abs() < 1e-12, "{}", score.name());
        }
    }

    #[test]
    fn sol_loss_matches_independent_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let predictions: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        let labels: Vec<u8> = (0..50).map(|_| rng.gen_bool(0.4) as u8).collect();
        let b = LabeledBatch::new(predictions.clone(), labels.clone()).unwrap();
        let rc = RaisedCosine::new(0.5, 0.1).unwrap();
        let loss = SolLoss::new(&Tss, Box::new(rc));

        // Independent route: write out the expected entries and the TSS
        // formula directly from the definitions.
        let (mut tn, mut fp, mut fnn, mut tp) = (0.0, 0.0, 0.0, 0.0);
        for (p, y) in predictions.iter().zip(&labels) {
            let f = rc.cdf(*p).unwrap();
            if *y == 1 {
                tp += f;
                fnn += 1.0 - f;
            } else {
                fp += f;
                tn += 1.0 - f;
            }
        }
        let tss = tp / (tp + fnn) + tn / (tn + fp) - 1.0;
        assert!((loss.value(&b) - (-tss)).abs() < 1e-12);
    }

    #[test]
    fn sol_gradient_examples() {
        let b = LabeledBatch::new(vec![0.3], vec![1]).unwrap();
        let loss = SolLoss::new(&Accuracy, Box::new(Uniform));
        let g = loss.prediction_gradient(&b);
        assert!((g[0] - (-1.0)).abs() < 1e-15);

        // Outside the raised-cosine support the pdf vanishes, so every
        // contribution is zero.
        let rc = RaisedCosine::new(0.5, 0.1).unwrap();
        let b = LabeledBatch::new(vec![0.1, 0.9], vec![0, 1]).unwrap();
        for score in ALL_SCORES {
            let loss = SolLoss::new(*score, Box::new(rc));
            assert!(loss.prediction_gradient(&b).iter().all(|g| *g == 0.0));
        }
    }

    #[test]
    fn sol_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let predictions: Vec<f64> = (0..20).map(|_| 0.05 + 0.9 * rng.gen::<f64>()).collect();
        let labels: Vec<u8> = (0..20).map(|_| rng.gen_bool(0.5) as u8).collect();
        let b = LabeledBatch::new(predictions.clone(), labels.clone()).unwrap();
        let loss = SolLoss::new(&F1, Box::new(Uniform));
        let g = loss.prediction_gradient(&b);
        let h = 1e-6;
        for i in 0..b.len() {
            let mut up = predictions.clone();
            let mut dn = predictions.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (loss.value(&LabeledBatch::new(up, labels.clone()).unwrap())
                - loss.value(&LabeledBatch::new(dn, labels.clone()).unwrap()))
                / (2.0 * h);
            let scale = g[i].abs().max(1e-3);
            assert!((fd - g[i]).abs() / scale < 1e-6, "sample {i}");
        }
    }

    #[test]
    fn sol_loss_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.gen_range(2..30);
            let predictions: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.5) as u8).collect();
            let b = LabeledBatch::new(predictions, labels).unwrap();
            for score in ALL_SCORES {
                let loss = SolLoss::new(*score, Box::new(Uniform));
                let v = loss.value(&b);
                let (lo, hi) = score.range();
                assert!(v >= -hi - 1e-12 && v <= -lo + 1e-12, "{} = {v}", score.name());
            }
        }
    }

    #[test]
    fn cross_entropy_value_and_gradient() {
        let b = LabeledBatch::new(vec![0.8, 0.3], vec![1, 0]).unwrap();
        let want = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((CrossEntropy.value(&b) - want).abs() < 1e-12);

        let g = CrossEntropy.prediction_gradient(&b);
        assert!((g[0] - (-1.0 / (0.8 * 2.0))).abs() < 1e-12);
        assert!((g[1] - (1.0 / (0.7 * 2.0))).abs() < 1e-12);

        // Clamp keeps saturated predictions finite.
        let b = LabeledBatch::new(vec![0.0], vec![1]).unwrap();
        assert!(CrossEntropy.value(&b).is_finite());
    }

    #[test]
    fn loss_config_round_trip() {
        let cfg = LossConfig::sol("tss", DistConfig::raised_cosine(0.5, 0.1));
        let loss = loss_from_config(&cfg).unwrap();
        assert_eq!(loss.name(), "sol_tss_raised_cosine");
        assert_eq!(
            loss_from_config(&LossConfig::cross_entropy()).unwrap().name(),
            "cross_entropy"
        );
        assert!(loss_from_config(&LossConfig {
            kind: "hinge".into(),
            score: None,
            dist: None
        })
        .is_err());
        assert!(loss_from_config(&LossConfig {
            kind: "sol".into(),
            score: None,
            dist: Some(DistConfig::uniform())
        })
        .is_err());
    }
}
