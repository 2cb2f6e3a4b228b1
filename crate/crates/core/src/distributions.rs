//! Threshold distributions: the random decision threshold, its pdf, cdf
//! and inverse-cdf sampling.
//!
//! Two families are implemented, selected by name through
//! [`from_config`]: the uniform distribution on `(0, 1)` and the raised
//! cosine distribution on `[mu - delta, mu + delta]`. Instances are
//! immutable and safe to share across threads; sampling takes a
//! caller-owned rng.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bisection tolerance for the numerical inverse cdf.
const QUANTILE_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("evaluation point {0} lies outside [0, 1]")]
    PointOutOfDomain(f64),
    #[error("mu must lie in (0, 1), got {0}")]
    MuOutOfRange(f64),
    #[error("delta must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("raised cosine support [{0}, {1}] must be contained in [0, 1]")]
    SupportOutOfRange(f64, f64),
    #[error("unknown distribution kind `{0}`")]
    UnknownKind(String),
    #[error("distribution kind `{0}` is missing parameter `{1}`")]
    MissingParameter(&'static str, &'static str),
}

/// A continuous threshold random variable supported inside `[0, 1]`.
pub trait ThresholdDist: Send + Sync {
    fn name(&self) -> &'static str;

    /// Density `f(x)`; zero outside the support.
    fn pdf(&self, x: f64) -> Result<f64, DistError>;

    /// Cumulative distribution `F(x)`; exactly 0 below the support and
    /// exactly 1 above it.
    fn cdf(&self, x: f64) -> Result<f64, DistError>;

    /// `dF/dx`, the quantity backpropagation consumes. Equals the pdf.
    fn cdf_derivative(&self, x: f64) -> Result<f64, DistError> {
        self.pdf(x)
    }

    /// Support interval `[a, b]`.
    fn support(&self) -> (f64, f64);

    /// Inverse cdf at `p` in `[0, 1]`.
    fn quantile(&self, p: f64) -> f64;

    /// Serializable description of this instance.
    fn config(&self) -> DistConfig;
}

/// Draw `count` i.i.d. thresholds via inverse-cdf sampling.
pub fn sample<R: Rng + ?Sized>(dist: &dyn ThresholdDist, rng: &mut R, count: usize) -> Vec<f64> {
    (0..count).map(|_| dist.quantile(rng.gen::<f64>())).collect()
}

fn check_domain(x: f64) -> Result<(), DistError> {
    if !(0.0..=1.0).contains(&x) || x.is_nan() {
        return Err(DistError::PointOutOfDomain(x));
    }
    Ok(())
}

/// Uniform threshold on `(0, 1)`: `f(x) = 1`, `F(x) = x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Uniform;

impl ThresholdDist for Uniform {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn pdf(&self, x: f64) -> Result<f64, DistError> {
        check_domain(x)?;
        Ok(1.0)
    }

    fn cdf(&self, x: f64) -> Result<f64, DistError> {
        check_domain(x)?;
        Ok(x)
    }

    fn support(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn quantile(&self, p: f64) -> f64 {
        p
    }

    fn config(&self) -> DistConfig {
        DistConfig {
            kind: "uniform".to_string(),
            mu: None,
            delta: None,
        }
    }
}

/// Raised cosine threshold on `[mu - delta, mu + delta]`.
///
/// `f(x) = (1 / 2 delta) (1 + cos(pi (x - mu) / delta))` on the open
/// support; the mass concentrates around `mu` as `delta` shrinks. Mean
/// is `mu`, variance is `delta^2 (pi^2 - 6) / (3 pi^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaisedCosine {
    mu: f64,
    delta: f64,
}

impl RaisedCosine {
    pub fn new(mu: f64, delta: f64) -> Result<Self, DistError> {
        if !(0.0 < mu && mu < 1.0) || mu.is_nan() {
            return Err(DistError::MuOutOfRange(mu));
        }
        if !(delta > 0.0) {
            return Err(DistError::NonPositiveDelta(delta));
        }
        if mu - delta < 0.0 || mu + delta > 1.0 {
            return Err(DistError::SupportOutOfRange(mu - delta, mu + delta));
        }
        Ok(Self { mu, delta })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn variance(&self) -> f64 {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        self.delta * self.delta * (pi2 - 6.0) / (3.0 * pi2)
    }
}

impl ThresholdDist for RaisedCosine {
    fn name(&self) -> &'static str {
        "raised_cosine"
    }

    fn pdf(&self, x: f64) -> Result<f64, DistError> {
        check_domain(x)?;
        let (a, b) = self.support();
        if x <= a || x >= b {
            return Ok(0.0);
        }
        let t = (x - self.mu) / self.delta;
        Ok((1.0 + (t * std::f64::consts::PI).cos()) / (2.0 * self.delta))
    }

    fn cdf(&self, x: f64) -> Result<f64, DistError> {
        check_domain(x)?;
        let (a, b) = self.support();
        if x <= a {
            return Ok(0.0);
        }
        if x >= b {
            return Ok(1.0);
        }
        let t = (x - self.mu) / self.delta;
        Ok(0.5 * (1.0 + t + (t * std::f64::consts::PI).sin() / std::f64::consts::PI))
    }

    fn support(&self) -> (f64, f64) {
        (self.mu - self.delta, self.mu + self.delta)
    }

    fn quantile(&self, p: f64) -> f64 {
        let (a, b) = self.support();
        if p <= 0.0 {
            return a;
        }
        if p >= 1.0 {
            return b;
        }
        // No closed form; the cdf is strictly increasing on the support,
        // so bisection is safe.
        let (mut lo, mut hi) = (a, b);
        while hi - lo > QUANTILE_TOL {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid).expect("midpoint inside [0, 1]") < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn config(&self) -> DistConfig {
        DistConfig {
            kind: "raised_cosine".to_string(),
            mu: Some(self.mu),
            delta: Some(self.delta),
        }
    }
}

/// Config fragment naming a distribution, e.g.
/// `{"kind":"raised_cosine","mu":0.5,"delta":0.1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl DistConfig {
    pub fn uniform() -> Self {
        Uniform.config()
    }

    pub fn raised_cosine(mu: f64, delta: f64) -> Self {
        DistConfig {
            kind: "raised_cosine".to_string(),
            mu: Some(mu),
            delta: Some(delta),
        }
    }
}

/// Names of the registered distribution families.
pub const KINDS: &[&str] = &["uniform", "raised_cosine"];

/// Build a distribution from its config fragment.
pub fn from_config(config: &DistConfig) -> Result<Box<dyn ThresholdDist>, DistError> {
    match config.kind.as_str() {
        "uniform" => Ok(Box::new(Uniform)),
        "raised_cosine" => {
            let mu = config
                .mu
                .ok_or(DistError::MissingParameter("raised_cosine", "mu"))?;
            let delta = config
                .delta
                .ok_or(DistError::MissingParameter("raised_cosine", "delta"))?;
            Ok(Box::new(RaisedCosine::new(mu, delta)?))
        }
        other => Err(DistError::UnknownKind(other.to_string())),
    }
}
