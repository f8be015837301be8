//! Response families: per-entry log-likelihood `l(w) = log p(y | w)` and its
//! derivatives in the linear predictor `w`.
//!
//! Additive constants that do not depend on `w` are dropped:
//! bernoulli-logit keeps the exact value, gaussian-identity drops
//! `-log(2 pi phi) / 2` and poisson-log drops `-log(y!)`.
//!
//! Predictor values outside `natural_domain` are clamped to its closest end
//! point before evaluation. Callers that need to know how often this happens
//! use [`Family::in_domain`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GlvmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyKind {
    #[serde(rename = "bernoulli-logit")]
    BernoulliLogit,
    #[serde(rename = "gaussian-identity")]
    GaussianIdentity,
    #[serde(rename = "poisson-log")]
    PoissonLog,
}

impl FamilyKind {
    pub fn key(self) -> &'static str {
        match self {
            FamilyKind::BernoulliLogit => "bernoulli-logit",
            FamilyKind::GaussianIdentity => "gaussian-identity",
            FamilyKind::PoissonLog => "poisson-log",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for FamilyKind {
    type Err = GlvmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli-logit" | "bernoulli" => Ok(FamilyKind::BernoulliLogit),
            "gaussian-identity" | "gaussian" => Ok(FamilyKind::GaussianIdentity),
            "poisson-log" | "poisson" => Ok(FamilyKind::PoissonLog),
            other => Err(GlvmError::InvalidConfig(format!(
                "unknown family `{other}` (expected bernoulli-logit, gaussian-identity or poisson-log)"
            ))),
        }
    }
}

/// One response family together with its working domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub kind: FamilyKind,
    /// Fixed dispersion; only used by the gaussian family.
    pub dispersion: f64,
    /// Closed interval of predictor values considered safe.
    pub natural_domain: (f64, f64),
}

#[inline]
fn sigmoid(w: f64) -> f64 {
    if w >= 0.0 {
        1.0 / (1.0 + (-w).exp())
    } else {
        let e = w.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(w))` without overflow.
#[inline]
fn softplus(w: f64) -> f64 {
    if w > 0.0 {
        w + (-w).exp().ln_1p()
    } else {
        w.exp().ln_1p()
    }
}

impl Family {
    pub fn new(kind: FamilyKind) -> Self {
        let natural_domain = match kind {
            FamilyKind::PoissonLog => (-30.0, 10.0),
            _ => (-30.0, 30.0),
        };
        Family {
            kind,
            dispersion: 1.0,
            natural_domain,
        }
    }

    pub fn bernoulli() -> Self {
        Family::new(FamilyKind::BernoulliLogit)
    }

    pub fn gaussian(dispersion: f64) -> Self {
        Family {
            dispersion,
            ..Family::new(FamilyKind::GaussianIdentity)
        }
    }

    pub fn poisson() -> Self {
        Family::new(FamilyKind::PoissonLog)
    }

    /// Uniform upper bound on `-l''(w)` over the natural domain.
    pub fn curvature_bound(&self) -> f64 {
        match self.kind {
            FamilyKind::BernoulliLogit => 0.25,
            FamilyKind::GaussianIdentity => 1.0 / self.dispersion,
            FamilyKind::PoissonLog => self.natural_domain.1.exp(),
        }
    }

    #[inline]
    pub fn in_domain(&self, w: f64) -> bool {
        w >= self.natural_domain.0 && w <= self.natural_domain.1
    }

    #[inline]
    pub fn clamp(&self, w: f64) -> f64 {
        w.clamp(self.natural_domain.0, self.natural_domain.1)
    }

    /// Checks that `y` is a legal response for this family.
    pub fn validate_response(&self, y: f64) -> Result<()> {
        let ok = match self.kind {
            FamilyKind::BernoulliLogit => y == 0.0 || y == 1.0,
            FamilyKind::GaussianIdentity => y.is_finite(),
            FamilyKind::PoissonLog => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(GlvmError::Domain {
                family: self.kind.key().to_string(),
                value: y,
            })
        }
    }

    pub fn loglik(&self, y: f64, w: f64) -> Result<f64> {
        self.validate_response(y)?;
        Ok(self.loglik_unchecked(y, w))
    }

    pub fn dloglik(&self, y: f64, w: f64) -> Result<f64> {
        self.validate_response(y)?;
        Ok(self.dloglik_unchecked(y, w))
    }

    pub fn d2loglik(&self, y: f64, w: f64) -> Result<f64> {
        self.validate_response(y)?;
        Ok(-self.curvature(w))
    }

    /// Third derivative; independent of `y` for every supported family.
    pub fn d3loglik(&self, w: f64) -> f64 {
        let w = self.clamp(w);
        match self.kind {
            FamilyKind::BernoulliLogit => {
                let p = sigmoid(w);
                -p * (1.0 - p) * (1.0 - 2.0 * p)
            }
            FamilyKind::GaussianIdentity => 0.0,
            FamilyKind::PoissonLog => -w.exp(),
        }
    }

    #[inline]
    pub(crate) fn loglik_unchecked(&self, y: f64, w: f64) -> f64 {
        let w = self.clamp(w);
        match self.kind {
            FamilyKind::BernoulliLogit => y * w - softplus(w),
            FamilyKind::GaussianIdentity => {
                let r = y - w;
                -0.5 * r * r / self.dispersion
            }
            FamilyKind::PoissonLog => y * w - w.exp(),
        }
    }

    #[inline]
    pub(crate) fn dloglik_unchecked(&self, y: f64, w: f64) -> f64 {
        let w = self.clamp(w);
        match self.kind {
            FamilyKind::BernoulliLogit => y - sigmoid(w),
            FamilyKind::GaussianIdentity => (y - w) / self.dispersion,
            FamilyKind::PoissonLog => y - w.exp(),
        }
    }

    /// `-l''(w)`, always positive on the natural domain.
    #[inline]
    pub fn curvature(&self, w: f64) -> f64 {
        let w = self.clamp(w);
        match self.kind {
            FamilyKind::BernoulliLogit => {
                let p = sigmoid(w);
                p * (1.0 - p)
            }
            FamilyKind::GaussianIdentity => 1.0 / self.dispersion,
            FamilyKind::PoissonLog => w.exp(),
        }
    }

    /// Inverse link: `E[y | w]`.
    #[inline]
    pub fn mean(&self, w: f64) -> f64 {
        let w = self.clamp(w);
        match self.kind {
            FamilyKind::BernoulliLogit => sigmoid(w),
            FamilyKind::GaussianIdentity => w,
            FamilyKind::PoissonLog => w.exp(),
        }
    }

    pub fn link(&self, mu: f64) -> Result<f64> {
        let err = || GlvmError::Domain {
            family: self.kind.key().to_string(),
            value: mu,
        };
        match self.kind {
            FamilyKind::BernoulliLogit => {
                if mu > 0.0 && mu < 1.0 {
                    Ok((mu / (1.0 - mu)).ln())
                } else {
                    Err(err())
                }
            }
            FamilyKind::GaussianIdentity => {
                if mu.is_finite() {
                    Ok(mu)
                } else {
                    Err(err())
                }
            }
            FamilyKind::PoissonLog => {
                if mu > 0.0 && mu.is_finite() {
                    Ok(mu.ln())
                } else {
                    Err(err())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn all() -> [Family; 3] {
        [Family::bernoulli(), Family::gaussian(1.0), Family::poisson()]
    }

    #[test]
    fn reference_values() {
        let b = Family::bernoulli();
        assert_relative_eq!(b.loglik(1.0, 0.0).unwrap(), 0.5f64.ln(), epsilon = 1e-15);
        assert_eq!(Family::gaussian(1.0).loglik(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(Family::poisson().loglik(2.0, 0.0).unwrap(), -1.0);
        assert_eq!(b.dloglik(1.0, 0.0).unwrap(), 0.5);
        assert_eq!(b.d2loglik(0.0, 0.0).unwrap(), -0.25);
        assert_eq!(Family::gaussian(1.0).dloglik(3.0, 1.0).unwrap(), 2.0);
        assert_eq!(b.mean(0.0), 0.5);
        assert_eq!(b.link(0.5).unwrap(), 0.0);
        assert_eq!(Family::poisson().link(1.0).unwrap(), 0.0);
    }

    #[test]
    fn invalid_responses_are_rejected() {
        assert!(Family::bernoulli().loglik(0.5, 0.0).is_err());
        assert!(Family::poisson().loglik(-1.0, 0.0).is_err());
        assert!(Family::poisson().dloglik(1.5, 0.0).is_err());
        assert!(Family::gaussian(1.0).loglik(f64::NAN, 0.0).is_err());
        let err = Family::bernoulli().loglik(2.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("bernoulli-logit"));
    }

    #[test]
    fn link_rejects_boundary() {
        assert!(Family::bernoulli().link(0.0).is_err());
        assert!(Family::bernoulli().link(1.0).is_err());
        assert!(Family::poisson().link(0.0).is_err());
    }

    fn grid() -> Vec<f64> {
        (-40..=40).map(|i| i as f64 * 0.2).collect()
    }

    fn responses(f: &Family) -> Vec<f64> {
        match f.kind {
            FamilyKind::BernoulliLogit => vec![0.0, 1.0],
            FamilyKind::GaussianIdentity => vec![-2.5, 0.0, 1.3],
            FamilyKind::PoissonLog => vec![0.0, 1.0, 4.0],
        }
    }

    fn fd_close(numeric: f64, analytic: f64) {
        let scale = analytic.abs().max(1e-3);
        assert!(
            (numeric - analytic).abs() / scale <= 1e-6,
            "finite difference {numeric} vs analytic {analytic}"
        );
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for f in all() {
            for y in responses(&f) {
                for w in grid() {
                    let d1 = (f.loglik_unchecked(y, w + h) - f.loglik_unchecked(y, w - h)) / (2.0 * h);
                    fd_close(d1, f.dloglik_unchecked(y, w));
                    let d2 = (f.dloglik_unchecked(y, w + h) - f.dloglik_unchecked(y, w - h)) / (2.0 * h);
                    fd_close(d2, -f.curvature(w));
                    let d3 = (f.curvature(w - h) - f.curvature(w + h)) / (2.0 * h);
                    if f.kind == FamilyKind::GaussianIdentity {
                        assert_eq!(f.d3loglik(w), 0.0);
                    } else {
                        fd_close(d3, f.d3loglik(w));
                    }
                }
            }
        }
    }

    #[test]
    fn concavity_and_curvature_bound() {
        for f in all() {
            let (lo, hi) = f.natural_domain;
            for i in 0..=400 {
                let w = lo + (hi - lo) * i as f64 / 400.0;
                let c = f.curvature(w);
                assert!(c > 0.0, "{:?} not strictly concave at {w}", f.kind);
                assert!(c <= f.curvature_bound() * (1.0 + 1e-12));
            }
        }
        assert_eq!(Family::gaussian(2.0).curvature(3.0), 0.5);
    }

    #[test]
    fn link_inverts_mean() {
        // the logistic mean saturates in double precision far from zero, so
        // the round trip is checked where 1 - p is still well resolved
        for f in all() {
            for i in -40..=40 {
                let w = i as f64 * 0.125;
                let back = f.link(f.mean(w)).unwrap();
                assert!((back - w).abs() <= 1e-12, "{:?} {w} {back}", f.kind);
            }
        }
    }

    #[test]
    fn out_of_domain_is_clamped() {
        let f = Family::poisson();
        assert!(!f.in_domain(50.0));
        assert_eq!(f.mean(50.0), 10f64.exp());
    }

    #[test]
    fn score_has_mean_zero() {
        use rand::SeedableRng;
        use rand_distr::{Bernoulli, Distribution, Normal, Poisson};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let draws = 100_000;
        for f in all() {
            for w in [-1.5, 0.0, 0.7] {
                let mu = f.mean(w);
                let scores: Vec<f64> = (0..draws)
                    .map(|_| {
                        let y = match f.kind {
                            FamilyKind::BernoulliLogit => {
                                Bernoulli::new(mu).unwrap().sample(&mut rng) as u8 as f64
                            }
                            FamilyKind::GaussianIdentity => Normal::new(mu, 1.0).unwrap().sample(&mut rng),
                            FamilyKind::PoissonLog => Poisson::new(mu).unwrap().sample(&mut rng),
                        };
                        f.dloglik(y, w).unwrap()
                    })
                    .collect();
                let m = scores.iter().sum::<f64>() / draws as f64;
                let v = scores.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
                let se = (v / draws as f64).sqrt();
                assert!(m.abs() <= 4.0 * se, "{:?} w={w}: mean score {m} se {se}", f.kind);
            }
        }
    }

    #[test]
    fn keys_round_trip() {
        for k in [FamilyKind::BernoulliLogit, FamilyKind::GaussianIdentity, FamilyKind::PoissonLog] {
            assert_eq!(k.key().parse::<FamilyKind>().unwrap(), k);
        }
        assert!("probit".parse::<FamilyKind>().is_err());
    }
}
