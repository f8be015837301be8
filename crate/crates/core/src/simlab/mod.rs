//! Simulation lab: data generation, alignment of latent estimates, per-rep
//! metrics and a seeded, resumable replication runner.

mod runner;

/// NaN marks an undefined metric; JSON has no NaN, so it travels as `null`.
pub(crate) mod nan_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub use runner::{run_grid, run_rep, GridOutput, GridRow, Method, RepRecord, RunOptions};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::altfit::FitConfig;
use crate::debias::{DebiasConfig, DebiasTarget, ScreenResult};
use crate::error::{GlvmError, Result};
use crate::families::{Family, FamilyKind};
use crate::model::{DataSet, ParamSet};

/// How the penalty level is chosen in each replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    Fixed(f64),
    /// Full cross-validation in every replication.
    Cv,
    /// Cross-validation once per design on a pilot dataset drawn from a
    /// separate stream; the chosen value is reused for every replication.
    CvPilot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub rho: f64,
    pub a: f64,
    pub j_signal: usize,
    pub s_signal: usize,
    pub intercept: f64,
    pub family: FamilyKind,
    pub dispersion: f64,
    pub reps: usize,
    pub seed: u64,
    /// Zero entries used for the type I error; `None` selects the default block.
    pub null_block: Option<Vec<(usize, usize)>>,
    /// Nonzero entries used for power and coverage; `None` selects the default block.
    pub signal_block: Option<Vec<(usize, usize)>>,
    pub lambda_rule: LambdaRule,
    pub fit: FitConfig,
    pub debias: DebiasConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 100,
            p: 80,
            q: 60,
            k: 3,
            rho: 0.2,
            a: 0.5,
            j_signal: 10,
            s_signal: 5,
            intercept: 1.0,
            family: FamilyKind::BernoulliLogit,
            dispersion: 1.0,
            reps: 10,
            seed: 1,
            null_block: None,
            signal_block: None,
            lambda_rule: LambdaRule::CvPilot,
            fit: FitConfig::default(),
            debias: DebiasConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn family_model(&self) -> Family {
        match self.family {
            FamilyKind::GaussianIdentity => Family::gaussian(self.dispersion),
            k => Family::new(k),
        }
    }

    /// Null entries: items 51..60 by covariates 1..10 when q >= 60, otherwise
    /// the last items beyond the signal rows.
    pub fn null_entries(&self) -> Vec<(usize, usize)> {
        if let Some(b) = &self.null_block {
            return b.clone();
        }
        let items: Vec<usize> = if self.q >= 60 {
            (50..60).collect()
        } else {
            let lo = self.j_signal.max(self.q.saturating_sub(10));
            (lo..self.q).collect()
        };
        let covs = self.p.min(10);
        items.iter().flat_map(|&j| (0..covs).map(move |c| (j, c))).collect()
    }

    /// Signal entries: the nonzero part of the 10 x 10 corner.
    pub fn signal_entries(&self) -> Vec<(usize, usize)> {
        if let Some(b) = &self.signal_block {
            return b.clone();
        }
        let (ji, sc) = (self.j_signal.min(10), self.s_signal.min(10));
        (0..ji).flat_map(|j| (0..sc).map(move |c| (j, c))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GlvmError::InvalidConfig(m));
        if self.n < 2 || self.q < 2 || self.p < 1 {
            return bad(format!("need n, q >= 2 and p >= 1, got n={} q={} p={}", self.n, self.q, self.p));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1), got {}", self.rho));
        }
        if self.j_signal > self.q || self.s_signal > self.p {
            return bad("signal block exceeds the dimensions".into());
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        let in_support = |&(j, c): &(usize, usize)| j < self.j_signal && c < self.s_signal;
        for &(j, c) in self.null_entries().iter().chain(self.signal_entries().iter()) {
            if j >= self.q || c >= self.p {
                return bad(format!("block entry ({j}, {c}) out of range"));
            }
        }
        if self.null_entries().iter().any(in_support) {
            return bad("null block intersects the true support".into());
        }
        if !self.signal_entries().iter().all(in_support) {
            return bad("signal block leaves the true support".into());
        }
        if self.a <= -0.5 && self.j_signal > 0 {
            log::warn!("signal range [a, a + 0.5] contains zero");
        }
        self.fit.validate()?;
        self.debias.validate()
    }

    /// Targets screened per replication: null block, signal block and the focus entry.
    pub fn targets(&self) -> Vec<DebiasTarget> {
        let mut t: Vec<DebiasTarget> = self
            .signal_entries()
            .into_iter()
            .chain(self.null_entries())
            .map(|(item, covariate)| DebiasTarget { item, covariate })
            .collect();
        t.sort();
        t.dedup();
        t
    }
}

/// AR(1) correlation `rho^|a-b|` of the joint `(X, U)` vector.
pub fn ar1_covariance(dim: usize, rho: f64) -> Array2<f64> {
    Array2::from_shape_fn((dim, dim), |(a, b)| rho.powi((a as i32 - b as i32).abs()))
}

pub(crate) fn rep_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws one dataset and its true parameters. Covariates come first in the
/// AR(1) ordering, latent variables last.
pub fn generate(cfg: &SimConfig, rep: u64) -> Result<(DataSet, ParamSet)> {
    cfg.validate()?;
    let (n, p, q, k) = (cfg.n, cfg.p, cfg.q, cfg.k);
    let mut rng = rep_rng(cfg.seed, rep);
    let dim = p + k;
    let c = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut xu = Array2::<f64>::zeros((n, dim));
    for i in 0..n {
        let mut prev = 0.0;
        for a in 0..dim {
            let e: f64 = rng.sample(StandardNormal);
            let v = if a == 0 { e } else { cfg.rho * prev + c * e };
            xu[[i, a]] = v;
            prev = v;
        }
    }
    let x = xu.slice(ndarray::s![.., ..p]).to_owned();
    let u = xu.slice(ndarray::s![.., p..]).to_owned();
    let gamma = Array2::from_shape_fn((q, k), |_| rng.sample::<f64, _>(StandardNormal));
    let mut b = Array2::zeros((q, p));
    for j in 0..cfg.j_signal {
        for l in 0..cfg.s_signal {
            b[[j, l]] = cfg.a + 0.5 * rng.random::<f64>();
        }
    }
    let truth = ParamSet {
        beta0: Array1::from_elem(q, cfg.intercept),
        b,
        gamma,
        u,
    };
    let fam = cfg.family_model();
    let mut w = truth.covariate_offsets(&x);
    w += &truth.u.dot(&truth.gamma.t());
    let mut y = Array2::zeros((n, q));
    for i in 0..n {
        for j in 0..q {
            let wij = fam.clamp(w[[i, j]]);
            y[[i, j]] = match fam.kind {
                FamilyKind::BernoulliLogit => {
                    if rng.random::<f64>() < fam.mean(wij) {
                        1.0
                    } else {
                        0.0
                    }
                }
                FamilyKind::GaussianIdentity => wij + fam.dispersion.sqrt() * rng.sample::<f64, _>(StandardNormal),
                FamilyKind::PoissonLog => Poisson::new(fam.mean(wij))
                    .map_err(|e| GlvmError::Numerical(format!("poisson draw: {e}")))?
                    .sample(&mut rng),
            };
        }
    }
    let data = DataSet::complete(y, x, fam)?;
    Ok((data, truth))
}

/// Least-squares alignment `G` with `U_hat G^T ~ U_true`, and the RMS error
/// `|U_hat G^T - U_true|_F / sqrt(n)`.
pub fn align(u_hat: &Array2<f64>, u_true: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    let (n, k) = u_hat.dim();
    if u_true.dim() != (n, k) {
        return Err(GlvmError::Dimension {
            axis: "latent",
            expected: k,
            found: u_true.ncols(),
        });
    }
    let a = DMatrix::from_fn(n, k, |i, c| u_hat[[i, c]]);
    let t = DMatrix::from_fn(n, k, |i, c| u_true[[i, c]]);
    let ata = a.transpose() * &a;
    let svs = ata.singular_values();
    let (mx, mn) = (svs.max(), svs.min());
    if !(mn > 1e-12 * mx.max(1e-300)) {
        return Err(GlvmError::Numerical("latent estimate is rank deficient".into()));
    }
    let gt = ata.cholesky().ok_or_else(|| GlvmError::Numerical("latent estimate is rank deficient".into()))?.solve(&(a.transpose() * &t));
    let resid = &a * &gt - &t;
    let g = Array2::from_shape_fn((k, k), |(r, c)| gt[(c, r)]);
    Ok((g, resid.norm() / (n as f64).sqrt()))
}

/// Loading error `|Gamma_hat G^{-1} - Gamma_true|_F / sqrt(q)` for the `G` from [`align`].
pub fn align_loadings(gamma_hat: &Array2<f64>, gamma_true: &Array2<f64>, g: &Array2<f64>) -> Result<f64> {
    let k = g.nrows();
    let gm = DMatrix::from_fn(k, k, |r, c| g[[r, c]]);
    let inv = gm.try_inverse().ok_or_else(|| GlvmError::Numerical("alignment matrix is singular".into()))?;
    let q = gamma_hat.nrows();
    let gh = DMatrix::from_fn(q, k, |r, c| gamma_hat[[r, c]]);
    let gt = DMatrix::from_fn(q, k, |r, c| gamma_true[[r, c]]);
    Ok((gh * inv - gt).norm() / (q as f64).sqrt())
}

/// Debiased statistics for one tracked entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusStat {
    #[serde(with = "nan_null")]
    pub beta_tilde: f64,
    #[serde(with = "nan_null")]
    pub se: f64,
    #[serde(with = "nan_null")]
    pub truth: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    #[serde(with = "nan_null")]
    pub type1: f64,
    #[serde(with = "nan_null")]
    pub power: f64,
    #[serde(with = "nan_null")]
    pub mse_b: f64,
    #[serde(with = "nan_null")]
    pub coverage: f64,
    #[serde(with = "nan_null")]
    pub align_err_u: f64,
    #[serde(with = "nan_null")]
    pub align_err_gamma: f64,
    /// Median over signal items of `|beta_hat_j - beta*_j|_2`.
    #[serde(with = "nan_null")]
    pub est_err: f64,
    /// `(item, covariate, rejected)` for every screened entry of both blocks.
    pub rejections: Vec<(usize, usize, bool)>,
    pub failed_targets: usize,
    pub focus: Option<FocusStat>,
    pub outer_iters: usize,
    pub converged: bool,
    #[serde(with = "nan_null")]
    pub lambda: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Metrics for one replication. Alignment errors are NaN when the fit has no
/// latent variables.
pub fn evaluate(screen: &ScreenResult, fitted: &ParamSet, truth: &ParamSet, cfg: &SimConfig) -> Result<SimMetrics> {
    let lookup = |j: usize, c: usize| {
        screen
            .entries
            .iter()
            .find(|e| e.target.item == j && e.target.covariate == c)
            .and_then(|e| e.report.as_ref().map(|r| (e.flagged, r)))
    };
    let mut rejections = Vec::new();
    let mut failed = 0;
    let mut rate = |block: &[(usize, usize)]| {
        let (mut rej, mut tot) = (0usize, 0usize);
        for &(j, c) in block {
            match lookup(j, c) {
                Some((flag, _)) => {
                    tot += 1;
                    rej += flag as usize;
                    rejections.push((j, c, flag));
                }
                None => failed += 1,
            }
        }
        if tot == 0 {
            f64::NAN
        } else {
            rej as f64 / tot as f64
        }
    };
    let null = cfg.null_entries();
    let signal = cfg.signal_entries();
    let type1 = rate(&null);
    let power = rate(&signal);

    let mut cov = (0usize, 0usize);
    for &(j, c) in &signal {
        if let Some((_, r)) = lookup(j, c) {
            let t = truth.b[[j, c]];
            cov.0 += (r.ci_low <= t && t <= r.ci_high) as usize;
            cov.1 += 1;
        }
    }
    let coverage = if cov.1 == 0 { f64::NAN } else { cov.0 as f64 / cov.1 as f64 };
    let (q, p) = truth.b.dim();
    let mse_b = (&fitted.b - &truth.b).mapv(|v| v * v).sum() / (q * p) as f64;
    let est_err = median(
        (0..cfg.j_signal)
            .map(|j| (&fitted.b.row(j) - &truth.b.row(j)).mapv(|v| v * v).sum().sqrt())
            .collect(),
    );
    let (align_err_u, align_err_gamma) = if fitted.k() == truth.k() && fitted.k() > 0 {
        match align(&fitted.u, &truth.u) {
            Ok((g, e)) => (e, align_loadings(&fitted.gamma, &truth.gamma, &g).unwrap_or(f64::NAN)),
            Err(_) => (f64::NAN, f64::NAN),
        }
    } else {
        (f64::NAN, f64::NAN)
    };
    let focus = lookup(0, 0).map(|(_, r)| {
        let t = truth.b[[0, 0]];
        FocusStat {
            beta_tilde: r.beta_tilde,
            se: r.se,
            truth: t,
            covered: r.ci_low <= t && t <= r.ci_high,
        }
    });
    Ok(SimMetrics {
        type1,
        power,
        mse_b,
        coverage,
        align_err_u,
        align_err_gamma,
        est_err,
        rejections,
        failed_targets: failed,
        focus,
        outer_iters: 0,
        converged: false,
        lambda: f64::NAN,
    })
}

/// One-sample Kolmogorov-Smirnov test against N(0, 1). Returns the statistic
/// and the asymptotic p-value.
pub fn ks_normal(sample: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, Normal};
    let mut v: Vec<f64> = sample.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let nd = Normal::standard();
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = nd.cdf(x);
        d = d.max(f - i as f64 / m as f64).max((i + 1) as f64 / m as f64 - f);
    }
    let sn = (m as f64).sqrt();
    let lam = (sn + 0.12 + 0.11 / sn) * d;
    (d, kolmogorov_sf(lam))
}

/// `P(K > x)` for the Kolmogorov distribution.
fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * kf * kf * x * x).exp();
        s += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}
