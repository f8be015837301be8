//! Decorrelated-score debiasing for single covariate effects.
//!
//! Information quantities use the positive curvature `nu = -l''`, so the
//! partial information `F` is positive and the one-step estimator is
//! `beta_hat + S / F`.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{GlvmError, Result};
use crate::model::{DataSet, ParamSet};
use crate::solver::{mfista, sym_max_eig, L1Block, Smooth, StepRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DebiasTarget {
    pub item: usize,
    pub covariate: usize,
}

/// Penalty for the decorrelation lasso.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPrime {
    /// `c * nu_bar * (sqrt(log n / q) + sqrt(s) * sqrt(log p / n))`, with
    /// `nu_bar` the mean curvature weight of the item and `s` its fitted
    /// support size. The `nu_bar` factor puts the threshold on the scale of
    /// the weighted design.
    Rule { c: f64 },
    Value(f64),
    /// Held-out quadratic loss over subject folds on a geometric grid below `max |h|`.
    Cv { folds: usize, grid: usize },
}

impl Default for LambdaPrime {
    fn default() -> Self {
        LambdaPrime::Rule { c: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebiasConfig {
    pub lambda_prime: LambdaPrime,
    pub alpha: f64,
    /// Proximal-gradient steps for the decorrelation lasso.
    pub steps: usize,
    /// Evaluate the score with the target coefficient set to zero.
    pub score_at_null: bool,
    pub seed: u64,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        DebiasConfig {
            lambda_prime: LambdaPrime::default(),
            alpha: 0.05,
            steps: 5000,
            score_at_null: false,
            seed: 0,
        }
    }
}

impl DebiasConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(GlvmError::InvalidConfig(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        match self.lambda_prime {
            LambdaPrime::Rule { c } if !(c >= 0.0) => Err(GlvmError::InvalidConfig("lambda_prime constant must be nonnegative".into())),
            LambdaPrime::Value(v) if !(v >= 0.0) => Err(GlvmError::InvalidConfig("lambda_prime must be nonnegative".into())),
            LambdaPrime::Cv { folds, grid } if folds < 2 || grid == 0 => {
                Err(GlvmError::InvalidConfig("lambda_prime cv needs at least 2 folds and a nonempty grid".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasReport {
    pub item: usize,
    pub covariate: usize,
    pub beta_hat: f64,
    pub beta_tilde: f64,
    pub info_f: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub w_hat_support: usize,
    pub lambda_prime: f64,
    pub n_obs: usize,
}

/// Weighted Gram matrix and score of one item at the fitted parameters, on
/// the design `(1, X, U)`.
#[derive(Debug, Clone)]
pub struct ItemInfo {
    pub item: usize,
    pub n_obs: usize,
    /// `(1/n_j) sum nu_i Z_i Z_i^T`.
    pub gram: Array2<f64>,
    /// `(1/n_j) sum l'_i Z_i`.
    pub score: Array1<f64>,
    rows: Vec<usize>,
    z: Array2<f64>,
    nu: Vec<f64>,
    dl: Vec<f64>,
}

impl ItemInfo {
    fn dim(&self) -> usize {
        self.gram.nrows()
    }

    /// `H = G[-c,-c]` and `h = G[-c,c]` for design column `c`.
    fn blocks(&self, c: usize) -> (Array2<f64>, Array1<f64>) {
        let keep: Vec<usize> = (0..self.dim()).filter(|&a| a != c).collect();
        let h = keep.iter().map(|&a| self.gram[[a, c]]).collect();
        let hh = Array2::from_shape_fn((keep.len(), keep.len()), |(a, b)| self.gram[[keep[a], keep[b]]]);
        (hh, h)
    }
}

pub fn item_information(data: &DataSet, params: &ParamSet, item: usize) -> Result<ItemInfo> {
    params.check_dims(data)?;
    if item >= data.q() {
        return Err(GlvmError::InvalidConfig(format!("item {item} out of range (q = {})", data.q())));
    }
    let (p, k) = (data.p(), params.k());
    let d = 1 + p + k;
    let f = data.family(item);
    let rows = data.observed_subjects(item);
    let m = rows.len();
    let mut z = Array2::zeros((m, d));
    let mut nu = Vec::with_capacity(m);
    let mut dl = Vec::with_capacity(m);
    let beta = params.b.row(item);
    let gam = params.gamma.row(item);
    for (r, &i) in rows.iter().enumerate() {
        z[[r, 0]] = 1.0;
        for c in 0..p {
            z[[r, 1 + c]] = data.x()[[i, c]];
        }
        for c in 0..k {
            z[[r, 1 + p + c]] = params.u[[i, c]];
        }
        let w = params.beta0[item] + beta.dot(&data.x().row(i)) + gam.dot(&params.u.row(i));
        nu.push(f.curvature(w));
        dl.push(f.dloglik_unchecked(data.y()[[i, item]], f.clamp(w)));
    }
    let mut zw = z.clone();
    for (r, mut row) in zw.rows_mut().into_iter().enumerate() {
        row *= nu[r];
    }
    let gram = z.t().dot(&zw) / m as f64;
    let score = z.t().dot(&Array1::from(dl.clone())) / m as f64;
    Ok(ItemInfo {
        item,
        n_obs: m,
        gram,
        score,
        rows,
        z,
        nu,
        dl,
    })
}

struct Quadratic<'a> {
    h: &'a Array2<f64>,
    b: &'a Array1<f64>,
}

impl Smooth for Quadratic<'_> {
    fn value(&mut self, w: &[f64]) -> f64 {
        let w = ndarray::ArrayView1::from(w);
        0.5 * w.dot(&self.h.dot(&w)) - self.b.dot(&w)
    }
    fn value_grad(&mut self, w: &[f64], g: &mut [f64]) -> f64 {
        let wv = ndarray::ArrayView1::from(w);
        let hw = self.h.dot(&wv);
        for a in 0..w.len() {
            g[a] = hw[a] - self.b[a];
        }
        0.5 * wv.dot(&hw) - self.b.dot(&wv)
    }
}

fn lasso_quadratic(h: &Array2<f64>, b: &Array1<f64>, lambda: f64, steps: usize, warm: Option<&Array1<f64>>, what: &dyn Fn() -> String) -> Result<Array1<f64>> {
    let d = b.len();
    let lip = sym_max_eig(h.view(), 100) * 1.01;
    let mut w = warm.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; d]);
    if lip > 0.0 {
        let pen = L1Block { range: 0..d, weight: lambda };
        mfista(&mut Quadratic { h, b }, &pen, &mut w, 1.0 / lip, steps, StepRule::Lipschitz, what)?;
    }
    Ok(Array1::from(w))
}

/// `0.5 w^T H w - w^T h + lambda' |w|_1` for target covariate `k`.
pub fn decorrelation_objective(info: &ItemInfo, k: usize, w: &Array1<f64>, lambda_prime: f64) -> f64 {
    let (hh, h) = info.blocks(1 + k);
    0.5 * w.dot(&hh.dot(w)) - h.dot(w) + lambda_prime * w.iter().map(|v| v.abs()).sum::<f64>()
}

fn check_design(info: &ItemInfo, k: usize) -> Result<()> {
    let c = 1 + k;
    if let Some(a) = (0..info.dim()).find(|&a| a != c && !(info.gram[[a, a]] > 0.0)) {
        return Err(GlvmError::Numerical(format!(
            "item {}: nuisance design column {a} has zero weighted variance",
            info.item
        )));
    }
    Ok(())
}

/// Decorrelation vector on `(1, X_{-k}, U)` for covariate `k`.
pub fn decorrelate(info: &ItemInfo, k: usize, lambda_prime: f64, steps: usize) -> Result<Array1<f64>> {
    if !(lambda_prime >= 0.0) {
        return Err(GlvmError::InvalidConfig(format!("lambda_prime must be nonnegative, got {lambda_prime}")));
    }
    check_design(info, k)?;
    let (hh, h) = info.blocks(1 + k);
    let item = info.item;
    lasso_quadratic(&hh, &h, lambda_prime, steps, None, &|| format!("decorrelation for item {item}, covariate {k}"))
}

/// Selects the decorrelation penalty by held-out quadratic loss over folds of
/// the item's observed subjects.
pub fn cv_lambda_prime(info: &ItemInfo, k: usize, folds: usize, grid: usize, steps: usize, seed: u64) -> Result<f64> {
    check_design(info, k)?;
    let c = 1 + k;
    let m = info.n_obs;
    if m < 2 * folds {
        return Err(GlvmError::InvalidData(format!("item {}: too few observations for {folds}-fold cv", info.item)));
    }
    let (_, h_full) = info.blocks(c);
    let lmax = h_full.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if lmax == 0.0 {
        return Ok(0.0);
    }
    let lambdas: Vec<f64> = (0..grid)
        .map(|g| if grid == 1 { lmax } else { lmax * (1e-3f64).powf(g as f64 / (grid - 1) as f64) })
        .collect();

    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((info.item as u64) << 20) ^ k as u64);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0; m];
    for (r, &i) in order.iter().enumerate() {
        fold_of[i] = r % folds;
    }
    let keep: Vec<usize> = (0..info.dim()).filter(|&a| a != c).collect();
    let gram_of = |sel: &dyn Fn(usize) -> bool| {
        let d = info.dim();
        let mut g = Array2::<f64>::zeros((d, d));
        let mut cnt = 0.0;
        for r in 0..m {
            if sel(r) {
                let zr = info.z.row(r);
                for a in 0..d {
                    let s = info.nu[r] * zr[a];
                    for b in 0..d {
                        g[[a, b]] += s * zr[b];
                    }
                }
                cnt += 1.0;
            }
        }
        g / cnt
    };
    let split = |g: &Array2<f64>| {
        let h = keep.iter().map(|&a| g[[a, c]]).collect::<Array1<f64>>();
        let hh = Array2::from_shape_fn((keep.len(), keep.len()), |(a, b)| g[[keep[a], keep[b]]]);
        (hh, h)
    };
    let mut loss = vec![0.0; grid];
    for f in 0..folds {
        let (htr, btr) = split(&gram_of(&|r| fold_of[r] != f));
        let (hte, bte) = split(&gram_of(&|r| fold_of[r] == f));
        let mut warm: Option<Array1<f64>> = None;
        for (g, &lam) in lambdas.iter().enumerate() {
            let w = lasso_quadratic(&htr, &btr, lam, steps, warm.as_ref(), &|| "decorrelation cv".into())?;
            loss[g] += 0.5 * w.dot(&hte.dot(&w)) - bte.dot(&w);
            warm = Some(w);
        }
    }
    let mut best = 0;
    for g in 1..grid {
        if loss[g] < loss[best] {
            best = g;
        }
    }
    Ok(lambdas[best])
}

/// Decorrelated score `S` and partial information `F` for covariate `k`.
/// With `at_null`, the score is evaluated with `beta_jk = 0`.
pub fn score_and_info(data: &DataSet, params: &ParamSet, info: &ItemInfo, k: usize, w: &Array1<f64>, at_null: bool) -> Result<(f64, f64)> {
    let c = 1 + k;
    if w.len() + 1 != info.dim() || w.iter().any(|v| !v.is_finite()) {
        return Err(GlvmError::Numerical(format!("item {}: invalid decorrelation vector", info.item)));
    }
    let keep: Vec<usize> = (0..info.dim()).filter(|&a| a != c).collect();
    let m = info.n_obs as f64;
    let f = data.family(info.item);
    let bk = params.b[[info.item, k]];
    let (mut s, mut fi) = (0.0, 0.0);
    for r in 0..info.n_obs {
        let zr = info.z.row(r);
        let resid = zr[c] - keep.iter().zip(w.iter()).map(|(&a, wa)| wa * zr[a]).sum::<f64>();
        let dl = if at_null {
            let i = info.rows[r];
            let w0 = params.beta0[info.item]
                + params.b.row(info.item).dot(&data.x().row(i))
                + params.gamma.row(info.item).dot(&params.u.row(i))
                - bk * zr[c];
            f.dloglik_unchecked(data.y()[[i, info.item]], f.clamp(w0))
        } else {
            info.dl[r]
        };
        s += dl * resid;
        fi += info.nu[r] * zr[c] * resid;
    }
    let (s, fi) = (s / m, fi / m);
    if !(fi > 1e-10) {
        return Err(GlvmError::DegenerateInformation {
            item: info.item,
            covariate: k,
            info: fi,
        });
    }
    Ok((s, fi))
}

fn resolve_lambda_prime(data: &DataSet, params: &ParamSet, info: &ItemInfo, k: usize, cfg: &DebiasConfig) -> Result<f64> {
    Ok(match cfg.lambda_prime {
        LambdaPrime::Value(v) => v,
        LambdaPrime::Rule { c } => {
            let n = info.n_obs as f64;
            let s = params.b.row(info.item).iter().filter(|v| **v != 0.0).count() as f64;
            let p = data.p() as f64;
            let nu_bar = info.gram[[0, 0]];
            c * nu_bar * ((n.ln() / data.q() as f64).sqrt() + s.sqrt() * (p.ln().max(0.0) / n).sqrt())
        }
        LambdaPrime::Cv { folds, grid } => cv_lambda_prime(info, k, folds, grid, cfg.steps, cfg.seed)?,
    })
}

fn report_from(info: &ItemInfo, data: &DataSet, params: &ParamSet, k: usize, cfg: &DebiasConfig) -> Result<DebiasReport> {
    let item = info.item;
    if k >= data.p() {
        return Err(GlvmError::InvalidConfig(format!("covariate {k} out of range (p = {})", data.p())));
    }
    let lp = resolve_lambda_prime(data, params, info, k, cfg)?;
    let w = decorrelate(info, k, lp, cfg.steps)?;
    let (s, fi) = score_and_info(data, params, info, k, &w, cfg.score_at_null)?;
    let beta_hat = params.b[[item, k]];
    let base = if cfg.score_at_null { 0.0 } else { beta_hat };
    let beta_tilde = base + s / fi;
    let se = 1.0 / (info.n_obs as f64 * fi).sqrt();
    let z = beta_tilde / se;
    let p_value = statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    let zq = Normal::standard().inverse_cdf(1.0 - cfg.alpha / 2.0);
    Ok(DebiasReport {
        item,
        covariate: k,
        beta_hat,
        beta_tilde,
        info_f: fi,
        se,
        z,
        p_value,
        ci_low: beta_tilde - zq * se,
        ci_high: beta_tilde + zq * se,
        w_hat_support: w.iter().filter(|v| **v != 0.0).count(),
        lambda_prime: lp,
        n_obs: info.n_obs,
    })
}

pub fn debias_one(data: &DataSet, params: &ParamSet, target: DebiasTarget, cfg: &DebiasConfig) -> Result<DebiasReport> {
    cfg.validate()?;
    let info = item_information(data, params, target.item)?;
    report_from(&info, data, params, target.covariate, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    #[default]
    None,
    Bonferroni,
}

impl std::str::FromStr for Correction {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Correction::None),
            "bonferroni" => Ok(Correction::Bonferroni),
            _ => Err(format!("unknown correction {s:?} (expected none or bonferroni)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenEntry {
    pub target: DebiasTarget,
    pub report: Option<DebiasReport>,
    pub error: Option<String>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub entries: Vec<ScreenEntry>,
    pub threshold: f64,
    /// Number of flagged items per covariate, indexed by covariate.
    pub biased_counts: Vec<usize>,
}

/// Debiases every target; failures are recorded per target.
pub fn screen(data: &DataSet, params: &ParamSet, targets: &[DebiasTarget], cfg: &DebiasConfig, correction: Correction) -> Result<ScreenResult> {
    cfg.validate()?;
    params.check_dims(data)?;
    if targets.is_empty() {
        return Err(GlvmError::InvalidConfig("no debiasing targets".into()));
    }
    let threshold = match correction {
        Correction::None => cfg.alpha,
        Correction::Bonferroni => cfg.alpha / targets.len() as f64,
    };
    let mut items: Vec<usize> = targets.iter().map(|t| t.item).collect();
    items.sort_unstable();
    items.dedup();
    let infos: BTreeMap<usize, std::result::Result<ItemInfo, String>> = items
        .par_iter()
        .map(|&j| (j, item_information(data, params, j).map_err(|e| e.to_string())))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let entries: Vec<ScreenEntry> = targets
        .par_iter()
        .map(|&t| {
            let res = match &infos[&t.item] {
                Ok(info) => report_from(info, data, params, t.covariate, cfg).map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            match res {
                Ok(r) => ScreenEntry {
                    target: t,
                    flagged: r.p_value <= threshold,
                    report: Some(r),
                    error: None,
                },
                Err(e) => ScreenEntry {
                    target: t,
                    report: None,
                    error: Some(e),
                    flagged: false,
                },
            }
        })
        .collect();
    let mut biased_counts = vec![0; data.p()];
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        if e.flagged && seen.insert(e.target) {
            biased_counts[e.target.covariate] += 1;
        }
    }
    Ok(ScreenResult {
        entries,
        threshold,
        biased_counts,
    })
}
