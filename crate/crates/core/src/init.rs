//! Starting values from the covariate-free working model: a rank-K SVD of the
//! centered response matrix, optionally polished by projected block descent.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::altfit::item::{fit_item, ItemEstimate, ItemProblem, POWER_STEPS};
use crate::altfit::default_m1;
use crate::error::{GlvmError, Result};
use crate::families::FamilyKind;
use crate::model::{item_loglik, DataSet, ParamSet};
use crate::solver::{sigma_max_sq, StepRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InitMethod {
    #[serde(rename = "spectral")]
    Spectral,
    #[default]
    #[serde(rename = "spectral+refine")]
    SpectralRefine,
    #[serde(rename = "anchor")]
    Anchor,
}

impl std::str::FromStr for InitMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "spectral" => Ok(InitMethod::Spectral),
            "spectral+refine" => Ok(InitMethod::SpectralRefine),
            "anchor" => Ok(InitMethod::Anchor),
            _ => Err(format!("unknown init method {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub eps_clip: f64,
    pub refine_steps: usize,
    pub box_d: f64,
    /// Penalty for the per-item lasso fits of non-anchor items.
    pub anchor_lambda: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            eps_clip: 0.01,
            refine_steps: 20,
            box_d: 10.0,
            anchor_lambda: 0.05,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_clip > 0.0 && self.eps_clip < 0.5) {
            return Err(GlvmError::InvalidConfig(format!("eps_clip must lie in (0, 0.5), got {}", self.eps_clip)));
        }
        if !(self.box_d >= 1.0) {
            return Err(GlvmError::InvalidConfig(format!("box_d must be at least 1, got {}", self.box_d)));
        }
        if !(self.anchor_lambda >= 0.0) {
            return Err(GlvmError::InvalidConfig("anchor_lambda must be nonnegative".into()));
        }
        Ok(())
    }
}

pub(crate) fn intercepts(data: &DataSet, eps: f64) -> Result<Array1<f64>> {
    let mut b0 = Array1::zeros(data.q());
    for j in 0..data.q() {
        let (y, m) = (data.y().column(j), data.mask().column(j));
        let mean = y.iter().zip(m.iter()).filter(|(_, &o)| o).map(|(v, _)| v).sum::<f64>() / data.item_count(j) as f64;
        let f = data.family(j);
        let mu = match f.kind {
            FamilyKind::BernoulliLogit => mean.clamp(eps, 1.0 - eps),
            FamilyKind::PoissonLog => mean.max(eps),
            FamilyKind::GaussianIdentity => mean,
        };
        b0[j] = f.clamp(f.link(mu)?);
    }
    Ok(b0)
}

/// Rank-`k` spectral start with `B = 0`.
pub fn spectral_init(data: &DataSet, k: usize, cfg: &InitConfig) -> Result<ParamSet> {
    cfg.validate()?;
    let (n, q, p) = (data.n(), data.q(), data.p());
    if k == 0 || k >= n.min(q) {
        return Err(GlvmError::InvalidConfig(format!(
            "latent dimension must satisfy 1 <= K < min(n, q) = {}, got {k}",
            n.min(q)
        )));
    }
    let beta0 = intercepts(data, cfg.eps_clip)?;

    let mut r = DMatrix::<f64>::zeros(n, q);
    for j in 0..q {
        let f = data.family(j);
        let mu = f.mean(beta0[j]);
        let scale = n as f64 / data.item_count(j) as f64;
        for i in 0..n {
            if data.mask()[[i, j]] {
                r[(i, j)] = (data.y()[[i, j]] - mu) * scale;
            }
        }
    }
    let svd = r.svd(true, true);
    let a = svd.u.as_ref().ok_or_else(|| GlvmError::Numerical("SVD failed to return left vectors".into()))?;
    let vt = svd.v_t.as_ref().ok_or_else(|| GlvmError::Numerical("SVD failed to return right vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].partial_cmp(&svd.singular_values[x]).unwrap());

    let vbar = (0..q).map(|j| data.family(j).curvature(beta0[j])).sum::<f64>() / q as f64;
    let sn = (n as f64).sqrt();
    let d = cfg.box_d;
    let mut u = Array2::zeros((n, k));
    let mut gamma = Array2::zeros((q, k));
    for (c, &o) in order.iter().take(k).enumerate() {
        let s = svd.singular_values[o];
        for i in 0..n {
            u[[i, c]] = (sn * a[(i, o)]).clamp(-d, d);
        }
        for j in 0..q {
            gamma[[j, c]] = (vt[(o, j)] * s / (sn * vbar)).clamp(-d, d);
        }
    }
    if !u.iter().chain(gamma.iter()).all(|v| v.is_finite()) {
        return Err(GlvmError::Numerical("spectral start is not finite".into()));
    }
    Ok(ParamSet {
        beta0: beta0.mapv(|v| v.clamp(-d, d)),
        b: Array2::zeros((q, p)),
        gamma,
        u,
    })
}

/// Covariate-free objective `-(1/(nq)) sum_observed l(beta_j0 + gamma_j . U_i)`.
pub fn covfree_objective(data: &DataSet, params: &ParamSet) -> f64 {
    let mut w = params.u.dot(&params.gamma.t());
    w += &params.beta0.view().insert_axis(Axis(0));
    let ll: f64 = (0..data.q()).map(|j| item_loglik(data, j, w.column(j))).sum();
    -ll / (data.n() * data.q()) as f64
}

fn item_block_step(data: &DataSet, params: &ParamSet, j: usize, d: f64) -> (f64, Array1<f64>) {
    let k = params.k();
    let f = data.family(j);
    let rows = data.observed_subjects(j);
    let mut z = Array2::zeros((rows.len(), 1 + k));
    for (r, &i) in rows.iter().enumerate() {
        z[[r, 0]] = 1.0;
        z.row_mut(r).slice_mut(ndarray::s![1..]).assign(&params.u.row(i));
    }
    let nq = (data.n() * data.q()) as f64;
    let lip = f.curvature_bound() / nq * sigma_max_sq(z.view(), POWER_STEPS);
    let mut g0 = 0.0;
    let mut g = Array1::zeros(k);
    for (r, &i) in rows.iter().enumerate() {
        let w = params.beta0[j] + params.gamma.row(j).dot(&params.u.row(i));
        let s = -f.dloglik_unchecked(data.y()[[i, j]], w) / nq;
        g0 += s;
        g.scaled_add(s, &z.row(r).slice(ndarray::s![1..]));
    }
    let eta = 1.0 / lip;
    let b0 = (params.beta0[j] - eta * g0).clamp(-d, d);
    let gam = (&params.gamma.row(j) - &(g * eta)).mapv(|v| v.clamp(-d, d));
    (b0, gam)
}

fn subject_step(data: &DataSet, params: &ParamSet, i: usize, d: f64) -> Array1<f64> {
    let cols: Vec<usize> = (0..data.q()).filter(|&j| data.mask()[[i, j]]).collect();
    let gsub = params.gamma.select(Axis(0), &cols);
    let bu = cols.iter().map(|&j| data.family(j).curvature_bound()).fold(0.0, f64::max);
    let nq = (data.n() * data.q()) as f64;
    let lip = bu / nq * sigma_max_sq(gsub.view(), POWER_STEPS);
    if !(lip > 0.0) {
        return params.u.row(i).mapv(|v| v.clamp(-d, d));
    }
    let mut g = Array1::zeros(params.k());
    for (r, &j) in cols.iter().enumerate() {
        let w = params.beta0[j] + gsub.row(r).dot(&params.u.row(i));
        let s = -data.family(j).dloglik_unchecked(data.y()[[i, j]], w) / nq;
        g.scaled_add(s, &gsub.row(r));
    }
    (&params.u.row(i) - &(g / lip)).mapv(|v| v.clamp(-d, d))
}

/// Projected block gradient descent on the covariate-free objective, one
/// gradient step per block per round.
pub fn refine_covfree(data: &DataSet, params0: &ParamSet, cfg: &InitConfig) -> Result<ParamSet> {
    cfg.validate()?;
    params0.check_dims(data)?;
    if params0.b.iter().any(|&v| v != 0.0) {
        return Err(GlvmError::InvalidConfig("refine_covfree expects B = 0".into()));
    }
    let d = cfg.box_d;
    let mut params = params0.clone();
    let mut obj = covfree_objective(data, &params);
    if !obj.is_finite() {
        return Err(GlvmError::Numerical("non-finite covariate-free objective at refine round 0".into()));
    }
    for round in 1..=cfg.refine_steps {
        let items: Vec<(f64, Array1<f64>)> = (0..data.q()).into_par_iter().map(|j| item_block_step(data, &params, j, d)).collect();
        for (j, (b0, g)) in items.into_iter().enumerate() {
            params.beta0[j] = b0;
            params.gamma.row_mut(j).assign(&g);
        }
        let rows: Vec<Array1<f64>> = (0..data.n()).into_par_iter().map(|i| subject_step(data, &params, i, d)).collect();
        for (i, r) in rows.into_iter().enumerate() {
            params.u.row_mut(i).assign(&r);
        }
        let next = covfree_objective(data, &params);
        if !next.is_finite() {
            return Err(GlvmError::Numerical(format!("non-finite covariate-free objective at refine round {round}")));
        }
        debug_assert!(next <= obj + 1e-10, "refine round {round}: {next} > {obj}");
        obj = next;
    }
    Ok(params)
}

/// Spectral start and refinement on the anchor items only, then a per-item
/// lasso for the remaining items with the resulting latent estimate.
pub fn anchor_init(data: &DataSet, anchors: &[usize], k: usize, cfg: &InitConfig) -> Result<ParamSet> {
    cfg.validate()?;
    let mut set: Vec<usize> = anchors.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.is_empty() || set.len() < k {
        return Err(GlvmError::InvalidConfig(format!("need at least K = {k} anchor items, got {}", set.len())));
    }
    if let Some(&bad) = set.iter().find(|&&j| j >= data.q()) {
        return Err(GlvmError::InvalidConfig(format!("anchor item {bad} out of range (q = {})", data.q())));
    }
    let sub = DataSet::new(
        data.y().select(Axis(1), &set),
        data.mask().select(Axis(1), &set),
        data.x().clone(),
        set.iter().map(|&j| data.family(j).clone()).collect(),
    )?;
    let p0 = spectral_init(&sub, k, cfg)?;
    let pa = refine_covfree(&sub, &p0, cfg)?;

    let (n, q, p) = (data.n(), data.q(), data.p());
    let mut out = ParamSet::zeros(n, q, p, k);
    out.u.assign(&pa.u);
    for (a, &j) in set.iter().enumerate() {
        out.beta0[j] = pa.beta0[a];
        out.gamma.row_mut(j).assign(&pa.gamma.row(a));
    }
    let rest: Vec<usize> = (0..q).filter(|j| set.binary_search(j).is_err()).collect();
    let m1 = default_m1(n);
    let fits: Vec<ItemEstimate> = rest
        .par_iter()
        .map(|&j| {
            let prob = ItemProblem::from_data(data, j, out.u.view());
            fit_item(&prob, cfg.anchor_lambda, m1, StepRule::Lipschitz, None).map(|f| f.estimate)
        })
        .collect::<Result<_>>()?;
    for (&j, e) in rest.iter().zip(fits) {
        out.beta0[j] = e.beta0.clamp(-cfg.box_d, cfg.box_d);
        out.b.row_mut(j).assign(&e.beta);
        out.gamma.row_mut(j).assign(&e.gamma.mapv(|v| v.clamp(-cfg.box_d, cfg.box_d)));
    }
    Ok(out)
}
