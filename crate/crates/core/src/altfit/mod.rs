//! Alternating minimization: per-item penalized GLM fits, then per-subject
//! latent updates, repeated until the parameter blocks stop moving.

pub mod cv;
pub mod item;
pub mod latent;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GlvmError, Result};
use crate::init::{self, InitConfig, InitMethod};
use crate::model::{joint_objective, DataSet, ParamSet};
use crate::solver::StepRule;

pub use cv::{cross_validate, CvRow};
pub use item::{fit_baseline, fit_item, item_objective, ItemEstimate, ItemFit, ItemProblem};
pub use latent::{update_latent, LatentFit};

/// Penalty level: a fixed value or selection by cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LambdaRepr", into = "LambdaRepr")]
pub enum Lambda {
    Value(f64),
    Cv,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LambdaRepr {
    Num(f64),
    Str(String),
}

impl TryFrom<LambdaRepr> for Lambda {
    type Error = String;
    fn try_from(r: LambdaRepr) -> std::result::Result<Self, String> {
        match r {
            LambdaRepr::Num(v) => Ok(Lambda::Value(v)),
            LambdaRepr::Str(s) => s.parse(),
        }
    }
}

impl From<Lambda> for LambdaRepr {
    fn from(l: Lambda) -> Self {
        match l {
            Lambda::Value(v) => LambdaRepr::Num(v),
            Lambda::Cv => LambdaRepr::Str("cv".into()),
        }
    }
}

impl std::str::FromStr for Lambda {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("cv") {
            return Ok(Lambda::Cv);
        }
        t.parse::<f64>()
            .map(Lambda::Value)
            .map_err(|_| format!("lambda must be a number or \"cv\", got {s:?}"))
    }
}

impl Default for Lambda {
    fn default() -> Self {
        Lambda::Cv
    }
}

pub fn default_lambda_grid() -> Vec<f64> {
    // geometric, 0.005 .. 0.5
    (0..10).map(|i| 0.5 * (0.01f64).powf(i as f64 / 9.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda: Lambda,
    pub lambda_grid: Vec<f64>,
    /// Inner steps for item updates; `None` means `ceil(10 log n)`.
    pub m1: Option<usize>,
    /// Inner steps for subject updates; `None` means `ceil(10 (log n + log q))`.
    pub m2: Option<usize>,
    pub max_outer: usize,
    pub tol_outer: f64,
    pub box_d: f64,
    pub step_rule: StepRule,
    pub cv_folds: usize,
    pub seed: u64,
    pub init: InitMethod,
    pub anchors: Vec<usize>,
    pub init_cfg: InitConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: Lambda::Cv,
            lambda_grid: default_lambda_grid(),
            m1: None,
            m2: None,
            max_outer: 50,
            tol_outer: 1e-4,
            box_d: 10.0,
            step_rule: StepRule::Lipschitz,
            cv_folds: 5,
            seed: 0,
            init: InitMethod::SpectralRefine,
            anchors: Vec::new(),
            init_cfg: InitConfig::default(),
        }
    }
}

pub fn default_m1(n: usize) -> usize {
    (10.0 * (n.max(2) as f64).ln()).ceil() as usize
}

pub fn default_m2(n: usize, q: usize) -> usize {
    (10.0 * ((n.max(2) as f64).ln() + (q.max(2) as f64).ln())).ceil() as usize
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GlvmError::InvalidConfig(m));
        if !(self.tol_outer > 0.0) {
            return bad(format!("tol_outer must be positive, got {}", self.tol_outer));
        }
        if !(self.box_d > 0.0) {
            return bad(format!("box_d must be positive, got {}", self.box_d));
        }
        if self.max_outer == 0 {
            return bad("max_outer must be positive".into());
        }
        if self.m1 == Some(0) || self.m2 == Some(0) {
            return bad("inner step counts must be positive".into());
        }
        match self.lambda {
            Lambda::Value(v) if !(v >= 0.0) || !v.is_finite() => return bad(format!("lambda must be a finite nonnegative number, got {v}")),
            Lambda::Cv => {
                if self.lambda_grid.is_empty() {
                    return bad("lambda_grid must be nonempty when lambda = cv".into());
                }
                if self.cv_folds < 2 {
                    return bad(format!("cv_folds must be at least 2, got {}", self.cv_folds));
                }
            }
            _ => {}
        }
        if self.lambda_grid.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("lambda_grid entries must be finite and nonnegative".into());
        }
        self.init_cfg.validate()
    }

    /// Inner step counts for data of size n x q, warning when below the defaults.
    pub fn inner_steps(&self, n: usize, q: usize) -> (usize, usize) {
        let (d1, d2) = (default_m1(n), default_m2(n, q));
        let m1 = self.m1.unwrap_or(d1);
        let m2 = self.m2.unwrap_or(d2);
        if m1 < d1 {
            log::warn!("M1 = {m1} is below the default ceil(10 log n) = {d1}");
        }
        if m2 < d2 {
            log::warn!("M2 = {m2} is below the default ceil(10 (log n + log q)) = {d2}");
        }
        (m1, m2)
    }

    fn init_config(&self) -> InitConfig {
        InitConfig {
            box_d: self.box_d,
            ..self.init_cfg.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Joint objective at penalty `lambda / q`; under a full mask this is the
    /// average of the per-item objectives, so block descent makes it monotone.
    pub joint_objective: f64,
    pub max_block_change: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ParamSet,
    pub outer_iters: usize,
    pub trace: Vec<TraceRecord>,
    pub lambda_used: f64,
    /// Observed predictors outside the natural domain after the last item pass.
    pub clamp_count: usize,
    pub converged: bool,
}

fn frob_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Runs the alternating algorithm from `init` at penalty `lambda`.
pub fn alternate(data: &DataSet, cfg: &FitConfig, lambda: f64, init: &ParamSet) -> Result<FitResult> {
    cfg.validate()?;
    init.check_dims(data)?;
    if !init.is_finite() {
        return Err(GlvmError::Numerical("initial parameters are not finite".into()));
    }
    let (n, q, p, k) = (data.n(), data.q(), data.p(), init.k());
    let (m1, m2) = cfg.inner_steps(n, q);

    let mut params = init.clone();
    // first item pass starts from zeros apart from the intercepts
    let mut warm: Vec<ItemEstimate> = (0..q)
        .map(|j| ItemEstimate {
            beta0: init.beta0[j],
            ..ItemEstimate::zeros(p, k)
        })
        .collect();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut clamp_count = 0;
    let mut iters = 0;

    for t in 1..=cfg.max_outer {
        iters = t;
        let prev = params.clone();

        let fits: Vec<ItemFit> = (0..q)
            .into_par_iter()
            .map(|j| {
                let prob = ItemProblem::from_data(data, j, params.u.view()).with_gamma_bound(cfg.box_d);
                fit_item(&prob, lambda, m1, cfg.step_rule, Some(&warm[j]))
            })
            .collect::<Result<_>>()?;
        clamp_count = fits.iter().map(|f| f.clamps).sum();
        for (j, f) in fits.into_iter().enumerate() {
            params.beta0[j] = f.estimate.beta0;
            params.b.row_mut(j).assign(&f.estimate.beta);
            params.gamma.row_mut(j).assign(&f.estimate.gamma);
            warm[j] = f.estimate;
        }

        if k > 0 {
            let offsets = params.covariate_offsets(data.x());
            let rows: Vec<ndarray::Array1<f64>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut loss = latent::LatentLoss::new(
                        data.y().row(i),
                        data.mask().row(i),
                        offsets.row(i),
                        params.gamma.view(),
                        data.families(),
                    );
                    latent::solve_latent(&mut loss, i, params.u.row(i), m2, cfg.box_d).map(|f| f.u)
                })
                .collect::<Result<_>>()?;
            for (i, r) in rows.into_iter().enumerate() {
                params.u.row_mut(i).assign(&r);
            }
        }

        let change = [
            frob_diff(&params.b, &prev.b),
            frob_diff(&params.gamma, &prev.gamma),
            frob_diff(&params.u, &prev.u),
            params.beta0.iter().zip(prev.beta0.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        let obj = joint_objective(data, &params, lambda / q as f64)?;
        if !obj.is_finite() {
            return Err(GlvmError::Numerical(format!("non-finite objective at outer iteration {t}")));
        }
        trace.push(TraceRecord {
            joint_objective: obj,
            max_block_change: change,
        });
        log::debug!("outer {t}: objective {obj:.8}, change {change:.3e}");
        if change < cfg.tol_outer {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        params,
        outer_iters: iters,
        trace,
        lambda_used: lambda,
        clamp_count,
        converged,
    })
}

/// Initial estimate according to `cfg.init`.
pub fn initialize(data: &DataSet, k: usize, cfg: &FitConfig) -> Result<ParamSet> {
    let icfg = cfg.init_config();
    if k == 0 {
        let mut p0 = ParamSet::zeros(data.n(), data.q(), data.p(), 0);
        p0.beta0 = init::intercepts(data, icfg.eps_clip)?;
        return Ok(p0);
    }
    match cfg.init {
        InitMethod::Spectral => init::spectral_init(data, k, &icfg),
        InitMethod::SpectralRefine => {
            let p0 = init::spectral_init(data, k, &icfg)?;
            init::refine_covfree(data, &p0, &icfg)
        }
        InitMethod::Anchor => init::anchor_init(data, &cfg.anchors, k, &icfg),
    }
}

/// Initialization, penalty selection and the alternating algorithm.
pub fn fit(data: &DataSet, k: usize, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let lambda = match cfg.lambda {
        Lambda::Value(v) => v,
        Lambda::Cv => cross_validate(data, k, cfg)?.0,
    };
    let start = initialize(data, k, cfg)?;
    alternate(data, cfg, lambda, &start)
}

/// Mean prediction `mean(family_j, W_ij)` for all cells.
pub fn predict_mean(data: &DataSet, params: &ParamSet) -> Result<Array2<f64>> {
    let pred = crate::model::linear_predictor(data, params)?;
    let mut mu = pred.w;
    for (j, mut col) in mu.axis_iter_mut(Axis(1)).enumerate() {
        let f = data.family(j);
        col.mapv_inplace(|w| f.mean(w));
    }
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::Family;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn signal_data(n: usize, q: usize, p: usize, seed: u64) -> DataSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let u = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let g = Array1::from_shape_fn(q, |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array2::from_shape_fn((n, q), |(i, j)| {
            let w = 0.5 + g[j] * u[i] + if j < 3 { x[[i, 0]] } else { 0.0 };
            let pr = 1.0 / (1.0 + (-w).exp());
            if rng.random::<f64>() < pr { 1.0 } else { 0.0 }
        });
        DataSet::complete(y, x, Family::bernoulli()).unwrap()
    }

    #[test]
    fn lambda_parses_number_or_cv() {
        assert_eq!("cv".parse::<Lambda>().unwrap(), Lambda::Cv);
        assert_eq!("0.25".parse::<Lambda>().unwrap(), Lambda::Value(0.25));
        assert!("abc".parse::<Lambda>().is_err());
        let c: FitConfig = toml::from_str("lambda = 0.1\nmax_outer = 3").unwrap();
        assert_eq!(c.lambda, Lambda::Value(0.1));
        assert_eq!(c.max_outer, 3);
        let c: FitConfig = toml::from_str("lambda = \"cv\"").unwrap();
        assert_eq!(c.lambda, Lambda::Cv);
    }

    #[test]
    fn default_inner_steps() {
        let c = FitConfig::default();
        assert_eq!(c.inner_steps(200, 60), (53, 94));
    }

    #[test]
    fn pure_intercept_converges_quickly_with_zero_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, q, p) = (300, 20, 4);
        let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array2::from_shape_fn((n, q), |_| if rng.random::<f64>() < 0.6 { 1.0 } else { 0.0 });
        let data = DataSet::complete(y, x, Family::bernoulli()).unwrap();
        let cfg = FitConfig {
            lambda: Lambda::Value(5.0),
            ..FitConfig::default()
        };
        // zero latent start: the loading gradient vanishes, so only the
        // intercepts move
        let mut start = initialize(&data, 1, &cfg).unwrap();
        start.gamma.fill(0.0);
        start.u.fill(0.0);
        let res = alternate(&data, &cfg, 5.0, &start).unwrap();
        assert!(res.converged && res.outer_iters <= 3, "iters {}", res.outer_iters);
        assert!(res.params.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trace_is_monotone_under_full_mask() {
        let data = signal_data(120, 15, 3, 4);
        let cfg = FitConfig {
            lambda: Lambda::Value(0.05),
            max_outer: 15,
            ..FitConfig::default()
        };
        let start = initialize(&data, 1, &cfg).unwrap();
        let res = alternate(&data, &cfg, 0.05, &start).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1].joint_objective <= w[0].joint_objective + 1e-8, "{:?}", w);
        }
        assert!(res.params.u.iter().all(|v| v.abs() <= cfg.box_d));
    }

    #[test]
    fn item_permutation_permutes_item_parameters() {
        let data = signal_data(80, 8, 2, 9);
        let cfg = FitConfig {
            lambda: Lambda::Value(0.05),
            max_outer: 5,
            ..FitConfig::default()
        };
        let start = initialize(&data, 1, &cfg).unwrap();
        let res = alternate(&data, &cfg, 0.05, &start).unwrap();

        let perm: Vec<usize> = (0..8).rev().collect();
        let y2 = data.y().select(Axis(1), &perm);
        let data2 = DataSet::complete(y2, data.x().clone(), Family::bernoulli()).unwrap();
        let mut start2 = start.clone();
        start2.beta0 = start.beta0.select(Axis(0), &perm);
        start2.b = start.b.select(Axis(0), &perm);
        start2.gamma = start.gamma.select(Axis(0), &perm);
        let res2 = alternate(&data2, &cfg, 0.05, &start2).unwrap();

        // item order changes summation order in the subject updates, and the
        // accept test inside the solver can amplify those roundoff differences
        let tol = 1e-6;
        for (a, &pj) in perm.iter().enumerate() {
            assert!((res2.params.beta0[a] - res.params.beta0[pj]).abs() < tol);
            for c in 0..2 {
                assert!((res2.params.b[[a, c]] - res.params.b[[pj, c]]).abs() < tol);
            }
            assert!((res2.params.gamma[[a, 0]] - res.params.gamma[[pj, 0]]).abs() < tol);
        }
        for (u1, u2) in res.params.u.iter().zip(res2.params.u.iter()) {
            assert!((u1 - u2).abs() < tol);
        }
    }

    #[test]
    fn subject_permutation_permutes_latent_rows() {
        let data = signal_data(60, 8, 2, 10);
        let cfg = FitConfig {
            lambda: Lambda::Value(0.05),
            max_outer: 4,
            ..FitConfig::default()
        };
        let start = initialize(&data, 1, &cfg).unwrap();
        let res = alternate(&data, &cfg, 0.05, &start).unwrap();
        let perm: Vec<usize> = (0..60).map(|i| (i * 7) % 60).collect();
        let data2 = DataSet::complete(data.y().select(Axis(0), &perm), data.x().select(Axis(0), &perm), Family::bernoulli()).unwrap();
        let mut start2 = start.clone();
        start2.u = start.u.select(Axis(0), &perm);
        let res2 = alternate(&data2, &cfg, 0.05, &start2).unwrap();
        // summation order inside the item solver changes with row order
        let tol = 1e-6;
        for (a, &pi) in perm.iter().enumerate() {
            assert!((res2.params.u[[a, 0]] - res.params.u[[pi, 0]]).abs() < tol);
        }
        for (x1, x2) in res.params.b.iter().zip(res2.params.b.iter()) {
            assert!((x1 - x2).abs() < tol);
        }
    }
}
