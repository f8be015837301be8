//! Per-item L1-penalized GLM update with the latent variables held fixed.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{GlvmError, Result};
use crate::families::Family;
use crate::model::{DataSet, ParamSet};
use crate::solver::{mfista, sigma_max_sq, L1Block, Penalty, Smooth, StepRule};

/// Power-iteration steps used for Lipschitz estimates.
pub(crate) const POWER_STEPS: usize = 30;

/// Inputs of one item problem. Rows with `mask == false` are ignored.
#[derive(Debug, Clone, Copy)]
pub struct ItemProblem<'a> {
    pub index: usize,
    pub y: ArrayView1<'a, f64>,
    pub mask: ArrayView1<'a, bool>,
    pub x: ArrayView2<'a, f64>,
    /// Latent surrogates, n x K (K may be zero).
    pub u: ArrayView2<'a, f64>,
    pub family: &'a Family,
    /// Loadings are kept in `[-gamma_bound, gamma_bound]^K`.
    pub gamma_bound: f64,
}

impl<'a> ItemProblem<'a> {
    pub fn from_data(data: &'a DataSet, item: usize, u: ArrayView2<'a, f64>) -> Self {
        ItemProblem {
            index: item,
            y: data.y().column(item),
            mask: data.mask().column(item),
            x: data.x().view(),
            u,
            family: data.family(item),
            gamma_bound: f64::INFINITY,
        }
    }

    pub fn with_gamma_bound(mut self, bound: f64) -> Self {
        self.gamma_bound = bound;
        self
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }
    fn k(&self) -> usize {
        self.u.ncols()
    }
}

/// Item parameters `(beta_j0, beta_j, gamma_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEstimate {
    pub beta0: f64,
    pub beta: Array1<f64>,
    pub gamma: Array1<f64>,
}

impl ItemEstimate {
    pub fn zeros(p: usize, k: usize) -> Self {
        ItemEstimate {
            beta0: 0.0,
            beta: Array1::zeros(p),
            gamma: Array1::zeros(k),
        }
    }

    pub fn from_params(params: &ParamSet, item: usize) -> Self {
        ItemEstimate {
            beta0: params.beta0[item],
            beta: params.b.row(item).to_owned(),
            gamma: params.gamma.row(item).to_owned(),
        }
    }

    fn pack(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.beta.len() + self.gamma.len());
        v.push(self.beta0);
        v.extend(self.beta.iter());
        v.extend(self.gamma.iter());
        v
    }

    fn unpack(theta: &[f64], p: usize) -> Self {
        ItemEstimate {
            beta0: theta[0],
            beta: Array1::from(theta[1..1 + p].to_vec()),
            gamma: Array1::from(theta[1 + p..].to_vec()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ItemFit {
    pub estimate: ItemEstimate,
    /// Penalized objective at the returned estimate.
    pub objective: f64,
    /// Penalized objective at the warm start.
    pub initial_objective: f64,
    /// Observed predictor values outside the family's natural domain.
    pub clamps: usize,
}

/// Design rows `(1, X_i, U_i)` for observed subjects.
pub(crate) fn item_design(prob: &ItemProblem) -> (Array2<f64>, Vec<f64>) {
    let (p, k) = (prob.p(), prob.k());
    let rows: Vec<usize> = (0..prob.y.len()).filter(|&i| prob.mask[i]).collect();
    let mut z = Array2::zeros((rows.len(), 1 + p + k));
    let mut y = Vec::with_capacity(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        z[[r, 0]] = 1.0;
        z.slice_mut(s![r, 1..1 + p]).assign(&prob.x.row(i));
        z.slice_mut(s![r, 1 + p..]).assign(&prob.u.row(i));
        y.push(prob.y[i]);
    }
    (z, y)
}

/// `-(1/n) sum_i l(y_i, z_i . theta)` over a fixed design, stored by column
/// so predictions skip zero coefficients.
pub(crate) struct GlmLoss<'a> {
    pub zt: Array2<f64>,
    pub y: &'a [f64],
    pub family: &'a Family,
    pub w: Array1<f64>,
    pub r: Array1<f64>,
}

impl<'a> GlmLoss<'a> {
    pub fn new(z: ArrayView2<'_, f64>, y: &'a [f64], family: &'a Family) -> Self {
        let n = z.nrows();
        GlmLoss {
            zt: z.t().as_standard_layout().into_owned(),
            y,
            family,
            w: Array1::zeros(n),
            r: Array1::zeros(n),
        }
    }

    fn predict(&mut self, theta: &[f64]) {
        self.w.fill(0.0);
        for (col, &t) in self.zt.rows().into_iter().zip(theta) {
            if t != 0.0 {
                self.w.scaled_add(t, &col);
            }
        }
    }
}

impl Smooth for GlmLoss<'_> {
    fn value(&mut self, theta: &[f64]) -> f64 {
        self.predict(theta);
        let n = self.y.len() as f64;
        let mut s = 0.0;
        for (yi, wi) in self.y.iter().zip(self.w.iter()) {
            s += self.family.loglik_unchecked(*yi, *wi);
        }
        -s / n
    }

    fn value_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.predict(theta);
        let n = self.y.len() as f64;
        let mut s = 0.0;
        for i in 0..self.y.len() {
            let (yi, wi) = (self.y[i], self.w[i]);
            s += self.family.loglik_unchecked(yi, wi);
            self.r[i] = -self.family.dloglik_unchecked(yi, wi) / n;
        }
        for (g, col) in grad.iter_mut().zip(self.zt.rows()) {
            *g = col.dot(&self.r);
        }
        -s / n
    }
}

/// L1 on the covariate block, box on the loadings that follow it.
struct ItemPenalty {
    l1: L1Block,
    bound: f64,
}

impl Penalty for ItemPenalty {
    fn value(&self, x: &[f64]) -> f64 {
        self.l1.value(x)
    }
    fn prox(&self, x: &mut [f64], step: f64) {
        self.l1.prox(x, step);
        if self.bound.is_finite() {
            for v in &mut x[self.l1.range.end..] {
                *v = v.clamp(-self.bound, self.bound);
            }
        }
    }
}

/// Runs `m1` proximal-gradient steps on
/// `-(1/n_j) sum_i l(beta0 + beta . X_i + gamma . U_i) + lambda ||beta||_1`,
/// thresholding only the covariate block and projecting the loadings into
/// their box.
pub fn fit_item(
    prob: &ItemProblem,
    lambda: f64,
    m1: usize,
    step_rule: StepRule,
    warm: Option<&ItemEstimate>,
) -> Result<ItemFit> {
    if !(lambda >= 0.0) {
        return Err(GlvmError::InvalidConfig(format!("lambda must be nonnegative, got {lambda}")));
    }
    if prob.u.iter().any(|v| !v.is_finite()) {
        return Err(GlvmError::Numerical(format!("item {}: non-finite latent surrogate", prob.index)));
    }
    let (p, k) = (prob.p(), prob.k());
    let (z, y) = item_design(prob);
    let n_obs = y.len() as f64;
    let lip = prob.family.curvature_bound() / n_obs * sigma_max_sq(z.view(), POWER_STEPS);
    let step = if lip > 0.0 { 1.0 / lip } else { 0.0 };

    let mut theta = match warm {
        Some(w) => {
            if w.beta.len() != p || w.gamma.len() != k {
                return Err(GlvmError::Dimension {
                    axis: "covariates",
                    expected: p,
                    found: w.beta.len(),
                });
            }
            w.pack()
        }
        None => ItemEstimate::zeros(p, k).pack(),
    };
    let mut loss = GlmLoss::new(z.view(), &y, prob.family);
    let pen = ItemPenalty {
        l1: L1Block {
            range: 1..1 + p,
            weight: lambda,
        },
        bound: prob.gamma_bound,
    };
    let index = prob.index;
    let info = mfista(&mut loss, &pen, &mut theta, step, m1, step_rule, &|| format!("item {index}"))?;

    loss.predict(&theta);
    let clamps = loss.w.iter().filter(|&&w| !prob.family.in_domain(w)).count();
    Ok(ItemFit {
        estimate: ItemEstimate::unpack(&theta, p),
        objective: info.objective,
        initial_objective: info.initial_objective,
        clamps,
    })
}

/// Penalized item objective at a given estimate.
pub fn item_objective(prob: &ItemProblem, est: &ItemEstimate, lambda: f64) -> f64 {
    let (z, y) = item_design(prob);
    let theta = est.pack();
    let mut loss = GlmLoss::new(z.view(), &y, prob.family);
    loss.value(&theta) + lambda * est.beta.iter().map(|v| v.abs()).sum::<f64>()
}

/// L1-penalized GLM per item ignoring latent variables: the same solver with
/// no latent columns. Returns a parameter set with `K = 0`.
pub fn fit_baseline(data: &DataSet, lambda: f64, m1: usize, step_rule: StepRule) -> Result<ParamSet> {
    use rayon::prelude::*;
    let (n, q, p) = (data.n(), data.q(), data.p());
    let empty = Array2::<f64>::zeros((n, 0));
    let fits: Vec<ItemFit> = (0..q)
        .into_par_iter()
        .map(|j| {
            let prob = ItemProblem::from_data(data, j, empty.view());
            fit_item(&prob, lambda, m1, step_rule, None)
        })
        .collect::<Result<_>>()?;
    let mut params = ParamSet::zeros(n, q, p, 0);
    for (j, f) in fits.into_iter().enumerate() {
        params.beta0[j] = f.estimate.beta0;
        params.b.row_mut(j).assign(&f.estimate.beta);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_logistic(n: usize, p: usize, k: usize, seed: u64) -> (Array1<f64>, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let u = Array2::from_shape_fn((n, k), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_fn(n, |i| {
            let w = 0.3 + x[[i, 0]] - 0.5 * x[[i, p - 1]] + u.row(i).sum() * 0.8;
            let pr = 1.0 / (1.0 + (-w).exp());
            if rng.random::<f64>() < pr { 1.0 } else { 0.0 }
        });
        (y, x, u)
    }

    #[test]
    fn huge_lambda_zeroes_covariates_but_not_loadings() {
        let (y, x, u) = random_logistic(200, 4, 1, 3);
        let mask = Array1::from_elem(200, true);
        let f = Family::bernoulli();
        let prob = ItemProblem {
            index: 0,
            y: y.view(),
            mask: mask.view(),
            x: x.view(),
            u: u.view(),
            family: &f,
            gamma_bound: f64::INFINITY,
        };
        let fit = fit_item(&prob, 1e3, 400, StepRule::Lipschitz, None).unwrap();
        assert!(fit.estimate.beta.iter().all(|&b| b == 0.0));
        assert!(fit.estimate.gamma[0].abs() > 0.1);
        assert!(fit.objective <= fit.initial_objective);
    }

    #[test]
    fn gaussian_orthonormal_design_recovers_least_squares() {
        // columns orthogonal to each other and to the intercept
        let x = array![
            [1.0, 1.0],
            [1.0, -1.0],
            [-1.0, 1.0],
            [-1.0, -1.0]
        ];
        let y = array![3.0, 1.0, -1.0, 0.5];
        let mask = Array1::from_elem(4, true);
        let u = Array2::zeros((4, 0));
        let f = Family::gaussian(1.0);
        let prob = ItemProblem {
            index: 0,
            y: y.view(),
            mask: mask.view(),
            x: x.view(),
            u: u.view(),
            family: &f,
            gamma_bound: f64::INFINITY,
        };
        let fit = fit_item(&prob, 0.0, 2000, StepRule::Lipschitz, None).unwrap();
        // OLS: intercept = mean(y), slope_k = x_k . y / 4
        assert!((fit.estimate.beta0 - 0.875).abs() < 1e-6);
        assert!((fit.estimate.beta[0] - 1.125).abs() < 1e-6);
        assert!((fit.estimate.beta[1] - 0.125).abs() < 1e-6);
    }

    #[test]
    fn masked_rows_are_ignored() {
        let (y, x, u) = random_logistic(60, 3, 1, 9);
        let mut mask = Array1::from_elem(60, true);
        for i in (0..60).step_by(3) {
            mask[i] = false;
        }
        let f = Family::bernoulli();
        let full = ItemProblem {
            index: 0,
            y: y.view(),
            mask: mask.view(),
            x: x.view(),
            u: u.view(),
            family: &f,
            gamma_bound: f64::INFINITY,
        };
        let keep: Vec<usize> = (0..60).filter(|i| i % 3 != 0).collect();
        let y2 = Array1::from_iter(keep.iter().map(|&i| y[i]));
        let x2 = x.select(ndarray::Axis(0), &keep);
        let u2 = u.select(ndarray::Axis(0), &keep);
        let m2 = Array1::from_elem(keep.len(), true);
        let sub = ItemProblem {
            index: 0,
            y: y2.view(),
            mask: m2.view(),
            x: x2.view(),
            u: u2.view(),
            family: &f,
            gamma_bound: f64::INFINITY,
        };
        let a = fit_item(&full, 0.05, 100, StepRule::Lipschitz, None).unwrap();
        let b = fit_item(&sub, 0.05, 100, StepRule::Lipschitz, None).unwrap();
        assert_eq!(a.estimate, b.estimate);
    }

    #[test]
    fn baseline_matches_item_fit_without_latent_columns() {
        let (y, x, _) = random_logistic(80, 3, 1, 5);
        let y2 = ndarray::stack![ndarray::Axis(1), y, y.mapv(|v| 1.0 - v)];
        let data = DataSet::complete(y2, x.clone(), Family::bernoulli()).unwrap();
        let base = fit_baseline(&data, 0.02, 200, StepRule::Lipschitz).unwrap();
        let empty = Array2::zeros((80, 0));
        for j in 0..2 {
            let prob = ItemProblem::from_data(&data, j, empty.view());
            let fit = fit_item(&prob, 0.02, 200, StepRule::Lipschitz, None).unwrap();
            assert_eq!(fit.estimate.beta0, base.beta0[j]);
            assert_eq!(fit.estimate.beta, base.b.row(j));
        }
        let huge = fit_baseline(&data, 1e4, 50, StepRule::Lipschitz).unwrap();
        assert!(huge.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backtracking_handles_poisson() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100;
        let x = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let y = Array1::from_shape_fn(n, |i| {
            let mu = (0.5 + 0.4 * x[[i, 0]]).exp();
            rand_distr::Distribution::sample(&rand_distr::Poisson::new(mu).unwrap(), &mut rng)
        });
        let mask = Array1::from_elem(n, true);
        let u = Array2::zeros((n, 0));
        let f = Family::poisson();
        let prob = ItemProblem {
            index: 0,
            y: y.view(),
            mask: mask.view(),
            x: x.view(),
            u: u.view(),
            family: &f,
            gamma_bound: f64::INFINITY,
        };
        let bt = fit_item(&prob, 0.0, 500, StepRule::Backtracking, None).unwrap();
        let lp = fit_item(&prob, 0.0, 500, StepRule::Lipschitz, None).unwrap();
        assert!(bt.objective <= lp.objective + 1e-12);
        assert!((bt.estimate.beta[0] - 0.4).abs() < 0.2);
    }
}
