//! Monotone accelerated proximal gradient (MFISTA) shared by every inner
//! solver: the per-item L1 problems, the per-subject latent problems and the
//! decorrelation lasso.
//!
//! Each step takes a prox-gradient step from the extrapolated point and keeps
//! whichever of the new point and the previous iterate has the lower
//! objective, so the returned objective sequence never increases.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{GlvmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// Fixed step `1/L` from the curvature bound and a spectral estimate.
    #[default]
    Lipschitz,
    /// Start at `1/L` and halve until the quadratic upper model holds.
    Backtracking,
}

/// Smooth part of a composite objective.
pub(crate) trait Smooth {
    fn value(&mut self, x: &[f64]) -> f64;
    /// Writes the gradient at `x` into `grad` and returns the value.
    fn value_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Non-smooth part with a cheap proximal map.
pub(crate) trait Penalty {
    fn value(&self, x: &[f64]) -> f64;
    fn prox(&self, x: &mut [f64], step: f64);
}

/// L1 penalty `weight * sum |x_i|` over the coordinate range `range`.
pub(crate) struct L1Block {
    pub range: std::ops::Range<usize>,
    pub weight: f64,
}

impl Penalty for L1Block {
    fn value(&self, x: &[f64]) -> f64 {
        self.weight * x[self.range.clone()].iter().map(|v| v.abs()).sum::<f64>()
    }
    fn prox(&self, x: &mut [f64], step: f64) {
        let t = step * self.weight;
        for v in &mut x[self.range.clone()] {
            *v = soft_threshold(*v, t);
        }
    }
}

/// Indicator of the box `[-bound, bound]^d`.
pub(crate) struct BoxConstraint {
    pub bound: f64,
}

impl Penalty for BoxConstraint {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }
    fn prox(&self, x: &mut [f64], _step: f64) {
        for v in x.iter_mut() {
            *v = v.clamp(-self.bound, self.bound);
        }
    }
}

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// `out = Z^T r`, accumulated row by row so a row-major `Z` is read
/// contiguously.
pub fn at_mul(z: ArrayView2<f64>, r: ArrayView1<f64>, out: &mut ndarray::ArrayViewMut1<f64>) {
    out.fill(0.0);
    for (row, &ri) in z.rows().into_iter().zip(r.iter()) {
        if ri != 0.0 {
            out.scaled_add(ri, &row);
        }
    }
}

/// Largest eigenvalue of `Z^T Z` by power iteration from the all-ones vector.
pub fn sigma_max_sq(z: ArrayView2<f64>, iters: usize) -> f64 {
    let d = z.ncols();
    if d == 0 || z.nrows() == 0 {
        return 0.0;
    }
    if d <= iters {
        // narrow: same iteration on the d x d Gram matrix is cheaper
        return sym_max_eig(z.t().dot(&z).view(), iters);
    }
    let mut v = ndarray::Array1::from_elem(d, 1.0 / (d as f64).sqrt());
    let mut w = ndarray::Array1::zeros(d);
    let mut lam = 0.0;
    for _ in 0..iters {
        let zv = z.dot(&v);
        at_mul(z, zv.view(), &mut w.view_mut());
        lam = w.dot(&w).sqrt();
        if lam == 0.0 {
            return 0.0;
        }
        v = &w / lam;
    }
    lam
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
pub fn sym_max_eig(h: ArrayView2<f64>, iters: usize) -> f64 {
    let d = h.ncols();
    if d == 0 {
        return 0.0;
    }
    let mut v = ndarray::Array1::from_elem(d, 1.0 / (d as f64).sqrt());
    let mut lam = 0.0;
    for _ in 0..iters {
        let w = h.dot(&v);
        lam = w.dot(&w).sqrt();
        if lam == 0.0 {
            return 0.0;
        }
        v = w / lam;
    }
    lam
}

/// Result of one inner solve.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SolveInfo {
    pub objective: f64,
    pub initial_objective: f64,
}

/// Runs at most `iters` MFISTA steps from `x`, overwriting it with the best
/// iterate. `what` names the problem in error messages.
pub(crate) fn mfista<S: Smooth, P: Penalty>(
    smooth: &mut S,
    penalty: &P,
    x: &mut [f64],
    step: f64,
    iters: usize,
    rule: StepRule,
    what: &dyn Fn() -> String,
) -> Result<SolveInfo> {
    let d = x.len();
    let f0 = smooth.value(x) + penalty.value(x);
    if !f0.is_finite() {
        return Err(GlvmError::Numerical(format!("{}: non-finite objective at start", what())));
    }
    if d == 0 || iters == 0 || !(step > 0.0) || !step.is_finite() {
        return Ok(SolveInfo {
            objective: f0,
            initial_objective: f0,
        });
    }
    let mut best = f0;
    let mut x_prev = x.to_vec();
    let mut y = x.to_vec();
    let mut z = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut t = 1.0f64;
    let mut eta = step;

    for it in 0..iters {
        let fy = smooth.value_grad(&y, &mut g);
        if !fy.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(GlvmError::Numerical(format!("{}: non-finite gradient at inner step {it}", what())));
        }
        let mut fz;
        loop {
            for k in 0..d {
                z[k] = y[k] - eta * g[k];
            }
            penalty.prox(&mut z, eta);
            fz = smooth.value(&z);
            if rule == StepRule::Lipschitz {
                break;
            }
            let mut lin = 0.0;
            let mut sq = 0.0;
            for k in 0..d {
                let dk = z[k] - y[k];
                lin += g[k] * dk;
                sq += dk * dk;
            }
            if fz <= fy + lin + sq / (2.0 * eta) + 1e-12 * fy.abs().max(1.0) || eta < 1e-20 {
                break;
            }
            eta *= 0.5;
        }
        let obj_z = fz + penalty.value(&z);
        if !obj_z.is_finite() {
            return Err(GlvmError::Numerical(format!("{}: non-finite objective at inner step {it}", what())));
        }
        let moved = y
            .iter()
            .zip(z.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = y.iter().fold(1.0f64, |m, a| m.max(a.abs()));

        x_prev.copy_from_slice(x);
        let accepted = obj_z <= best;
        if accepted {
            x.copy_from_slice(&z);
            best = obj_z;
        }
        if accepted && moved <= 1e-13 * scale {
            break;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let a = t / t_next;
        let b = (t - 1.0) / t_next;
        for k in 0..d {
            y[k] = x[k] + a * (z[k] - x[k]) + b * (x[k] - x_prev[k]);
        }
        t = t_next;
    }
    debug_assert!(best <= f0 + 1e-10 * f0.abs().max(1.0));
    Ok(SolveInfo {
        objective: best,
        initial_objective: f0,
    })
}
