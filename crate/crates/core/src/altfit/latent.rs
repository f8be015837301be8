//! Per-subject latent update with item parameters held fixed.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{GlvmError, Result};
use crate::families::Family;
use crate::solver::{mfista, sigma_max_sq, BoxConstraint, Smooth, StepRule};

use super::item::POWER_STEPS;

/// Observed cells of one subject, with the covariate part of the predictor
/// already folded into `offsets`.
pub(crate) struct LatentLoss<'a> {
    pub y: Vec<f64>,
    pub offsets: Vec<f64>,
    pub gamma: Array2<f64>,
    pub families: Vec<&'a Family>,
}

impl<'a> LatentLoss<'a> {
    pub fn new(
        y_row: ArrayView1<f64>,
        mask_row: ArrayView1<bool>,
        offsets: ArrayView1<f64>,
        gamma: ArrayView2<f64>,
        families: &'a [Family],
    ) -> Self {
        let cols: Vec<usize> = (0..y_row.len()).filter(|&j| mask_row[j]).collect();
        LatentLoss {
            y: cols.iter().map(|&j| y_row[j]).collect(),
            offsets: cols.iter().map(|&j| offsets[j]).collect(),
            gamma: gamma.select(ndarray::Axis(0), &cols),
            families: cols.iter().map(|&j| &families[j]).collect(),
        }
    }

    fn lipschitz(&self) -> f64 {
        let b_u = self.families.iter().map(|f| f.curvature_bound()).fold(0.0, f64::max);
        b_u / self.y.len() as f64 * sigma_max_sq(self.gamma.view(), POWER_STEPS)
    }

    #[inline]
    fn predictor(&self, j: usize, u: &[f64]) -> f64 {
        let g = self.gamma.row(j);
        let mut w = self.offsets[j];
        for (a, b) in g.iter().zip(u.iter()) {
            w += a * b;
        }
        w
    }
}

impl Smooth for LatentLoss<'_> {
    fn value(&mut self, u: &[f64]) -> f64 {
        let m = self.y.len();
        let mut s = 0.0;
        for j in 0..m {
            s += self.families[j].loglik_unchecked(self.y[j], self.predictor(j, u));
        }
        -s / m as f64
    }

    fn value_grad(&mut self, u: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.y.len();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut s = 0.0;
        for j in 0..m {
            let w = self.predictor(j, u);
            let f = self.families[j];
            s += f.loglik_unchecked(self.y[j], w);
            let r = -f.dloglik_unchecked(self.y[j], w) / m as f64;
            for (g, a) in grad.iter_mut().zip(self.gamma.row(j).iter()) {
                *g += r * a;
            }
        }
        -s / m as f64
    }
}

#[derive(Debug, Clone)]
pub struct LatentFit {
    pub u: Array1<f64>,
    pub objective: f64,
    pub initial_objective: f64,
}

pub(crate) fn solve_latent(
    loss: &mut LatentLoss,
    index: usize,
    u_init: ArrayView1<f64>,
    m2: usize,
    box_d: f64,
) -> Result<LatentFit> {
    let pen = BoxConstraint { bound: box_d };
    let mut u: Vec<f64> = u_init.iter().map(|v| v.clamp(-box_d, box_d)).collect();
    let lip = loss.lipschitz();
    let step = if lip > 0.0 { 1.0 / lip } else { 0.0 };
    let info = mfista(loss, &pen, &mut u, step, m2, StepRule::Lipschitz, &|| format!("subject {index}"))?;
    Ok(LatentFit {
        u: Array1::from(u),
        objective: info.objective,
        initial_objective: info.initial_objective,
    })
}

/// Runs `m2` projected gradient steps on
/// `-(1/q_i) sum_j l(beta_j0 + gamma_j . u + beta_j . X_i)` over the box
/// `[-box_d, box_d]^K`, starting from `u_init` projected into the box.
#[allow(clippy::too_many_arguments)]
pub fn update_latent(
    index: usize,
    y_row: ArrayView1<f64>,
    mask_row: ArrayView1<bool>,
    x_row: ArrayView1<f64>,
    beta0: ArrayView1<f64>,
    b: ArrayView2<f64>,
    gamma: ArrayView2<f64>,
    families: &[Family],
    u_init: ArrayView1<f64>,
    m2: usize,
    box_d: f64,
) -> Result<LatentFit> {
    let q = y_row.len();
    if gamma.nrows() != q || b.nrows() != q || beta0.len() != q || families.len() != q {
        return Err(GlvmError::Dimension {
            axis: "items",
            expected: q,
            found: gamma.nrows(),
        });
    }
    if gamma.ncols() != u_init.len() {
        return Err(GlvmError::Dimension {
            axis: "latent",
            expected: gamma.ncols(),
            found: u_init.len(),
        });
    }
    if !mask_row.iter().any(|&m| m) {
        return Err(GlvmError::InvalidData(format!("subject {index} has no observed response")));
    }
    let offsets = &b.dot(&x_row) + &beta0;
    let mut loss = LatentLoss::new(y_row, mask_row, offsets.view(), gamma, families);
    solve_latent(&mut loss, index, u_init, m2, box_d)
}
