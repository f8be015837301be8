//! Observations, parameters and the linear predictor
//! `w_ij = beta_j0 + gamma_j . U_i + beta_j . X_i`.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

use crate::error::{GlvmError, Result};
use crate::families::Family;

/// Response matrix with missingness mask, covariates and one family per item.
///
/// Unobserved cells hold `0.0` in `y`; the mask is authoritative.
#[derive(Debug, Clone)]
pub struct DataSet {
    y: Array2<f64>,
    mask: Array2<bool>,
    x: Array2<f64>,
    families: Vec<Family>,
    item_counts: Vec<usize>,
    subject_counts: Vec<usize>,
}

impl DataSet {
    pub fn new(y: Array2<f64>, mask: Array2<bool>, x: Array2<f64>, families: Vec<Family>) -> Result<Self> {
        let (n, q) = y.dim();
        if mask.dim() != (n, q) {
            let axis = if mask.nrows() != n { "subjects" } else { "items" };
            let (expected, found) = if mask.nrows() != n { (n, mask.nrows()) } else { (q, mask.ncols()) };
            return Err(GlvmError::Dimension { axis, expected, found });
        }
        if x.nrows() != n {
            return Err(GlvmError::Dimension {
                axis: "subjects",
                expected: n,
                found: x.nrows(),
            });
        }
        if families.len() != q {
            return Err(GlvmError::Dimension {
                axis: "items",
                expected: q,
                found: families.len(),
            });
        }
        let mut y = y;
        for ((i, j), m) in mask.indexed_iter() {
            if *m {
                families[j].validate_response(y[[i, j]]).map_err(|e| {
                    GlvmError::InvalidData(format!("response at subject {i}, item {j}: {e}"))
                })?;
            } else {
                y[[i, j]] = 0.0;
            }
        }
        if let Some(((i, k), v)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(GlvmError::InvalidData(format!(
                "non-finite covariate {v} at subject {i}, covariate {k}"
            )));
        }
        if n > 1 {
            for (k, col) in x.axis_iter(Axis(1)).enumerate() {
                let first = col[0];
                if col.iter().all(|&v| v == first) {
                    return Err(GlvmError::InvalidData(format!(
                        "covariate {k} is constant; the intercept is implicit"
                    )));
                }
            }
        }
        let item_counts: Vec<usize> = mask
            .axis_iter(Axis(1))
            .map(|c| c.iter().filter(|&&m| m).count())
            .collect();
        let subject_counts: Vec<usize> = mask
            .axis_iter(Axis(0))
            .map(|r| r.iter().filter(|&&m| m).count())
            .collect();
        if let Some(j) = item_counts.iter().position(|&c| c == 0) {
            return Err(GlvmError::InvalidData(format!("item {j} has no observed response")));
        }
        if let Some(i) = subject_counts.iter().position(|&c| c == 0) {
            return Err(GlvmError::InvalidData(format!("subject {i} has no observed response")));
        }
        Ok(DataSet {
            y,
            mask,
            x,
            families,
            item_counts,
            subject_counts,
        })
    }

    /// Fully observed data with a single family for every item.
    pub fn complete(y: Array2<f64>, x: Array2<f64>, family: Family) -> Result<Self> {
        let mask = Array2::from_elem(y.dim(), true);
        let q = y.ncols();
        DataSet::new(y, mask, x, vec![family; q])
    }

    /// Same responses and covariates under a different observation mask.
    pub fn with_mask(&self, mask: Array2<bool>) -> Result<Self> {
        let mut y = self.y.clone();
        Zip::from(&mut y).and(&self.mask).for_each(|v, &m| {
            if !m {
                *v = 0.0;
            }
        });
        let mut keep = mask.clone();
        Zip::from(&mut keep).and(&self.mask).for_each(|k, &m| *k = *k && m);
        DataSet::new(y, keep, self.x.clone(), self.families.clone())
    }

    /// Same responses and mask with a replacement covariate matrix.
    pub fn with_covariates(&self, x: Array2<f64>) -> Result<Self> {
        DataSet::new(self.y.clone(), self.mask.clone(), x, self.families.clone())
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }
    pub fn q(&self) -> usize {
        self.y.ncols()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn y(&self) -> &Array2<f64> {
        &self.y
    }
    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }
    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }
    pub fn families(&self) -> &[Family] {
        &self.families
    }
    pub fn family(&self, item: usize) -> &Family {
        &self.families[item]
    }
    /// Number of observed subjects for `item`.
    pub fn item_count(&self, item: usize) -> usize {
        self.item_counts[item]
    }
    /// Number of observed items for `subject`.
    pub fn subject_count(&self, subject: usize) -> usize {
        self.subject_counts[subject]
    }
    pub fn observed_count(&self) -> usize {
        self.item_counts.iter().sum()
    }
    pub fn is_complete(&self) -> bool {
        self.observed_count() == self.n() * self.q()
    }

    /// Indices of subjects that answered `item`.
    pub fn observed_subjects(&self, item: usize) -> Vec<usize> {
        self.mask
            .column(item)
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    /// Largest curvature bound over all item families.
    pub fn max_curvature_bound(&self) -> f64 {
        self.families.iter().map(|f| f.curvature_bound()).fold(0.0, f64::max)
    }
}

/// Full parameter collection `(beta0, B, Gamma, U)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    /// Item intercepts, length q.
    pub beta0: Array1<f64>,
    /// Covariate effects, q x p (rows are items).
    pub b: Array2<f64>,
    /// Loadings, q x K.
    pub gamma: Array2<f64>,
    /// Latent variables, n x K.
    pub u: Array2<f64>,
}

impl ParamSet {
    pub fn zeros(n: usize, q: usize, p: usize, k: usize) -> Self {
        ParamSet {
            beta0: Array1::zeros(q),
            b: Array2::zeros((q, p)),
            gamma: Array2::zeros((q, k)),
            u: Array2::zeros((n, k)),
        }
    }

    pub fn k(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.beta0.iter().chain(self.b.iter()).chain(self.gamma.iter()).chain(self.u.iter()).all(|v| v.is_finite())
    }

    /// Checks that the parameter shapes agree with `data`.
    pub fn check_dims(&self, data: &DataSet) -> Result<()> {
        let checks = [
            ("items", data.q(), self.beta0.len()),
            ("items", data.q(), self.b.nrows()),
            ("covariates", data.p(), self.b.ncols()),
            ("items", data.q(), self.gamma.nrows()),
            ("subjects", data.n(), self.u.nrows()),
            ("latent", self.gamma.ncols(), self.u.ncols()),
        ];
        for (axis, expected, found) in checks {
            if expected != found {
                return Err(GlvmError::Dimension { axis, expected, found });
            }
        }
        Ok(())
    }

    /// Offsets `beta_j0 + beta_j . X_i` (everything but the latent term), n x q.
    pub fn covariate_offsets(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut off = x.dot(&self.b.t());
        off += &self.beta0.view().insert_axis(Axis(0));
        off
    }
}

/// Linear predictor matrix, n x q.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub w: Array2<f64>,
}

pub fn linear_predictor(data: &DataSet, params: &ParamSet) -> Result<Predictor> {
    params.check_dims(data)?;
    let mut w = params.covariate_offsets(data.x());
    w += &params.u.dot(&params.gamma.t());
    Ok(Predictor { w })
}

/// Sum of observed log-likelihood terms for one item given its predictor column.
pub(crate) fn item_loglik(data: &DataSet, item: usize, w: ArrayView1<f64>) -> f64 {
    let f = data.family(item);
    let y = data.y().column(item);
    let m = data.mask().column(item);
    let mut s = 0.0;
    for i in 0..w.len() {
        if m[i] {
            s += f.loglik_unchecked(y[i], w[i]);
        }
    }
    s
}

/// `-(1/(nq)) * sum_observed l_ij(w_ij) + lambda * sum_j ||beta_j||_1`.
///
/// Diagnostic only; the alternating algorithm never minimizes this directly.
pub fn joint_objective(data: &DataSet, params: &ParamSet, lambda: f64) -> Result<f64> {
    let pred = linear_predictor(data, params)?;
    let nq = (data.n() * data.q()) as f64;
    let ll: f64 = (0..data.q()).map(|j| item_loglik(data, j, pred.w.column(j))).sum();
    let l1: f64 = params.b.iter().map(|v| v.abs()).sum();
    Ok(-ll / nq + lambda * l1)
}

/// Counts observed cells whose predictor lies outside the family's natural domain.
pub fn count_out_of_domain(data: &DataSet, pred: &Predictor) -> usize {
    let mut c = 0;
    for ((i, j), &m) in data.mask().indexed_iter() {
        if m && !data.family(j).in_domain(pred.w[[i, j]]) {
            c += 1;
        }
    }
    c
}
