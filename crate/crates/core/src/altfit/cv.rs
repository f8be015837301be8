//! Cross-validated choice of the penalty level over held-out observed cells.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{alternate, initialize, predict_mean, FitConfig};
use crate::error::{GlvmError, Result};
use crate::model::DataSet;

const MAX_DRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lambda: f64,
    pub cv_error: f64,
}

/// Fold label per observed cell, redrawn until no fold empties a row or column.
pub fn assign_folds(mask: &Array2<bool>, folds: usize, seed: u64) -> Result<Array2<usize>> {
    let cells: Vec<(usize, usize)> = mask.indexed_iter().filter(|(_, &m)| m).map(|(ij, _)| ij).collect();
    let (n, q) = mask.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_DRAWS {
        let mut order = cells.clone();
        order.shuffle(&mut rng);
        let mut label = Array2::from_elem((n, q), usize::MAX);
        for (r, &(i, j)) in order.iter().enumerate() {
            label[[i, j]] = r % folds;
        }
        let ok = (0..folds).all(|f| {
            let rows_ok = (0..n).all(|i| (0..q).any(|j| mask[[i, j]] && label[[i, j]] != f));
            let cols_ok = (0..q).all(|j| (0..n).any(|i| mask[[i, j]] && label[[i, j]] != f));
            rows_ok && cols_ok
        });
        if ok {
            return Ok(label);
        }
    }
    Err(GlvmError::InvalidData(format!(
        "could not draw {folds} folds without emptying a row or column in {MAX_DRAWS} attempts"
    )))
}

/// Returns the selected penalty and the table of average held-out squared
/// errors. The grid is visited from the largest value down and the first
/// minimum wins, so ties go to the larger penalty.
pub fn cross_validate(data: &DataSet, k: usize, cfg: &FitConfig) -> Result<(f64, Vec<CvRow>)> {
    if cfg.lambda_grid.is_empty() {
        return Err(GlvmError::InvalidConfig("lambda_grid is empty".into()));
    }
    let mut grid = cfg.lambda_grid.clone();
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap());
    grid.dedup();
    if grid.len() == 1 {
        return Ok((grid[0], vec![CvRow { lambda: grid[0], cv_error: f64::NAN }]));
    }
    let folds = cfg.cv_folds;
    let label = assign_folds(data.mask(), folds, cfg.seed)?;
    let mut err = vec![0.0; grid.len()];
    for f in 0..folds {
        let train_mask = label.mapv(|l| l != usize::MAX && l != f);
        let train = data.with_mask(train_mask)?;
        let start = initialize(&train, k, cfg)?;
        let held: Vec<(usize, usize)> = label.indexed_iter().filter(|(_, &l)| l == f).map(|(ij, _)| ij).collect();
        for (g, &lam) in grid.iter().enumerate() {
            let res = alternate(&train, cfg, lam, &start)?;
            let mu = predict_mean(&train, &res.params)?;
            let sse: f64 = held.iter().map(|&(i, j)| (mu[[i, j]] - data.y()[[i, j]]).powi(2)).sum();
            err[g] += sse / held.len() as f64 / folds as f64;
        }
        log::info!("cv fold {} of {folds} done", f + 1);
    }
    let mut best = 0;
    for g in 1..grid.len() {
        if err[g] < err[best] {
            best = g;
        }
    }
    let table = grid.iter().zip(err.iter()).map(|(&lambda, &cv_error)| CvRow { lambda, cv_error }).collect();
    Ok((grid[best], table))
}
