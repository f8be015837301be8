//! Held-out-cell cross-validation over a penalty grid.

use glvm::altfit::{cross_validate, FitConfig};
use glvm::simlab::{generate, SimConfig};

fn main() -> glvm::Result<()> {
    let design = SimConfig {
        n: 150,
        q: 30,
        p: 20,
        k: 2,
        ..SimConfig::default()
    };
    let (data, _) = generate(&design, 2)?;
    let cfg = FitConfig {
        lambda_grid: vec![0.3, 0.1, 0.03, 0.01, 0.003],
        cv_folds: 5,
        max_outer: 5,
        seed: 7,
        ..FitConfig::default()
    };
    let (chosen, table) = cross_validate(&data, design.k, &cfg)?;
    println!("{:>8}  {:>10}", "lambda", "cv error");
    for row in &table {
        let mark = if row.lambda == chosen { "  <- chosen" } else { "" };
        println!("{:>8.4}  {:>10.6}{mark}", row.lambda, row.cv_error);
    }
    Ok(())
}
