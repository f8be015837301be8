//! Simulate a small binary-response data set, fit the latent variable model
//! with a cross-validated penalty, and compare the fit with the truth.

use glvm::altfit::{fit, FitConfig};
use glvm::simlab::{align, align_loadings, generate, SimConfig};

fn main() -> glvm::Result<()> {
    let design = SimConfig {
        n: 300,
        q: 100,
        p: 20,
        k: 2,
        ..SimConfig::default()
    };
    let (data, truth) = generate(&design, 0)?;

    let cfg = FitConfig {
        max_outer: 10,
        ..FitConfig::default()
    };
    let res = fit(&data, design.k, &cfg)?;

    println!("lambda (5-fold CV): {:.4}", res.lambda_used);
    println!("outer iterations:   {} (converged: {})", res.outer_iters, res.converged);
    for (t, r) in res.trace.iter().enumerate() {
        println!("  iter {:>2}  objective {:.6}  max change {:.2e}", t + 1, r.joint_objective, r.max_block_change);
    }

    let (g, err_u) = align(&res.params.u, &truth.u)?;
    let err_gamma = align_loadings(&res.params.gamma, &truth.gamma, &g)?;
    let nonzero = res.params.b.iter().filter(|v| **v != 0.0).count();
    println!("alignment error U: {err_u:.3}, Gamma: {err_gamma:.3}");
    println!("nonzero covariate effects: {nonzero} of {}", res.params.b.len());
    println!("beta_(1,1): fitted {:.3}, true {:.3}", res.params.b[[0, 0]], truth.b[[0, 0]]);
    Ok(())
}
