//! Items of different types in one model: binary, count and continuous
//! responses share the same latent factor.

use glvm::altfit::{fit, FitConfig, Lambda};
use glvm::simlab::align;
use glvm::{DataSet, Family};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson, StandardNormal};

fn main() -> glvm::Result<()> {
    let (n, q, p) = (250, 24, 4);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let u = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
    let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
    let families: Vec<Family> = (0..q)
        .map(|j| match j % 3 {
            0 => Family::bernoulli(),
            1 => Family::poisson(),
            _ => Family::gaussian(1.0),
        })
        .collect();
    let loading: Vec<f64> = (0..q).map(|_| rng.random_range(0.4..0.9)).collect();
    let y = Array2::from_shape_fn((n, q), |(i, j)| {
        let w = 0.2 + loading[j] * u[[i, 0]] + if j < 6 { 0.4 * x[[i, 0]] } else { 0.0 };
        match j % 3 {
            0 => (rng.random::<f64>() < 1.0 / (1.0 + (-w).exp())) as u8 as f64,
            1 => Poisson::new(w.exp()).unwrap().sample(&mut rng),
            _ => w + rng.sample::<f64, _>(StandardNormal),
        }
    });
    let mask = Array2::from_elem((n, q), true);
    let data = DataSet::new(y, mask, x, families)?;

    let cfg = FitConfig {
        lambda: Lambda::Value(0.02),
        max_outer: 20,
        ..FitConfig::default()
    };
    let res = fit(&data, 1, &cfg)?;
    let (_, err) = align(&res.params.u, &u)?;
    println!("latent factor alignment error: {err:.3}");
    for j in 0..6 {
        println!("item {j} ({}) effect of x0: {:.3} (true 0.4)", data.family(j).kind, res.params.b[[j, 0]]);
    }
    Ok(())
}
