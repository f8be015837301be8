//! Reading response and covariate CSV files with missing cells, cleaning,
//! fitting, and saving the fit to disk and reading it back.

use std::fs;

use glvm::altfit::{fit, FitConfig, Lambda};
use glvm::cli::{ingest, load_params, save_params, Cleaning, ParamHeader};
use glvm::{Family, FamilyKind};
use rand::{Rng, SeedableRng};

fn main() -> glvm::Result<()> {
    let dir = std::env::temp_dir().join("glvm_ingest_example");
    fs::create_dir_all(&dir)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);

    // 80 students, 16 items; item q15 is almost never answered and one
    // student skips nearly everything
    let mut responses = String::from("student");
    for j in 0..16 {
        responses.push_str(&format!(",q{j}"));
    }
    responses.push('\n');
    let mut covariates = String::from("student,age,female\n");
    for i in 0..80 {
        let age: f64 = rng.random_range(14.0..17.0);
        let female = (i % 2) as f64;
        covariates.push_str(&format!("s{i},{age:.1},{female}\n"));
        responses.push_str(&format!("s{i}"));
        for j in 0..16 {
            let skip = (j == 15 && i > 0) || (i == 7 && j > 3) || rng.random::<f64>() < 0.05;
            let cell = if skip { "NA".to_string() } else { format!("{}", (rng.random::<f64>() < 0.6) as u8) };
            responses.push_str(&format!(",{cell}"));
        }
        responses.push('\n');
    }
    fs::write(dir.join("responses.csv"), responses)?;
    fs::write(dir.join("covariates.csv"), covariates)?;

    let ing = ingest(&dir.join("responses.csv"), &dir.join("covariates.csv"), Family::bernoulli(), Cleaning::default())?;
    println!("kept {} students and {} items", ing.data.n(), ing.data.q());
    println!("dropped items {:?}, dropped students {:?}", ing.dropped_items, ing.dropped_subjects);
    println!("covariate centers {:?}", ing.centers);

    let cfg = FitConfig {
        lambda: Lambda::Value(0.05),
        max_outer: 10,
        ..FitConfig::default()
    };
    let res = fit(&ing.data, 1, &cfg)?;
    let header = ParamHeader::new(&res.params, FamilyKind::BernoulliLogit, res.lambda_used, cfg.seed);
    save_params(&dir.join("fit"), &res.params, &header)?;
    let (back, h) = load_params(&dir.join("fit"))?;
    println!("saved and reloaded a {} x {} fit; identical: {}", h.n, h.q, back == res.params);
    Ok(())
}
