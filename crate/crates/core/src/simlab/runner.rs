use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, generate, nan_null, ks_normal, LambdaRule, SimConfig, SimMetrics};
use crate::altfit::{alternate, cv::cross_validate, initialize, item::fit_baseline};
use crate::debias::{screen, Correction};
use crate::error::{GlvmError, Result};

/// Stream index of the pilot dataset used by [`LambdaRule::CvPilot`].
const PILOT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Latent-variable fit with the configured number of factors.
    Proposed,
    /// Penalized GLM per item without latent variables, same debiasing.
    Baseline,
}

impl Method {
    pub fn key(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for checkpoints and summaries; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Skip replications already present in the checkpoint files.
    pub resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub metrics: Option<SimMetrics>,
    pub error: Option<String>,
}

/// Monte Carlo means over replications, each followed by its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell: usize,
    pub method: Method,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    #[serde(with = "nan_null")]
    pub rho: f64,
    pub reps: usize,
    pub failed_reps: usize,
    #[serde(with = "nan_null")]
    pub lambda: f64,
    #[serde(with = "nan_null")]
    pub type1: f64,
    #[serde(with = "nan_null")]
    pub type1_se: f64,
    #[serde(with = "nan_null")]
    pub power: f64,
    #[serde(with = "nan_null")]
    pub power_se: f64,
    #[serde(with = "nan_null")]
    pub coverage: f64,
    #[serde(with = "nan_null")]
    pub coverage_se: f64,
    #[serde(with = "nan_null")]
    pub mse_b: f64,
    #[serde(with = "nan_null")]
    pub mse_b_se: f64,
    #[serde(with = "nan_null")]
    pub est_err: f64,
    #[serde(with = "nan_null")]
    pub est_err_se: f64,
    #[serde(with = "nan_null")]
    pub align_err_u: f64,
    #[serde(with = "nan_null")]
    pub align_err_gamma: f64,
    #[serde(with = "nan_null")]
    pub converged_frac: f64,
    #[serde(with = "nan_null")]
    pub focus_coverage: f64,
    #[serde(with = "nan_null")]
    pub focus_ks_stat: f64,
    #[serde(with = "nan_null")]
    pub focus_ks_p: f64,
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    pub rows: Vec<GridRow>,
    /// Per (cell, method), the replication records in replication order.
    pub records: Vec<Vec<RepRecord>>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    let m = v.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

fn summarize(cell: usize, method: Method, cfg: &SimConfig, lambda: f64, recs: &[RepRecord]) -> GridRow {
    let ok: Vec<&SimMetrics> = recs.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let col = |f: fn(&SimMetrics) -> f64| mean_se(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
    let (type1, type1_se) = col(|m| m.type1);
    let (power, power_se) = col(|m| m.power);
    let (coverage, coverage_se) = col(|m| m.coverage);
    let (mse_b, mse_b_se) = col(|m| m.mse_b);
    let (est_err, est_err_se) = col(|m| m.est_err);
    let focus: Vec<_> = ok.iter().filter_map(|m| m.focus).collect();
    let z: Vec<f64> = focus.iter().map(|f| (f.beta_tilde - f.truth) / f.se).collect();
    let (ks_stat, ks_p) = ks_normal(&z);
    GridRow {
        cell,
        method,
        n: cfg.n,
        p: cfg.p,
        q: cfg.q,
        k: cfg.k,
        rho: cfg.rho,
        reps: ok.len(),
        failed_reps: recs.len() - ok.len(),
        lambda,
        type1,
        type1_se,
        power,
        power_se,
        coverage,
        coverage_se,
        mse_b,
        mse_b_se,
        est_err,
        est_err_se,
        align_err_u: col(|m| m.align_err_u).0,
        align_err_gamma: col(|m| m.align_err_gamma).0,
        converged_frac: col(|m| m.converged as u8 as f64).0,
        focus_coverage: mean_se(&focus.iter().map(|f| f.covered as u8 as f64).collect::<Vec<_>>()).0,
        focus_ks_stat: ks_stat,
        focus_ks_p: ks_p,
    }
}

fn fit_k(cfg: &SimConfig, method: Method) -> usize {
    match method {
        Method::Proposed => cfg.k,
        Method::Baseline => 0,
    }
}

fn select_lambda(cfg: &SimConfig, method: Method, rep: Option<u64>) -> Result<f64> {
    let stream = match rep {
        Some(r) => r,
        None => PILOT_STREAM,
    };
    let (data, _) = generate(cfg, stream)?;
    let mut fc = cfg.fit.clone();
    fc.seed = cfg.seed.wrapping_add(stream);
    Ok(cross_validate(&data, fit_k(cfg, method), &fc)?.0)
}

/// One replication: draw, fit, screen every block entry at the unadjusted
/// level, evaluate. The baseline fit is a single penalized GLM per item.
pub fn run_rep(cfg: &SimConfig, method: Method, rep: usize, lambda: Option<f64>) -> Result<SimMetrics> {
    let (data, truth) = generate(cfg, rep as u64)?;
    let lambda = match lambda {
        Some(l) => l,
        None => select_lambda(cfg, method, Some(rep as u64))?,
    };
    let (params, outer_iters, converged) = match method {
        Method::Proposed => {
            let start = initialize(&data, cfg.k, &cfg.fit)?;
            let res = alternate(&data, &cfg.fit, lambda, &start)?;
            (res.params, res.outer_iters, res.converged)
        }
        Method::Baseline => {
            let (m1, _) = cfg.fit.inner_steps(data.n(), data.q());
            (fit_baseline(&data, lambda, m1, cfg.fit.step_rule)?, 1, true)
        }
    };
    let mut dcfg = cfg.debias.clone();
    dcfg.seed = cfg.debias.seed.wrapping_add(rep as u64);
    let sr = screen(&data, &params, &cfg.targets(), &dcfg, Correction::None)?;
    let mut m = evaluate(&sr, &params, &truth, cfg)?;
    m.outer_iters = outer_iters;
    m.converged = converged;
    m.lambda = lambda;
    Ok(m)
}

#[derive(Serialize)]
struct Header {
    method: Method,
    config: SimConfig,
    #[serde(with = "nan_null")]
    lambda: f64,
}

fn read_checkpoint(path: &Path, header: &Header) -> Result<BTreeMap<usize, RepRecord>> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => return Ok(done),
    };
    if first != serde_json::to_string(header)? {
        return Err(GlvmError::InvalidConfig(format!(
            "checkpoint {} was written for a different configuration",
            path.display()
        )));
    }
    for line in lines {
        let line = line?;
        // a torn final line from an interrupted run is dropped
        if let Ok(r) = serde_json::from_str::<RepRecord>(&line) {
            done.insert(r.rep, r);
        }
    }
    Ok(done)
}

fn lambda_for(cfg: &SimConfig, method: Method) -> Result<Option<f64>> {
    Ok(match cfg.lambda_rule {
        LambdaRule::Fixed(v) => Some(v),
        LambdaRule::CvPilot => Some(select_lambda(cfg, method, None)?),
        LambdaRule::Cv => None,
    })
}

/// Runs every (design, method) pair. Replications run in parallel and are
/// collected in replication order, so results do not depend on the thread
/// count. With an output directory each finished replication is appended to
/// `cell{c}_{method}.jsonl`; on resume those are reused.
pub fn run_grid(cells: &[SimConfig], methods: &[Method], opts: &RunOptions) -> Result<GridOutput> {
    if let Some(d) = &opts.out_dir {
        fs::create_dir_all(d)?;
    }
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (c, cfg) in cells.iter().enumerate() {
        cfg.validate()?;
        for &method in methods {
            let lambda = lambda_for(cfg, method)?;
            let header = Header {
                method,
                config: cfg.clone(),
                lambda: lambda.unwrap_or(f64::NAN),
            };
            let path = opts.out_dir.as_ref().map(|d| d.join(format!("cell{c}_{}.jsonl", method.key())));
            let mut done = BTreeMap::new();
            let sink = match &path {
                Some(p) => {
                    if opts.resume {
                        done = read_checkpoint(p, &header)?;
                    }
                    let fresh = !opts.resume || !p.exists() || fs::metadata(p)?.len() == 0;
                    let mut f = if fresh {
                        File::create(p)?
                    } else {
                        OpenOptions::new().append(true).open(p)?
                    };
                    if fresh {
                        writeln!(f, "{}", serde_json::to_string(&header)?)?;
                        done.clear();
                    }
                    Some(Mutex::new(f))
                }
                None => None,
            };
            let todo: Vec<usize> = (0..cfg.reps).filter(|r| !done.contains_key(r)).collect();
            log::info!("cell {c} {}: {} of {} replications to run", method.key(), todo.len(), cfg.reps);
            let new: Vec<RepRecord> = todo
                .par_iter()
                .map(|&rep| {
                    let rec = match run_rep(cfg, method, rep, lambda) {
                        Ok(m) => RepRecord { rep, metrics: Some(m), error: None },
                        Err(e) => RepRecord { rep, metrics: None, error: Some(e.to_string()) },
                    };
                    if let Some(s) = &sink {
                        let line = serde_json::to_string(&rec)?;
                        let mut f = s.lock().unwrap();
                        writeln!(f, "{line}")?;
                        f.flush()?;
                    }
                    Ok(rec)
                })
                .collect::<Result<_>>()?;
            for r in new {
                done.insert(r.rep, r);
            }
            let recs: Vec<RepRecord> = done.into_values().filter(|r| r.rep < cfg.reps).collect();
            let lam = lambda.unwrap_or_else(|| mean_se(&recs.iter().filter_map(|r| r.metrics.as_ref().map(|m| m.lambda)).collect::<Vec<_>>()).0);
            rows.push(summarize(c, method, cfg, lam, &recs));
            records.push(recs);
        }
    }
    if let Some(d) = &opts.out_dir {
        write_summary(d, &rows)?;
    }
    Ok(GridOutput { rows, records })
}

fn write_summary(dir: &Path, rows: &[GridRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(rows)?)?;
    // one row per (cell, method, metric), the layout plotting tools expect
    let mut w = csv::Writer::from_path(dir.join("summary_long.csv"))?;
    w.write_record(["cell", "method", "n", "p", "q", "rho", "metric", "value", "se"])?;
    for r in rows {
        let metrics = [
            ("type1", r.type1, r.type1_se),
            ("power", r.power, r.power_se),
            ("coverage", r.coverage, r.coverage_se),
            ("mse_b", r.mse_b, r.mse_b_se),
            ("est_err", r.est_err, r.est_err_se),
            ("align_err_u", r.align_err_u, f64::NAN),
            ("align_err_gamma", r.align_err_gamma, f64::NAN),
        ];
        for (name, v, se) in metrics {
            let fmt = |x: f64| if x.is_finite() { x.to_string() } else { String::new() };
            w.write_record([
                r.cell.to_string(),
                r.method.key().to_string(),
                r.n.to_string(),
                r.p.to_string(),
                r.q.to_string(),
                r.rho.to_string(),
                name.to_string(),
                fmt(v),
                fmt(se),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::altfit::FitConfig;

    fn tiny() -> SimConfig {
        SimConfig {
            n: 60,
            p: 4,
            q: 12,
            k: 1,
            j_signal: 2,
            s_signal: 2,
            reps: 3,
            seed: 9,
            lambda_rule: LambdaRule::Fixed(0.05),
            fit: FitConfig {
                max_outer: 4,
                ..FitConfig::default()
            },
            ..SimConfig::default()
        }
    }

    #[test]
    fn grid_is_deterministic_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            resume: false,
        };
        let cells = [tiny()];
        let methods = [Method::Proposed, Method::Baseline];
        let a = run_grid(&cells, &methods, &opts).unwrap();
        let b = run_grid(&cells, &methods, &RunOptions::default()).unwrap();
        let js = |o: &GridOutput| serde_json::to_string(&o.records).unwrap();
        assert_eq!(js(&a), js(&b));
        assert_eq!(a.rows.len(), 2);
        assert!(dir.path().join("summary.csv").exists());

        // drop the last replication of the proposed checkpoint and resume
        let p = dir.path().join("cell0_proposed.jsonl");
        let text = fs::read_to_string(&p).unwrap();
        let kept: Vec<&str> = text.lines().take(3).collect();
        fs::write(&p, kept.join("\n") + "\n").unwrap();
        let c = run_grid(&cells, &methods, &RunOptions { resume: true, ..opts.clone() }).unwrap();
        assert_eq!(js(&a), js(&c));
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 4);

        // a changed configuration refuses to resume
        let mut other = tiny();
        other.rho = 0.5;
        assert!(run_grid(&[other], &methods, &RunOptions { resume: true, ..opts }).is_err());
    }

    #[test]
    fn baseline_fits_without_latent_variables() {
        let m = run_rep(&tiny(), Method::Baseline, 0, Some(0.05)).unwrap();
        assert!(m.align_err_u.is_nan());
        assert!(m.type1.is_finite() && m.power.is_finite());
    }

    #[test]
    fn mean_se_basic() {
        let (m, s) = mean_se(&[1.0, 2.0, 3.0, f64::NAN]);
        assert_eq!(m, 2.0);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
