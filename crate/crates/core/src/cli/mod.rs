//! Command-line front end: configuration merging, the four subcommands and
//! the artifacts each one writes.

pub mod ingest;
pub mod persist;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::altfit::{self, cross_validate, CvRow, FitConfig, FitResult, Lambda};
use crate::debias::{screen, Correction, DebiasConfig, DebiasTarget, ScreenResult};
use crate::error::{GlvmError, Result};
use crate::families::{Family, FamilyKind};
use crate::simlab::{run_grid, Method, RunOptions, SimConfig};

pub use ingest::{ingest, Cleaning, IdMaps, Ingested};
pub use persist::{load_params, save_params, ParamHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    #[default]
    Fit,
    Cv,
    Test,
    Simulate,
}

impl Command {
    pub fn key(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Cv => "cv",
            Command::Test => "test",
            Command::Simulate => "simulate",
        }
    }
}

/// Which (item, covariate) pairs to test, by name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TargetSpec {
    #[default]
    All,
    Items(Vec<String>),
    Covariates(Vec<String>),
    Pairs(Vec<(String, String)>),
}

impl FromStr for TargetSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s == "all" {
            return Ok(TargetSpec::All);
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("target spec must be all, items:A,B, covariates:X,Y or pairs:A/X,B/Y; got {s:?}"))?;
        let list: Vec<String> = rest.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect();
        if list.is_empty() {
            return Err(format!("empty target list in {s:?}"));
        }
        match kind {
            "items" => Ok(TargetSpec::Items(list)),
            "covariates" => Ok(TargetSpec::Covariates(list)),
            "pairs" => list
                .iter()
                .map(|p| {
                    p.split_once('/')
                        .map(|(a, b)| (a.to_string(), b.to_string()))
                        .ok_or_else(|| format!("pair {p:?} must look like ITEM/COVARIATE"))
                })
                .collect::<std::result::Result<_, _>>()
                .map(TargetSpec::Pairs),
            _ => Err(format!("unknown target kind {kind:?}")),
        }
    }
}

impl std::fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetSpec::All => write!(f, "all"),
            TargetSpec::Items(v) => write!(f, "items:{}", v.join(",")),
            TargetSpec::Covariates(v) => write!(f, "covariates:{}", v.join(",")),
            TargetSpec::Pairs(v) => {
                let parts: Vec<String> = v.iter().map(|(a, b)| format!("{a}/{b}")).collect();
                write!(f, "pairs:{}", parts.join(","))
            }
        }
    }
}

impl Serialize for TargetSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TargetSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl TargetSpec {
    /// Resolves names against the ingested identifiers, in item-major order.
    pub fn resolve(&self, maps: &IdMaps) -> Result<Vec<DebiasTarget>> {
        let find = |names: &[String], what: &str, key: &str| {
            names
                .iter()
                .position(|x| x == key)
                .ok_or_else(|| GlvmError::InvalidConfig(format!("unknown {what} {key:?} in --targets (dropped by cleaning or absent)")))
        };
        let (q, p) = (maps.item_ids.len(), maps.covariate_names.len());
        let mut out = Vec::new();
        match self {
            TargetSpec::All => {
                for j in 0..q {
                    out.extend((0..p).map(|l| DebiasTarget { item: j, covariate: l }));
                }
            }
            TargetSpec::Items(items) => {
                for it in items {
                    let j = find(&maps.item_ids, "item", it)?;
                    out.extend((0..p).map(|l| DebiasTarget { item: j, covariate: l }));
                }
            }
            TargetSpec::Covariates(covs) => {
                let ls: Vec<usize> = covs.iter().map(|c| find(&maps.covariate_names, "covariate", c)).collect::<Result<_>>()?;
                for j in 0..q {
                    out.extend(ls.iter().map(|&l| DebiasTarget { item: j, covariate: l }));
                }
            }
            TargetSpec::Pairs(pairs) => {
                for (it, c) in pairs {
                    out.push(DebiasTarget {
                        item: find(&maps.item_ids, "item", it)?,
                        covariate: find(&maps.covariate_names, "covariate", c)?,
                    });
                }
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

/// Options of the `simulate` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub cells: Vec<SimConfig>,
    pub methods: Vec<Method>,
    pub resume: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            cells: vec![SimConfig::default()],
            methods: vec![Method::Proposed, Method::Baseline],
            resume: false,
        }
    }
}

/// Fully merged run configuration; also the schema of the `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub responses: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub out: PathBuf,
    pub family: FamilyKind,
    /// Gaussian noise variance; ignored by the other families.
    pub dispersion: f64,
    pub k: usize,
    /// Overrides `fit.seed`, `debias.seed` and every simulation cell seed when set.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub correction: Correction,
    pub targets: TargetSpec,
    /// Directory of a previous `fit` to reuse in `test`.
    pub params: Option<PathBuf>,
    pub cleaning: Cleaning,
    pub fit: FitConfig,
    pub debias: DebiasConfig,
    pub simulate: SimulateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::Fit,
            responses: None,
            covariates: None,
            out: PathBuf::from("glvm_out"),
            family: FamilyKind::BernoulliLogit,
            dispersion: 1.0,
            k: 1,
            seed: None,
            threads: None,
            correction: Correction::Bonferroni,
            targets: TargetSpec::All,
            params: None,
            cleaning: Cleaning::default(),
            fit: FitConfig::default(),
            debias: DebiasConfig::default(),
            simulate: SimulateSection::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GlvmError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| GlvmError::InvalidConfig(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| GlvmError::InvalidConfig(format!("{}: {e}", path.display())))
        }
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.fit.seed = s;
            self.debias.seed = s;
            for c in &mut self.simulate.cells {
                c.seed = s;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GlvmError::InvalidConfig(m));
        if self.command != Command::Simulate {
            if self.k == 0 {
                return bad("K must be at least 1".into());
            }
            for (flag, path) in [("--responses", &self.responses), ("--covariates", &self.covariates)] {
                match path {
                    None => return bad(format!("{flag} is required for `{}`", self.command.key())),
                    Some(p) if !p.is_file() => return bad(format!("{flag} file {} does not exist", p.display())),
                    _ => {}
                }
            }
            self.fit.validate()?;
        }
        if self.command == Command::Test {
            self.debias.validate()?;
        }
        if let Some(p) = &self.params {
            if !p.join("params.bin").is_file() {
                return bad(format!("--params directory {} has no params.bin", p.display()));
            }
        }
        if !(self.dispersion > 0.0 && self.dispersion.is_finite()) {
            return bad(format!("dispersion must be positive, got {}", self.dispersion));
        }
        if self.threads == Some(0) {
            return bad("--threads must be positive".into());
        }
        if self.command == Command::Simulate {
            if self.simulate.cells.is_empty() || self.simulate.methods.is_empty() {
                return bad("simulate needs at least one cell and one method".into());
            }
            for c in &self.simulate.cells {
                c.validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "glvm", version, about = "Fit generalized latent variable models with covariates and test covariate effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Fit the model and write parameters and the objective trace.
    Fit(Flags),
    /// Cross-validate the penalty level.
    Cv(Flags),
    /// Debiased tests and confidence intervals for covariate effects.
    Test(Flags),
    /// Monte Carlo replications of the simulation design.
    Simulate(Flags),
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    #[arg(long)]
    pub responses: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// bernoulli, gaussian or poisson.
    #[arg(long)]
    pub family: Option<FamilyKind>,
    /// Number of latent factors.
    #[arg(short = 'K', long = "latent-dim")]
    pub k: Option<usize>,
    /// A number or "cv".
    #[arg(long)]
    pub lambda: Option<Lambda>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// none or bonferroni.
    #[arg(long)]
    pub correction: Option<Correction>,
    /// all, items:A,B, covariates:X,Y or pairs:A/X,B/Y.
    #[arg(long)]
    pub targets: Option<TargetSpec>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML (or .json) file with any RunConfig field.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reuse the fit stored in this directory (test only).
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Replications per simulation cell (simulate only).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Continue from existing checkpoints (simulate only).
    #[arg(long)]
    pub resume: bool,
}

impl Cli {
    /// Merges defaults, the config file and the flags, in increasing priority.
    pub fn into_config(self) -> Result<RunConfig> {
        let (command, f) = match self.command {
            CliCommand::Fit(f) => (Command::Fit, f),
            CliCommand::Cv(f) => (Command::Cv, f),
            CliCommand::Test(f) => (Command::Test, f),
            CliCommand::Simulate(f) => (Command::Simulate, f),
        };
        let mut cfg = match &f.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.command = command;
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        if f.responses.is_some() {
            cfg.responses = f.responses;
        }
        if f.covariates.is_some() {
            cfg.covariates = f.covariates;
        }
        if f.params.is_some() {
            cfg.params = f.params;
        }
        if f.seed.is_some() {
            cfg.seed = f.seed;
        }
        if f.threads.is_some() {
            cfg.threads = f.threads;
        }
        set!(f.family => cfg.family);
        set!(f.k => cfg.k);
        set!(f.lambda => cfg.fit.lambda);
        set!(f.alpha => cfg.debias.alpha);
        set!(f.correction => cfg.correction);
        set!(f.targets => cfg.targets);
        set!(f.out => cfg.out);
        if let Some(r) = f.reps {
            for c in &mut cfg.simulate.cells {
                c.reps = r;
            }
        }
        if let Some(a) = f.alpha {
            for c in &mut cfg.simulate.cells {
                c.debias.alpha = a;
            }
        }
        cfg.simulate.resume |= f.resume;
        cfg.apply_seed();
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
    /// True when the run stopped early; listed artifacts may be incomplete.
    pub partial: bool,
    pub artifacts: Vec<String>,
    pub seed: Option<u64>,
    pub versions: Versions,
    pub started_unix: u64,
    pub wall_time_secs: f64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub glvm: String,
    pub os: String,
    pub arch: String,
}

impl Versions {
    fn current() -> Self {
        Versions {
            glvm: env!("CARGO_PKG_VERSION").into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

/// Output directory that remembers what has been written to it.
struct Out {
    dir: PathBuf,
    written: Vec<String>,
}

impl Out {
    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let p = self.path(name);
        fs::write(p, serde_json::to_string_pretty(v)?)?;
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(p)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Executes the configured command and always writes `manifest.json`,
/// including when the command fails.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    fs::create_dir_all(&cfg.out)?;
    let mut out = Out {
        dir: cfg.out.clone(),
        written: Vec::new(),
    };
    let res = cfg.validate().and_then(|_| match cfg.command {
        Command::Fit => run_fit(cfg, &mut out),
        Command::Cv => run_cv(cfg, &mut out),
        Command::Test => run_test(cfg, &mut out),
        Command::Simulate => run_simulate(cfg, &mut out),
    });
    let manifest = Manifest {
        command: cfg.command.key().into(),
        status: if res.is_ok() { "ok" } else { "error" }.into(),
        exit_code: res.as_ref().err().map_or(0, |e| e.exit_code()),
        error: res.as_ref().err().map(|e| e.to_string()),
        partial: res.is_err(),
        artifacts: out.written.clone(),
        seed: cfg.seed,
        versions: Versions::current(),
        started_unix,
        wall_time_secs: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    fs::write(cfg.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    res
}

fn load(cfg: &RunConfig) -> Result<Ingested> {
    let family = match cfg.family {
        FamilyKind::GaussianIdentity => Family::gaussian(cfg.dispersion),
        k => Family::new(k),
    };
    let ing = ingest(
        cfg.responses.as_deref().expect("validated"),
        cfg.covariates.as_deref().expect("validated"),
        family,
        cfg.cleaning,
    )?;
    log::info!(
        "ingested {} subjects, {} items, {} covariates ({} items and {} subjects dropped)",
        ing.data.n(),
        ing.data.q(),
        ing.data.p(),
        ing.dropped_items.len(),
        ing.dropped_subjects.len()
    );
    Ok(ing)
}

#[derive(Serialize)]
struct TraceRow {
    iter: usize,
    joint_objective: f64,
    max_block_change: f64,
}

#[derive(Serialize, Deserialize)]
struct FitSummary {
    lambda: f64,
    outer_iters: usize,
    converged: bool,
    clamp_count: usize,
}

fn write_cv(out: &mut Out, chosen: f64, table: &[CvRow]) -> Result<()> {
    out.csv("cv.csv", table.iter())?;
    out.json("chosen_lambda.json", &serde_json::json!({ "lambda": chosen }))
}

fn do_fit(cfg: &RunConfig, ing: &Ingested, out: &mut Out) -> Result<FitResult> {
    let mut fc = cfg.fit.clone();
    if fc.lambda == Lambda::Cv {
        let (chosen, table) = cross_validate(&ing.data, cfg.k, &fc)?;
        write_cv(out, chosen, &table)?;
        fc.lambda = Lambda::Value(chosen);
    }
    let res = altfit::fit(&ing.data, cfg.k, &fc)?;
    let dir = out.path("params");
    let header = ParamHeader::new(&res.params, cfg.family, res.lambda_used, fc.seed);
    save_params(&dir, &res.params, &header)?;
    out.json("params/maps.json", &ing.maps())?;
    out.csv(
        "trace.csv",
        res.trace.iter().enumerate().map(|(i, t)| TraceRow {
            iter: i + 1,
            joint_objective: t.joint_objective,
            max_block_change: t.max_block_change,
        }),
    )?;
    out.json(
        "fit.json",
        &FitSummary {
            lambda: res.lambda_used,
            outer_iters: res.outer_iters,
            converged: res.converged,
            clamp_count: res.clamp_count,
        },
    )?;
    if !res.converged {
        log::warn!("alternating algorithm stopped at max_outer = {} without meeting tol_outer", fc.max_outer);
    }
    Ok(res)
}

fn run_fit(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let ing = load(cfg)?;
    do_fit(cfg, &ing, out).map(|_| ())
}

fn run_cv(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let ing = load(cfg)?;
    let mut fc = cfg.fit.clone();
    fc.lambda = Lambda::Cv;
    fc.validate()?;
    let (chosen, table) = cross_validate(&ing.data, cfg.k, &fc)?;
    write_cv(out, chosen, &table)
}

#[derive(Serialize)]
struct ReportRow<'a> {
    item: &'a str,
    covariate: &'a str,
    item_index: usize,
    covariate_index: usize,
    beta_hat: Option<f64>,
    beta_tilde: Option<f64>,
    se: Option<f64>,
    z: Option<f64>,
    p_value: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    n_obs: Option<usize>,
    lambda_prime: Option<f64>,
    flagged: bool,
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct HeatRow<'a> {
    item: &'a str,
    covariate: &'a str,
    flagged: u8,
    z: Option<f64>,
    p_value: Option<f64>,
}

fn write_report(out: &mut Out, maps: &IdMaps, res: &ScreenResult) -> Result<()> {
    out.csv(
        "report.csv",
        res.entries.iter().map(|e| {
            let r = e.report.as_ref();
            ReportRow {
                item: &maps.item_ids[e.target.item],
                covariate: &maps.covariate_names[e.target.covariate],
                item_index: e.target.item,
                covariate_index: e.target.covariate,
                beta_hat: r.map(|r| r.beta_hat),
                beta_tilde: r.map(|r| r.beta_tilde),
                se: r.map(|r| r.se),
                z: r.map(|r| r.z),
                p_value: r.map(|r| r.p_value),
                ci_low: r.map(|r| r.ci_low),
                ci_high: r.map(|r| r.ci_high),
                n_obs: r.map(|r| r.n_obs),
                lambda_prime: r.map(|r| r.lambda_prime),
                flagged: e.flagged,
                error: e.error.as_deref(),
            }
        }),
    )?;
    #[derive(Serialize)]
    struct Count<'a> {
        covariate: &'a str,
        biased_items: usize,
    }
    out.csv(
        "biased_counts.csv",
        res.biased_counts.iter().enumerate().map(|(l, &c)| Count {
            covariate: &maps.covariate_names[l],
            biased_items: c,
        }),
    )?;
    out.csv(
        "heatmap_long.csv",
        res.entries.iter().map(|e| HeatRow {
            item: &maps.item_ids[e.target.item],
            covariate: &maps.covariate_names[e.target.covariate],
            flagged: e.flagged as u8,
            z: e.report.as_ref().map(|r| r.z),
            p_value: e.report.as_ref().map(|r| r.p_value),
        }),
    )?;
    out.json("screen.json", &serde_json::json!({ "threshold": res.threshold, "targets": res.entries.len() }))
}

fn run_test(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let ing = load(cfg)?;
    let params = match &cfg.params {
        Some(dir) => {
            let (params, header) = load_params(dir)?;
            let maps: IdMaps = serde_json::from_str(&fs::read_to_string(dir.join("maps.json"))?)?;
            if maps != ing.maps() {
                return Err(GlvmError::InvalidData(format!(
                    "{} was fitted on different subjects, items or covariates than the current input",
                    dir.display()
                )));
            }
            if header.family != cfg.family {
                return Err(GlvmError::InvalidConfig(format!("stored fit uses family {} but --family is {}", header.family, cfg.family)));
            }
            params.check_dims(&ing.data)?;
            params
        }
        None => do_fit(cfg, &ing, out)?.params,
    };
    let maps = ing.maps();
    let targets = cfg.targets.resolve(&maps)?;
    let res = screen(&ing.data, &params, &targets, &cfg.debias, cfg.correction)?;
    let failed = res.entries.iter().filter(|e| e.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} targets could not be debiased; see the error column", res.entries.len());
    }
    write_report(out, &maps, &res)
}

fn run_simulate(cfg: &RunConfig, out: &mut Out) -> Result<()> {
    let dir = out.path("sim");
    let opts = RunOptions {
        out_dir: Some(dir),
        resume: cfg.simulate.resume,
    };
    let grid = run_grid(&cfg.simulate.cells, &cfg.simulate.methods, &opts)?;
    out.written.extend(["sim/summary.csv", "sim/summary.json", "sim/summary_long.csv"].map(String::from));
    let failed: usize = grid.rows.iter().map(|r| r.failed_reps).sum();
    if failed > 0 {
        log::warn!("{failed} replications failed; see the checkpoint files");
    }
    Ok(())
}

/// Parses arguments, runs, and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match cli.into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Some(t) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("could not set the thread count: {e}");
        }
    }
    match run(&cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_spec_parses_and_prints() {
        for s in ["all", "items:a,b", "covariates:x", "pairs:a/x,b/y"] {
            let t: TargetSpec = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!("pairs:a".parse::<TargetSpec>().is_err());
        assert!("rows:a".parse::<TargetSpec>().is_err());
    }

    #[test]
    fn targets_resolve_by_name() {
        let maps = IdMaps {
            subject_ids: vec![],
            item_ids: vec!["i1".into(), "i2".into()],
            covariate_names: vec!["x".into(), "y".into(), "z".into()],
            centers: vec![0.0; 3],
            dropped_items: vec![],
            dropped_subjects: vec![],
        };
        assert_eq!(TargetSpec::All.resolve(&maps).unwrap().len(), 6);
        let c = "covariates:z".parse::<TargetSpec>().unwrap().resolve(&maps).unwrap();
        assert_eq!(c, vec![DebiasTarget { item: 0, covariate: 2 }, DebiasTarget { item: 1, covariate: 2 }]);
        let p = "pairs:i2/x,i1/y,i2/x".parse::<TargetSpec>().unwrap().resolve(&maps).unwrap();
        assert_eq!(p, vec![DebiasTarget { item: 0, covariate: 1 }, DebiasTarget { item: 1, covariate: 0 }]);
        let e = "items:i9".parse::<TargetSpec>().unwrap().resolve(&maps).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        fs::write(&file, "k = 4\nout = \"from_file\"\nseed = 3\n[fit]\nlambda = 0.2\nmax_outer = 7\n[debias]\nalpha = 0.1\n").unwrap();
        let cli = Cli::try_parse_from(["glvm", "fit", "--config", file.to_str().unwrap(), "-K", "2", "--lambda", "cv"]).unwrap();
        let cfg = cli.into_config().unwrap();
        assert_eq!(cfg.k, 2);
        assert_eq!(cfg.fit.lambda, Lambda::Cv);
        assert_eq!(cfg.fit.max_outer, 7);
        assert_eq!(cfg.out, PathBuf::from("from_file"));
        assert_eq!(cfg.debias.alpha, 0.1);
        assert_eq!((cfg.fit.seed, cfg.debias.seed), (3, 3));
        assert_eq!(cfg.cleaning, Cleaning::default());
        let back: RunConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_config_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        fs::write(&file, "kk = 4\n").unwrap();
        let e = Cli::try_parse_from(["glvm", "fit", "--config", file.to_str().unwrap()]).unwrap().into_config().unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn missing_inputs_fail_with_usage_code_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            out: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        let e = run(&cfg).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m.status, "error");
        assert!(m.partial);
    }
}
