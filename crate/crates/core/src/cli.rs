//! The `coadopt` command line.
//!
//! Exit codes: 0 on success, 1 on a domain failure (validation, convergence
//! or a failed property), 2 on usage or I/O errors.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{self, Exec, InjectionEvent, StepMetrics};
use crate::equilibrium::{self, SolverOptions};
use crate::io::{
    self, AggregateWriter, ConfigMeta, EquilibriumReport, IoError, RunManifest, StateBlocks, TrajectoryWriter,
};
use crate::model::{self, ModelConfig, ParamRanges, SystemState, Tech, ValidatedConfig};
use crate::verify::{self, PropertyReport, SolverSettings, SuiteOptions};

/// Rows at or above this size are spread across threads unless
/// `--deterministic-sum` is given. Both paths give identical bits.
const PARALLEL_MIN_N: usize = 256;
/// Shifted initial opinions are clamped to `[X0_MIN, 1]`.
pub const X0_MIN: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "coadopt", version, about = "Coupled adoption-opinion dynamics of two competing technologies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a config against the model's standing assumptions.
    Validate(ValidateArgs),
    /// Simulate a trajectory and write per-node and aggregate CSVs.
    Simulate(SimulateArgs),
    /// Solve for the equilibria and corroborate uniqueness by multi-start.
    Equilibrium(EquilibriumArgs),
    /// Run the six property checks on one config or a batch of random instances.
    Verify(VerifyArgs),
    /// Solve the diffused equilibrium across a one-parameter grid.
    Sweep(SweepArgs),
    /// Write a seeded random config.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Row-sum and range tolerance.
    #[arg(long, default_value_t = model::FRESH_STATE_TOL)]
    pub tol: f64,
    /// Directory for the run manifest; nothing is written without it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `techK@T`: technology `K` enters at step `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EnterSpec {
    pub tech: Tech,
    pub time: usize,
}

impl FromStr for EnterSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected techK@T with K in {{1,2}}, got `{s}`");
        let (tech, time) = s.split_once('@').ok_or_else(bad)?;
        let k: u32 = tech.strip_prefix("tech").and_then(|k| k.parse().ok()).ok_or_else(bad)?;
        Ok(Self { tech: Tech::from_number(k).ok_or_else(bad)?, time: time.parse().map_err(|_| bad())? })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub horizon: usize,
    /// Adopter fraction given to each technology when it is seeded.
    #[arg(long, default_value_t = model::DEFAULT_SEED_FRACTION)]
    pub seed_fraction: f64,
    /// Delay a technology's market entry, e.g. `tech2@100`. Repeatable.
    /// Technologies without an entry are seeded at t = 0.
    #[arg(long = "enter", value_name = "techK@T")]
    pub enter: Vec<EnterSpec>,
    /// Start from this state CSV instead of the seeded early-stage state.
    #[arg(long)]
    pub initial_state: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Never spread matrix rows across threads.
    #[arg(long)]
    pub deterministic_sum: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EquilibriumArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = equilibrium::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = equilibrium::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Random starts on top of the two corners of the safeguard box.
    #[arg(long, default_value_t = 8)]
    pub starts: usize,
    /// Seed for the random starts; defaults to the config's `meta.seed`, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Inclusive seed range `a..b`, or a single seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeedRange {
    pub first: u64,
    pub last: u64,
}

impl SeedRange {
    pub fn iter(&self) -> RangeInclusive<u64> {
        self.first..=self.last
    }
}

impl FromStr for SeedRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<u64>().map_err(|_| format!("bad seed `{v}` in `{s}`"));
        let (first, last) = match s.split_once("..") {
            Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
            None => (parse(s)?, parse(s)?),
        };
        if first > last {
            return Err(format!("empty seed range `{s}`"));
        }
        Ok(Self { first, last })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    pub config: Option<PathBuf>,
    /// Node count of generated instances.
    #[arg(long, value_name = "N", requires = "seeds")]
    pub random: Option<usize>,
    /// Inclusive seed range for `--random`, e.g. `0..9`.
    #[arg(long)]
    pub seeds: Option<SeedRange>,
    /// Edge probability of generated networks.
    #[arg(long, default_value_t = 0.2)]
    pub density: f64,
    #[arg(long, default_value_t = 1000)]
    pub horizon: usize,
    #[arg(long, default_value_t = model::DEFAULT_SEED_FRACTION)]
    pub seed_fraction: f64,
    /// Perturbation size for the instability construction.
    #[arg(long, default_value_t = 0.01)]
    pub eps: f64,
    #[arg(long, default_value_t = equilibrium::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = equilibrium::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// `csv`: one line per property; `json`: one document for all instances.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Also report the distance between the simulated endpoint and the
    /// solved equilibrium (informational).
    #[arg(long)]
    pub cross_validate: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parameter varied by a sweep. Scales multiply every node's value; the
/// shift adds to every `x0` of both technologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    BetaScale,
    Beta1Scale,
    Beta2Scale,
    Delta1Scale,
    Delta2Scale,
    X0Shift,
}

impl SweepParam {
    /// The config with `factor` applied; validation is left to the caller.
    pub fn apply(self, cfg: &ModelConfig, factor: f64) -> ModelConfig {
        let mut out = cfg.clone();
        let scale = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x *= factor);
        match self {
            SweepParam::BetaScale => out.tech.iter_mut().for_each(|p| scale(&mut p.beta)),
            SweepParam::Beta1Scale => scale(&mut out.tech[0].beta),
            SweepParam::Beta2Scale => scale(&mut out.tech[1].beta),
            SweepParam::Delta1Scale => scale(&mut out.tech[0].delta),
            SweepParam::Delta2Scale => scale(&mut out.tech[1].delta),
            SweepParam::X0Shift => {
                for p in &mut out.tech {
                    p.x0.iter_mut().for_each(|x| *x = (*x + factor).clamp(X0_MIN, 1.0));
                }
            }
        }
        out
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated factors (scales) or offsets (shift).
    #[arg(long, value_delimiter = ',', num_args = 0.., allow_negative_numbers = true)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = equilibrium::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = equilibrium::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Output CSV; the manifest goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Default,
    /// Tech 1 adopts faster and disappoints more at every node.
    MarketingVsQuality,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub density: f64,
    #[arg(long, value_enum, default_value_t = Regime::Default)]
    pub regime: Regime,
    #[arg(long)]
    pub out: PathBuf,
}

/// A failed command: domain failures exit 1, usage and I/O failures exit 2.
#[derive(Debug)]
pub enum Failure {
    Domain(String),
    Usage(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Usage(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Domain(m) | Failure::Usage(m) => m,
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            // A config that parses but describes an inconsistent model is a
            // domain failure; everything else is a file problem.
            IoError::Model(_) | IoError::Graph { .. } => Failure::Domain(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn domain(e: impl std::fmt::Display) -> Failure {
    Failure::Domain(e.to_string())
}

fn usage_io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Usage(format!("{}: {e}", path.display()))
}

fn csv_io(path: &Path) -> impl FnOnce(csv::Error) -> Failure + '_ {
    move |e| Failure::Usage(format!("{}: {e}", path.display()))
}

/// Parses `args` and runs the command, printing errors to standard error.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let argv = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

pub fn run(command: Command, argv: Vec<String>) -> Result<(), Failure> {
    match command {
        Command::Validate(a) => cmd_validate(&a, argv),
        Command::Simulate(a) => cmd_simulate(&a, argv),
        Command::Equilibrium(a) => cmd_equilibrium(&a, argv),
        Command::Verify(a) => cmd_verify(&a, argv),
        Command::Sweep(a) => cmd_sweep(&a, argv),
        Command::Generate(a) => cmd_generate(&a, argv),
    }
}

fn manifest_for<A: Serialize>(name: &str, argv: Vec<String>, args: &A) -> RunManifest {
    let mut m = RunManifest::new(name, argv);
    m.parameters = serde_json::to_value(args).unwrap_or(serde_json::Value::Null);
    m
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(usage_io(dir))
}

/// Loads and validates a config, listing violations on failure.
fn load_validated(path: &Path, tol: f64) -> Result<(ValidatedConfig, io::LoadedConfig), Failure> {
    let loaded = io::load_config(path)?;
    match loaded.config.clone().validate(tol) {
        Ok(cfg) => Ok((cfg, loaded)),
        Err(report) => Err(Failure::Domain(format!("{} violates the model assumptions:\n{report}", path.display()))),
    }
}

fn cmd_validate(a: &ValidateArgs, argv: Vec<String>) -> Result<(), Failure> {
    let mut manifest = manifest_for("validate", argv, a);
    let loaded = io::load_config(&a.config)?;
    manifest.config_digest = Some(loaded.file_digest.clone());
    let report = model::validate_assumption1(&loaded.config, a.tol);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        manifest.finish(&dir.join("manifest.json"))?;
    }
    if report.pass() {
        println!("{}: pass", a.config.display());
        Ok(())
    } else {
        Err(Failure::Domain(format!("{} violates the model assumptions:\n{report}", a.config.display())))
    }
}

fn initial_state(a: &SimulateArgs, cfg: &ValidatedConfig) -> Result<SystemState, Failure> {
    if let Some(path) = &a.initial_state {
        let st = io::load_state(path)?;
        if st.n() != cfg.n() {
            return Err(Failure::Domain(format!("{} has {} nodes, config has {}", path.display(), st.n(), cfg.n())));
        }
        return Ok(st);
    }
    let seeded: Vec<Tech> = Tech::BOTH.into_iter().filter(|k| a.enter.iter().all(|e| e.tech != *k)).collect();
    model::early_stage_state(cfg, a.seed_fraction, &seeded).map_err(domain)
}

fn events(a: &SimulateArgs) -> Result<Vec<InjectionEvent>, Failure> {
    let mut ev = a
        .enter
        .iter()
        .map(|e| InjectionEvent::new(e.time, e.tech, a.seed_fraction))
        .collect::<Result<Vec<_>, _>>()
        .map_err(domain)?;
    ev.sort_by_key(|e| e.time);
    Ok(ev)
}

fn exec_mode(deterministic: bool, n: usize) -> Exec {
    if deterministic || n < PARALLEL_MIN_N {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

#[derive(Serialize)]
struct TrajectoryDoc<'a> {
    events: &'a [InjectionEvent],
    states: Vec<StateBlocks>,
}

fn cmd_simulate(a: &SimulateArgs, argv: Vec<String>) -> Result<(), Failure> {
    let mut manifest = manifest_for("simulate", argv, a);
    if a.initial_state.is_none() {
        manifest.chosen_defaults.push(format!("seed_fraction = {}", a.seed_fraction));
    }
    let (cfg, loaded) = load_validated(&a.config, model::FRESH_STATE_TOL)?;
    manifest.config_digest = Some(loaded.file_digest);
    let st0 = initial_state(a, &cfg)?;
    let events = events(a)?;
    let exec = exec_mode(a.deterministic_sum, cfg.n());
    create_dir(&a.out)?;

    let final_path = a.out.join("final_state.csv");
    let summary = match a.format {
        Format::Csv => {
            let traj_path = a.out.join("trajectory.csv");
            let agg_path = a.out.join("aggregate.csv");
            let open = |p: &Path| File::create(p).map(BufWriter::new).map_err(usage_io(p));
            let mut traj = TrajectoryWriter::new(open(&traj_path)?).map_err(csv_io(&traj_path))?;
            let mut agg = AggregateWriter::new(open(&agg_path)?).map_err(csv_io(&agg_path))?;
            let mut write_err = None;
            let summary = dynamics::simulate_streaming(&cfg, &st0, a.horizon, &events, exec, |t, st| {
                if write_err.is_none() {
                    write_err = traj.push(t, st).and_then(|_| agg.push(&StepMetrics::of(t, st))).err();
                }
            })
            .map_err(domain)?;
            if let Some(e) = write_err {
                return Err(Failure::Usage(format!("{}: {e}", a.out.display())));
            }
            traj.finish().map_err(csv_io(&traj_path))?;
            agg.finish().map_err(csv_io(&agg_path))?;
            manifest.outputs.extend([traj_path, agg_path]);
            summary
        }
        Format::Json => {
            let mut states = Vec::new();
            let mut metrics = Vec::new();
            let summary = dynamics::simulate_streaming(&cfg, &st0, a.horizon, &events, exec, |t, st| {
                states.push(StateBlocks::from(st));
                metrics.push(StepMetrics::of(t, st));
            })
            .map_err(domain)?;
            let traj_path = a.out.join("trajectory.json");
            let agg_path = a.out.join("aggregate.json");
            io::write_json(&traj_path, &TrajectoryDoc { events: &summary.events, states })?;
            io::write_json(&agg_path, &metrics)?;
            manifest.outputs.extend([traj_path, agg_path]);
            summary
        }
    };
    io::save_state(&final_path, &summary.final_state)?;
    manifest.outputs.push(final_path);
    manifest.finish(&a.out.join("manifest.json"))?;
    let m = StepMetrics::of(a.horizon, &summary.final_state);
    println!(
        "t={} mean_a1={:.6} mean_a2={:.6} mean_s={:.6} clamped={}",
        a.horizon, m.mean_a[0], m.mean_a[1], m.mean_s, summary.clamped
    );
    Ok(())
}

fn cmd_equilibrium(a: &EquilibriumArgs, argv: Vec<String>) -> Result<(), Failure> {
    let mut manifest = manifest_for("equilibrium", argv, a);
    let (cfg, loaded) = load_validated(&a.config, model::FRESH_STATE_TOL)?;
    manifest.config_digest = Some(loaded.file_digest);
    let seed = a.seed.or(loaded.meta.and_then(|m| m.seed)).unwrap_or(0);
    manifest.seeds.push(seed);
    create_dir(&a.out)?;

    let opts = SolverOptions { tol: a.tol, max_iter: a.max_iter };
    let free = equilibrium::adoption_free_equilibrium(&cfg, a.tol).map_err(domain)?;
    let eq = equilibrium::solve_from(&cfg, &vec![1.0; cfg.n()], opts).map_err(domain)?;
    let uniq = equilibrium::multi_start_with(&cfg, opts, a.starts, seed).map_err(domain)?;

    let paths = ["adoption_free.json", "equilibrium.json", "uniqueness.json"].map(|f| a.out.join(f));
    io::write_json(&paths[0], &EquilibriumReport::from(&free))?;
    io::write_json(&paths[1], &EquilibriumReport::from(&eq))?;
    io::write_json(&paths[2], &uniq)?;
    manifest.outputs.extend(paths);
    manifest.finish(&a.out.join("manifest.json"))?;

    if !eq.converged {
        return Err(Failure::Domain(format!(
            "fixed-point iteration did not converge: best residual {:e} after {} iterations",
            eq.residual, eq.iterations
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "converged in {} iterations: residual={:e} mean_a1={:.10} mean_a2={:.10} ratio_err={:e}",
        eq.iterations,
        eq.residual,
        mean(&eq.state.a[0]),
        mean(&eq.state.a[1]),
        eq.ratio_check_max_err
    );
    if !uniq.corroborated {
        return Err(Failure::Domain(format!(
            "uniqueness not corroborated: {} of {} starts failed, fixed points up to {:e} apart",
            uniq.non_converged.len(),
            uniq.runs,
            uniq.max_pairwise_distance
        )));
    }
    println!("uniqueness corroborated over {} starts (spread {:e})", uniq.runs, uniq.max_pairwise_distance);
    Ok(())
}

#[derive(Debug, Serialize)]
struct InstanceResult {
    instance: String,
    seed: Option<u64>,
    reports: Vec<PropertyReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_validation: Option<verify::CrossValidationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl InstanceResult {
    fn pass(&self) -> bool {
        self.error.is_none() && self.reports.iter().all(|r| r.pass)
    }
}

fn verify_instance(cfg: &ValidatedConfig, seed: Option<u64>, a: &VerifyArgs) -> InstanceResult {
    let opts = SuiteOptions {
        horizon: a.horizon,
        seed_fraction: a.seed_fraction,
        eps: a.eps,
        solver: SolverSettings { tol: a.tol, max_iter: a.max_iter },
        ..SuiteOptions::default()
    };
    let instance = cfg.digest()[..16].to_string();
    let mut out = InstanceResult { instance, seed, reports: Vec::new(), cross_validation: None, error: None };
    match verify::run_suite(cfg, &opts) {
        Ok(r) => out.reports = r,
        Err(e) => out.error = Some(e.to_string()),
    }
    if a.cross_validate && out.error.is_none() {
        match model::early_stage_state(cfg, a.seed_fraction, &Tech::BOTH) {
            Ok(st0) => match verify::cross_validate_from(cfg, &st0, a.horizon, a.tol) {
                Ok(cv) => out.cross_validation = Some(cv),
                Err(e) => out.error = Some(e.to_string()),
            },
            Err(e) => out.error = Some(e.to_string()),
        }
    }
    out
}

fn cmd_verify(a: &VerifyArgs, argv: Vec<String>) -> Result<(), Failure> {
    let mut manifest = manifest_for("verify", argv, a);
    let results: Vec<InstanceResult> = match (&a.config, a.random, &a.seeds) {
        (Some(path), _, _) => {
            let (cfg, loaded) = load_validated(path, model::FRESH_STATE_TOL)?;
            manifest.config_digest = Some(loaded.file_digest);
            vec![verify_instance(&cfg, None, a)]
        }
        (None, Some(n), Some(seeds)) => {
            manifest.seeds = seeds.iter().collect();
            manifest.chosen_defaults.push(format!("random instance density = {}", a.density));
            let ranges = ParamRanges::default();
            let configs = seeds
                .iter()
                .map(|s| model::random_instance(n, s, &ranges, a.density).map(|c| (s, c)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            configs.par_iter().map(|(s, cfg)| verify_instance(cfg, Some(*s), a)).collect()
        }
        _ => return Err(Failure::Usage("give --config, or --random N with --seeds a..b".into())),
    };
    manifest.chosen_defaults.push(format!("seed_fraction = {}", a.seed_fraction));

    let mut text = String::new();
    for r in &results {
        for rep in &r.reports {
            text.push_str(&rep.line(&r.instance));
            text.push('\n');
        }
        if let Some(cv) = &r.cross_validation {
            text.push_str(&format!(
                "# {} cross_validation max_distance={:e} horizon={}\n",
                r.instance, cv.max_distance, cv.horizon
            ));
        }
        if let Some(e) = &r.error {
            text.push_str(&format!("# {} error: {e}\n", r.instance));
        }
    }
    match a.format {
        Format::Csv => print!("{text}"),
        Format::Json => println!("{}", serde_json::to_string_pretty(&results).map_err(domain)?),
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let report = dir.join(if a.format == Format::Json { "verify.json" } else { "verify.txt" });
        match a.format {
            Format::Csv => fs::write(&report, &text).map_err(usage_io(&report))?,
            Format::Json => io::write_json(&report, &results)?,
        }
        manifest.outputs.push(report);
        manifest.finish(&dir.join("manifest.json"))?;
    }

    let failing: Vec<String> = results
        .iter()
        .flat_map(|r| {
            let errs = r.error.iter().map(move |e| format!("{} error: {e}", r.instance));
            let fails = r.reports.iter().filter(|p| !p.pass).map(move |p| {
                let note = if p.note.is_empty() { String::new() } else { format!(" ({})", p.note) };
                format!("{}{note}", p.line(&r.instance))
            });
            errs.chain(fails)
        })
        .collect();
    if results.iter().all(InstanceResult::pass) {
        Ok(())
    } else {
        Err(Failure::Domain(format!("{} failing checks:\n{}", failing.len(), failing.join("\n"))))
    }
}

/// One row of the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub factor: f64,
    pub status: &'static str,
    pub mean_a1: Option<f64>,
    pub mean_a2: Option<f64>,
    pub share_ratio: Option<f64>,
    pub residual: Option<f64>,
    pub iterations: Option<usize>,
    pub mean_x1: Option<f64>,
    pub mean_x2: Option<f64>,
    pub ratio_check_max_err: Option<f64>,
    pub note: String,
}

impl SweepRow {
    fn skipped(factor: f64, note: String) -> Self {
        Self {
            factor,
            status: "skipped",
            mean_a1: None,
            mean_a2: None,
            share_ratio: None,
            residual: None,
            iterations: None,
            mean_x1: None,
            mean_x2: None,
            ratio_check_max_err: None,
            note,
        }
    }
}

/// Solves the diffused equilibrium at one grid point.
pub fn sweep_point(base: &ModelConfig, param: SweepParam, factor: f64, opts: SolverOptions) -> SweepRow {
    let cfg = match param.apply(base, factor).validate(model::FRESH_STATE_TOL) {
        Ok(c) => c,
        Err(report) => return SweepRow::skipped(factor, report.to_string().replace('\n', "; ")),
    };
    let eq = match equilibrium::solve_from(&cfg, &vec![1.0; cfg.n()], opts) {
        Ok(eq) => eq,
        Err(e) => return SweepRow::skipped(factor, e.to_string()),
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a1, a2) = (mean(&eq.state.a[0]), mean(&eq.state.a[1]));
    SweepRow {
        factor,
        status: if eq.converged { "ok" } else { "not-converged" },
        mean_a1: Some(a1),
        mean_a2: Some(a2),
        share_ratio: Some(a2 / a1),
        residual: Some(eq.residual),
        iterations: Some(eq.iterations),
        mean_x1: Some(mean(&eq.state.x[0])),
        mean_x2: Some(mean(&eq.state.x[1])),
        ratio_check_max_err: Some(eq.ratio_check_max_err),
        note: String::new(),
    }
}

fn cmd_sweep(a: &SweepArgs, argv: Vec<String>) -> Result<(), Failure> {
    if a.grid.is_empty() {
        return Err(Failure::Usage("--grid is empty".into()));
    }
    let mut manifest = manifest_for("sweep", argv, a);
    // Grid points are checked individually; the base config only has to parse.
    let loaded = io::load_config(&a.config)?;
    manifest.config_digest = Some(loaded.file_digest.clone());
    let opts = SolverOptions { tol: a.tol, max_iter: a.max_iter };
    let rows: Vec<SweepRow> = a.grid.par_iter().map(|&f| sweep_point(&loaded.config, a.param, f, opts)).collect();

    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut w = csv::Writer::from_path(&a.out).map_err(csv_io(&a.out))?;
    for r in &rows {
        w.serialize(r).map_err(csv_io(&a.out))?;
    }
    w.flush().map_err(usage_io(&a.out))?;
    manifest.outputs.push(a.out.clone());
    manifest.finish(&a.out.with_extension("manifest.json"))?;

    for r in &rows {
        match (r.mean_a1, r.mean_a2) {
            (Some(a1), Some(a2)) => println!("{} {} mean_a1={a1:.10} mean_a2={a2:.10}", r.factor, r.status),
            _ => println!("{} {} {}", r.factor, r.status, r.note),
        }
    }
    let stuck: Vec<String> =
        rows.iter().filter(|r| r.status == "not-converged").map(|r| r.factor.to_string()).collect();
    if stuck.is_empty() {
        Ok(())
    } else {
        Err(Failure::Domain(format!("solver did not converge at factors {}", stuck.join(", "))))
    }
}

fn cmd_generate(a: &GenerateArgs, argv: Vec<String>) -> Result<(), Failure> {
    let mut manifest = manifest_for("generate", argv, a);
    manifest.seeds.push(a.seed);
    let ranges = match a.regime {
        Regime::Default => ParamRanges::default(),
        Regime::MarketingVsQuality => ParamRanges::marketing_vs_quality(),
    };
    let cfg = model::random_instance(a.n, a.seed, &ranges, a.density).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    io::save_config(&a.out, cfg.config(), Some(ConfigMeta { seed: Some(a.seed) }))?;
    let bytes = fs::read(&a.out).map_err(usage_io(&a.out))?;
    manifest.config_digest = Some(io::sha256_hex(&bytes));
    manifest.outputs.push(a.out.clone());
    manifest.finish(&a.out.with_extension("manifest.json"))?;
    Ok(())
}
