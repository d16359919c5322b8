//! Command-line front end: JSON configuration, subcommands and reports.
//!
//! Every report starts with the schema tag, the command, the seed and the
//! effective configuration with all defaults filled in; that block is itself
//! a valid configuration file and reproduces the run when fed back.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration or
//! runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::{run_ensemble, BatchTarget, Batching, ExplorationEpoch, RunConfig, RunResult, DEFAULT_BATCH_FRACTION};
use crate::env::{
    bernoulli_sd, BanditInstance, ExplorationFunction, ExplorationKind, GapSpec, RewardFamily, DEFAULT_SQRT_LOG_BETA,
};
use crate::error::{Error, Result};
use crate::fluid::{lambda_for_theta, solve_fluid, FluidSolution, GapRegime};
use crate::predict::{bias_prediction, clt_k_arm, clt_two_arm, regret_prediction, CltPrediction, LambdaSource};
use crate::stats::{
    compare_bias, compare_covariance, regret_stats, standardize, BiasTolerance, CovTolerance, Moments,
};
use crate::stylized::{stylized_ensemble, summarize, DeltaRule, StylizedConfig};

pub const SCHEMA: &str = "banditflow/v1";
pub const SEED_ENV: &str = "BANDITFLOW_SEED";
const DEFAULT_REPLICATIONS: u64 = 1000;
const DEFAULT_HORIZON: u64 = 100_000;

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default = "default_family")]
    pub family: RewardFamily,
    pub means: Vec<f64>,
    /// Required for Gaussian rewards; derived for Bernoulli.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_devs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_bound: Option<f64>,
}

fn default_family() -> RewardFamily {
    RewardFamily::Gaussian
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExplorationSpec {
    SqrtRhoLog {
        rho: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    LogPower {
        scale: f64,
        power: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Tabulated {
        points: Vec<(f64, f64)>,
        #[serde(default = "default_beta")]
        beta: f64,
    },
}

fn default_beta() -> f64 {
    DEFAULT_SQRT_LOG_BETA
}

impl Default for ExplorationSpec {
    fn default() -> Self {
        ExplorationSpec::SqrtRhoLog {
            rho: 2.0,
            beta: DEFAULT_SQRT_LOG_BETA,
        }
    }
}

impl ExplorationSpec {
    pub fn build(&self) -> ExplorationFunction {
        let (kind, beta) = match self.clone() {
            ExplorationSpec::SqrtRhoLog { rho, beta } => (ExplorationKind::SqrtRhoLog { rho }, beta),
            ExplorationSpec::LogPower { scale, power, beta } => (ExplorationKind::LogPower { scale, power }, beta),
            ExplorationSpec::Tabulated { points, beta } => (ExplorationKind::Tabulated { points }, beta),
        };
        ExplorationFunction { kind, beta }
    }
}

/// Where `lambda*` comes from in two-arm predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSpec {
    /// Finite-T fluid ratio `n_2/n_1`.
    #[default]
    Finite,
    /// Asymptotic value implied by the gap regime.
    Limit,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegretTolerance {
    pub mean_ratio: [f64; 2],
    pub sd_ratio: [f64; 2],
}

impl Default for RegretTolerance {
    fn default() -> Self {
        Self {
            mean_ratio: [0.85, 1.15],
            sd_ratio: [0.7, 1.3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default)]
    pub covariance: CovTolerance,
    #[serde(default)]
    pub bias: BiasTolerance,
    #[serde(default)]
    pub regret: RegretTolerance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Covariance,
    Bias,
    Regret,
}

/// A configuration file as written by the user; absent fields take defaults.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema: String,
    pub instance: Option<InstanceSpec>,
    pub exploration: Option<ExplorationSpec>,
    /// Two-arm gap schedule; sets `mu_1 = mu_2 + Delta_T` at each horizon.
    pub gap: Option<GapSpec>,
    /// Integer, scientific-notation string, or a list of either.
    pub horizon: Option<Value>,
    pub replications: Option<u64>,
    pub batching: Option<Batching>,
    pub seed: Option<u64>,
    pub parallel: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub lambda_source: Option<LambdaSpec>,
    pub exploration_epoch: Option<ExplorationEpoch>,
    pub delta_rule: Option<DeltaRule>,
    pub tolerance: Option<Tolerances>,
    pub checks: Option<Vec<Check>>,
    /// Prediction file compared against by `verify`.
    pub prediction: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ConfigFile = serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        if cfg.schema != SCHEMA {
            return Err(Error::Config(format!(
                "schema: expected \"{SCHEMA}\", found \"{}\"",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Fully resolved settings. Serializes to a valid [`ConfigFile`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub schema: String,
    pub instance: InstanceSpec,
    pub exploration: ExplorationSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<GapSpec>,
    pub horizon: Vec<u64>,
    pub replications: u64,
    pub batching: Batching,
    pub seed: u64,
    pub parallel: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub lambda_source: LambdaSpec,
    pub exploration_epoch: ExplorationEpoch,
    pub delta_rule: DeltaRule,
    pub tolerance: Tolerances,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PathBuf>,
}

/// Parses a horizon such as `100000`, `1e7`, `1e3,1e4,1e5` or the decade
/// ladder `1e3..1e7`.
pub fn parse_horizons(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi) = (parse_horizon(lo)?, parse_horizon(hi)?);
        if lo > hi {
            return Err(Error::Config(format!("empty horizon ladder {text}")));
        }
        let mut out = Vec::new();
        let mut t = lo;
        while t <= hi {
            out.push(t);
            match t.checked_mul(10) {
                Some(next) => t = next,
                None => break,
            }
        }
        return Ok(out);
    }
    text.split(',').map(parse_horizon).collect()
}

pub fn parse_horizon(text: &str) -> Result<u64> {
    let text = text.trim();
    if let Ok(v) = text.parse::<u64>() {
        return Ok(v);
    }
    let x: f64 = text
        .parse()
        .map_err(|_| Error::Config(format!("horizon: cannot parse \"{text}\"")))?;
    float_horizon(x)
}

fn float_horizon(x: f64) -> Result<u64> {
    if !(x >= 1.0 && x.fract() == 0.0 && x <= crate::engine::MAX_HORIZON as f64) {
        return Err(Error::Config(format!("horizon: {x} is not a positive integer within range")));
    }
    Ok(x as u64)
}

fn horizons_from_value(v: &Value) -> Result<Vec<u64>> {
    match v {
        Value::Number(n) => Ok(vec![match n.as_u64() {
            Some(u) => u,
            None => float_horizon(n.as_f64().unwrap_or(f64::NAN))?,
        }]),
        Value::String(s) => parse_horizons(s),
        Value::Array(items) => {
            let mut out = Vec::new();
            for item in items {
                if item.is_array() {
                    return Err(Error::Config("horizon: nested lists are not allowed".to_owned()));
                }
                out.extend(horizons_from_value(item)?);
            }
            Ok(out)
        }
        other => Err(Error::Config(format!("horizon: expected a number, string or list, found {other}"))),
    }
}

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (falls back to the config, then $BANDITFLOW_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of replications.
    #[arg(long)]
    pub reps: Option<u64>,
    /// Horizon: an integer, 1e7, a list 1e3,1e4 or a decade ladder 1e3..1e7.
    #[arg(long = "T", value_name = "N|LADDER")]
    pub horizon: Option<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Output directory for CSV and JSON files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pull in batches of 0.02 T / ln T.
    #[arg(long, conflicts_with = "exact")]
    pub batched: bool,
    /// One pull per epoch.
    #[arg(long)]
    pub exact: bool,
    #[arg(long, value_enum)]
    pub lambda_source: Option<LambdaFlag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LambdaFlag {
    Finite,
    Limit,
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}: \"{s}\" is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

impl Settings {
    /// Merges a config file (if any) with command-line overrides.
    pub fn resolve(file: Option<ConfigFile>, args: &CommonArgs) -> Result<Self> {
        let file = match file {
            Some(f) => f,
            None => match &args.config {
                Some(path) => ConfigFile::load(path)?,
                None => return Err(Error::Config("--config is required for this command".to_owned())),
            },
        };
        let mut instance = file
            .instance
            .ok_or_else(|| Error::Config("instance: missing".to_owned()))?;
        match instance.family {
            RewardFamily::Gaussian if instance.std_devs.is_none() => {
                return Err(Error::Config("instance.std_devs: required for gaussian rewards".to_owned()))
            }
            RewardFamily::Bernoulli if instance.std_devs.is_none() => {
                instance.std_devs = Some(instance.means.iter().map(|&p| bernoulli_sd(p)).collect());
            }
            _ => {}
        }
        if let Some(gap) = &file.gap {
            gap.validate().map_err(|e| Error::Config(format!("gap: {e}")))?;
            if instance.means.len() != 2 {
                return Err(Error::Config("gap: requires a two-arm instance".to_owned()));
            }
        }
        let horizon = match (&args.horizon, &file.horizon) {
            (Some(h), _) => parse_horizons(h)?,
            (None, Some(v)) => horizons_from_value(v)?,
            (None, None) => vec![DEFAULT_HORIZON],
        };
        if horizon.is_empty() {
            return Err(Error::Config("horizon: empty".to_owned()));
        }
        let mut batching = file.batching.unwrap_or_default();
        if args.exact {
            batching = Batching::Exact;
        } else if args.batched && batching == Batching::Exact {
            batching = Batching::Batched {
                fraction: DEFAULT_BATCH_FRACTION,
                apply_to: BatchTarget::AllArms,
            };
        }
        let seed = match (args.seed, file.seed) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => env_seed()?.unwrap_or(0),
        };
        let lambda_source = match args.lambda_source {
            Some(LambdaFlag::Finite) => LambdaSpec::Finite,
            Some(LambdaFlag::Limit) => LambdaSpec::Limit,
            None => file.lambda_source.unwrap_or_default(),
        };
        let replications = args.reps.or(file.replications).unwrap_or(DEFAULT_REPLICATIONS);
        if replications == 0 {
            return Err(Error::Config("replications: must be at least 1".to_owned()));
        }
        let parallel = args.parallel.or(file.parallel).unwrap_or_else(default_parallelism).max(1);
        let settings = Settings {
            schema: SCHEMA.to_owned(),
            instance,
            exploration: file.exploration.unwrap_or_default(),
            gap: file.gap,
            horizon,
            replications,
            batching,
            seed,
            parallel,
            out_dir: args.out.clone().or(file.out_dir),
            lambda_source,
            exploration_epoch: file.exploration_epoch.unwrap_or_default(),
            delta_rule: file.delta_rule.unwrap_or_default(),
            tolerance: file.tolerance.unwrap_or_default(),
            checks: file.checks.unwrap_or_else(|| vec![Check::Covariance]),
            prediction: file.prediction,
        };
        let f = settings.exploration.build();
        let report = crate::env::validate_exploration(&f);
        if !report.is_empty() {
            return Err(Error::Config(format!("exploration: {}", report.join("; "))));
        }
        for &t in &settings.horizon {
            settings.instance_at(t)?;
        }
        Ok(settings)
    }

    pub fn exploration_function(&self) -> ExplorationFunction {
        self.exploration.build()
    }

    /// The bandit instance at horizon `t` (the gap schedule may move `mu_1`).
    pub fn instance_at(&self, t: u64) -> Result<BanditInstance> {
        let spec = &self.instance;
        let sds = spec.std_devs.clone().unwrap_or_default();
        let inst = match &self.gap {
            Some(gap) => {
                if sds.len() != 2 {
                    return Err(Error::Config("instance.std_devs: need two entries with a gap schedule".to_owned()));
                }
                gap.two_arm_instance(&self.exploration_function(), t, spec.means[1], [sds[0], sds[1]], spec.family)
            }
            None => BanditInstance::new(spec.family, spec.means.clone(), sds, spec.sigma_bound).checked(),
        };
        inst.map_err(|e| Error::Config(format!("instance at T = {t}: {e}")))
    }

    pub fn run_config(&self, t: u64) -> Result<RunConfig> {
        let mut cfg = RunConfig::new(self.instance_at(t)?, self.exploration_function(), t, self.seed);
        cfg.batching = self.batching;
        cfg.exploration_epoch = self.exploration_epoch;
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn lambda_at(&self, fluid: &FluidSolution) -> Result<LambdaSource> {
        Ok(match self.lambda_source {
            LambdaSpec::Finite => LambdaSource::Finite,
            LambdaSpec::Value(v) => LambdaSource::Limit(v),
            LambdaSpec::Limit => LambdaSource::Limit(match &self.gap {
                Some(gap) => crate::fluid::lambda_star_limit(gap)?,
                None => match fluid.regime.first() {
                    Some(GapRegime::LargeGap) => 0.0,
                    Some(GapRegime::SmallGap) | None => 1.0,
                    Some(GapRegime::ModerateGap { theta }) => lambda_for_theta(*theta)?,
                },
            }),
        })
    }

    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("settings serialize")
    }
}

// ---------------------------------------------------------------------------
// command line

#[derive(Debug, Parser)]
#[command(name = "banditflow", version, about = "Fluid, CLT and bias predictions and simulation for generalized UCB1")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the fluid system.
    Fluid(CommonArgs),
    /// Joint-CLT covariance of standardized pulls and sample means.
    PredictClt(CommonArgs),
    /// Typical regret scale and deviation (two arms).
    PredictRegret(CommonArgs),
    /// Leading sample-bias terms (two arms, f = sqrt(rho ln t)).
    PredictBias(CommonArgs),
    /// Simulate an ensemble; one CSV row per replication.
    Simulate(CommonArgs),
    /// Sample the stylized two-stage model.
    Stylized(CommonArgs),
    /// Simulate and compare with predictions.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Prediction JSON (a predict-clt report or a bare prediction).
        #[arg(long)]
        prediction: Option<PathBuf>,
    },
    /// Run a named experiment end to end.
    Reproduce {
        #[arg(value_enum)]
        experiment: Experiment,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    FigBiasSmall,
    FigBiasLarge,
    FigBiasModerate,
    FigEmpiricalMean,
    CovIdenticalArms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 1,
        }
    }
}

/// Parses `argv` and runs; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Fluid(args) => fluid_cmd(&Settings::resolve(None, &args)?),
        Command::PredictClt(args) => predict_clt_cmd(&Settings::resolve(None, &args)?),
        Command::PredictRegret(args) => predict_regret_cmd(&Settings::resolve(None, &args)?),
        Command::PredictBias(args) => predict_bias_cmd(&Settings::resolve(None, &args)?),
        Command::Simulate(args) => simulate_cmd(&Settings::resolve(None, &args)?),
        Command::Stylized(args) => stylized_cmd(&Settings::resolve(None, &args)?),
        Command::Verify { common, prediction } => {
            let mut settings = Settings::resolve(None, &common)?;
            if prediction.is_some() {
                settings.prediction = prediction;
            }
            verify_cmd(&settings)
        }
        Command::Reproduce { experiment, common } => reproduce_cmd(experiment, &common),
    }
}

// ---------------------------------------------------------------------------
// output

fn header(command: &str, settings: &Settings) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("schema".into(), json!(SCHEMA));
    m.insert("command".into(), json!(command));
    m.insert("seed".into(), json!(settings.seed));
    m.insert("config".into(), settings.echo());
    m
}

/// Where a command sends its artefacts.
struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
        })
    }

    /// Writes CSV to `<dir>/<name>`, or to stdout without a directory.
    fn csv(&self, name: &str, table: &Table) -> Result<()> {
        let bytes = table.to_bytes()?;
        match &self.dir {
            Some(d) => fs::write(d.join(name), bytes)?,
            None => std::io::stdout().lock().write_all(&bytes)?,
        }
        Ok(())
    }

    /// Writes the report to `<dir>/report.json` and prints it. Without a
    /// directory, the report goes to stderr when `csv_on_stdout`.
    fn report(&self, report: Value, csv_on_stdout: bool) -> Result<()> {
        let text = serde_json::to_string_pretty(&report)? + "\n";
        if let Some(d) = &self.dir {
            fs::write(d.join("report.json"), &text)?;
        }
        if self.dir.is_none() && csv_on_stdout {
            std::io::stderr().lock().write_all(text.as_bytes())?;
        } else {
            std::io::stdout().lock().write_all(text.as_bytes())?;
        }
        Ok(())
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Column layout of per-replication simulation CSVs.
pub fn run_csv_header(arms: usize) -> Vec<String> {
    let mut h: Vec<String> = ["replication", "seed", "T", "mode"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=arms).map(|i| format!("N_{i}[pulls]")));
    h.extend((1..=arms).map(|i| format!("mean_{i}[reward]")));
    h.push("pseudo_regret[reward]".to_owned());
    h
}

fn run_csv_row(r: &RunResult) -> Vec<String> {
    let mut row = vec![r.replication.to_string(), r.seed.to_string(), r.horizon.to_string(), r.mode.clone()];
    row.extend(r.pulls.iter().map(u64::to_string));
    row.extend(r.sample_means.iter().copied().map(num));
    row.push(num(r.pseudo_regret));
    row
}

// ---------------------------------------------------------------------------
// subcommands

fn fluid_cmd(s: &Settings) -> Result<Outcome> {
    let f = s.exploration_function();
    let mut results = Vec::new();
    for &t in &s.horizon {
        let fluid = solve_fluid(&s.instance_at(t)?, &f, t)?;
        results.push(json!({
            "T": t,
            "f_T": fluid.f_t,
            "gaps": fluid.gaps,
            "n_star": fluid.n_star,
            "lambda": fluid.lambda,
            "residuals": fluid.residuals,
            "sum_residual": fluid.sum_residual,
            "regime": fluid.regime,
        }));
    }
    let mut report = header("fluid", s);
    report.insert("results".into(), Value::Array(results));
    Sink::new(s.out_dir.as_deref())?.report(Value::Object(report), false)?;
    Ok(Outcome::Pass)
}

fn predictions_at(s: &Settings, t: u64) -> Result<(BanditInstance, FluidSolution, Option<CltPrediction>, CltPrediction)> {
    let inst = s.instance_at(t)?;
    let fluid = solve_fluid(&inst, &s.exploration_function(), t)?;
    let two = if inst.arm_count() == 2 {
        Some(clt_two_arm(&fluid, &inst, fluid.f_t, s.lambda_at(&fluid)?)?)
    } else {
        None
    };
    let k = clt_k_arm(&fluid, &inst, fluid.f_t)?;
    Ok((inst, fluid, two, k))
}

fn clt_json(p: &CltPrediction) -> Value {
    json!({
        "labels": p.labels(),
        "dimension": [p.cov.rows, p.cov.cols],
        "prediction": p,
    })
}

fn predict_clt_cmd(s: &Settings) -> Result<Outcome> {
    let mut results = Vec::new();
    for &t in &s.horizon {
        let (_, fluid, two, k) = predictions_at(s, t)?;
        results.push(json!({
            "T": t,
            "n_star": fluid.n_star,
            "two_arm": two.as_ref().map(clt_json),
            "k_arm": clt_json(&k),
        }));
    }
    let mut report = header("predict-clt", s);
    report.insert("results".into(), Value::Array(results));
    Sink::new(s.out_dir.as_deref())?.report(Value::Object(report), false)?;
    Ok(Outcome::Pass)
}

fn predict_regret_cmd(s: &Settings) -> Result<Outcome> {
    let f = s.exploration_function();
    let mut results = Vec::new();
    for &t in &s.horizon {
        let inst = s.instance_at(t)?;
        let fluid = solve_fluid(&inst, &f, t)?;
        let p = regret_prediction(&fluid, &inst, fluid.f_t, s.lambda_at(&fluid)?)?;
        results.push(json!({ "T": t, "units": "reward", "prediction": p }));
    }
    let mut report = header("predict-regret", s);
    report.insert("results".into(), Value::Array(results));
    Sink::new(s.out_dir.as_deref())?.report(Value::Object(report), false)?;
    Ok(Outcome::Pass)
}

fn predict_bias_cmd(s: &Settings) -> Result<Outcome> {
    let f = s.exploration_function();
    let mut results = Vec::new();
    for &t in &s.horizon {
        let inst = s.instance_at(t)?;
        let fluid = solve_fluid(&inst, &f, t)?;
        let p = bias_prediction(&fluid, &inst, &f, s.lambda_at(&fluid)?)?;
        results.push(json!({ "T": t, "prediction": p }));
    }
    let mut report = header("predict-bias", s);
    report.insert("results".into(), Value::Array(results));
    Sink::new(s.out_dir.as_deref())?.report(Value::Object(report), false)?;
    Ok(Outcome::Pass)
}

fn ensemble_summary(results: &[RunResult], inst: &BanditInstance) -> Value {
    let k = inst.arm_count();
    let mu = inst.means();
    let arms: Vec<Value> = (0..k)
        .map(|i| {
            let pulls: Moments = results.iter().map(|r| r.pulls[i] as f64).collect();
            let means: Moments = results.iter().map(|r| r.sample_means[i] - mu[i]).collect();
            json!({
                "arm": i + 1,
                "mean_pulls": pulls.mean,
                "sd_pulls": pulls.std_dev(),
                "bias": means.mean,
                "bias_se": means.mean_se(),
            })
        })
        .collect();
    let regret: Moments = results.iter().map(|r| r.pseudo_regret).collect();
    json!({
        "replications": results.len(),
        "arms": arms,
        "pseudo_regret": { "mean": regret.mean, "sd": regret.std_dev() },
    })
}

fn simulate_cmd(s: &Settings) -> Result<Outcome> {
    let sink = Sink::new(s.out_dir.as_deref())?;
    let mut table = Table::new(run_csv_header(s.instance.means.len()));
    let mut summaries = Vec::new();
    for &t in &s.horizon {
        let cfg = s.run_config(t)?;
        let results = run_ensemble(&cfg, s.replications, s.parallel)?;
        results.iter().for_each(|r| table.push(run_csv_row(r)));
        summaries.push(json!({ "T": t, "summary": ensemble_summary(&results, &cfg.instance) }));
    }
    sink.csv("runs.csv", &table)?;
    let mut report = header("simulate", s);
    report.insert("initialization".into(), json!("each arm pulled once in index order"));
    report.insert("results".into(), Value::Array(summaries));
    sink.report(Value::Object(report), true)?;
    Ok(Outcome::Pass)
}

/// Column layout of stylized-model CSVs.
pub fn stylized_csv_header() -> Vec<String> {
    [
        "replication",
        "seed",
        "T",
        "mode",
        "N_1[pulls]",
        "N_2[pulls]",
        "mean_1[reward]",
        "mean_2[reward]",
        "Z_1[sqrt(n_delta)*(mean-mu)]",
        "Z_2[sqrt(n_delta)*(mean-mu)]",
        "clamped",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn stylized_cmd(s: &Settings) -> Result<Outcome> {
    let sink = Sink::new(s.out_dir.as_deref())?;
    let mut table = Table::new(stylized_csv_header());
    let mut results = Vec::new();
    for &t in &s.horizon {
        let inst = s.instance_at(t)?;
        let fluid = solve_fluid(&inst, &s.exploration_function(), t)?;
        let cfg = StylizedConfig {
            instance: inst,
            f: s.exploration_function(),
            horizon: t,
            delta_rule: s.delta_rule,
            lambda_source: s.lambda_at(&fluid)?,
            seed: s.seed,
        };
        let plan = cfg.plan()?;
        let samples = stylized_ensemble(&cfg, s.replications, s.parallel)?;
        for x in &samples {
            table.push(vec![
                x.replication.to_string(),
                s.seed.to_string(),
                t.to_string(),
                "stylized".to_owned(),
                x.n_tilde[0].to_string(),
                x.n_tilde[1].to_string(),
                num(x.mu_tilde[0]),
                num(x.mu_tilde[1]),
                num(x.z_delta[0]),
                num(x.z_delta[1]),
                u8::from(x.clamped).to_string(),
            ]);
        }
        results.push(json!({ "T": t, "estimate": summarize(&plan, &cfg.instance, &samples) }));
    }
    sink.csv("stylized.csv", &table)?;
    let mut report = header("stylized", s);
    report.insert("results".into(), Value::Array(results));
    sink.report(Value::Object(report), true)?;
    Ok(Outcome::Pass)
}

/// Loads a prediction file: either a bare prediction or a `predict-clt`
/// report, from which the entry for horizon `t` is taken.
fn load_prediction(path: &Path, t: u64, arms: usize) -> Result<CltPrediction> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let bad = |m: &str| Error::Config(format!("{}: {m}", path.display()));
    let node = if v.get("cov").is_some() {
        v
    } else if let Some(results) = v.get("results").and_then(Value::as_array) {
        let entry = results
            .iter()
            .find(|e| e.get("T").and_then(Value::as_u64) == Some(t))
            .ok_or_else(|| bad(&format!("no entry for T = {t}")))?;
        let key = if arms == 2 { "two_arm" } else { "k_arm" };
        entry
            .get(key)
            .and_then(|x| x.get("prediction"))
            .cloned()
            .ok_or_else(|| bad(&format!("no {key} prediction")))?
    } else {
        return Err(bad("not a prediction"));
    };
    serde_json::from_value(node).map_err(|e| bad(&e.to_string()))
}

fn verify_cmd(s: &Settings) -> Result<Outcome> {
    let sink = Sink::new(s.out_dir.as_deref())?;
    let f = s.exploration_function();
    let mut pass = true;
    let mut entries = Vec::new();
    let mut std_table: Option<Table> = None;
    for &t in &s.horizon {
        let cfg = s.run_config(t)?;
        let inst = cfg.instance.clone();
        let fluid = solve_fluid(&inst, &f, t)?;
        let lambda = s.lambda_at(&fluid)?;
        let prediction = match &s.prediction {
            Some(path) => load_prediction(path, t, inst.arm_count())?,
            None if inst.arm_count() == 2 => clt_two_arm(&fluid, &inst, fluid.f_t, lambda)?,
            None => clt_k_arm(&fluid, &inst, fluid.f_t)?,
        };
        let results = run_ensemble(&cfg, s.replications, s.parallel)?;
        let stats = standardize(&results, &inst, &fluid, &prediction)?;

        let table = std_table.get_or_insert_with(|| {
            let mut h = vec!["replication".to_owned(), "T".to_owned()];
            h.extend(stats.labels.iter().map(|l| format!("{l}[standardized]")));
            Table::new(h)
        });
        for (rep, row) in stats.replications.iter().zip(&stats.standardized) {
            let mut r = vec![rep.to_string(), t.to_string()];
            r.extend(row.iter().copied().map(num));
            table.push(r);
        }

        let mut entry = serde_json::Map::new();
        entry.insert("T".into(), json!(t));
        entry.insert("replications".into(), json!(stats.count));
        for check in &s.checks {
            match check {
                Check::Covariance => {
                    let v = compare_covariance(&stats, &prediction, &s.tolerance.covariance)?;
                    pass &= v.pass;
                    entry.insert("covariance".into(), serde_json::to_value(&v)?);
                }
                Check::Bias => {
                    let p = bias_prediction(&fluid, &inst, &f, lambda)?;
                    let v = compare_bias(&stats.emp_bias, &p, &s.tolerance.bias)?;
                    pass &= v.pass;
                    entry.insert("bias".into(), json!({ "prediction": p, "verdict": v }));
                }
                Check::Regret => {
                    let p = regret_prediction(&fluid, &inst, fluid.f_t, lambda)?;
                    let r = regret_stats(&results, &p)?;
                    let tol = &s.tolerance.regret;
                    let within = |e: Option<crate::stats::Estimate>, band: [f64; 2]| {
                        e.map(|e| e.value >= band[0] && e.value <= band[1])
                    };
                    let mean_ok = within(r.mean_ratio, tol.mean_ratio);
                    let sd_ok = within(r.sd_ratio, tol.sd_ratio);
                    pass &= mean_ok.unwrap_or(true) && sd_ok.unwrap_or(true);
                    entry.insert(
                        "regret".into(),
                        json!({ "stats": r, "mean_ratio_pass": mean_ok, "sd_ratio_pass": sd_ok }),
                    );
                }
            }
        }
        entries.push(Value::Object(entry));
    }
    if let (Some(d), Some(table)) = (&sink.dir, &std_table) {
        fs::write(d.join("standardized.csv"), table.to_bytes()?)?;
    }
    let mut report = header("verify", s);
    report.insert("results".into(), Value::Array(entries));
    report.insert("pass".into(), json!(pass));
    sink.report(Value::Object(report), false)?;
    Ok(Outcome::from_pass(pass))
}

// ---------------------------------------------------------------------------
// named experiments

struct BiasSeries {
    label: String,
    parameter: f64,
    gap: GapSpec,
    mu_2: f64,
    sd: f64,
}

fn base_settings(common: &CommonArgs, horizon: Vec<u64>, reps: u64, batching: Batching) -> Result<Settings> {
    if common.config.is_some() {
        return Err(Error::Config("reproduce uses built-in settings; --config is not accepted".to_owned()));
    }
    let file = ConfigFile {
        schema: SCHEMA.to_owned(),
        instance: Some(InstanceSpec {
            family: RewardFamily::Gaussian,
            means: vec![1.0, 1.0],
            std_devs: Some(vec![1.0, 1.0]),
            sigma_bound: None,
        }),
        exploration: Some(ExplorationSpec::default()),
        gap: None,
        horizon: Some(json!(horizon)),
        replications: Some(reps),
        batching: Some(batching),
        seed: None,
        parallel: None,
        out_dir: None,
        lambda_source: None,
        exploration_epoch: None,
        delta_rule: None,
        tolerance: None,
        checks: None,
        prediction: None,
    };
    Settings::resolve(Some(file), common)
}

fn batched(apply_to: BatchTarget) -> Batching {
    Batching::Batched {
        fraction: DEFAULT_BATCH_FRACTION,
        apply_to,
    }
}

fn reproduce_cmd(experiment: Experiment, common: &CommonArgs) -> Result<Outcome> {
    let ladder = |hi: u64| parse_horizons(&format!("1e3..{hi}"));
    match experiment {
        Experiment::FigBiasSmall => {
            let s = base_settings(common, ladder(10_000_000)?, 10_000, batched(BatchTarget::AllArms))?;
            let series = [0.5, 0.7, 0.9]
                .iter()
                .map(|&sd| BiasSeries {
                    label: format!("sigma={sd}"),
                    parameter: sd,
                    gap: GapSpec::SmallGapZero,
                    mu_2: 1.0,
                    sd,
                })
                .collect();
            bias_experiment("fig-bias-small", &s, series)
        }
        Experiment::FigBiasLarge => {
            let s = base_settings(common, ladder(1_000_000_000)?, 10_000, batched(BatchTarget::SuperiorOnly))?;
            let series = [0.0, 1.0, 1.5]
                .iter()
                .map(|&mu_2| BiasSeries {
                    label: format!("mu_2={mu_2}"),
                    parameter: mu_2,
                    gap: GapSpec::FixedGap { delta: 2.0 - mu_2 },
                    mu_2,
                    sd: 1.0,
                })
                .collect();
            bias_experiment("fig-bias-large", &s, series)
        }
        Experiment::FigBiasModerate => {
            let s = base_settings(common, ladder(10_000_000)?, 10_000, batched(BatchTarget::AllArms))?;
            let series = [0.7, 0.8, 0.9]
                .iter()
                .map(|&share| BiasSeries {
                    label: format!("share={share}"),
                    parameter: share,
                    gap: GapSpec::TargetShare { share },
                    mu_2: 0.0,
                    sd: 1.0,
                })
                .collect();
            bias_experiment("fig-bias-moderate", &s, series)
        }
        Experiment::FigEmpiricalMean => {
            let mut s = base_settings(common, vec![100_000], 100_000, Batching::Exact)?;
            s.instance.means = vec![0.0, 0.0];
            empirical_mean_experiment(&s)
        }
        Experiment::CovIdenticalArms => {
            let mut s = base_settings(common, vec![100_000], 10_000, Batching::Exact)?;
            s.tolerance.covariance = CovTolerance {
                abs_tol: 0.35,
                k_se: 0.0,
                ..CovTolerance::default()
            };
            s.checks = vec![Check::Covariance];
            let dir = s.out_dir.clone().unwrap_or_else(|| PathBuf::from("out/cov-identical-arms"));
            s.out_dir = Some(dir);
            verify_cmd(&s)
        }
    }
}

/// Column layout of the bias-experiment CSVs.
pub fn bias_csv_header() -> Vec<String> {
    [
        "experiment",
        "series",
        "parameter",
        "T",
        "replications",
        "scaling",
        "bias_1[scaled]",
        "se_1[scaled]",
        "predicted_1[scaled]",
        "bias_2[scaled]",
        "se_2[scaled]",
        "predicted_2[scaled]",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn bias_experiment(name: &str, base: &Settings, series: Vec<BiasSeries>) -> Result<Outcome> {
    let dir = base.out_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(name));
    let sink = Sink::new(Some(&dir))?;
    let f = base.exploration_function();
    let mut table = Table::new(bias_csv_header());
    let mut verdicts = Vec::new();
    let mut configs = Vec::new();
    let mut pass = true;
    let last_t = *base.horizon.iter().max().expect("non-empty ladder");
    for item in &series {
        let mut s = base.clone();
        s.gap = Some(item.gap);
        s.instance.means = vec![item.mu_2, item.mu_2];
        s.instance.std_devs = Some(vec![item.sd, item.sd]);
        s.out_dir = Some(dir.clone());
        configs.push(json!({ "series": item.label, "config": s.echo() }));
        for &t in &s.horizon {
            let cfg = s.run_config(t)?;
            let inst = cfg.instance.clone();
            let fluid = solve_fluid(&inst, &f, t)?;
            let prediction = bias_prediction(&fluid, &inst, &f, s.lambda_at(&fluid)?)?;
            let results = run_ensemble(&cfg, s.replications, s.parallel)?;
            let stats = crate::stats::BiasEstimate::from_samples;
            let emp: Vec<_> = (0..2)
                .map(|i| stats(i, inst.means()[i], results.iter().map(move |r| r.sample_means[i])))
                .collect();
            let scaling = prediction.arms[1].scaling.expect("arm 2 always has a scaling");
            let factor = scaling.factor(t);
            let mut row = vec![
                name.to_owned(),
                item.label.clone(),
                num(item.parameter),
                t.to_string(),
                s.replications.to_string(),
                serde_json::to_value(scaling)?.as_str().unwrap_or_default().to_owned(),
            ];
            for i in 0..2 {
                row.push(num(emp[i].bias * factor));
                row.push(num(emp[i].se * factor));
                // only report a constant when it is on the same scale as the column
                let c = prediction.arms[i].scaled_constant.filter(|_| prediction.arms[i].scaling == Some(scaling));
                row.push(opt_num(c));
            }
            table.push(row);
            if t == last_t {
                let mut arm2 = prediction.clone();
                arm2.arms.retain(|a| a.arm == 1);
                let v = compare_bias(&emp, &arm2, &s.tolerance.bias)?;
                pass &= v.pass;
                verdicts.push(json!({ "series": item.label, "T": t, "prediction": prediction, "verdict": v }));
            }
        }
    }
    sink.csv(&format!("{name}.csv"), &table)?;
    let mut report = header(&format!("reproduce {name}"), base);
    report.insert("series".into(), Value::Array(configs));
    report.insert("verdicts".into(), Value::Array(verdicts));
    report.insert("pass".into(), json!(pass));
    sink.report(Value::Object(report), false)?;
    Ok(Outcome::from_pass(pass))
}

fn empirical_mean_experiment(s: &Settings) -> Result<Outcome> {
    let dir = s.out_dir.clone().unwrap_or_else(|| PathBuf::from("out/fig-empirical-mean"));
    let sink = Sink::new(Some(&dir))?;
    let f = s.exploration_function();
    let mut table = Table::new(vec![
        "replication".to_owned(),
        "T".to_owned(),
        "Z_1[sqrt(n_star_1)*(mean-mu)]".to_owned(),
        "Z_2[sqrt(n_star_2)*(mean-mu)]".to_owned(),
    ]);
    let mut results_json = Vec::new();
    for &t in &s.horizon {
        let cfg = s.run_config(t)?;
        let fluid = solve_fluid(&cfg.instance, &f, t)?;
        let mu = cfg.instance.means().to_vec();
        let results = run_ensemble(&cfg, s.replications, s.parallel)?;
        let z = |r: &RunResult, i: usize| fluid.n_star[i].sqrt() * (r.sample_means[i] - mu[i]);
        for r in &results {
            table.push(vec![r.replication.to_string(), t.to_string(), num(z(r, 0)), num(z(r, 1))]);
        }
        let m: Moments = results.iter().map(|r| z(r, 1)).collect();
        results_json.push(json!({
            "T": t,
            "coordinate": "Z_2",
            "mean": m.mean,
            "mean_se": m.mean_se(),
            "sd": m.std_dev(),
            "skewness": m.skewness(),
            "excess_kurtosis": m.excess_kurtosis(),
            "normal_overlay": { "mean": m.mean, "sd": m.std_dev() },
        }));
    }
    sink.csv("fig-empirical-mean.csv", &table)?;
    let mut report = header("reproduce fig-empirical-mean", s);
    report.insert("results".into(), Value::Array(results_json));
    sink.report(Value::Object(report), false)?;
    Ok(Outcome::Pass)
}
