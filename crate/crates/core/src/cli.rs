//! Command-line interface: fit, enumerate, simulate, generate, compare,
//! kappa. Every command writes a JSON report, CSV tables, and a
//! reproducibility manifest into the output directory; runs with the same
//! configuration and seed produce byte-identical outputs.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimate::{fit, wald_inference, FitConfig, OutcomeSelection};
use crate::io::{self, Manifest};
use crate::mixture::Individual;
use crate::select;
use crate::sim::{
    build_condition, cohen_kappa, compare_joint_vs_univariate, generate_dataset, run_study,
    Allocation, AssignmentMode, MlFitter, Scenario, SimulationCondition,
};

const WORKERS_ENV: &str = "SPLINEMIX_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "splinemix",
    version,
    about = "Growth mixture models for parallel bilinear-spline trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a K-class model to a dataset.
    Fit(FitArgs),
    /// Fit 1..=kmax classes without covariates and compare by BIC.
    Enumerate(EnumerateArgs),
    /// Run a replicated simulation study at one design cell.
    Simulate(SimulateArgs),
    /// Generate one dataset from a design cell.
    Generate(GenerateArgs),
    /// Compare joint and univariate model accuracy on shared replications.
    Compare(CompareArgs),
    /// Cohen's kappa between two label columns.
    Kappa(KappaArgs),
    /// Run any command from a JSON config file.
    Run(RunArgs),
}

#[derive(Debug, Args, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CommonFitArgs {
    /// Maximum optimizer restarts with fresh starting values.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// Gradient infinity-norm tolerance (mean-scale objective).
    #[arg(long, default_value_t = 1e-5)]
    gradient_tolerance: f64,
    /// Relative objective-change tolerance.
    #[arg(long, default_value_t = 1e-10)]
    objective_tolerance: f64,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Default for CommonFitArgs {
    fn default() -> Self {
        Self {
            restarts: 10,
            gradient_tolerance: 1e-5,
            objective_tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl CommonFitArgs {
    fn to_config(&self) -> FitConfig {
        FitConfig {
            max_restarts: self.restarts,
            gradient_tolerance: self.gradient_tolerance,
            objective_tolerance: self.objective_tolerance,
            seed: self.seed,
            ..Default::default()
        }
    }
}

fn default_outcomes() -> String {
    "joint".to_string()
}

fn default_assignment() -> String {
    "multinomial".to_string()
}

#[derive(Debug, Args, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FitArgs {
    /// Dataset CSV (long format: id,time,y,z,covariates...).
    #[arg(long)]
    data: PathBuf,
    /// Number of latent classes.
    #[arg(long, short = 'k')]
    classes: usize,
    /// Outcomes to model: joint, y, or z.
    #[arg(long, default_value = "joint")]
    #[serde(default = "default_outcomes")]
    outcomes: String,
    /// Covariate columns used for gating (default: all in the file).
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    covariates: Option<Vec<String>>,
    #[command(flatten)]
    #[serde(default)]
    fit: CommonFitArgs,
    /// Output directory.
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Debug, Args, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct EnumerateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Largest class count to fit.
    #[arg(long, default_value_t = 3)]
    #[serde(default = "default_kmax")]
    kmax: usize,
    /// Outcomes to model: joint, y, or z.
    #[arg(long, default_value = "joint")]
    #[serde(default = "default_outcomes")]
    outcomes: String,
    #[command(flatten)]
    #[serde(default)]
    fit: CommonFitArgs,
    #[arg(long, short = 'o')]
    out: PathBuf,
}

fn default_kmax() -> usize {
    3
}

#[derive(Debug, Args, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConditionArgs {
    /// Design scenario: 1, 2, or 3.
    #[arg(long, default_value_t = 1)]
    scenario: usize,
    /// Knot separation: 0.50, 0.75, or 1.00.
    #[arg(long, default_value_t = 1.00)]
    separation: f64,
    /// Allocation: balanced (1:1) or unbalanced (1:2).
    #[arg(long, default_value = "balanced")]
    allocation: String,
    /// Residual variance: 1 or 2.
    #[arg(long, default_value_t = 1.0)]
    residual_var: f64,
    /// Between-construct growth-factor correlation: -0.3, 0, or 0.3.
    #[arg(long, default_value_t = -0.3, allow_hyphen_values = true)]
    rho: f64,
    /// Individuals per dataset.
    #[arg(long, default_value_t = 500)]
    n: usize,
}

impl Default for ConditionArgs {
    fn default() -> Self {
        Self {
            scenario: 1,
            separation: 1.00,
            allocation: "balanced".to_string(),
            residual_var: 1.0,
            rho: -0.3,
            n: 500,
        }
    }
}

impl ConditionArgs {
    fn build(&self) -> Result<SimulationCondition> {
        let allocation = match self.allocation.as_str() {
            "balanced" => Allocation::Balanced,
            "unbalanced" => Allocation::Unbalanced,
            other => {
                return Err(Error::Config(format!(
                    "allocation must be balanced or unbalanced, got '{other}'"
                )))
            }
        };
        let mut condition = build_condition(
            Scenario::from_index(self.scenario)?,
            self.separation,
            allocation,
            self.residual_var,
            self.rho,
        )?;
        condition.n = self.n;
        Ok(condition)
    }
}

#[derive(Debug, Args, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(default)]
    condition: ConditionArgs,
    /// Converged replications to accumulate.
    #[arg(long, short = 's', default_value_t = 100)]
    replications: usize,
    /// Membership assignment: multinomial or argmax.
    #[arg(long, default_value = "multinomial")]
    #[serde(default = "default_assignment")]
    assignment: String,
    /// Worker threads (0 = all cores; SPLINEMIX_WORKERS overrides the default).
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    workers: usize,
    #[command(flatten)]
    #[serde(default)]
    fit: CommonFitArgs,
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Debug, Args, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateArgs {
    #[command(flatten)]
    #[serde(default)]
    condition: ConditionArgs,
    /// Membership assignment: multinomial or argmax.
    #[arg(long, default_value = "multinomial")]
    #[serde(default = "default_assignment")]
    assignment: String,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    seed: u64,
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Debug, Args, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareArgs {
    #[command(flatten)]
    #[serde(default)]
    condition: ConditionArgs,
    #[arg(long, short = 's', default_value_t = 30)]
    replications: usize,
    #[arg(long, default_value = "multinomial")]
    #[serde(default = "default_assignment")]
    assignment: String,
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    workers: usize,
    #[command(flatten)]
    #[serde(default)]
    fit: CommonFitArgs,
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Debug, Args, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct KappaArgs {
    /// CSV with integer label columns `a,b` (header required).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config: {"command": "...", "args": { ... }}.
    #[arg(long)]
    config: PathBuf,
}

pub fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    };
    std::process::exit(code);
}

fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Enumerate(args) => cmd_enumerate(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Generate(args) => cmd_generate(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Kappa(args) => cmd_kappa(&args),
        Command::Run(args) => cmd_run(&args),
    }
}

/// Output collector: nothing touches the filesystem until every artifact is
/// ready, so failed runs leave no partial outputs.
struct OutputSet {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    fn add_text(&mut self, name: &str, text: String) {
        self.files.push((name.to_string(), text.into_bytes()));
    }

    fn write(self) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let mut written: Vec<PathBuf> = Vec::new();
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            if let Err(e) = std::fs::write(&path, bytes) {
                for w in written {
                    let _ = std::fs::remove_file(w);
                }
                return Err(e.into());
            }
            written.push(path);
        }
        Ok(())
    }
}

fn select_covariates(
    individuals: Vec<Individual>,
    schema: &io::DatasetSchema,
    selection: Option<&[String]>,
) -> Result<Vec<Individual>> {
    let Some(wanted) = selection else {
        return Ok(individuals);
    };
    let indices: Vec<usize> = wanted
        .iter()
        .map(|name| {
            schema
                .covariates
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Config(format!("covariate column '{name}' not in dataset")))
        })
        .collect::<Result<_>>()?;
    Ok(individuals
        .into_iter()
        .map(|mut ind| {
            ind.x = indices.iter().map(|&i| ind.x[i]).collect();
            ind
        })
        .collect())
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let outcomes = OutcomeSelection::from_str(&args.outcomes)?;
    let (individuals, schema) = io::ingest(&args.data)?;
    let individuals =
        select_covariates(individuals, &schema, args.covariates.as_deref())?;
    let config = args.fit.to_config();
    let result = fit(&individuals, args.classes, outcomes, &config)?;
    let result = if result.converged() {
        wald_inference(result, &individuals)?
    } else {
        result
    };

    let mut out = OutputSet::new(&args.out);
    out.add_json("report.json", &result)?;
    out.add_text("estimates.csv", io::estimates_csv(&result));
    out.add_json(
        "manifest.json",
        &Manifest::new("fit", config.seed, serde_json::to_value(args)?),
    )?;
    out.add_json(
        "status.json",
        &serde_json::json!({
            "status": result.status,
            "converged": result.converged(),
            "restarts_used": result.restarts_used,
            "log_likelihood": result.log_likelihood,
        }),
    )?;
    out.write()?;
    if !result.converged() {
        return Err(Error::EstimationFailure(format!(
            "fit did not converge after {} restarts",
            result.restarts_used
        )));
    }
    Ok(())
}

fn cmd_enumerate(args: &EnumerateArgs) -> Result<()> {
    let outcomes = OutcomeSelection::from_str(&args.outcomes)?;
    let (individuals, _) = io::ingest(&args.data)?;
    let config = args.fit.to_config();
    let rows = select::enumerate(&individuals, args.kmax, outcomes, &config)?;

    let mut out = OutputSet::new(&args.out);
    out.add_json("enumeration.json", &rows)?;
    out.add_text("enumeration.csv", io::enumeration_csv(&rows));
    out.add_json(
        "manifest.json",
        &Manifest::new("enumerate", config.seed, serde_json::to_value(args)?),
    )?;
    out.write()
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let condition = args.condition.build()?;
    let assignment = AssignmentMode::from_str(&args.assignment)?;
    let config = args.fit.to_config();
    let workers = if args.workers == 0 {
        default_workers()
    } else {
        args.workers
    };
    let fitter = MlFitter::default();
    let report = run_study(
        &condition,
        args.replications,
        &config,
        assignment,
        workers,
        &fitter,
    )?;

    let mut out = OutputSet::new(&args.out);
    out.add_json("metrics.json", &report)?;
    out.add_text("metrics.csv", io::metrics_csv(&report));
    out.add_text("replications.csv", io::report::replications_csv(&report));
    out.add_json(
        "manifest.json",
        &Manifest::new("simulate", config.seed, serde_json::to_value(args)?),
    )?;
    out.write()?;
    if report.aborted {
        return Err(Error::EstimationFailure(format!(
            "study aborted: {} of {} replications converged within the attempt budget",
            report.replications, args.replications
        )));
    }
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let condition = args.condition.build()?;
    let assignment = AssignmentMode::from_str(&args.assignment)?;
    let dataset = generate_dataset(&condition, args.seed, assignment, condition.n)?;
    let covariate_names: Vec<String> = (1..=condition.covariate_count)
        .map(|i| format!("x{i}"))
        .collect();

    let mut out = OutputSet::new(&args.out);
    out.add_text(
        "dataset.csv",
        io::write_dataset(&dataset.individuals, &covariate_names),
    );
    out.add_json(
        "truth.json",
        &serde_json::json!({
            "condition": condition,
            "true_classes": dataset.true_classes.iter().map(|c| c + 1).collect::<Vec<_>>(),
            "seed": dataset.seed,
            "assignment_mode": dataset.assignment_mode,
        }),
    )?;
    out.add_json(
        "manifest.json",
        &Manifest::new("generate", args.seed, serde_json::to_value(args)?),
    )?;
    out.write()
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let condition = args.condition.build()?;
    let assignment = AssignmentMode::from_str(&args.assignment)?;
    let config = args.fit.to_config();
    let workers = if args.workers == 0 {
        default_workers()
    } else {
        args.workers
    };
    let report = compare_joint_vs_univariate(
        &condition,
        args.replications,
        &config,
        assignment,
        workers,
    )?;

    let mut table = String::from("replication,attempt,accuracy_joint,accuracy_y,accuracy_z\n");
    for row in &report.rows {
        use std::fmt::Write as _;
        let _ = writeln!(
            table,
            "{},{},{:.6},{:.6},{:.6}",
            row.replication, row.attempt, row.accuracy_joint, row.accuracy_y, row.accuracy_z
        );
    }
    let mut out = OutputSet::new(&args.out);
    out.add_json("comparison.json", &report)?;
    out.add_text("comparison.csv", table);
    out.add_json(
        "manifest.json",
        &Manifest::new("compare", config.seed, serde_json::to_value(args)?),
    )?;
    out.write()
}

fn cmd_kappa(args: &KappaArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.data)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("label file is empty"))?;
    if header.trim() != "a,b" {
        return Err(Error::invalid("label file header must be exactly 'a,b'"));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::invalid(format!("line {}: expected 2 fields", i + 2)));
        }
        a.push(parts[0].parse::<usize>().map_err(|_| {
            Error::invalid(format!("line {}: bad label '{}'", i + 2, parts[0]))
        })?);
        b.push(parts[1].parse::<usize>().map_err(|_| {
            Error::invalid(format!("line {}: bad label '{}'", i + 2, parts[1]))
        })?);
    }
    let result = cohen_kappa(&a, &b)?;
    let mut out = OutputSet::new(&args.out);
    out.add_json("kappa.json", &result)?;
    out.add_json(
        "manifest.json",
        &Manifest::new("kappa", 0, serde_json::json!({"data": args.data})),
    )?;
    out.write()
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct RunConfig {
        command: String,
        args: serde_json::Value,
    }
    let text = std::fs::read_to_string(&args.config)?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("invalid run config: {e}")))?;
    match config.command.as_str() {
        "fit" => cmd_fit(&from_value(config.args)?),
        "enumerate" => cmd_enumerate(&from_value(config.args)?),
        "simulate" => cmd_simulate(&from_value(config.args)?),
        "generate" => cmd_generate(&from_value(config.args)?),
        "compare" => cmd_compare(&from_value(config.args)?),
        "kappa" => cmd_kappa(&from_value(config.args)?),
        other => Err(Error::Config(format!("unknown command '{other}'"))),
    }
}

fn from_value<T: serde::de::DeserializeOwned>(value: serde_json::Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid arguments: {e}")))
}
