//! `alert-surface` command-line tool.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 non-convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alert_surface::alert::{decide, med_contour, AlertOutcome};
use alert_surface::bootstrap::{confidence_surface, simulate_dataset, Algorithm};
use alert_surface::estimator::{fit_gamlss, FitOptions};
use alert_surface::io::{
    parse_dataset_csv, save_contour_csv, save_dataset_csv, save_json, save_surface_csv, threads_from_env,
    with_threads, AnalysisConfig, ColumnMap, FitReport, GridSection,
};
use alert_surface::model::{
    AxisSpec, Dataset, Dimension, FamilyRegistry, Form, Hypothesis, MeanModel, SigmaDesign,
};
use alert_surface::rng::Substream;
use alert_surface::simlab::{build_scenario, run_study, ScenarioConfig, ScenarioSpec};
use alert_surface::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "alert-surface", version, about = "Alert detection on time-dose response surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the mean and log-σ model to a dataset.
    Fit(FitCmd),
    /// Test a hypothesis and write the band and the decision.
    Test(TestCmd),
    /// Test over the whole surface and write the alert curve.
    AlertCurve(TestCmd),
    /// MED contour of a fitted or given mean model.
    Med(MedCmd),
    /// Run a Monte Carlo study.
    Simulate(SimulateCmd),
    /// Draw one dataset from a scenario.
    GenData(GenDataCmd),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// JSON analysis configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "x1")]
    x1_col: String,
    #[arg(long, default_value = "x2")]
    x2_col: String,
    #[arg(long, default_value = "y")]
    y_col: String,
    /// Reference point `x1,x2` for centered hypotheses (default: data minima).
    #[arg(long, value_parser = parse_pair)]
    reference: Option<(f64, f64)>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct ModelArgs {
    /// Mean-model family (td2pll, emax2).
    #[arg(long)]
    family: Option<String>,
    /// `constant`, `complex`, or a comma-separated term list.
    #[arg(long)]
    sigma_terms: Option<String>,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 2000)]
    max_iterations: usize,
}

impl FitArgs {
    fn options(&self) -> FitOptions {
        FitOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            restarts: self.restarts,
            start: None,
        }
    }
}

#[derive(Args)]
struct BootArgs {
    #[arg(long)]
    b1: Option<usize>,
    #[arg(long)]
    b2: Option<usize>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    retry_limit: Option<usize>,
}

#[derive(Args)]
struct GridArgs {
    /// x1 grid as `min,max,points`.
    #[arg(long, value_parser = parse_axis)]
    grid_x1: Option<AxisSpec>,
    /// x2 grid as `min,max,points`.
    #[arg(long, value_parser = parse_axis)]
    grid_x2: Option<AxisSpec>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Normal,
    Fast,
}

#[derive(Clone, Copy, ValueEnum)]
enum DimensionArg {
    FixedX1,
    FixedX2,
    Surface,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Centered,
    Undercut,
    Exceeded,
}

#[derive(Args)]
struct FitCmd {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "fit.json")]
    out: PathBuf,
}

#[derive(Args)]
struct TestCmd {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    dimension: Option<DimensionArg>,
    /// Value of the fixed covariate for fixed-x1 / fixed-x2 tests.
    #[arg(long)]
    fixed_value: Option<f64>,
    #[arg(long, value_enum)]
    form: Option<FormArg>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    boot: BootArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// Directory receiving `surface.csv` and `alert.json`.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MedCmd {
    /// Dataset to fit; omit when `--theta` is given.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mean parameters, comma-separated, instead of a fit.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Option<Vec<f64>>,
    #[arg(long)]
    p: f64,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value = "contour.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Built-in scenario name, e.g. "1 - Full - Simple".
    #[arg(long, conflicts_with = "scenario_config")]
    scenario: Option<String>,
    /// JSON scenario description.
    #[arg(long)]
    scenario_config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateCmd {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    runs: usize,
    /// σ structure assumed by the fits.
    #[arg(long)]
    fit_sigma_terms: Option<String>,
    #[command(flatten)]
    boot: BootArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value = "summary.json")]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataCmd {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "data.csv")]
    out: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonConvergence { .. } | Error::BootstrapExhausted { .. } => 4,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        &[a, b] => Ok((a, b)),
        _ => Err("expected two comma-separated numbers".into()),
    }
}

fn parse_axis(s: &str) -> Result<AxisSpec, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [min, max, points] = parts.as_slice() else {
        return Err("expected min,max,points".into());
    };
    Ok(AxisSpec::new(
        min.parse().map_err(|e| format!("{e}"))?,
        max.parse().map_err(|e| format!("{e}"))?,
        points.parse().map_err(|e| format!("{e}"))?,
    ))
}

fn load_config(path: Option<&Path>) -> CliResult<AnalysisConfig> {
    match path {
        Some(p) => AnalysisConfig::load(p).map_err(|e| usage(format!("config {}: {e}", p.display()))),
        None => Ok(AnalysisConfig::default()),
    }
}

fn apply_model(cfg: &mut AnalysisConfig, m: &ModelArgs) -> CliResult {
    if let Some(f) = &m.family {
        cfg.model.family = f.clone();
    }
    if let Some(s) = &m.sigma_terms {
        cfg.model.sigma_terms = SigmaDesign::parse(s).map_err(|e| usage(e.to_string()))?;
    }
    Ok(())
}

fn apply_boot(cfg: &mut AnalysisConfig, b: &BootArgs) {
    let s = &mut cfg.bootstrap;
    if let Some(v) = b.b1 {
        s.b1 = v;
    }
    if let Some(v) = b.b2 {
        s.b2 = v;
    }
    if let Some(v) = b.algorithm {
        s.algorithm = match v {
            AlgorithmArg::Normal => Algorithm::Normal,
            AlgorithmArg::Fast => Algorithm::Fast,
        };
    }
    if b.seed.is_some() {
        s.seed = b.seed;
    }
    if let Some(v) = b.retry_limit {
        s.retry_limit = v;
    }
}

fn apply_grid(cfg: &mut AnalysisConfig, g: &GridArgs, data: Option<&Dataset>) -> CliResult {
    if g.grid_x1.is_none() && g.grid_x2.is_none() {
        return Ok(());
    }
    let fallback = |d: (f64, f64)| AxisSpec::new(d.0, d.1, alert_surface::io::DEFAULT_GRID_POINTS);
    let current = cfg.grid.or_else(|| {
        data.map(|d| GridSection {
            x1: fallback(d.domain_x1()),
            x2: fallback(d.domain_x2()),
        })
    });
    let (x1, x2) = match (g.grid_x1, g.grid_x2, current) {
        (Some(a), Some(b), _) => (a, b),
        (Some(a), None, Some(c)) => (a, c.x2),
        (None, Some(b), Some(c)) => (c.x1, b),
        _ => return Err(usage("both --grid-x1 and --grid-x2 are needed without a data grid")),
    };
    cfg.grid = Some(GridSection { x1, x2 });
    Ok(())
}

fn registry() -> FamilyRegistry {
    FamilyRegistry::default()
}

fn load_data(args: &DataArgs) -> CliResult<Dataset> {
    let map = ColumnMap::new(&args.x1_col, &args.x2_col, &args.y_col);
    let data = parse_dataset_csv(&args.data, &map)?;
    Ok(match args.reference {
        Some(r) => data.with_reference(r)?,
        None => data,
    })
}

fn cmd_fit(c: &FitCmd) -> CliResult {
    let mut cfg = load_config(c.data.config.as_deref())?;
    apply_model(&mut cfg, &c.data.model)?;
    let family = cfg.family(&registry()).map_err(|e| usage(e.to_string()))?;
    let data = load_data(&c.data)?;
    let fit = fit_gamlss(&data, &family, &cfg.model.sigma_terms, &c.data.model.fit.options())?;
    save_json(&c.out, &FitReport::from(&fit))?;
    Ok(())
}

fn hypothesis_from(cfg: &AnalysisConfig, c: &TestCmd, force_surface: bool) -> CliResult<Hypothesis> {
    let base = cfg.hypothesis;
    let base_value = match base.map(|h| h.dimension) {
        Some(Dimension::FixedX1(v)) | Some(Dimension::FixedX2(v)) => Some(v),
        _ => None,
    };
    let value = || {
        c.fixed_value
            .or(base_value)
            .ok_or_else(|| usage("--fixed-value is required for fixed-covariate tests"))
    };
    let dimension = match c.dimension {
        Some(DimensionArg::Surface) => Dimension::Surface,
        Some(DimensionArg::FixedX1) => Dimension::FixedX1(value()?),
        Some(DimensionArg::FixedX2) => Dimension::FixedX2(value()?),
        None => match base.map(|h| h.dimension) {
            Some(Dimension::FixedX1(_)) => Dimension::FixedX1(value()?),
            Some(Dimension::FixedX2(_)) => Dimension::FixedX2(value()?),
            Some(Dimension::Surface) => Dimension::Surface,
            None if force_surface => Dimension::Surface,
            None => return Err(usage("no hypothesis dimension given")),
        },
    };
    let form = match c.form {
        Some(FormArg::Centered) => Form::Centered,
        Some(FormArg::Undercut) => Form::Undercut,
        Some(FormArg::Exceeded) => Form::Exceeded,
        None => base.map(|h| h.form).ok_or_else(|| usage("no hypothesis form given"))?,
    };
    let lambda = c
        .lambda
        .or(base.map(|h| h.lambda))
        .ok_or_else(|| usage("no threshold lambda given"))?;
    let alpha = c.alpha.or(base.map(|h| h.alpha)).unwrap_or(0.05);
    let h = Hypothesis::new(dimension, form, lambda, alpha).map_err(|e| usage(e.to_string()))?;
    Ok(if force_surface { h.to_surface() } else { h })
}

fn cmd_test(c: &TestCmd, force_surface: bool, threads: Option<usize>) -> CliResult {
    let mut cfg = load_config(c.data.config.as_deref())?;
    apply_model(&mut cfg, &c.data.model)?;
    apply_boot(&mut cfg, &c.boot);
    let hyp = hypothesis_from(&cfg, c, force_surface)?;
    cfg.hypothesis = Some(hyp);
    let family = cfg.family(&registry()).map_err(|e| usage(e.to_string()))?;
    let boot = cfg
        .bootstrap_config(c.data.model.fit.options())
        .map_err(|e| usage(e.to_string()))?;
    let data = load_data(&c.data)?;
    apply_grid(&mut cfg, &c.grid, Some(&data))?;
    let grid = cfg.eval_grid(&data)?;
    let fit = fit_gamlss(&data, &family, &cfg.model.sigma_terms, &boot.fit)?;
    let surface = with_threads(threads, || {
        confidence_surface(&data, &fit, &hyp, &grid, &boot, hyp.side())
    })??;
    let outcome: AlertOutcome = decide(&surface, &hyp)?;
    std::fs::create_dir_all(&c.out_dir).map_err(Error::from)?;
    save_surface_csv(c.out_dir.join("surface.csv"), &surface)?;
    let report = json!({
        "reject": outcome.reject,
        "alert_dose": outcome.alert_dose,
        "alert_curve": outcome.alert_curve,
        "t_est": outcome.t_est,
        "c": outcome.c,
        "lambda": outcome.lambda,
        "alpha": outcome.alpha,
        "hypothesis": hyp,
        "fit": FitReport::from(&fit),
        "config": cfg,
        "seed": boot.seed,
    });
    save_json(c.out_dir.join("alert.json"), &report)?;
    Ok(())
}

fn cmd_med(c: &MedCmd) -> CliResult {
    let mut cfg = load_config(c.config.as_deref())?;
    apply_model(&mut cfg, &c.model)?;
    let family = cfg.family(&registry()).map_err(|e| usage(e.to_string()))?;
    let (model, data) = match (&c.theta, &c.data) {
        (Some(theta), _) => (MeanModel::new(family, theta.clone())?, None),
        (None, Some(path)) => {
            let data = parse_dataset_csv(path, &ColumnMap::default())?;
            let fit = fit_gamlss(&data, &family, &cfg.model.sigma_terms, &c.model.fit.options())?;
            (fit.mean_model()?, Some(data))
        }
        (None, None) => return Err(usage("med needs --data or --theta")),
    };
    apply_grid(&mut cfg, &c.grid, data.as_ref())?;
    let grid = match (&data, cfg.grid) {
        (Some(d), _) => cfg.eval_grid(d)?,
        (None, Some(g)) => alert_surface::model::EvalGrid::from_axes(g.x1, g.x2)?,
        (None, None) => return Err(usage("med with --theta needs --grid-x1 and --grid-x2")),
    };
    let contour = med_contour(&model, &grid, c.p)?;
    save_contour_csv(&c.out, &contour.points)?;
    Ok(())
}

fn scenario_from(args: &ScenarioArgs) -> CliResult<ScenarioSpec> {
    match (&args.scenario, &args.scenario_config) {
        (Some(name), None) => build_scenario(name).map_err(|e| usage(e.to_string())),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(Error::from)?;
            let sc: ScenarioConfig = serde_json::from_str(&text).map_err(Error::from)?;
            Ok(sc.build(&registry())?)
        }
        _ => Err(usage("give exactly one of --scenario or --scenario-config")),
    }
}

fn cmd_simulate(c: &SimulateCmd, threads: Option<usize>) -> CliResult {
    let seed = c.boot.seed.ok_or_else(|| usage("simulate requires --seed"))?;
    let mut cfg = load_config(c.config.as_deref())?;
    apply_boot(&mut cfg, &c.boot);
    let boot = cfg
        .bootstrap_config(c.fit.options())
        .map_err(|e| usage(e.to_string()))?;
    let mut spec = scenario_from(&c.scenario)?;
    if let Some(s) = &c.fit_sigma_terms {
        spec = spec.with_fit_sigma(SigmaDesign::parse(s).map_err(|e| usage(e.to_string()))?);
    }
    let summary = with_threads(threads, || run_study(&spec, c.runs, &boot, seed))??;
    save_json(&c.out, &summary)?;
    Ok(())
}

fn cmd_gen_data(c: &GenDataCmd) -> CliResult {
    let seed = c.seed.ok_or_else(|| usage("gen-data requires --seed"))?;
    let spec = scenario_from(&c.scenario)?;
    let data = simulate_dataset(&spec.design, &spec.truth, &spec.sigma, Substream::root(seed), &spec.frame)?;
    save_dataset_csv(&c.out, &data)?;
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let threads = threads_from_env().map_err(|e| usage(e.to_string()))?;
    match &cli.command {
        Command::Fit(c) => cmd_fit(c),
        Command::Test(c) => cmd_test(c, false, threads),
        Command::AlertCurve(c) => cmd_test(c, true, threads),
        Command::Med(c) => cmd_med(c),
        Command::Simulate(c) => cmd_simulate(c, threads),
        Command::GenData(c) => cmd_gen_data(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
