//! Argument parsing and the subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use csc_ipca_core::baselines::{fit_ife, fit_scm};
use csc_ipca_core::csc::estimate;
use csc_ipca_core::inference::{linspace, ConfidenceBand, ConformalContext, ConformalResult, Grid, NullSpec};
use csc_ipca_core::ipca::FitConfig;
use csc_ipca_core::panel::{classify_treatment, PanelData, Standardization, TreatmentPattern};
use csc_ipca_core::simulation::{simulate_panel, DgpConfig, EstimatorKind};
use csc_ipca_core::tuning::TuneResult;
use rayon::ThreadPool;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::fixtures;
use crate::io::{self, ColumnMap};
use crate::output::{self, FitOutput, IfeOutput, IpcaOutput, NamedMatrix, ParamsOutput, ScmOutput};
use crate::parallel;
use crate::study::{self, StudyConfig, StudyReport};

#[derive(Parser, Debug)]
#[command(name = "csc-ipca", version, about = "Counterfactual and synthetic control estimation with instrumented PCA")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random draw; overrides any seed in a configuration file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Output format of the main result.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a panel from the simulation design and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate treatment effects on a panel CSV.
    Estimate(EstimateArgs),
    /// Choose the number of factors.
    Tune(TuneArgs),
    /// Conformal p-value for a null effect path and per-period confidence intervals.
    Infer(InferArgs),
    /// Monte Carlo study over one design or a grid of designs.
    Mc(McArgs),
    /// Render a saved `mc` report.
    Report(ReportArgs),
    /// Re-run the golden fixtures against their recorded outputs.
    VerifyFixtures(VerifyArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Long-format panel CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "unit")]
    pub unit_col: String,
    #[arg(long, default_value = "time")]
    pub time_col: String,
    #[arg(long, default_value = "y")]
    pub y_col: String,
    #[arg(long, default_value = "d")]
    pub d_col: String,
    /// Covariate columns, comma separated (default: every other column).
    #[arg(long, value_delimiter = ',')]
    pub x_cols: Option<Vec<String>>,
    /// Z-score covariates using control-unit moments.
    #[arg(long)]
    pub standardize: bool,
    /// Append a constant covariate.
    #[arg(long)]
    pub intercept: bool,
}

/// Panel after column selection and the optional transforms.
pub struct Prepared {
    pub panel: PanelData,
    pub covariates: Vec<String>,
    pub pattern: TreatmentPattern,
    pub standardization: Option<Standardization>,
}

impl DataArgs {
    pub fn load(&self) -> CliResult<Prepared> {
        let columns = ColumnMap {
            unit: self.unit_col.clone(),
            time: self.time_col.clone(),
            y: self.y_col.clone(),
            d: self.d_col.clone(),
            x: self.x_cols.clone(),
        };
        let loaded = io::load_panel(&self.data, &columns)?;
        let (mut panel, mut covariates) = (loaded.panel, loaded.covariate_names);
        let pattern = classify_treatment(&panel)?;
        let mut standardization = None;
        if self.standardize {
            let (p, s) = panel.standardized(&pattern.control_units)?;
            panel = p;
            standardization = Some(s);
        }
        if self.intercept {
            panel = panel.with_intercept();
            covariates.push("intercept".into());
        }
        Ok(Prepared { panel, covariates, pattern, standardization })
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitArgs {
    /// Number of latent factors.
    #[arg(long)]
    pub k: Option<usize>,
    /// JSON file with estimation settings (k, tol, max_iter, seed, rank_tol, n_restarts, pre_fit_warn_sd).
    #[arg(long)]
    pub fit_config: Option<PathBuf>,
    /// Extra ALS runs from random starting mappings.
    #[arg(long)]
    pub restarts: Option<usize>,
}

impl FitArgs {
    pub fn resolve(&self, seed: Option<u64>) -> CliResult<FitConfig> {
        let mut fit: FitConfig = match &self.fit_config {
            Some(p) => io::read_json(p)?,
            None => FitConfig::default(),
        };
        if let Some(k) = self.k {
            fit.k = k;
        }
        if let Some(r) = self.restarts {
            fit.n_restarts = r;
        }
        if let Some(s) = seed {
            fit.seed = s;
        }
        Ok(fit)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ipca,
    Ife,
    Scm,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TuneArg {
    Bootstrap,
    Loo,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TuneOptions {
    /// Largest number of factors tried (default: min(5, L, shortest T_pre, N_ctrl)).
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Bootstrap replications.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InferOptions {
    /// Confidence level of the per-period intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Candidate effects `lo:hi:n` (default: 41 points spanning ATT +/- 5 pre-fit RMSE).
    #[arg(long)]
    pub grid: Option<String>,
    /// Exponent of the test statistic.
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
}

impl InferOptions {
    fn grid(&self) -> CliResult<Grid> {
        self.grid.as_deref().map_or(Ok(Grid::default()), parse_grid)
    }
}

pub fn parse_grid(spec: &str) -> CliResult<Grid> {
    let bad = || CliError::Usage(format!("--grid expects lo:hi:n with lo < hi and n >= 2, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !lo.is_finite() || !hi.is_finite() || lo >= hi || n < 2 {
        return Err(bad());
    }
    Ok(Grid::Explicit { values: linspace(lo, hi, n) })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    /// Design JSON (every field optional).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the truth sidecar (default: next to --out as `<name>.truth.json`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = Method::Ipca)]
    pub method: Method,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Pick k from the data before estimating.
    #[arg(long, value_enum)]
    pub tune: Option<TuneArg>,
    #[command(flatten)]
    pub tune_options: TuneOptions,
    /// Add conformal confidence intervals (CSC-IPCA, block adoption).
    #[arg(long)]
    pub infer: bool,
    #[command(flatten)]
    pub infer_options: InferOptions,
    /// Gap-plot CSV (default: next to --out as `<name>.gap.csv`).
    #[arg(long)]
    pub gap: Option<PathBuf>,
    /// Write the normalized IPCA parameters to this JSON file.
    #[arg(long)]
    pub dump_params: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = TuneArg::Bootstrap)]
    pub method: TuneArg,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub tune_options: TuneOptions,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Null effect path: a constant, or a JSON file holding an array (or `{"theta0": [...]}`).
    #[arg(long, default_value = "0")]
    pub null: String,
    #[command(flatten)]
    pub infer_options: InferOptions,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct McArgs {
    /// Study JSON: a Monte Carlo configuration plus an optional `grid` of designs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated list from ipca, ife, scm.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// Number of factors used by the factor estimators.
    #[arg(long)]
    pub k: Option<usize>,
    /// Also write the text table here.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    /// JSON written by `mc`.
    pub report: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct VerifyArgs {
    /// Fixture directory holding `manifest.json`.
    #[arg(long, default_value = fixtures::DEFAULT_DIR)]
    pub dir: PathBuf,
}

/// Every run's output carries the resolved configuration.
#[derive(Debug, Serialize)]
struct Echo<'a, A: Serialize, C: Serialize> {
    command: &'static str,
    seed: Option<u64>,
    args: &'a A,
    resolved: C,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let g = cli.global;
    let pool = parallel::thread_pool(g.threads)?;
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&g, &a),
        Command::Estimate(a) => cmd_estimate(&g, &a, &pool),
        Command::Tune(a) => cmd_tune(&g, &a, &pool),
        Command::Infer(a) => cmd_infer(&g, &a, &pool),
        Command::Mc(a) => cmd_mc(&g, &a, &pool),
        Command::Report(a) => cmd_report(&g, &a),
        Command::VerifyFixtures(a) => cmd_verify(&g, &a),
    }
}

fn format_or(g: &Global, default: Format, allowed: &[Format], command: &str) -> CliResult<Format> {
    let f = g.format.unwrap_or(default);
    if allowed.contains(&f) {
        Ok(f)
    } else {
        Err(CliError::Usage(format!("{command} does not support --format {f:?}").to_lowercase()))
    }
}

/// `dir/stem.suffix` next to the main output file.
fn sidecar(out: Option<&Path>, suffix: &str) -> Option<PathBuf> {
    let out = out?;
    let stem = out.file_stem()?.to_string_lossy().into_owned();
    Some(out.with_file_name(format!("{stem}.{suffix}")))
}

#[derive(Debug, Serialize)]
struct Truth<'a> {
    config: &'a DgpConfig,
    observed_covariates: usize,
    periods_pre: usize,
    periods_post: usize,
    treated_units: Vec<String>,
    true_att: &'a [f64],
    true_effects: NamedMatrix,
    gamma: NamedMatrix,
    factors: NamedMatrix,
    beta: Vec<f64>,
    unit_effects: &'a [f64],
    time_effects: &'a [f64],
}

fn cmd_simulate(g: &Global, a: &SimulateArgs) -> CliResult<()> {
    format_or(g, Format::Csv, &[Format::Csv], "simulate")?;
    let mut config: DgpConfig = match &a.config {
        Some(p) => io::read_json(p)?,
        None => DgpConfig::default(),
    };
    if let Some(s) = g.seed {
        config.seed = s;
    }
    let sim = simulate_panel(&config)?;
    let names = io::default_names(sim.panel.n_covariates());
    let mut csv = Vec::new();
    io::write_panel_csv(&sim.panel, &names, &mut csv).map_err(|e| CliError::io(Path::new("<panel>"), e))?;
    io::emit(g.out.as_deref(), &csv)?;

    let truth = Truth {
        config: &config,
        observed_covariates: config.observed_covariates(),
        periods_pre: config.t_pre,
        periods_post: config.t_post,
        treated_units: sim.panel.unit_ids()[config.n_ctrl..].to_vec(),
        true_att: &sim.true_att,
        true_effects: NamedMatrix::new("treated_unit", "post_period", &sim.true_effects),
        gamma: NamedMatrix::new("covariate", "factor", &sim.latent.gamma),
        factors: NamedMatrix::new("factor", "period", &sim.latent.factors),
        beta: sim.latent.beta.iter().copied().collect(),
        unit_effects: &sim.latent.unit_effects,
        time_effects: &sim.latent.time_effects,
    };
    if let Some(path) = a.truth.clone().or_else(|| sidecar(g.out.as_deref(), "truth.json")) {
        io::emit(Some(&path), io::to_json_string(&truth).as_bytes())?;
    }
    Ok(())
}

fn default_k_max(p: &Prepared) -> usize {
    let shortest = p.pattern.t_pre.iter().copied().min().unwrap_or(0);
    5.min(p.panel.n_covariates()).min(shortest).min(p.pattern.n_control()).max(1)
}

fn run_tuning(
    p: &Prepared,
    method: TuneArg,
    opts: &TuneOptions,
    fit: &FitConfig,
    seed: u64,
    pool: &ThreadPool,
) -> CliResult<TuneResult> {
    let k_max = opts.kmax.unwrap_or_else(|| default_k_max(p));
    Ok(match method {
        TuneArg::Bootstrap => parallel::tune_bootstrap(&p.panel, k_max, opts.reps, fit, seed, pool)?,
        TuneArg::Loo => parallel::tune_loo(&p.panel, k_max, fit, pool)?,
    })
}

#[derive(Debug, Serialize)]
struct Inference {
    periods: Vec<String>,
    band: ConfidenceBand,
}

#[derive(Debug, Serialize)]
struct EstimateOutput<'a> {
    config: Echo<'a, EstimateArgs, &'a FitConfig>,
    standardization: Option<&'a Standardization>,
    tuning: Option<TuneResult>,
    fit: FitOutput,
    inference: Option<Inference>,
}

fn post_labels(panel: &PanelData, pattern: &TreatmentPattern) -> Vec<String> {
    match pattern.block_t_pre() {
        Some(pre) => panel.time_ids()[pre..].to_vec(),
        None => {
            let longest = pattern.t_pre.iter().map(|&p| panel.n_periods() - p).max().unwrap_or(0);
            (0..longest).map(|e| e.to_string()).collect()
        }
    }
}

fn cmd_estimate(g: &Global, a: &EstimateArgs, pool: &ThreadPool) -> CliResult<()> {
    let format = format_or(g, Format::Json, &[Format::Json, Format::Csv], "estimate")?;
    let p = a.data.load()?;
    let mut fit_cfg = a.fit.resolve(g.seed)?;
    if a.method != Method::Ipca && (a.infer || a.dump_params.is_some()) {
        return Err(CliError::Usage("--infer and --dump-params are available for --method ipca only".into()));
    }
    let tuning = match a.tune {
        Some(method) => {
            let result = run_tuning(&p, method, &a.tune_options, &fit_cfg, g.seed.unwrap_or(fit_cfg.seed), pool)?;
            fit_cfg.k = result.k_best;
            Some(result)
        }
        None => None,
    };
    let (fit, fitted) = match a.method {
        Method::Ipca => {
            let fit = estimate(&p.panel, &fit_cfg)?;
            if let Some(path) = &a.dump_params {
                let params = ParamsOutput::new(&p.panel, &p.covariates, &fit.gamma_treat_norm, &fit.factors_norm);
                io::emit(Some(path), io::to_json_string(&params).as_bytes())?;
            }
            let fitted = fit.fitted.clone();
            (FitOutput::Ipca(Box::new(IpcaOutput::new(&p.panel, &p.covariates, &fit))), fitted)
        }
        Method::Ife => {
            let fit = fit_ife(&p.panel, &fit_cfg)?;
            let fitted = fit.fitted.clone();
            (FitOutput::Ife(IfeOutput::new(&p.panel, &p.covariates, &p.pattern, &fit)), fitted)
        }
        Method::Scm => {
            let fit = fit_scm(&p.panel)?;
            let fitted = fit.fitted.clone();
            (FitOutput::Scm(ScmOutput::new(&p.panel, &p.pattern, &fit)), fitted)
        }
    };
    let inference = if a.infer {
        let grid = a.infer_options.grid()?;
        let band =
            parallel::confidence_band(&p.panel, &grid, a.infer_options.level, &fit_cfg, a.infer_options.q, pool)?;
        Some(Inference { periods: post_labels(&p.panel, &p.pattern), band })
    } else {
        None
    };
    let gap = output::gap_csv(&output::gap_rows(&p.panel, &p.pattern, &fitted, inference.as_ref().map(|i| &i.band)));
    match format {
        Format::Csv => io::emit(g.out.as_deref(), &gap),
        _ => {
            let out = EstimateOutput {
                config: Echo { command: "estimate", seed: g.seed, args: a, resolved: &fit_cfg },
                standardization: p.standardization.as_ref(),
                tuning,
                fit,
                inference,
            };
            io::emit(g.out.as_deref(), io::to_json_string(&out).as_bytes())?;
            if let Some(path) = a.gap.clone().or_else(|| sidecar(g.out.as_deref(), "gap.csv")) {
                io::emit(Some(&path), &gap)?;
            }
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct TuneOutput<'a> {
    config: Echo<'a, TuneArgs, &'a FitConfig>,
    result: TuneResult,
}

fn mse_csv(result: &TuneResult) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "mse"]).expect("in-memory CSV");
    for (k, m) in result.mse_by_k.iter().enumerate() {
        w.write_record([(k + 1).to_string(), m.to_string()]).expect("in-memory CSV");
    }
    w.into_inner().expect("in-memory CSV")
}

fn cmd_tune(g: &Global, a: &TuneArgs, pool: &ThreadPool) -> CliResult<()> {
    let format = format_or(g, Format::Json, &[Format::Json, Format::Csv], "tune")?;
    let p = a.data.load()?;
    let fit = a.fit.resolve(g.seed)?;
    let result = run_tuning(&p, a.method, &a.tune_options, &fit, g.seed.unwrap_or(fit.seed), pool)?;
    match format {
        Format::Csv => io::emit(g.out.as_deref(), &mse_csv(&result)),
        _ => {
            let csv = mse_csv(&result);
            let out = TuneOutput { config: Echo { command: "tune", seed: g.seed, args: a, resolved: &fit }, result };
            io::emit(g.out.as_deref(), io::to_json_string(&out).as_bytes())?;
            if let Some(path) = sidecar(g.out.as_deref(), "mse.csv") {
                io::emit(Some(&path), &csv)?;
            }
            Ok(())
        }
    }
}

fn parse_null(spec: &str, t_post: usize) -> CliResult<NullSpec> {
    if let Ok(v) = spec.trim().parse::<f64>() {
        if !v.is_finite() {
            return Err(CliError::Usage(format!("--null must be finite, got {spec}")));
        }
        return Ok(NullSpec::constant(v, t_post));
    }
    let path = Path::new(spec);
    let value: serde_json::Value = io::read_json(path)?;
    let theta = value.get("theta0").cloned().unwrap_or(value);
    let theta0: Vec<f64> = serde_json::from_value(theta).map_err(|e| CliError::Config {
        source_name: spec.to_string(),
        message: format!("expected an array of numbers or {{\"theta0\": [...]}}: {e}"),
    })?;
    Ok(NullSpec { theta0 })
}

#[derive(Debug, Serialize)]
struct InferOutput<'a> {
    config: Echo<'a, InferArgs, &'a FitConfig>,
    periods: Vec<String>,
    test: ConformalResult,
    band: ConfidenceBand,
}

fn cmd_infer(g: &Global, a: &InferArgs, pool: &ThreadPool) -> CliResult<()> {
    let format = format_or(g, Format::Json, &[Format::Json, Format::Csv], "infer")?;
    let p = a.data.load()?;
    let fit = a.fit.resolve(g.seed)?;
    let ctx = ConformalContext::new(&p.panel, &fit)?;
    let null = parse_null(&a.null, ctx.t_post())?;
    let test = ctx.pvalue(&null, a.infer_options.q)?;
    let grid = a.infer_options.grid()?;
    let band = parallel::confidence_band(&p.panel, &grid, a.infer_options.level, &fit, a.infer_options.q, pool)?;
    let periods = post_labels(&p.panel, &p.pattern);
    let csv = output::band_csv(&periods, &band);
    match format {
        Format::Csv => io::emit(g.out.as_deref(), &csv),
        _ => {
            let out = InferOutput {
                config: Echo { command: "infer", seed: g.seed, args: a, resolved: &fit },
                periods,
                test,
                band,
            };
            io::emit(g.out.as_deref(), io::to_json_string(&out).as_bytes())?;
            if let Some(path) = sidecar(g.out.as_deref(), "band.csv") {
                io::emit(Some(&path), &csv)?;
            }
            Ok(())
        }
    }
}

pub fn resolve_study(a: &McArgs, seed: Option<u64>) -> CliResult<StudyConfig> {
    let mut study = match &a.config {
        Some(p) => StudyConfig::from_json(io::read_json(p)?, &p.display().to_string())?,
        None => StudyConfig::from_json(serde_json::json!({}), "defaults")?,
    };
    if let Some(r) = a.reps {
        study.base.n_reps = r;
    }
    if let Some(k) = a.k {
        study.base.k = Some(k);
    }
    if let Some(list) = &a.estimators {
        study.base.estimators = list
            .iter()
            .map(|s| {
                EstimatorKind::parse(s)
                    .ok_or_else(|| CliError::Usage(format!("unknown estimator {s:?}; use ipca, ife or scm")))
            })
            .collect::<CliResult<_>>()?;
    }
    if let Some(s) = seed {
        study.base.dgp.seed = s;
    }
    for cell in study.cells() {
        cell.validate()?;
    }
    Ok(study)
}

fn emit_study(g: &Global, report: &StudyReport, format: Format) -> CliResult<()> {
    match format {
        Format::Json => io::emit(g.out.as_deref(), io::to_json_string(report).as_bytes()),
        Format::Csv => io::emit(g.out.as_deref(), &study::render_csv(report)),
        Format::Text => io::emit(g.out.as_deref(), study::render_table(report).as_bytes()),
    }
}

fn cmd_mc(g: &Global, a: &McArgs, pool: &ThreadPool) -> CliResult<()> {
    let format = format_or(g, Format::Json, &[Format::Json, Format::Csv, Format::Text], "mc")?;
    let config = resolve_study(a, g.seed)?;
    let report = study::run_study(&config, pool)?;
    emit_study(g, &report, format)?;
    if let Some(path) = &a.table {
        io::emit(Some(path), study::render_table(&report).as_bytes())?;
    }
    Ok(())
}

fn cmd_report(g: &Global, a: &ReportArgs) -> CliResult<()> {
    let format = format_or(g, Format::Text, &[Format::Json, Format::Csv, Format::Text], "report")?;
    let report: StudyReport = io::read_json(&a.report)?;
    emit_study(g, &report, format)
}

fn cmd_verify(g: &Global, a: &VerifyArgs) -> CliResult<()> {
    let format = format_or(g, Format::Text, &[Format::Json, Format::Text], "verify-fixtures")?;
    let report = fixtures::verify_fixtures(&a.dir)?;
    let text = match format {
        Format::Json => io::to_json_string(&report),
        _ => report.render(),
    };
    io::emit(g.out.as_deref(), text.as_bytes())?;
    fixtures::require_pass(&report)
}
