//! Command-line front end: loads models and data, runs the tune pass and the
//! formal AIS run, and writes CSV (plus optional SVG) results.

pub mod demo;
pub mod output;
pub mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use thiserror::Error;

use rdeval::ais::{make_schedule, rd_curve, AisError, RdPoint, Schedule, ScheduleShape, DEFAULT_TAU};
use rdeval::analytic::{AnalyticError, ExactPoint, LinearAnalytic};
use rdeval::bdmc::{bdmc_gap, simulate_pairs, BdmcError};
use rdeval::hmc::{tune_step_sizes, HmcConfig, HmcError, HmcParams, TuneProfile};
use rdeval::model::{load_dataset, load_model, ModelError, ModelFileError, ModelSpec};
use rdeval::oracle::{OracleError, QuadratureGrid, QuadratureTable};

use output::{write_rows, CurveRow, GapRow};
use plot::Series;

/// Failure category; each maps to a stable exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Model(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Model(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

fn model_error(e: &ModelError) -> CliError {
    match e {
        ModelError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        _ => CliError::Model(e.to_string()),
    }
}

fn hmc_error(e: &HmcError) -> CliError {
    match e {
        HmcError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        HmcError::Model(m) => model_error(m),
        _ => CliError::Config(e.to_string()),
    }
}

fn ais_error(e: &AisError) -> CliError {
    match e {
        AisError::NonFiniteWeight { .. } => CliError::Numeric(e.to_string()),
        AisError::Model(m) => model_error(m),
        AisError::Hmc(h) => hmc_error(h),
        AisError::Schedule(_) | AisError::Invalid(_) => CliError::Config(e.to_string()),
    }
}

fn analytic_error(e: &AnalyticError) -> CliError {
    match e {
        AnalyticError::Beta(_) => CliError::Config(e.to_string()),
        AnalyticError::Linalg(_) => CliError::Numeric(e.to_string()),
        _ => CliError::Model(e.to_string()),
    }
}

fn oracle_error(e: &OracleError) -> CliError {
    match e {
        OracleError::Grid(_) | OracleError::Beta(_) => CliError::Config(e.to_string()),
        OracleError::Model(m) => model_error(m),
        _ => CliError::Model(e.to_string()),
    }
}

fn bdmc_error(e: &BdmcError) -> CliError {
    match e {
        BdmcError::Ais { pair, source } => match ais_error(source) {
            CliError::Config(m) => CliError::Config(format!("pair {pair}: {m}")),
            CliError::Model(m) => CliError::Model(format!("pair {pair}: {m}")),
            CliError::Numeric(m) => CliError::Numeric(format!("pair {pair}: {m}")),
        },
        BdmcError::Model(m) => model_error(m),
        BdmcError::UnsupportedDistortion => CliError::Model(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

#[derive(Parser, Debug)]
#[command(name = "rdeval", version, about = "Rate-distortion curves of decoder-based generative models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// AIS rate-distortion curve over a dataset.
    Rd(RdArgs),
    /// Forward/reverse AIS sandwich on data simulated from the model.
    Bdmc(BdmcArgs),
    /// Closed-form curve for a linear decoder with a standard gaussian prior.
    Analytic(ExactArgs),
    /// Quadrature curve for models with a 1-D or 2-D latent.
    Oracle(OracleArgs),
    /// Exact curves of three built-in toy models plus an overlay plot.
    Demo2d(DemoArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Sigmoid,
    Linear,
}

#[derive(Args, Debug, Clone)]
pub struct ScheduleArgs {
    /// Number of intermediate distributions.
    #[arg(long, default_value_t = 1000)]
    pub n_dists: usize,
    /// Final inverse temperature [default: 36000 for latent dim <= 10, else 3000].
    #[arg(long)]
    pub beta_max: Option<f64>,
    #[arg(long, value_enum, default_value_t = ShapeArg::Sigmoid)]
    pub schedule: ShapeArg,
    /// Sigmoid schedule half-range.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Number of schedule indices written to the CSV.
    #[arg(long, default_value_t = 20)]
    pub report_points: usize,
}

impl ScheduleArgs {
    fn shape(&self) -> ScheduleShape {
        match self.schedule {
            ShapeArg::Sigmoid => ScheduleShape::Sigmoid { tau: self.tau },
            ShapeArg::Linear => ScheduleShape::Linear,
        }
    }

    fn build(&self, model: &ModelSpec<f64>) -> Result<Schedule<f64>, CliError> {
        let beta_max = self.beta_max.unwrap_or(if model.latent_dim() <= 10 { 36000.0 } else { 3000.0 });
        make_schedule(self.n_dists, beta_max, self.shape(), self.report_points)
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Args, Debug, Clone)]
pub struct SamplerArgs {
    /// Independent AIS chains per data point.
    #[arg(long, default_value_t = 40)]
    pub chains: usize,
    /// Leapfrog steps per HMC transition.
    #[arg(long, default_value_t = 20)]
    pub leapfrog: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

impl SamplerArgs {
    fn params(&self, model: &ModelSpec<f64>) -> Result<HmcParams<f64>, CliError> {
        let init = HmcParams::<f64>::for_latent_dim(model.latent_dim());
        HmcParams::new(self.leapfrog, init.step_size, init.target_accept).map_err(|e| hmc_error(&e))
    }
}

#[derive(Args, Debug, Clone)]
pub struct RdArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV dataset, one point per line.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Reuse a step-size profile instead of running the tune pass.
    #[arg(long)]
    pub tune_in: Option<PathBuf>,
    /// Save the step-size profile from the tune pass.
    #[arg(long)]
    pub tune_out: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct BdmcArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated annealing endpoints, one sandwich each.
    #[arg(long, value_delimiter = ',', required = true)]
    pub beta_targets: Vec<f64>,
    /// Simulated pairs per endpoint.
    #[arg(long, default_value_t = 16)]
    pub pairs: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_dists: usize,
    #[arg(long, value_enum, default_value_t = ShapeArg::Sigmoid)]
    pub schedule: ShapeArg,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ExactArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct OracleArgs {
    #[command(flatten)]
    pub exact: ExactArgs,
    /// Quadrature nodes per latent dimension (odd).
    #[arg(long, default_value_t = 2001)]
    pub quad_nodes: usize,
    /// Quadrature box half-width in prior standard deviations.
    #[arg(long, default_value_t = 10.0)]
    pub quad_half_width: f64,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Args, Debug, Clone)]
pub struct DemoArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let threads = match &cli.command {
        Command::Rd(a) => a.sampler.threads,
        Command::Bdmc(a) => a.sampler.threads,
        Command::Oracle(a) => a.threads,
        Command::Demo2d(a) => a.threads,
        Command::Analytic(_) => 1,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {threads} worker threads: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Rd(a) => cmd_rd(a),
        Command::Bdmc(a) => cmd_bdmc(a),
        Command::Analytic(a) => cmd_analytic(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Demo2d(a) => demo::run(&a.out).map(|_| ()),
    })
}

fn read_model(path: &Path) -> Result<ModelSpec<f64>, CliError> {
    load_model(path).map_err(|e| match e {
        ModelFileError::Io { .. } => CliError::Model(e.to_string()),
        _ => CliError::Model(format!("{}: {e}", path.display())),
    })
}

fn read_data(path: &Path, model: &ModelSpec<f64>) -> Result<Vec<Vec<f64>>, CliError> {
    let data = load_dataset(path, model.output_dim()).map_err(|e| match e {
        ModelFileError::Io { .. } => CliError::Model(e.to_string()),
        _ => CliError::Model(format!("{}: {e}", path.display())),
    })?;
    if data.is_empty() {
        return Err(CliError::Model(format!("{}: dataset is empty", path.display())));
    }
    Ok(data)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn ais_rows(point_index: i64, curve: &[RdPoint<f64>]) -> impl Iterator<Item = CurveRow> + '_ {
    curve.iter().map(move |p| CurveRow {
        point_index,
        k: p.k,
        beta: p.beta,
        rate_nats: p.rate_nats,
        distortion: p.distortion,
        log_z_hat: p.log_z_hat,
        mean_accept: Some(p.mean_accept),
        ess: Some(p.ess),
    })
}

fn exact_rows(point_index: i64, ks: &[usize], curve: &[ExactPoint<f64>]) -> Vec<CurveRow> {
    ks.iter()
        .zip(curve)
        .map(|(&k, p)| CurveRow {
            point_index,
            k,
            beta: p.beta,
            rate_nats: p.rate,
            distortion: p.distortion,
            log_z_hat: p.log_z,
            mean_accept: None,
            ess: None,
        })
        .collect()
}

/// Per-point rows, then dataset-average rows, summed in point order.
fn exact_table(ks: &[usize], per_point: &[Vec<ExactPoint<f64>>]) -> Vec<CurveRow> {
    let n = per_point.len() as f64;
    let mut rows: Vec<CurveRow> =
        per_point.iter().enumerate().flat_map(|(i, c)| exact_rows(i as i64, ks, c)).collect();
    let average: Vec<ExactPoint<f64>> = (0..ks.len())
        .map(|r| {
            let mut acc = ExactPoint { beta: per_point[0][r].beta, rate: 0.0, distortion: 0.0, log_z: 0.0 };
            for c in per_point {
                acc.rate += c[r].rate;
                acc.distortion += c[r].distortion;
                acc.log_z += c[r].log_z;
            }
            acc.rate /= n;
            acc.distortion /= n;
            acc.log_z /= n;
            acc
        })
        .collect();
    rows.extend(exact_rows(-1, ks, &average));
    rows
}

fn plot_curve(path: &Path, title: &str, rows: &[CurveRow]) -> Result<(), CliError> {
    let points = rows.iter().filter(|r| r.point_index == -1).map(|r| (r.distortion, r.rate_nats)).collect();
    let svg = plot::render(title, "distortion", "rate (nats)", &[Series { name: "dataset average".into(), points }]);
    write_text(path, &svg)
}

pub fn cmd_rd(args: &RdArgs) -> Result<(), CliError> {
    let model = read_model(&args.model)?;
    let data = read_data(&args.data, &model)?;
    let schedule = args.schedule.build(&model)?;
    let params = args.sampler.params(&model)?;
    let chains = args.sampler.chains;
    let profile = match &args.tune_in {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let profile = TuneProfile::from_json(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            profile.check(&schedule).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            profile
        }
        None => {
            info!("tuning step sizes over {} points", data.len());
            tune_step_sizes(&model, &data, &schedule, chains, &params, args.sampler.seed)
                .map_err(|e| ais_error(&e))?
        }
    };
    if let Some(path) = &args.tune_out {
        write_text(path, &profile.to_json())?;
    }
    let hmc = HmcConfig::tuned(params, profile);
    info!("formal run: {} points, {} chains, n={}", data.len(), chains, schedule.n());
    let curve = rd_curve(&model, &data, &schedule, chains, &hmc, args.sampler.seed).map_err(|e| {
        match ais_error(&e.source) {
            CliError::Config(m) => CliError::Config(format!("data point {}: {m}", e.point)),
            CliError::Model(m) => CliError::Model(format!("data point {}: {m}", e.point)),
            CliError::Numeric(m) => CliError::Numeric(format!("data point {}: {m}", e.point)),
        }
    })?;
    let mut rows: Vec<CurveRow> =
        curve.per_point.iter().enumerate().flat_map(|(i, c)| ais_rows(i as i64, c)).collect();
    rows.extend(ais_rows(-1, &curve.average));
    write_rows(&args.out, &rows)?;
    if let Some(path) = &args.plot {
        plot_curve(path, &format!("AIS rate-distortion: {}", model.name), &rows)?;
    }
    Ok(())
}

pub fn cmd_bdmc(args: &BdmcArgs) -> Result<(), CliError> {
    let model = read_model(&args.model)?;
    let params = args.sampler.params(&model)?;
    let shape = match args.schedule {
        ShapeArg::Sigmoid => ScheduleShape::Sigmoid { tau: args.tau },
        ShapeArg::Linear => ScheduleShape::Linear,
    };
    let seed = args.sampler.seed;
    let chains = args.sampler.chains;
    let mut rows = Vec::with_capacity(args.beta_targets.len());
    for &beta in &args.beta_targets {
        let schedule: Schedule<f64> =
            make_schedule(args.n_dists, beta, shape, 2).map_err(|e| CliError::Config(e.to_string()))?;
        let pairs = simulate_pairs(&model, beta, args.pairs, seed).map_err(|e| bdmc_error(&e))?;
        let data: Vec<Vec<f64>> = pairs.iter().map(|p| p.x.clone()).collect();
        info!("beta_target {beta}: tuning on {} simulated points", data.len());
        let profile =
            tune_step_sizes(&model, &data, &schedule, chains, &params, seed).map_err(|e| ais_error(&e))?;
        let hmc = HmcConfig::tuned(params, profile);
        let r = bdmc_gap(&model, &pairs, &schedule, chains, &hmc, seed).map_err(|e| bdmc_error(&e))?;
        rows.push(GapRow { beta_target: beta, lower: r.lower, upper: r.upper, gap: r.gap, n_pairs: pairs.len() });
    }
    write_rows(&args.out, &rows)?;
    if let Some(path) = &args.plot {
        let series = vec![
            Series { name: "forward (lower)".into(), points: rows.iter().map(|r| (r.beta_target.log10(), r.lower)).collect() },
            Series { name: "reverse (upper)".into(), points: rows.iter().map(|r| (r.beta_target.log10(), r.upper)).collect() },
        ];
        write_text(path, &plot::render("BDMC sandwich", "log10 beta", "mean log Z", &series))?;
    }
    Ok(())
}

pub fn cmd_analytic(args: &ExactArgs) -> Result<(), CliError> {
    let model = read_model(&args.model)?;
    let data = read_data(&args.data, &model)?;
    let schedule = args.schedule.build(&model)?;
    let exact = LinearAnalytic::from_model(&model).map_err(|e| analytic_error(&e))?;
    let betas = schedule.report_betas();
    let per_point = data
        .iter()
        .map(|x| betas.iter().map(|&b| exact.point(x, b)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| analytic_error(&e))?;
    let rows = exact_table(schedule.report_indices(), &per_point);
    write_rows(&args.out, &rows)?;
    if let Some(path) = &args.plot {
        plot_curve(path, &format!("Analytic rate-distortion: {}", model.name), &rows)?;
    }
    Ok(())
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<(), CliError> {
    let a = &args.exact;
    let model = read_model(&a.model)?;
    let data = read_data(&a.data, &model)?;
    let schedule = a.schedule.build(&model)?;
    let grid = QuadratureGrid::new(args.quad_nodes, args.quad_half_width).map_err(|e| oracle_error(&e))?;
    let betas = schedule.report_betas();
    let per_point = data
        .iter()
        .map(|x| {
            let table = QuadratureTable::build(&model, x, &grid)?;
            betas.iter().map(|&b| table.point(b)).collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| oracle_error(&e))?;
    let rows = exact_table(schedule.report_indices(), &per_point);
    write_rows(&a.out, &rows)?;
    if let Some(path) = &a.plot {
        plot_curve(path, &format!("Quadrature rate-distortion: {}", model.name), &rows)?;
    }
    Ok(())
}
