//! `condinf` command-line interface.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use condinf::inference::{ConditionalEstimate, GammaPolicy};
use condinf::io::{self, AnomalySeries};
use condinf::model_core::JointModel;
use condinf::models::{SplineData, RandomWalkModel};
use condinf::outer::OuterFit;
use condinf::simulation::{self, curve_map, curve_estimate, ExperimentConfig, Family};
use condinf::Error;
use nalgebra::DVector;

#[derive(Parser)]
#[command(name = "condinf", version, about = "Conditional inference for random effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the random-walk model to one dataset.
    FitRw(FitRwArgs),
    /// Fit the penalized-spline model to an anomaly series.
    FitGam(FitGamArgs),
    /// Random-walk coverage experiment.
    SimRw(SimArgs),
    /// Random-walk coverage experiment with unobserved time steps.
    SimRwMissing(SimArgs),
    /// Penalized-spline coverage experiment.
    SimGam(SimArgs),
    /// Render a coverage or bias CSV as SVG.
    Report(ReportArgs),
}

#[derive(Args)]
struct FitRwArgs {
    /// CSV with one row per time step and one column per observation; NA marks missing.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// `auto` or a fixed singular-value cutoff.
    #[arg(long, default_value = "auto")]
    gamma_c: String,
    /// Write the estimate table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitGamArgs {
    /// Anomaly CSV (year and anomaly in the first two fields).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 1850)]
    from: i32,
    #[arg(long, default_value_t = 2010)]
    to: i32,
    /// Basis dimension K.
    #[arg(long, default_value_t = 50)]
    basis: usize,
    /// Externally supplied design matrix CSV; replaces the B-spline basis.
    #[arg(long, requires = "penalty")]
    design: Option<PathBuf>,
    /// Externally supplied penalty matrix CSV.
    #[arg(long, requires = "design")]
    penalty: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// Experiment config JSON; the desk-scale preset when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::FitRw(a) => fit_rw(a),
        Command::FitGam(a) => fit_gam(a),
        Command::SimRw(a) => simulate(a, Family::Rw),
        Command::SimRwMissing(a) => simulate(a, Family::RwMissing),
        Command::SimGam(a) => simulate(a, Family::Gam),
        Command::Report(a) => report(a),
    }
}

fn check_alpha(alpha: f64) -> Result<(), CliError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {alpha}")))
    }
}

fn parse_gamma(s: &str) -> Result<GammaPolicy, CliError> {
    if s == "auto" {
        return Ok(GammaPolicy::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(GammaPolicy::Fixed(v)),
        _ => Err(CliError::Usage(format!("--gamma-c must be `auto` or a non-negative number, got {s:?}"))),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
            eprintln!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn theta_summary(model: &dyn JointModel, fit: &OuterFit) -> String {
    let mut s = String::new();
    let th = &fit.theta_hat;
    for i in 0..th.len() {
        let _ = writeln!(
            s,
            "# {} = {:.6} (se {:.6}, natural scale {:.6})",
            th.labels[i],
            th.values[i],
            fit.cov_theta[(i, i)].max(0.0).sqrt(),
            th.natural()[i]
        );
    }
    let _ = writeln!(
        s,
        "# laml = {:.6}, evaluations = {}, boundary_suspect = {}",
        fit.laml_at_opt, fit.evaluations, fit.boundary_suspect
    );
    let _ = writeln!(s, "# theta dimension {}", model.theta_dim());
    s
}

fn fit_rw(a: FitRwArgs) -> Result<(), CliError> {
    check_alpha(a.alpha)?;
    let policy = parse_gamma(&a.gamma_c)?;
    let data = io::read_rw_csv(&a.data)?;
    let (model, fit, cf): (RandomWalkModel, _, _) = simulation::fit_rw(&data)?;
    let marginal = cf.mode_marginal(a.alpha)?;
    // the bias-corrected estimator needs every step observed
    let (name, corrected): (&str, ConditionalEstimate) = match cf.bias_corrected(a.alpha) {
        Ok(e) => ("bc_conditional", e),
        Err(Error::SingularShrinkage { .. }) => ("sd_conditional", cf.svd_mixed(policy, a.alpha)?),
        Err(e) => return Err(e.into()),
    };
    print!("{}", theta_summary(&model, &fit));
    println!("# max |dpsi/dtheta| = {:.6}", cf.max_sensitivity());
    let counts = data.counts();
    let mut s = String::new();
    let _ = writeln!(s, "# corrected estimator: {name}");
    let _ = writeln!(s, "time,n_obs,mode,marginal_lower,marginal_upper,estimate,lower,upper");
    for (t, count) in counts.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            t,
            count,
            marginal.psi_est[t],
            marginal.ci_lower[t],
            marginal.ci_upper[t],
            corrected.psi_est[t],
            corrected.ci_lower[t],
            corrected.ci_upper[t]
        );
    }
    emit(a.out.as_deref(), &s)
}

fn fit_gam(a: FitGamArgs) -> Result<(), CliError> {
    check_alpha(a.alpha)?;
    if a.from > a.to {
        return Err(CliError::Usage(format!("empty year range {}..={}", a.from, a.to)));
    }
    let series: AnomalySeries = match &a.data {
        Some(p) => io::parse_anomaly_csv(p, (a.from, a.to))?,
        None => io::parse_anomaly_str(io::BUNDLED_ANOMALIES, (a.from, a.to))?,
    };
    let x: Vec<f64> = series.year.iter().map(|&y| y as f64).collect();
    let data = match (&a.design, &a.penalty) {
        (Some(d), Some(p)) => SplineData::new(x, series.anomaly.clone(), io::read_matrix_csv(d)?, io::read_matrix_csv(p)?, None)?,
        _ => SplineData::with_bspline(x, series.anomaly.clone(), a.basis)?,
    };
    let (model, fit, cf) = simulation::fit_gam(&data, None)?;
    let map = curve_map(model.design(), model.theta_dim());
    let theta_hat: DVector<f64> = fit.theta_hat.as_dvector();
    let mode = curve_estimate(&map, &cf.mode_marginal(a.alpha)?, &theta_hat)?;
    let bc = curve_estimate(&map, &cf.bias_corrected(a.alpha)?, &theta_hat)?;
    print!("{}", theta_summary(&model, &fit));
    let mut s = String::new();
    let _ = writeln!(s, "year,anomaly,fitted,marginal_lower,marginal_upper,bc_fitted,bc_lower,bc_upper");
    for i in 0..series.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            series.year[i], series.anomaly[i], mode.est[i], mode.lower[i], mode.upper[i], bc.est[i], bc.lower[i], bc.upper[i]
        );
    }
    emit(a.out.as_deref(), &s)
}

fn simulate(a: SimArgs, family: Family) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => match family {
            Family::Rw => ExperimentConfig::desk_rw(),
            Family::RwMissing => ExperimentConfig::desk_rw_missing(),
            Family::Gam => ExperimentConfig::desk_gam(),
        },
    };
    if cfg.family != family {
        return Err(CliError::Usage(format!(
            "config family {:?} does not match this subcommand",
            cfg.family
        )));
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let workers = simulation::worker_count();
    eprintln!(
        "running {} truths x {} replicates on {workers} worker(s)",
        cfg.n_truths, cfg.n_reps
    );
    let report = simulation::run_experiment(&cfg, workers)?;
    io::write_outputs(&a.out, &cfg, &report)?;
    for (m, method) in report.methods.iter().enumerate() {
        println!("{}: across-the-function coverage {:.4}", method.name(), report.across_function_coverage[m]);
    }
    eprintln!(
        "{} valid replicates, {} failed; wrote {}",
        report.metadata.valid_replicates,
        report.metadata.failed_replicates,
        a.out.display()
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.input)?;
    let svg = io::render_report_svg(&text)?;
    emit(Some(&a.out), &svg)
}
