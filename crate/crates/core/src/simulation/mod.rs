//! Monte Carlo coverage experiments.
//!
//! Work is split into blocks of [`REPLICATE_BLOCK`] replicates of one truth.
//! Each replicate draws from its own counter-based stream (see [`rng`]), and
//! blocks are folded in (truth, replicate) order, so reports do not depend on
//! the number of worker threads.

pub mod config;
pub mod report;
pub mod rng;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub use config::{ExperimentConfig, Family, Method};
pub use report::{aggregate, check_failure_rate, CoverageReport, FailureRecord, MethodDraw, ReplicateBlock, RunMetadata};

use crate::error::{Error, Result};
use crate::inference::{delta_method, AffineMap, ConditionalEstimate, ConditionalFit, GammaPolicy};
use crate::io::{parse_anomaly_str, AnomalySeries, BUNDLED_ANOMALIES};
use crate::laplace::solve_at;
use crate::model_core::{JointModel, PsiVector};
use crate::models::{
    build_rw_model, build_spline_model, simulate_rw_data, simulate_rw_truth, RandomWalkData, RandomWalkModel, SplineData,
    SplineModel,
};
use crate::outer::{maximize_laml, OuterFit};

pub const REPLICATE_BLOCK: usize = 25;
pub const THREADS_ENV: &str = "CONDINF_THREADS";

/// Worker threads: `CONDINF_THREADS` if set to a positive integer, else the
/// available parallelism.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// The estimate a method reports, with its intervals.
pub fn method_estimate(cf: &ConditionalFit, method: Method, policy: GammaPolicy, alpha: f64) -> Result<ConditionalEstimate> {
    match method {
        Method::ModeConditional => cf.mode_conditional(alpha),
        Method::ModeMarginal => cf.mode_marginal(alpha),
        Method::BcConditional => cf.bias_corrected(alpha),
        Method::SdConditional => cf.svd_mixed(policy, alpha),
    }
}

/// Fit θ by maximum LAML from moment-based starting values.
pub fn fit_rw(data: &RandomWalkData) -> Result<(RandomWalkModel, OuterFit, ConditionalFit)> {
    let model = build_rw_model(data);
    let theta0 = model.theta_vector(&model.moment_start())?;
    let fit = maximize_laml(&model, &theta0)?;
    let cf = ConditionalFit::from_outer(&model, &fit)?;
    Ok((model, fit, cf))
}

/// Fit the spline model from `theta0`, or from a data-driven start.
pub fn fit_gam(data: &SplineData, theta0: Option<&[f64]>) -> Result<(SplineModel, OuterFit, ConditionalFit)> {
    let model = build_spline_model(data);
    let start = match theta0 {
        Some(t) => t.to_vec(),
        None => gam_start(data),
    };
    let fit = maximize_laml(&model, &model.theta_vector(&start)?)?;
    let cf = ConditionalFit::from_outer(&model, &fit)?;
    Ok((model, fit, cf))
}

/// Intercept at the mean, σ at half the response SD, and λ balancing the
/// traces of the data and penalty curvatures.
fn gam_start(data: &SplineData) -> Vec<f64> {
    let n = data.y.len() as f64;
    let mean = data.y.iter().sum::<f64>() / n;
    let var = data.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let sigma2 = (0.25 * var).max(1e-12);
    let xtx_trace: f64 = data.design.iter().map(|v| v * v).sum();
    let s_trace = data.penalty.trace().max(f64::MIN_POSITIVE);
    vec![mean, 0.5 * sigma2.ln(), (xtx_trace / sigma2 / s_trace).ln()]
}

/// Curve values `intercept + XΨ` as a map of the joint vector `(Ψ, θ)`.
pub fn curve_map(design: &DMatrix<f64>, theta_dim: usize) -> AffineMap {
    let (n, p) = design.shape();
    let mut a = DMatrix::zeros(n, p + theta_dim);
    a.view_mut((0, 0), (n, p)).copy_from(design);
    a.column_mut(p).fill(1.0);
    AffineMap {
        matrix: a,
        offset: DVector::zeros(n),
    }
}

/// Delta-method curve estimate from a Ψ-space estimate and θ̂.
pub fn curve_estimate(map: &AffineMap, est: &ConditionalEstimate, theta_hat: &DVector<f64>) -> Result<MethodDraw> {
    let p = est.psi_est.len();
    let q = theta_hat.len();
    let mut joint = DVector::zeros(p + q);
    joint.rows_mut(0, p).copy_from(&est.psi_est);
    joint.rows_mut(p, q).copy_from(theta_hat);
    let d = delta_method(map, &joint, &est.joint().full(), est.alpha)?;
    Ok(MethodDraw {
        est: d.mean,
        lower: d.ci_lower,
        upper: d.ci_upper,
    })
}

fn draw_of(e: ConditionalEstimate) -> MethodDraw {
    MethodDraw {
        est: e.psi_est,
        lower: e.ci_lower,
        upper: e.ci_upper,
    }
}

fn run_blocks<F>(cfg: &ExperimentConfig, truths: &[DVector<f64>], workers: usize, replicate: F) -> Result<Vec<ReplicateBlock>>
where
    F: Fn(usize, &mut ChaCha12Rng) -> Result<Vec<MethodDraw>> + Sync,
{
    let nc = truths[0].len();
    let nm = cfg.methods.len();
    let mut items = Vec::new();
    for i in 0..truths.len() {
        let mut s = 0;
        while s < cfg.n_reps {
            let e = (s + REPLICATE_BLOCK).min(cfg.n_reps);
            items.push((i, s, e));
            s = e;
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("cannot start worker pool: {e}")))?;
    let blocks = pool.install(|| {
        items
            .par_iter()
            .map(|&(i, s, e)| {
                let mut block = ReplicateBlock::new(i, s, e, nm, nc);
                for j in s..e {
                    let mut r = rng::stream(cfg.seed, i as u32, j as u32);
                    match replicate(i, &mut r) {
                        Ok(draws) => block.record(&truths[i], &draws),
                        Err(err) => block.fail(j, err.to_string()),
                    }
                }
                block
            })
            .collect::<Vec<_>>()
    });
    Ok(blocks)
}

fn base_metadata(cfg: &ExperimentConfig, n_components: usize, workers: usize) -> RunMetadata {
    RunMetadata {
        family: cfg.family,
        seed: cfg.seed,
        n_truths: cfg.n_truths,
        n_reps: cfg.n_reps,
        n_components,
        valid_replicates: 0,
        failed_replicates: 0,
        failures: Vec::new(),
        workers,
        elapsed_seconds: 0.0,
        source: None,
        extra: BTreeMap::new(),
    }
}

/// Random-walk truths for an experiment, one counter stream each.
pub fn rw_truths(cfg: &ExperimentConfig) -> Result<Vec<DVector<f64>>> {
    (0..cfg.n_truths)
        .map(|i| Ok(simulate_rw_truth(cfg.t, cfg.sigma_psi, &mut rng::truth_stream(cfg.seed, i as u32))?.values))
        .collect()
}

/// Simulate one random-walk replicate and compute every configured method.
pub fn rw_replicate(cfg: &ExperimentConfig, truth: &DVector<f64>, rng: &mut ChaCha12Rng) -> Result<Vec<MethodDraw>> {
    let psi = PsiVector::new(truth.clone())?;
    let data = simulate_rw_data(&psi, cfg.n, cfg.sigma_eps, &cfg.missing_flags(), rng)?;
    let (_, _, cf) = fit_rw(&data)?;
    cfg.methods
        .iter()
        .map(|&m| method_estimate(&cf, m, cfg.gamma_c_policy, cfg.alpha).map(draw_of))
        .collect()
}

pub fn run_rw_experiment(cfg: &ExperimentConfig) -> Result<CoverageReport> {
    run_rw_experiment_with(cfg, worker_count())
}

pub fn run_rw_experiment_with(cfg: &ExperimentConfig, workers: usize) -> Result<CoverageReport> {
    cfg.validate()?;
    if !matches!(cfg.family, Family::Rw | Family::RwMissing) {
        return Err(Error::Contract("run_rw_experiment needs family rw or rw_missing".into()));
    }
    let started = Instant::now();
    let truths = rw_truths(cfg)?;
    let blocks = run_blocks(cfg, &truths, workers, |i, r| rw_replicate(cfg, &truths[i], r))?;
    let mut md = base_metadata(cfg, cfg.t, workers);
    md.elapsed_seconds = started.elapsed().as_secs_f64();
    let report = aggregate(&cfg.methods, blocks, md)?;
    check_failure_rate(&report)?;
    Ok(report)
}

/// The frozen truth of a GAM experiment.
#[derive(Debug, Clone)]
pub struct GamTruth {
    pub data: SplineData,
    pub theta: DVector<f64>,
    pub psi: DVector<f64>,
    pub curve: DVector<f64>,
    pub boundary_suspect: bool,
}

/// Fit the base series and freeze the fitted curve and θ̂ as the truth.
/// `theta_truth` replaces θ̂, with the curve recomputed at it.
pub fn gam_truth(series: &AnomalySeries, k: usize, theta_truth: Option<&[f64]>) -> Result<GamTruth> {
    let x: Vec<f64> = series.year.iter().map(|&y| y as f64).collect();
    let data = SplineData::with_bspline(x, series.anomaly.clone(), k)?;
    let (model, fit, _) = fit_gam(&data, None)?;
    let (theta, psi, boundary) = match theta_truth {
        Some(t) => {
            let th = DVector::from_column_slice(t);
            let sol = solve_at(&model, &th)?;
            (th, sol.psi_hat.values, false)
        }
        None => (fit.theta_hat.as_dvector(), fit.inner.psi_hat.values.clone(), fit.boundary_suspect),
    };
    let mut curve = &data.design * &psi;
    curve.add_scalar_mut(theta[0]);
    Ok(GamTruth {
        data,
        theta,
        psi,
        curve,
        boundary_suspect: boundary,
    })
}

/// Simulate one GAM replicate around the frozen truth and compute the curve
/// estimate of every configured method.
pub fn gam_replicate(cfg: &ExperimentConfig, truth: &GamTruth, rng: &mut ChaCha12Rng) -> Result<Vec<MethodDraw>> {
    let sigma = truth.theta[1].exp();
    let y: Vec<f64> = truth
        .curve
        .iter()
        .map(|&f| {
            let z: f64 = rng.sample(StandardNormal);
            f + sigma * z
        })
        .collect();
    let data = SplineData {
        y,
        ..truth.data.clone()
    };
    let (model, fit, cf) = fit_gam(&data, Some(truth.theta.as_slice()))?;
    let map = curve_map(model.design(), model.theta_dim());
    let theta_hat = fit.theta_hat.as_dvector();
    cfg.methods
        .iter()
        .map(|&m| curve_estimate(&map, &method_estimate(&cf, m, cfg.gamma_c_policy, cfg.alpha)?, &theta_hat))
        .collect()
}

/// Load the anomaly series named by the config, or the bundled one.
pub fn load_series(cfg: &ExperimentConfig) -> Result<(AnomalySeries, String)> {
    let range = (cfg.year_from, cfg.year_to);
    match &cfg.data_path {
        Some(p) => Ok((crate::io::parse_anomaly_csv(p, range)?, p.display().to_string())),
        None => Ok((parse_anomaly_str(BUNDLED_ANOMALIES, range)?, "bundled:synthetic_anomalies".into())),
    }
}

pub fn run_gam_experiment(cfg: &ExperimentConfig, series: &AnomalySeries) -> Result<CoverageReport> {
    run_gam_experiment_with(cfg, series, worker_count())
}

pub fn run_gam_experiment_with(cfg: &ExperimentConfig, series: &AnomalySeries, workers: usize) -> Result<CoverageReport> {
    cfg.validate()?;
    if cfg.family != Family::Gam {
        return Err(Error::Contract("run_gam_experiment needs family gam".into()));
    }
    if cfg.n_truths != 1 {
        return Err(Error::Contract("the GAM experiment has a single frozen truth; set n_truths to 1".into()));
    }
    let started = Instant::now();
    let truth = gam_truth(series, cfg.k, cfg.theta_truth.as_deref())?;
    let truths = vec![truth.curve.clone()];
    let blocks = run_blocks(cfg, &truths, workers, |_, r| gam_replicate(cfg, &truth, r))?;
    let mut md = base_metadata(cfg, truth.curve.len(), workers);
    md.elapsed_seconds = started.elapsed().as_secs_f64();
    for (name, v) in ["intercept", "log_sigma", "log_lambda"].iter().zip(truth.theta.iter()) {
        md.extra.insert(format!("truth_{name}"), *v);
    }
    md.extra.insert("first_year".into(), series.year[0] as f64);
    md.extra.insert("boundary_suspect".into(), if truth.boundary_suspect { 1.0 } else { 0.0 });
    let report = aggregate(&cfg.methods, blocks, md)?;
    check_failure_rate(&report)?;
    Ok(report)
}

/// Dispatch on the config family.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<CoverageReport> {
    match cfg.family {
        Family::Rw | Family::RwMissing => run_rw_experiment_with(cfg, workers),
        Family::Gam => {
            let (series, source) = load_series(cfg)?;
            let mut report = run_gam_experiment_with(cfg, &series, workers)?;
            report.metadata.source = Some(source);
            Ok(report)
        }
    }
}
