use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::{Family, Method};
use crate::error::{Error, Result};
use crate::models::spline::quantile_sorted;

/// Fraction of failed replicates above which an experiment is aborted.
pub const MAX_FAILURE_RATE: f64 = 0.05;
const LOGGED_FAILURES: usize = 50;

/// One method's estimate and interval for one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodDraw {
    pub est: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub truth: usize,
    pub replicate: usize,
    pub message: String,
}

/// Tallies for replicates `start..end` of one truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateBlock {
    pub truth: usize,
    pub start: usize,
    pub end: usize,
    /// Interval hits, method × component.
    pub hits: Vec<Vec<u64>>,
    /// Sum of `estimate - truth`, method × component.
    pub err_sum: Vec<Vec<f64>>,
    pub valid: usize,
    pub failures: Vec<FailureRecord>,
}

impl ReplicateBlock {
    pub fn new(truth: usize, start: usize, end: usize, n_methods: usize, n_components: usize) -> Self {
        Self {
            truth,
            start,
            end,
            hits: vec![vec![0; n_components]; n_methods],
            err_sum: vec![vec![0.0; n_components]; n_methods],
            valid: 0,
            failures: Vec::new(),
        }
    }

    pub fn record(&mut self, truth: &DVector<f64>, draws: &[MethodDraw]) {
        for (m, d) in draws.iter().enumerate() {
            for c in 0..truth.len() {
                if d.lower[c] <= truth[c] && truth[c] <= d.upper[c] {
                    self.hits[m][c] += 1;
                }
                self.err_sum[m][c] += d.est[c] - truth[c];
            }
        }
        self.valid += 1;
    }

    pub fn fail(&mut self, replicate: usize, message: String) {
        self.failures.push(FailureRecord {
            truth: self.truth,
            replicate,
            message,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub family: Family,
    pub seed: u64,
    pub n_truths: usize,
    pub n_reps: usize,
    pub n_components: usize,
    pub valid_replicates: usize,
    pub failed_replicates: usize,
    /// The first failures, in replicate order.
    pub failures: Vec<FailureRecord>,
    pub workers: usize,
    pub elapsed_seconds: f64,
    pub source: Option<String>,
    /// Family-specific scalars such as the frozen GAM parameters.
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub methods: Vec<Method>,
    /// Mean over truths of the per-truth coverage rate, method × component.
    pub per_component_coverage: Vec<Vec<f64>>,
    /// Binomial standard error of the pooled rate.
    pub coverage_se: Vec<Vec<f64>>,
    /// 5% and 95% type-7 quantiles over truths of the per-truth coverage.
    pub coverage_q05: Vec<Vec<f64>>,
    pub coverage_q95: Vec<Vec<f64>>,
    pub across_function_coverage: Vec<f64>,
    /// Mean over truths of the squared Monte Carlo bias.
    pub squared_bias: Vec<Vec<f64>>,
    pub metadata: RunMetadata,
}

impl CoverageReport {
    pub fn method_index(&self, m: Method) -> Option<usize> {
        self.methods.iter().position(|&x| x == m)
    }

    pub fn n_components(&self) -> usize {
        self.metadata.n_components
    }
}

/// Fold replicate blocks in (truth, replicate) order into a report.
///
/// The result depends only on the set of blocks, not on their order or on
/// which worker produced them. `metadata` supplies the run description; its
/// counts and failure log are filled in here.
pub fn aggregate(methods: &[Method], mut blocks: Vec<ReplicateBlock>, mut metadata: RunMetadata) -> Result<CoverageReport> {
    if blocks.is_empty() {
        return Err(Error::Contract("no replicate blocks to aggregate".into()));
    }
    let nm = methods.len();
    let nc = metadata.n_components;
    for b in &blocks {
        if b.start >= b.end || b.hits.len() != nm || b.err_sum.len() != nm || b.hits.iter().any(|h| h.len() != nc) {
            return Err(Error::Contract(format!(
                "block for truth {} replicates {}..{} has inconsistent shape",
                b.truth, b.start, b.end
            )));
        }
        if b.valid + b.failures.len() != b.end - b.start {
            return Err(Error::Contract(format!(
                "block for truth {} replicates {}..{} accounts for {} replicates",
                b.truth,
                b.start,
                b.end,
                b.valid + b.failures.len()
            )));
        }
    }
    blocks.sort_by_key(|b| (b.truth, b.start));
    for w in blocks.windows(2) {
        if w[0].truth == w[1].truth && w[1].start < w[0].end {
            return Err(Error::Contract(format!(
                "overlapping replicate ranges {}..{} and {}..{} for truth {}",
                w[0].start, w[0].end, w[1].start, w[1].end, w[0].truth
            )));
        }
    }

    // merge blocks per truth, in replicate order
    struct Truth {
        hits: Vec<Vec<u64>>,
        err_sum: Vec<Vec<f64>>,
        valid: usize,
    }
    let mut truths: Vec<Truth> = Vec::new();
    let mut current: Option<usize> = None;
    let mut failures = Vec::new();
    let mut failed = 0;
    for b in blocks {
        failed += b.failures.len();
        for f in b.failures {
            if failures.len() < LOGGED_FAILURES {
                failures.push(f);
            }
        }
        if current != Some(b.truth) {
            current = Some(b.truth);
            truths.push(Truth {
                hits: vec![vec![0; nc]; nm],
                err_sum: vec![vec![0.0; nc]; nm],
                valid: 0,
            });
        }
        let t = truths.last_mut().unwrap();
        for m in 0..nm {
            for c in 0..nc {
                t.hits[m][c] += b.hits[m][c];
                t.err_sum[m][c] += b.err_sum[m][c];
            }
        }
        t.valid += b.valid;
    }
    let used: Vec<&Truth> = truths.iter().filter(|t| t.valid > 0).collect();
    if used.is_empty() {
        return Err(Error::Experiment("every replicate failed".into()));
    }
    let total_valid: usize = used.iter().map(|t| t.valid).sum();

    let mut coverage = vec![vec![0.0; nc]; nm];
    let mut se = vec![vec![0.0; nc]; nm];
    let mut q05 = vec![vec![0.0; nc]; nm];
    let mut q95 = vec![vec![0.0; nc]; nm];
    let mut bias = vec![vec![0.0; nc]; nm];
    let mut across = vec![0.0; nm];
    for m in 0..nm {
        for c in 0..nc {
            let mut rates: Vec<f64> = used.iter().map(|t| t.hits[m][c] as f64 / t.valid as f64).collect();
            let mean = rates.iter().sum::<f64>() / rates.len() as f64;
            let pooled = used.iter().map(|t| t.hits[m][c]).sum::<u64>() as f64 / total_valid as f64;
            rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
            coverage[m][c] = mean;
            se[m][c] = (pooled * (1.0 - pooled) / total_valid as f64).sqrt();
            q05[m][c] = quantile_sorted(&rates, 0.05);
            q95[m][c] = quantile_sorted(&rates, 0.95);
            bias[m][c] = used
                .iter()
                .map(|t| {
                    let b = t.err_sum[m][c] / t.valid as f64;
                    b * b
                })
                .sum::<f64>()
                / used.len() as f64;
        }
        across[m] = coverage[m].iter().sum::<f64>() / nc as f64;
    }
    metadata.valid_replicates = total_valid;
    metadata.failed_replicates = failed;
    metadata.failures = failures;
    Ok(CoverageReport {
        methods: methods.to_vec(),
        per_component_coverage: coverage,
        coverage_se: se,
        coverage_q05: q05,
        coverage_q95: q95,
        across_function_coverage: across,
        squared_bias: bias,
        metadata,
    })
}

/// Abort when more than [`MAX_FAILURE_RATE`] of the replicates failed.
pub fn check_failure_rate(report: &CoverageReport) -> Result<()> {
    let md = &report.metadata;
    let total = md.valid_replicates + md.failed_replicates;
    if md.failed_replicates as f64 > MAX_FAILURE_RATE * total as f64 {
        let sample: Vec<String> = md
            .failures
            .iter()
            .take(5)
            .map(|f| format!("truth {} replicate {}: {}", f.truth, f.replicate, f.message))
            .collect();
        return Err(Error::Experiment(format!(
            "{} of {} replicate fits failed; first failures: {}",
            md.failed_replicates,
            total,
            sample.join("; ")
        )));
    }
    Ok(())
}
