use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::GammaPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Rw,
    RwMissing,
    Gam,
}

/// An estimator paired with the MSE used for its intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Posterior mode with its conditional covariance, bias ignored.
    ModeConditional,
    /// Posterior mode with the marginal (empirical-Bayes) MSE.
    ModeMarginal,
    /// Bias-corrected estimator with its conditional MSE.
    BcConditional,
    /// SVD-mixed estimator with its conditional MSE.
    SdConditional,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::ModeConditional,
        Method::ModeMarginal,
        Method::BcConditional,
        Method::SdConditional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ModeConditional => "mode_conditional",
            Method::ModeMarginal => "mode_marginal",
            Method::BcConditional => "bc_conditional",
            Method::SdConditional => "sd_conditional",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// A complete simulation study. Field names match the JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    #[serde(rename = "T", alias = "t", default = "defaults::t")]
    pub t: usize,
    #[serde(default = "defaults::n")]
    pub n: usize,
    #[serde(default = "defaults::sigma_psi")]
    pub sigma_psi: f64,
    #[serde(default = "defaults::sigma_eps")]
    pub sigma_eps: f64,
    #[serde(rename = "K", alias = "k", default = "defaults::k")]
    pub k: usize,
    /// GAM truth `(intercept, log σ, log λ)`; the fitted values when absent.
    #[serde(default)]
    pub theta_truth: Option<Vec<f64>>,
    #[serde(default = "defaults::n_truths")]
    pub n_truths: usize,
    #[serde(default = "defaults::n_reps")]
    pub n_reps: usize,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub gamma_c_policy: GammaPolicy,
    /// Zero-based time indices with no observations.
    #[serde(default)]
    pub missing_mask: Vec<usize>,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::methods")]
    pub methods: Vec<Method>,
    /// Anomaly CSV for the GAM family; the bundled series when absent.
    #[serde(default)]
    pub data_path: Option<PathBuf>,
    #[serde(default = "defaults::year_from")]
    pub year_from: i32,
    #[serde(default = "defaults::year_to")]
    pub year_to: i32,
}

mod defaults {
    use super::Method;

    pub fn t() -> usize {
        50
    }
    pub fn n() -> usize {
        5
    }
    pub fn sigma_psi() -> f64 {
        1.0
    }
    pub fn sigma_eps() -> f64 {
        0.5
    }
    pub fn k() -> usize {
        50
    }
    pub fn n_truths() -> usize {
        100
    }
    pub fn n_reps() -> usize {
        200
    }
    pub fn alpha() -> f64 {
        0.05
    }
    pub fn seed() -> u64 {
        20_180_101
    }
    pub fn methods() -> Vec<Method> {
        vec![Method::ModeConditional, Method::ModeMarginal, Method::BcConditional]
    }
    pub fn year_from() -> i32 {
        1850
    }
    pub fn year_to() -> i32 {
        2010
    }
}

impl ExperimentConfig {
    /// 100 truths × 200 replicates, T = 50, n = 5.
    pub fn desk_rw() -> Self {
        Self {
            family: Family::Rw,
            t: defaults::t(),
            n: defaults::n(),
            sigma_psi: defaults::sigma_psi(),
            sigma_eps: defaults::sigma_eps(),
            k: defaults::k(),
            theta_truth: None,
            n_truths: defaults::n_truths(),
            n_reps: defaults::n_reps(),
            alpha: defaults::alpha(),
            gamma_c_policy: GammaPolicy::Auto,
            missing_mask: Vec::new(),
            seed: defaults::seed(),
            methods: defaults::methods(),
            data_path: None,
            year_from: defaults::year_from(),
            year_to: defaults::year_to(),
        }
    }

    /// 500 truths × 1000 replicates at the given `(n, T)`.
    pub fn full_rw(n: usize, t: usize) -> Self {
        Self {
            n,
            t,
            n_truths: 500,
            n_reps: 1000,
            ..Self::desk_rw()
        }
    }

    /// Desk-scale random walk with the last three steps unobserved and γ_c = 0.1.
    pub fn desk_rw_missing() -> Self {
        let t = defaults::t();
        Self {
            family: Family::RwMissing,
            gamma_c_policy: GammaPolicy::Fixed(0.1),
            missing_mask: (t - 3..t).collect(),
            methods: vec![Method::ModeConditional, Method::ModeMarginal, Method::SdConditional],
            ..Self::desk_rw()
        }
    }

    /// One frozen truth, 1000 replicates, K = 50.
    pub fn desk_gam() -> Self {
        Self {
            family: Family::Gam,
            n_truths: 1,
            n_reps: 1000,
            methods: vec![Method::ModeMarginal, Method::BcConditional],
            ..Self::desk_rw()
        }
    }

    pub fn full_gam() -> Self {
        Self {
            n_reps: 10_000,
            ..Self::desk_gam()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Contract(msg));
        if self.n_truths < 1 || self.n_reps < 1 {
            return bad("n_truths and n_reps must be at least 1".into());
        }
        if self.n_truths > u32::MAX as usize - 1 || self.n_reps > u32::MAX as usize - 1 {
            return bad("replicate counts exceed the stream id range".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if let GammaPolicy::Fixed(g) = self.gamma_c_policy {
            if !(g >= 0.0) || !g.is_finite() {
                return bad(format!("a fixed gamma_c must be finite and non-negative, got {g}"));
            }
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return bad("methods are listed more than once".into());
        }
        match self.family {
            Family::Rw | Family::RwMissing => {
                if self.t < 2 || self.n < 1 {
                    return bad(format!("need T >= 2 and n >= 1, got T = {}, n = {}", self.t, self.n));
                }
                for (name, v) in [("sigma_psi", self.sigma_psi), ("sigma_eps", self.sigma_eps)] {
                    if !(v > 0.0) || !v.is_finite() {
                        return bad(format!("{name} must be positive, got {v}"));
                    }
                }
                if let Some(&i) = self.missing_mask.iter().find(|&&i| i >= self.t) {
                    return bad(format!("missing time index {i} is outside 0..{}", self.t));
                }
                if self.missing_mask.len() >= self.t {
                    return bad("every time step is masked".into());
                }
                if self.family == Family::Rw && !self.missing_mask.is_empty() {
                    return bad("family rw takes no missing_mask; use rw_missing".into());
                }
                if self.family == Family::RwMissing {
                    if self.missing_mask.is_empty() {
                        return bad("family rw_missing needs a non-empty missing_mask".into());
                    }
                    if self.methods.contains(&Method::BcConditional) {
                        return bad(
                            "bc_conditional is undefined when time steps have no data; use sd_conditional".into(),
                        );
                    }
                }
            }
            Family::Gam => {
                if self.k < 4 {
                    return bad(format!("K must be at least 4, got {}", self.k));
                }
                if self.year_from > self.year_to {
                    return bad(format!("empty year range {}..={}", self.year_from, self.year_to));
                }
                if let Some(th) = &self.theta_truth {
                    if th.len() != 3 || th.iter().any(|v| !v.is_finite()) {
                        return bad("theta_truth must hold three finite values".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-time-step missing flags.
    pub fn missing_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.t];
        for &i in &self.missing_mask {
            flags[i] = true;
        }
        flags
    }
}
