//! Flat JSON experiment configuration.
//!
//! Every key is optional; an empty file yields the default scenario
//! (10 RAPs with 2 antennas, 2 users with 3 antennas, -40 dBm/Hz budgets,
//! -162 dBm/Hz noise, 1 km disc). When the oracle comparison is enabled and
//! the file leaves them unset, `num_raps`, `n_layouts` and `n_fading`
//! default to the desk-scale values 8, 10 and 5 so exhaustive search stays
//! within minutes.

use std::path::{Path, PathBuf};

use cran_core::model::{SystemConfig, DEFAULT_NOISE_DBM_HZ, DEFAULT_P_MAX_DBM_HZ};
use cran_core::solver::{SolverParams, StepRule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// A scalar or a list in the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::One(x) => vec![*x],
            Self::Many(xs) => xs.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub num_raps: Option<usize>,
    pub rap_antennas: usize,
    pub num_users: usize,
    pub user_antennas: usize,
    /// Budget density for every RAP, dBm/Hz.
    pub p_max_dbm_hz: f64,
    pub noise_dbm_hz: f64,
    pub radius_km: f64,
    pub seed: u64,
    /// Tradeoff constants to sweep.
    pub eta: OneOrMany,
    /// Subgradient step sizes; `tradeoff` and `powers` use the first.
    pub step: OneOrMany,
    pub step_rule: StepRule,
    pub epsilon_w: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub active_thresh_rel: f64,
    pub lambda0: f64,
    /// Layout draws.
    pub n_layouts: Option<usize>,
    /// Small-scale fading draws per layout.
    pub n_fading: Option<usize>,
    /// Exhaustive-search comparison in `tradeoff`.
    pub oracle: bool,
    pub out_dir: PathBuf,
    /// Write per-run covariance dumps in `tradeoff`.
    pub dump_covariances: bool,
    /// RAP counts for `bench`.
    pub bench_raps: Vec<usize>,
    /// Realizations timed per RAP count in `bench`.
    pub bench_seeds: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverParams::default();
        Self {
            num_raps: None,
            rap_antennas: 2,
            num_users: 2,
            user_antennas: 3,
            p_max_dbm_hz: DEFAULT_P_MAX_DBM_HZ,
            noise_dbm_hz: DEFAULT_NOISE_DBM_HZ,
            radius_km: 1.0,
            seed: 0,
            eta: OneOrMany::Many(vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0]),
            step: OneOrMany::Many(vec![0.05, 0.1, 0.5]),
            step_rule: solver.step_rule,
            epsilon_w: solver.epsilon_w,
            tol: solver.tol,
            max_iter: solver.max_iter,
            active_thresh_rel: solver.active_thresh_rel,
            lambda0: solver.lambda0,
            n_layouts: None,
            n_fading: None,
            oracle: false,
            out_dir: PathBuf::from("out"),
            dump_covariances: false,
            bench_raps: vec![8, 16, 32, 64],
            bench_seeds: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let text = if text.trim().is_empty() { "{}" } else { text };
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn num_raps(&self) -> usize {
        self.num_raps.unwrap_or(if self.oracle { 8 } else { 10 })
    }

    pub fn n_layouts(&self) -> usize {
        self.n_layouts.unwrap_or(if self.oracle { 10 } else { 30 })
    }

    pub fn n_fading(&self) -> usize {
        self.n_fading.unwrap_or(if self.oracle { 5 } else { 20 })
    }

    pub fn etas(&self) -> Vec<f64> {
        self.eta.values()
    }

    pub fn steps(&self) -> Vec<f64> {
        self.step.values()
    }

    pub fn system(&self) -> SystemConfig {
        let mut sys = SystemConfig::new(self.num_raps(), self.rap_antennas, self.num_users, self.user_antennas);
        sys.p_max_dbm_hz = vec![self.p_max_dbm_hz; sys.num_raps];
        sys.noise_dbm_hz = self.noise_dbm_hz;
        sys.radius_km = self.radius_km;
        sys.seed = self.seed;
        sys
    }

    /// Solver parameters for tradeoff constant `eta` and step `step`.
    pub fn solver(&self, eta: f64, step: f64) -> SolverParams {
        SolverParams {
            eta,
            epsilon_w: self.epsilon_w,
            step0: step,
            step_rule: self.step_rule,
            tol: self.tol,
            max_iter: self.max_iter,
            active_thresh_rel: self.active_thresh_rel,
            lambda0: self.lambda0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |field, reason: &str| Err(CliError::Invalid { field, reason: reason.to_string() });
        let etas = self.etas();
        if etas.is_empty() {
            return invalid("eta", "needs at least one value");
        }
        if etas.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return invalid("eta", "values must be finite and >= 0");
        }
        let steps = self.steps();
        if steps.is_empty() {
            return invalid("step", "needs at least one value");
        }
        if steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return invalid("step", "values must be finite and > 0");
        }
        if self.n_layouts() == 0 {
            return invalid("n_layouts", "must be at least 1");
        }
        if self.n_fading() == 0 {
            return invalid("n_fading", "must be at least 1");
        }
        if self.bench_raps.is_empty() || self.bench_raps.contains(&0) {
            return invalid("bench_raps", "needs positive RAP counts");
        }
        if self.bench_seeds == 0 {
            return invalid("bench_seeds", "must be at least 1");
        }
        self.system().validate().map_err(field_error)?;
        for &eta in &etas {
            for &step in &steps {
                self.solver(eta, step).validate().map_err(field_error)?;
            }
        }
        Ok(())
    }
}

/// Maps solver/model field names onto config keys.
fn field_error(e: cran_core::Error) -> CliError {
    match e {
        cran_core::Error::InvalidConfig { field, reason } => {
            let field = match field {
                "step0" => "step",
                other => other,
            };
            CliError::Invalid { field, reason }
        }
        other => other.into(),
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ExperimentConfig::from_json(&text, path)
}
