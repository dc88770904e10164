//! Experiment orchestration: configuration, runs over either backend,
//! trajectory analysis, paired comparisons and the generalization-error
//! verification suite.

mod analysis;
mod compare;
mod run;
mod scenarios;
mod verify;

pub use analysis::{
    detect_plateaus, detect_plateaus_with, detect_symmetry_break, detect_symmetry_break_with, singular_dwell,
    windowed_mse, Plateau, PlateauOptions,
};
pub use compare::{compare, ComparisonReport, MetricMedians, PairedRow, RunMetrics};
pub use run::{run, RunOutput, RunSummary, TrajectoryRecord};
pub use scenarios::{scenario, scenario_grid, Scenario};
pub use verify::{
    perfect_state, verify_generalization_error, verify_states, VerificationReport, VerifyTrial, Z_THRESHOLD,
};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::learning::{InferenceMode, MaskMode, WUpdate};
use crate::model::{InputDist, TeacherKind, TEACHER_OUTPUT_WEIGHT};

pub const DEFAULT_N: usize = 1000;
pub const DEFAULT_ETA: f64 = 0.005;
pub const DEFAULT_KEEP_PROB: f64 = 0.5;
pub const DEFAULT_REMEASURE_EVERY: u64 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Rule {
    Sgd,
    Dropout {
        #[serde(default = "default_keep_prob")]
        p: f64,
        #[serde(default)]
        mask_mode: MaskMode,
        #[serde(default)]
        inference_mode: InferenceMode,
    },
}

fn default_keep_prob() -> f64 {
    DEFAULT_KEEP_PROB
}

impl Rule {
    pub fn dropout(p: f64) -> Self {
        Rule::Dropout {
            p,
            mask_mode: MaskMode::default(),
            inference_mode: InferenceMode::default(),
        }
    }

    pub fn keep_prob(&self) -> f64 {
        match self {
            Rule::Sgd => 1.0,
            Rule::Dropout { p, .. } => *p,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Stores the N-dimensional weights and draws real inputs.
    #[default]
    Direct,
    /// Evolves order parameters only.
    ThermoLimit,
}

/// Thresholds for the derived metrics of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Largest |d log(mse) / dt| still counted as flat.
    pub plateau_slope_tol: f64,
    /// Shortest plateau, in units of t.
    pub plateau_min_duration: f64,
    /// Half-width, in records, of the sliding least-squares fit.
    pub plateau_fit_half_width: usize,
    pub drop_factor: f64,
    /// Records averaged when testing for the drop below a plateau.
    pub drop_trailing: usize,
    pub singular_band: (f64, f64),
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            plateau_slope_tol: 1e-5,
            plateau_min_duration: 200.0,
            plateau_fit_half_width: 25,
            drop_factor: 0.5,
            drop_trailing: 3,
            singular_band: (0.8, 0.98),
        }
    }
}

impl AnalysisOptions {
    pub fn plateau(&self) -> PlateauOptions {
        PlateauOptions {
            slope_tol: self.plateau_slope_tol,
            min_duration: self.plateau_min_duration,
            fit_half_width: self.plateau_fit_half_width,
        }
    }
}

/// Complete description of one simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub eta: f64,
    pub rule: Rule,
    pub teacher_kind: TeacherKind,
    pub backend: Backend,
    pub input_dist: InputDist,
    pub w_update: WUpdate,
    pub steps: u64,
    /// Steps between trajectory records.
    pub sample_every: u64,
    /// Steps averaged by the windowed MSE.
    pub window: u64,
    pub seed: u64,
    pub orthonormalize: bool,
    pub teacher_output_weight: f64,
    /// Steps between exact re-measurements in the direct backend.
    pub remeasure_every: u64,
    pub analysis: AnalysisOptions,
}

impl SimConfig {
    /// Defaults: N = 1000, eta = 0.005, Gaussian inputs, orthogonal teacher,
    /// direct backend, one record and one MSE window per unit of t.
    pub fn new(m: usize, k: usize, steps: u64, seed: u64, rule: Rule) -> Self {
        Self {
            n: DEFAULT_N,
            m,
            k,
            eta: DEFAULT_ETA,
            rule,
            teacher_kind: TeacherKind::Orthogonal,
            backend: Backend::Direct,
            input_dist: InputDist::Gaussian,
            w_update: WUpdate::Gradient,
            steps,
            sample_every: DEFAULT_N as u64,
            window: DEFAULT_N as u64,
            seed,
            orthonormalize: false,
            teacher_output_weight: TEACHER_OUTPUT_WEIGHT,
            remeasure_every: DEFAULT_REMEASURE_EVERY,
            analysis: AnalysisOptions::default(),
        }
    }

    /// Sets `N` and rescales `sample_every` and `window` to one unit of t.
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self.sample_every = n as u64;
        self.window = n as u64;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(SimError::invalid("N", "must be at least 1"));
        }
        if self.m == 0 {
            return Err(SimError::invalid("M", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(SimError::invalid("K", "must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(SimError::invalid("eta", format!("must be positive, got {}", self.eta)));
        }
        if let Rule::Dropout { p, .. } = self.rule {
            if !(p > 0.0 && p <= 1.0) {
                return Err(SimError::invalid("rule.dropout.p", format!("p out of range (0, 1]: {p}")));
            }
        }
        if self.sample_every == 0 {
            return Err(SimError::invalid("sample_every", "must be at least 1"));
        }
        if self.window == 0 {
            return Err(SimError::invalid("window", "must be at least 1"));
        }
        if self.remeasure_every == 0 {
            return Err(SimError::invalid("remeasure_every", "must be at least 1"));
        }
        if self.teacher_kind == TeacherKind::Singular && self.m != 2 {
            return Err(SimError::invalid("teacher_kind", format!("singular teacher requires M = 2, got {}", self.m)));
        }
        if self.backend == Backend::ThermoLimit {
            let free = if self.teacher_kind == TeacherKind::Singular { 1 } else { self.m };
            if self.n < free + self.k {
                return Err(SimError::invalid("N", "thermo_limit backend needs N >= M + K"));
            }
        }
        let (lo, hi) = self.analysis.singular_band;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(SimError::invalid("analysis.singular_band", "need 0 < lo < hi < 1"));
        }
        if !(self.analysis.drop_factor > 0.0 && self.analysis.drop_factor < 1.0) {
            return Err(SimError::invalid("analysis.drop_factor", "must lie in (0, 1)"));
        }
        if self.analysis.drop_trailing == 0 {
            return Err(SimError::invalid("analysis.drop_trailing", "must be at least 1"));
        }
        Ok(())
    }
}
