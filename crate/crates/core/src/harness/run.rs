use serde::{Deserialize, Serialize};

use super::analysis::{detect_plateaus_with, detect_symmetry_break_with, singular_dwell, Plateau};
use super::{Backend, Rule, SimConfig};
use crate::error::{Result, SimError};
use crate::learning::{
    apply_update, draw_mask_into, evaluate_rule, inference_from_potentials, squared_error, InferenceMode, StepStats,
};
use crate::model::{
    activation, forward, inner_potentials_into, make_student, make_teacher_with, InputSample,
    StudentNetwork, TeacherKind, TeacherNetwork, TeacherOptions,
};
use crate::orderparams::{
    analytic_generalization_error, incremental_update, initial_thermo_state, measure, thermo_apply,
    thermo_sample_potentials, OrderParameters, ThermoState,
};
use crate::rng::{SimRng, Stream};

/// One sampled point of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// Time `m / N`.
    pub t: f64,
    /// Mean of `(t - s)^2 / 2` over the last `window` steps. For dropout the
    /// student output is the evaluation output; the record at `t = 0` holds
    /// the analytic error of the initial state.
    pub mse_window: f64,
    /// Closed-form error of the current state (dropout: weights scaled by `p`).
    pub eg_analytic: f64,
    pub w: Vec<f64>,
    /// Upper triangle of `Q`, row-major.
    pub q: Vec<f64>,
    /// `R` (K x M), row-major.
    pub r: Vec<f64>,
}

impl TrajectoryRecord {
    /// Largest `|R_in|` over all student and teacher units.
    pub fn max_abs_r(&self) -> f64 {
        self.r.iter().fold(0.0, |a, x| a.max(x.abs()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_record: TrajectoryRecord,
    pub plateaus: Vec<Plateau>,
    pub symmetry_break_t: Option<f64>,
    /// Only reported for a singular teacher.
    pub singular_dwell: Option<f64>,
    pub diverged: bool,
    /// Step at which a non-finite or corrupt state was detected.
    pub diverged_at: Option<u64>,
    pub steps_completed: u64,
    /// Largest |tracked - measured| over all re-measurement checkpoints
    /// (direct backend only).
    pub max_remeasure_drift: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    pub summary: RunSummary,
    /// Teacher overlaps `T` at the start of the run, row-major.
    pub teacher_overlaps: Vec<f64>,
}

enum Engine {
    Direct {
        teacher: TeacherNetwork,
        student: StudentNetwork,
        input: InputSample,
        op: OrderParameters,
    },
    Thermo(ThermoState),
}

impl Engine {
    fn op(&self) -> &OrderParameters {
        match self {
            Engine::Direct { op, .. } => op,
            Engine::Thermo(s) => &s.op,
        }
    }

    fn w(&self) -> &[f64] {
        match self {
            Engine::Direct { student, .. } => student.w(),
            Engine::Thermo(s) => &s.w,
        }
    }

    fn v(&self) -> &[f64] {
        match self {
            Engine::Direct { teacher, .. } => teacher.v(),
            Engine::Thermo(s) => &s.v,
        }
    }
}

/// Fixed-capacity trailing buffer of per-step errors.
struct ErrorWindow {
    buf: Vec<f64>,
    next: usize,
    filled: usize,
}

impl ErrorWindow {
    fn new(window: usize) -> Self {
        Self {
            buf: vec![0.0; window],
            next: 0,
            filled: 0,
        }
    }

    fn push(&mut self, e: f64) {
        self.buf[self.next] = e;
        self.next = (self.next + 1) % self.buf.len();
        self.filled = (self.filled + 1).min(self.buf.len());
    }

    fn mean(&self) -> Option<f64> {
        (self.filled > 0).then(|| self.buf[..self.filled].iter().sum::<f64>() / self.filled as f64)
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    engine: Engine,
    stats: StepStats,
    input_rng: SimRng,
    mask_rng: SimRng,
    errors: ErrorWindow,
    prev_outputs: Vec<f64>,
    max_drift: Option<f64>,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        let mut teacher_rng = SimRng::for_stream(cfg.seed, Stream::Teacher);
        let mut student_rng = SimRng::for_stream(cfg.seed, Stream::Student);
        let engine = match cfg.backend {
            Backend::Direct => {
                let opts = TeacherOptions {
                    orthonormalize: cfg.orthonormalize,
                    output_weight: cfg.teacher_output_weight,
                };
                let teacher = make_teacher_with(cfg.m, cfg.n, cfg.teacher_kind, &opts, &mut teacher_rng)?;
                let student = make_student(cfg.k, cfg.n, &mut student_rng)?;
                let op = measure(&teacher, &student)?;
                // overwritten by the first resample
                let input = InputSample::from_vec(vec![0.0; cfg.n]);
                Engine::Direct {
                    teacher,
                    student,
                    input,
                    op,
                }
            }
            Backend::ThermoLimit => Engine::Thermo(initial_thermo_state(
                cfg.m,
                cfg.k,
                cfg.n,
                cfg.teacher_kind,
                cfg.orthonormalize,
                cfg.teacher_output_weight,
                &mut teacher_rng,
                &mut student_rng,
            )?),
        };
        let mut stats = StepStats::new(cfg.m, cfg.k);
        if let Rule::Dropout { p, .. } = cfg.rule {
            // keep_prob is fixed for the run; the selection is redrawn every step
            stats.mask = crate::learning::DropoutMask::new(vec![true; cfg.k], p)?;
        }
        Ok(Self {
            cfg,
            engine,
            stats,
            input_rng: SimRng::for_stream(cfg.seed, Stream::Inputs),
            mask_rng: SimRng::for_stream(cfg.seed, Stream::Masks),
            errors: ErrorWindow::new(cfg.window as usize),
            prev_outputs: Vec::new(),
            max_drift: None,
        })
    }

    fn inference_mode(&self) -> InferenceMode {
        match self.cfg.rule {
            Rule::Sgd => InferenceMode::Rescaled,
            Rule::Dropout { inference_mode, .. } => inference_mode,
        }
    }

    /// One learning step `m` (1-based).
    fn step(&mut self, m: u64) -> Result<()> {
        let cfg = self.cfg;
        let step_scale = cfg.eta / cfg.n as f64;
        if let Rule::Dropout { p, mask_mode, .. } = cfg.rule {
            draw_mask_into(&mut self.stats.mask, p, mask_mode, &mut self.mask_rng)?;
        }
        match &mut self.engine {
            Engine::Direct { teacher, student, input, .. } => {
                input.resample(cfg.input_dist, &mut self.input_rng);
                inner_potentials_into(teacher.b(), input, &mut self.stats.d)?;
                inner_potentials_into(student.j(), input, &mut self.stats.y)?;
                self.stats.norm_sq = input.norm_sq();
            }
            Engine::Thermo(state) => thermo_sample_potentials(state, &mut self.input_rng, &mut self.stats)?,
        }
        evaluate_rule(self.engine.v(), self.engine.w(), step_scale, cfg.w_update, &mut self.stats)?;

        // evaluation error on pre-update weights
        let mode = self.inference_mode();
        if self.prev_outputs.is_empty() {
            self.prev_outputs = self.stats.y.iter().map(|y| activation(*y)).collect();
        }
        let t_out = forward(self.engine.v(), &self.stats.d)?;
        let s_out = inference_from_potentials(self.engine.w(), &self.stats.y, &self.stats.mask, &self.prev_outputs, mode)?;
        let e = squared_error(t_out, s_out);
        if !e.is_finite() {
            return Err(SimError::NonFinite("squared error"));
        }
        self.errors.push(e);
        if mode == InferenceMode::PaperLiteral {
            for (p, y) in self.prev_outputs.iter_mut().zip(&self.stats.y) {
                *p = activation(*y);
            }
        }

        match &mut self.engine {
            Engine::Direct {
                teacher,
                student,
                input,
                op,
            } => {
                apply_update(student, input, step_scale, &self.stats)?;
                incremental_update(op, &self.stats, cfg.eta, cfg.n);
                if m % cfg.remeasure_every == 0 {
                    let fresh = measure(teacher, student)?;
                    let drift = op.max_abs_diff(&fresh);
                    if !drift.is_finite() {
                        return Err(SimError::NonFinite("order parameters"));
                    }
                    self.max_drift = Some(self.max_drift.map_or(drift, |d: f64| d.max(drift)));
                    *op = fresh;
                }
                if student.w().iter().any(|w| !w.is_finite()) {
                    return Err(SimError::NonFinite("student output weights"));
                }
            }
            Engine::Thermo(state) => thermo_apply(state, &self.stats, cfg.eta)?,
        }
        Ok(())
    }

    fn record(&self, m: u64) -> Result<TrajectoryRecord> {
        let op = self.engine.op();
        let p = self.cfg.rule.keep_prob();
        let w_eval: Vec<f64> = self.engine.w().iter().map(|w| p * w).collect();
        let eg = analytic_generalization_error(op, self.engine.v(), &w_eval)?;
        let mse_window = self.errors.mean().unwrap_or(eg);
        Ok(TrajectoryRecord {
            t: m as f64 / self.cfg.n as f64,
            mse_window,
            eg_analytic: eg,
            w: self.engine.w().to_vec(),
            q: op.q_upper(),
            r: op.r_row_major(),
        })
    }
}

/// Runs one simulation. Configuration errors are returned as `Err`;
/// divergence during the run stops it and is reported in the summary, with
/// the trajectory recorded up to that point.
pub fn run(cfg: &SimConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut sim = Sim::new(cfg)?;
    let teacher_overlaps: Vec<f64> = sim.engine.op().t.transpose().iter().cloned().collect();
    let mut records = vec![sim.record(0)?];
    let mut diverged_at = None;
    let mut completed = 0;
    for m in 1..=cfg.steps {
        let outcome = sim.step(m).and_then(|_| {
            if m % cfg.sample_every == 0 {
                records.push(sim.record(m)?);
            }
            Ok(())
        });
        match outcome {
            Ok(()) => completed = m,
            Err(SimError::NonFinite(_) | SimError::NotPsd { .. } | SimError::CorruptState(_)) => {
                diverged_at = Some(m);
                break;
            }
            Err(other) => return Err(other),
        }
    }

    let series: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.mse_window)).collect();
    let plateaus = if series.len() >= 3 {
        detect_plateaus_with(&series, &cfg.analysis.plateau())?
    } else {
        Vec::new()
    };
    let symmetry_break_t = detect_symmetry_break_with(
        &series,
        cfg.analysis.drop_factor,
        cfg.analysis.drop_trailing,
        &cfg.analysis.plateau(),
    );
    let singular = if cfg.teacher_kind == TeacherKind::Singular {
        let r_series: Vec<(f64, Vec<f64>)> = records.iter().map(|r| (r.t, r.r.clone())).collect();
        Some(singular_dwell(&r_series, cfg.analysis.singular_band)?)
    } else {
        None
    };
    let summary = RunSummary {
        final_record: records.last().cloned().expect("initial record"),
        plateaus,
        symmetry_break_t,
        singular_dwell: singular,
        diverged: diverged_at.is_some(),
        diverged_at,
        steps_completed: completed,
        max_remeasure_drift: sim.max_drift,
    };
    Ok(RunOutput {
        records,
        summary,
        teacher_overlaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::MaskMode;
    use crate::model::InputDist;

    fn small(rule: Rule) -> SimConfig {
        let mut c = SimConfig::new(2, 3, 2_000, 11, rule).with_n(50);
        c.eta = 0.5;
        c
    }

    #[test]
    fn zero_steps_gives_initial_record() {
        let mut c = small(Rule::Sgd);
        c.steps = 0;
        let out = run(&c).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.t, 0.0);
        assert_eq!(r.mse_window, r.eg_analytic);
        // teacher term ~1/12 for nearly orthogonal rows, plus the student's own
        assert!(r.eg_analytic > 0.0);
        assert!(!out.summary.diverged);
    }

    #[test]
    fn deterministic() {
        for backend in [Backend::Direct, Backend::ThermoLimit] {
            let mut c = small(Rule::dropout(0.5));
            c.backend = backend;
            let a = run(&c).unwrap();
            let b = run(&c).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.records.len(), 2_000 / 50 + 1);
        }
    }

    #[test]
    fn full_keep_dropout_matches_sgd() {
        for backend in [Backend::Direct, Backend::ThermoLimit] {
            let mut sgd = small(Rule::Sgd);
            sgd.backend = backend;
            let mut drop = sgd.clone();
            drop.rule = Rule::Dropout {
                p: 1.0,
                mask_mode: MaskMode::FixedSize,
                inference_mode: InferenceMode::Rescaled,
            };
            assert_eq!(run(&sgd).unwrap().records, run(&drop).unwrap().records);
        }
    }

    #[test]
    fn remeasure_drift_is_small() {
        let mut c = small(Rule::Sgd);
        c.remeasure_every = 500;
        c.input_dist = InputDist::Rademacher;
        let out = run(&c).unwrap();
        let drift = out.summary.max_remeasure_drift.unwrap();
        assert!(drift <= 1e-6, "{drift}");
    }

    #[test]
    fn divergence_is_flagged() {
        let mut c = small(Rule::Sgd);
        c.eta = 1e6;
        c.teacher_output_weight = 1e150;
        let out = run(&c).unwrap();
        assert!(out.summary.diverged);
        assert!(out.summary.diverged_at.is_some());
        assert!(!out.records.is_empty());
    }

    #[test]
    fn singular_dwell_only_for_singular_teacher() {
        let c = small(Rule::Sgd);
        assert!(run(&c).unwrap().summary.singular_dwell.is_none());
        let mut c = small(Rule::Sgd);
        c.m = 2;
        c.teacher_kind = TeacherKind::Singular;
        assert!(run(&c).unwrap().summary.singular_dwell.is_some());
    }
}
