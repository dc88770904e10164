//! Online learning rules: plain SGD and hidden-unit dropout.
//!
//! A step is split in three phases so that the finite-`N` simulator and the
//! order-parameter backend share the same arithmetic:
//!
//! 1. the caller fills `StepStats::d` and `StepStats::y` with the teacher and
//!    student inner potentials for the current input;
//! 2. [`evaluate_rule`] computes the error signal, the per-unit factors `f`
//!    and the hidden-to-output increments from those potentials alone;
//! 3. [`apply_update`] performs the rank-one update `J_i += (eta/N) f_i xi`.
//!
//! All quantities in phase 2 use the pre-update weights.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{activation, activation_deriv, inner_potentials_into, InputSample, StudentNetwork, TeacherNetwork};
use crate::rng::SimRng;

/// Form of the hidden-to-output weight update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WUpdate {
    /// `w_i += (eta/N) delta g(y_i)`, the gradient of the squared error.
    #[default]
    Gradient,
    /// `w_i += (eta/N) delta y_i`, using the raw inner potential.
    PaperLiteral,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Exactly `round(p K)` units, chosen uniformly.
    #[default]
    FixedSize,
    /// Each unit kept independently with probability `p`; empty draws are redrawn.
    Bernoulli,
}

/// How a dropout-trained student produces its evaluation output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// `p * sum_i w_i g(y_i)` over all units on the current input.
    #[default]
    Rescaled,
    /// Selected units on the current input, the others from the cached
    /// activations of the previous step, all scaled by `p`.
    PaperLiteral,
}

/// The set of hidden units taking part in a learning step.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    selected: Vec<bool>,
    keep_prob: f64,
}

impl DropoutMask {
    /// Every unit selected, `p = 1`.
    pub fn all(k: usize) -> Self {
        Self {
            selected: vec![true; k],
            keep_prob: 1.0,
        }
    }

    pub fn new(selected: Vec<bool>, keep_prob: f64) -> Result<Self> {
        check_keep_prob(keep_prob)?;
        if !selected.iter().any(|s| *s) {
            return Err(SimError::invalid("mask", "at least one unit must be selected"));
        }
        Ok(Self { selected, keep_prob })
    }

    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    #[inline]
    pub fn is_selected(&self, i: usize) -> bool {
        self.selected[i]
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|s| **s).count()
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

fn check_keep_prob(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(SimError::invalid("p", format!("keep probability must lie in (0, 1], got {p}")))
    }
}

/// Number of units kept per step in fixed-size mode, at least one.
pub fn fixed_mask_size(k: usize, p: f64) -> usize {
    ((p * k as f64).round() as usize).clamp(1, k)
}

/// Everything a learning step computed and applied.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    /// Teacher output minus (masked) student output.
    pub delta: f64,
    /// Teacher inner potentials.
    pub d: Vec<f64>,
    /// Student inner potentials.
    pub y: Vec<f64>,
    /// `delta * w_i * g'(y_i)` for updated units, zero otherwise (all zero when `eta = 0`).
    pub f: Vec<f64>,
    /// Applied hidden-to-output increments.
    pub w_incr: Vec<f64>,
    pub mask: DropoutMask,
    pub norm_sq: f64,
}

impl StepStats {
    pub fn new(m: usize, k: usize) -> Self {
        Self {
            delta: 0.0,
            d: vec![0.0; m],
            y: vec![0.0; k],
            f: vec![0.0; k],
            w_incr: vec![0.0; k],
            mask: DropoutMask::all(k),
            norm_sq: 0.0,
        }
    }
}

/// Computes `delta`, `f` and `w_incr` from the potentials already stored in
/// `stats` and the pre-update output weights. `step_scale` is `eta / N`.
pub fn evaluate_rule(v: &[f64], w: &[f64], step_scale: f64, w_update: WUpdate, stats: &mut StepStats) -> Result<()> {
    let k = w.len();
    SimError::check_len("teacher potentials", v.len(), stats.d.len())?;
    SimError::check_len("student potentials", k, stats.y.len())?;
    SimError::check_len("mask", k, stats.mask.len())?;

    let teacher_out: f64 = v.iter().zip(&stats.d).map(|(vn, dn)| vn * activation(*dn)).sum();
    let mut student_out = 0.0;
    for i in 0..k {
        if stats.mask.is_selected(i) {
            student_out += w[i] * activation(stats.y[i]);
        }
    }
    let delta = teacher_out - student_out;
    if !delta.is_finite() {
        return Err(SimError::NonFinite("error signal"));
    }
    stats.delta = delta;

    // a zero step updates nothing, so no unit carries a factor
    let active = step_scale != 0.0;
    for i in 0..k {
        if active && stats.mask.is_selected(i) {
            let y = stats.y[i];
            stats.f[i] = delta * w[i] * activation_deriv(y);
            stats.w_incr[i] = match w_update {
                WUpdate::Gradient => step_scale * delta * activation(y),
                WUpdate::PaperLiteral => step_scale * delta * y,
            };
        } else {
            stats.f[i] = 0.0;
            stats.w_incr[i] = 0.0;
        }
    }
    if stats.f.iter().chain(&stats.w_incr).any(|x| !x.is_finite()) {
        return Err(SimError::NonFinite("weight increment"));
    }
    Ok(())
}

/// Applies the increments in `stats` to the selected units only.
pub fn apply_update(student: &mut StudentNetwork, input: &InputSample, step_scale: f64, stats: &StepStats) -> Result<()> {
    SimError::check_len("input", student.inputs(), input.len())?;
    SimError::check_len("step stats", student.hidden(), stats.f.len())?;
    for i in 0..student.hidden() {
        if !stats.mask.is_selected(i) {
            continue;
        }
        let coef = step_scale * stats.f[i];
        for (j, x) in student.j.row_mut(i).iter_mut().zip(input.xi()) {
            *j += coef * x;
        }
        student.w[i] += stats.w_incr[i];
    }
    Ok(())
}

/// One full learning step using the mask already stored in `stats`.
pub fn step_into(
    student: &mut StudentNetwork,
    teacher: &TeacherNetwork,
    input: &InputSample,
    eta: f64,
    w_update: WUpdate,
    stats: &mut StepStats,
) -> Result<()> {
    if !(eta >= 0.0) {
        return Err(SimError::invalid("eta", format!("must be non-negative, got {eta}")));
    }
    SimError::check_len("teacher inputs", student.inputs(), teacher.inputs())?;
    let step_scale = eta / student.inputs() as f64;
    inner_potentials_into(teacher.b(), input, &mut stats.d)?;
    inner_potentials_into(student.j(), input, &mut stats.y)?;
    stats.norm_sq = input.norm_sq();
    evaluate_rule(teacher.v(), student.w(), step_scale, w_update, stats)?;
    apply_update(student, input, step_scale, stats)
}

/// Plain SGD: every hidden unit is updated.
pub fn sgd_step(
    student: &mut StudentNetwork,
    teacher: &TeacherNetwork,
    input: &InputSample,
    eta: f64,
    w_update: WUpdate,
) -> Result<StepStats> {
    let mut stats = StepStats::new(teacher.hidden(), student.hidden());
    step_into(student, teacher, input, eta, w_update, &mut stats)?;
    Ok(stats)
}

/// Dropout step: only units in `mask` contribute to the error signal and
/// only they are updated. No `1/p` rescaling is applied during training.
pub fn dropout_step(
    student: &mut StudentNetwork,
    teacher: &TeacherNetwork,
    input: &InputSample,
    eta: f64,
    w_update: WUpdate,
    mask: &DropoutMask,
) -> Result<StepStats> {
    SimError::check_len("mask", student.hidden(), mask.len())?;
    let mut stats = StepStats::new(teacher.hidden(), student.hidden());
    stats.mask = mask.clone();
    step_into(student, teacher, input, eta, w_update, &mut stats)?;
    Ok(stats)
}

/// Redraws `mask` in place.
pub fn draw_mask_into(mask: &mut DropoutMask, p: f64, mode: MaskMode, rng: &mut SimRng) -> Result<()> {
    check_keep_prob(p)?;
    let k = mask.selected.len();
    if k == 0 {
        return Err(SimError::invalid("K", "must be at least 1"));
    }
    mask.keep_prob = p;
    match mode {
        MaskMode::FixedSize => {
            let count = fixed_mask_size(k, p);
            if count == k {
                mask.selected.iter_mut().for_each(|s| *s = true);
                return Ok(());
            }
            // partial Fisher-Yates over unit indices
            let mut idx: Vec<usize> = (0..k).collect();
            mask.selected.iter_mut().for_each(|s| *s = false);
            for s in 0..count {
                let j = s + rng.below(k - s);
                idx.swap(s, j);
                mask.selected[idx[s]] = true;
            }
        }
        MaskMode::Bernoulli => loop {
            for s in mask.selected.iter_mut() {
                *s = rng.uniform() < p;
            }
            if mask.selected.iter().any(|s| *s) {
                break;
            }
        },
    }
    Ok(())
}

pub fn draw_mask(k: usize, p: f64, mode: MaskMode, rng: &mut SimRng) -> Result<DropoutMask> {
    let mut mask = DropoutMask::all(k);
    draw_mask_into(&mut mask, p, mode, rng)?;
    Ok(mask)
}

/// Evaluation output of a dropout-trained student from precomputed
/// potentials `y` of the current input.
pub fn inference_from_potentials(
    w: &[f64],
    y: &[f64],
    mask: &DropoutMask,
    prev_outputs: &[f64],
    mode: InferenceMode,
) -> Result<f64> {
    let k = w.len();
    SimError::check_len("potentials", k, y.len())?;
    SimError::check_len("mask", k, mask.len())?;
    let p = mask.keep_prob();
    let sum: f64 = match mode {
        InferenceMode::Rescaled => (0..k).map(|i| w[i] * activation(y[i])).sum(),
        InferenceMode::PaperLiteral => {
            SimError::check_len("previous outputs", k, prev_outputs.len())?;
            (0..k)
                .map(|i| {
                    if mask.is_selected(i) {
                        w[i] * activation(y[i])
                    } else {
                        w[i] * prev_outputs[i]
                    }
                })
                .sum()
        }
    };
    Ok(p * sum)
}

/// Evaluation output of a dropout-trained student on `input`.
///
/// `prev_outputs` holds `g(y_j)` cached from the previous step and is only
/// read in [`InferenceMode::PaperLiteral`].
pub fn dropout_inference(
    student: &StudentNetwork,
    mask: &DropoutMask,
    input: &InputSample,
    prev_outputs: &[f64],
    mode: InferenceMode,
) -> Result<f64> {
    let mut y = vec![0.0; student.hidden()];
    inner_potentials_into(student.j(), input, &mut y)?;
    inference_from_potentials(student.w(), &y, mask, prev_outputs, mode)
}

#[inline]
pub fn squared_error(t_out: f64, s_out: f64) -> f64 {
    let diff = t_out - s_out;
    0.5 * diff * diff
}
