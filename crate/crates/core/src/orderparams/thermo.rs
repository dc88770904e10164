//! Order-parameter backend for the large-`N` limit.
//!
//! Inner potentials are drawn directly from `N(0, [[T, R^T], [R, Q]])` and the
//! order parameters advance by the same recurrences as in the finite-`N`
//! tracker with `|xi|^2 = N`. No `N`-dimensional vector is ever stored; `N`
//! only sets the step size `eta / N` and the time unit.

use nalgebra::DMatrix;

use super::gaussian::{project_psd, GaussianFactor};
use super::{incremental_update, OrderParameters};
use crate::error::{Result, SimError};
use crate::learning::{evaluate_rule, StepStats, WUpdate};
use crate::model::{TeacherKind, STUDENT_W_VARIANCE};
use crate::rng::SimRng;

/// Macroscopic state of one run: overlaps plus both output-weight vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermoState {
    pub op: OrderParameters,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    /// Nominal input dimension.
    pub n: usize,
}

/// Initial overlaps distributed exactly as the Gram matrix of independent
/// N(0, I/N) weight vectors, drawn through the Bartlett decomposition so that
/// no `N`-vector is materialized. Teacher vectors come first; a singular
/// teacher draws one vector and duplicates it. With `orthonormalize` the
/// teacher vectors are replaced by their Gram-Schmidt basis.
///
/// The Gram matrix comes from `teacher_rng`, the output weights `w ~ N(0, 0.1)`
/// from `student_rng`.
pub fn initial_thermo_state(
    m: usize,
    k: usize,
    n: usize,
    kind: TeacherKind,
    orthonormalize: bool,
    teacher_output_weight: f64,
    teacher_rng: &mut SimRng,
    student_rng: &mut SimRng,
) -> Result<ThermoState> {
    if m == 0 || k == 0 {
        return Err(SimError::invalid("hidden units", "must be at least 1"));
    }
    if kind == TeacherKind::Singular && m != 2 {
        return Err(SimError::invalid("M", format!("singular teacher requires M = 2, got {m}")));
    }
    let m_free = if kind == TeacherKind::Singular { 1 } else { m };
    let p = m_free + k;
    if n < p {
        return Err(SimError::invalid(
            "N",
            format!("order-parameter backend needs N >= {p} for M = {m}, K = {k}"),
        ));
    }

    // rows of `coords` are the vectors in an orthonormal basis, scaled by sqrt(N)
    let mut coords = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        coords[(i, i)] = teacher_rng.chi_square((n - i) as f64).sqrt();
        for j in 0..i {
            coords[(i, j)] = teacher_rng.normal();
        }
    }
    coords /= (n as f64).sqrt();
    if orthonormalize {
        // lower-triangular rows with positive diagonal orthonormalize to unit vectors
        for i in 0..m_free {
            coords.row_mut(i).fill(0.0);
            coords[(i, i)] = 1.0;
        }
    }
    let teacher_rows: Vec<usize> = match kind {
        TeacherKind::Orthogonal => (0..m).collect(),
        TeacherKind::Singular => vec![0, 0],
    };
    let rows: Vec<usize> = teacher_rows.iter().cloned().chain(m_free..p).collect();
    let full = DMatrix::from_fn(m + k, p, |r, c| coords[(rows[r], c)]);
    let gram = &full * full.transpose();

    let op = OrderParameters::new(
        gram.view((m, m), (k, k)).into_owned(),
        gram.view((m, 0), (k, m)).into_owned(),
        gram.view((0, 0), (m, m)).into_owned(),
    )?;
    let w_std = STUDENT_W_VARIANCE.sqrt();
    let w = (0..k).map(|_| w_std * student_rng.normal()).collect();
    Ok(ThermoState {
        op,
        w,
        v: vec![teacher_output_weight; m],
        n,
    })
}

/// One learning step in the large-`N` limit, using the mask already stored in
/// `stats` (all units for SGD).
pub fn thermo_limit_step(
    state: &mut ThermoState,
    eta: f64,
    w_update: WUpdate,
    rng: &mut SimRng,
    stats: &mut StepStats,
) -> Result<()> {
    if !(eta >= 0.0) {
        return Err(SimError::invalid("eta", format!("must be non-negative, got {eta}")));
    }
    thermo_sample_potentials(state, rng, stats)?;
    evaluate_rule(&state.v, &state.w, eta / state.n as f64, w_update, stats)?;
    thermo_apply(state, stats, eta)
}

/// Draws `(d, y)` for the current state into `stats` and sets `norm_sq = N`.
///
/// A block covariance that fails Cholesky is eigendecomposed; eigenvalues in
/// `(-1e-6, 0)` are treated as drift and the state is projected back onto the
/// PSD cone, anything more negative is an error.
pub fn thermo_sample_potentials(state: &mut ThermoState, rng: &mut SimRng, stats: &mut StepStats) -> Result<()> {
    let (m, k) = (state.op.teacher_units(), state.op.student_units());
    SimError::check_len("teacher potentials", m, stats.d.len())?;
    SimError::check_len("student potentials", k, stats.y.len())?;
    let mut cov = state.op.block_covariance();
    let mut factor = GaussianFactor::fast(&cov)?;
    if factor.min_eigenvalue().is_some_and(|e| e < 0.0) {
        cov = project_psd(&cov)?;
        state.op.set_from_block(&cov);
        factor = GaussianFactor::eigen(&cov)?;
    }
    let mut z = vec![0.0; m + k];
    let mut x = vec![0.0; m + k];
    factor.sample_into(rng, &mut z, &mut x);
    stats.d.copy_from_slice(&x[..m]);
    stats.y.copy_from_slice(&x[m..]);
    stats.norm_sq = state.n as f64;
    Ok(())
}

/// Applies the increments already evaluated into `stats`.
pub fn thermo_apply(state: &mut ThermoState, stats: &StepStats, eta: f64) -> Result<()> {
    incremental_update(&mut state.op, stats, eta, state.n);
    for (wi, inc) in state.w.iter_mut().zip(&stats.w_incr) {
        *wi += inc;
    }
    if state.op.q.iter().chain(state.op.r.iter()).any(|x| !x.is_finite()) {
        return Err(SimError::NonFinite("order parameters"));
    }
    Ok(())
}
