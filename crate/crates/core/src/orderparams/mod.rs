//! Order parameters `Q = J J^T`, `R = J B^T`, `T = B B^T` and everything
//! computed from them: the closed-form generalization error, a Monte-Carlo
//! estimate of the same quantity, exact incremental tracking under the
//! rank-one learning updates, and the order-parameter-only simulation backend.
//!
//! For `g(x) = erf(x / sqrt 2)` and zero-mean jointly Gaussian `(u, v)`,
//! `E[g(u) g(v)] = (2/pi) asin(C_uv / sqrt((1 + C_uu)(1 + C_vv)))`, which
//! gives the generalization error as a bilinear form in the output weights.

mod gaussian;
mod thermo;

pub use gaussian::{GaussianFactor, EIGEN_FLOOR, PSD_TOLERANCE};
pub use thermo::{initial_thermo_state, thermo_apply, thermo_limit_step, thermo_sample_potentials, ThermoState};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::learning::StepStats;
use crate::model::{activation, dot, StudentNetwork, TeacherNetwork};
use crate::rng::SimRng;

/// Tolerance for the PSD and Cauchy-Schwarz invariants.
pub const INVARIANT_TOLERANCE: f64 = 1e-9;

/// How far an arcsine argument may leave [-1, 1] before the state is corrupt.
pub const ASIN_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct OrderParameters {
    /// K x K student-student overlaps.
    pub q: DMatrix<f64>,
    /// K x M student-teacher overlaps, `r[(i, n)] = J_i . B_n`.
    pub r: DMatrix<f64>,
    /// M x M teacher-teacher overlaps.
    pub t: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenErrorReport {
    pub analytic: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub samples: usize,
}

impl OrderParameters {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, t: DMatrix<f64>) -> Result<Self> {
        SimError::check_len("Q columns", q.nrows(), q.ncols())?;
        SimError::check_len("T columns", t.nrows(), t.ncols())?;
        SimError::check_len("R rows", q.nrows(), r.nrows())?;
        SimError::check_len("R columns", t.nrows(), r.ncols())?;
        Ok(Self { q, r, t })
    }

    /// Student `K`.
    pub fn student_units(&self) -> usize {
        self.q.nrows()
    }

    /// Teacher `M`.
    pub fn teacher_units(&self) -> usize {
        self.t.nrows()
    }

    /// `[[T, R^T], [R, Q]]`, teacher block first.
    pub fn block_covariance(&self) -> DMatrix<f64> {
        let (m, k) = (self.teacher_units(), self.student_units());
        let mut c = DMatrix::zeros(m + k, m + k);
        c.view_mut((0, 0), (m, m)).copy_from(&self.t);
        c.view_mut((m, m), (k, k)).copy_from(&self.q);
        c.view_mut((m, 0), (k, m)).copy_from(&self.r);
        c.view_mut((0, m), (m, k)).copy_from(&self.r.transpose());
        c
    }

    fn set_from_block(&mut self, c: &DMatrix<f64>) {
        let (m, k) = (self.teacher_units(), self.student_units());
        self.t.copy_from(&c.view((0, 0), (m, m)));
        self.q.copy_from(&c.view((m, m), (k, k)));
        self.r.copy_from(&c.view((m, 0), (k, m)));
    }

    /// Upper triangle of `Q`, row-major (`Q_11, Q_12, .., Q_1K, Q_22, ..`).
    pub fn q_upper(&self) -> Vec<f64> {
        let k = self.student_units();
        let mut out = Vec::with_capacity(k * (k + 1) / 2);
        for i in 0..k {
            for j in i..k {
                out.push(self.q[(i, j)]);
            }
        }
        out
    }

    /// `R` row-major (`R_11, R_12, .., R_1M, R_21, ..`).
    pub fn r_row_major(&self) -> Vec<f64> {
        let (k, m) = (self.student_units(), self.teacher_units());
        let mut out = Vec::with_capacity(k * m);
        for i in 0..k {
            for n in 0..m {
                out.push(self.r[(i, n)]);
            }
        }
        out
    }

    /// Largest entrywise difference over `Q`, `R` and `T`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let pairs = [(&self.q, &other.q), (&self.r, &other.r), (&self.t, &other.t)];
        pairs
            .iter()
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Symmetry, PSD of the block matrix and Cauchy-Schwarz, all within `tol`.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let sym_err = |a: &DMatrix<f64>| (a - a.transpose()).amax();
        if sym_err(&self.q) > tol || sym_err(&self.t) > tol {
            return Err(SimError::CorruptState("Q or T not symmetric".into()));
        }
        let c = self.block_covariance();
        let min = nalgebra::SymmetricEigen::new(c)
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min < -tol {
            return Err(SimError::NotPsd { min_eigenvalue: min });
        }
        for i in 0..self.student_units() {
            for n in 0..self.teacher_units() {
                let lhs = self.r[(i, n)].powi(2);
                let rhs = self.q[(i, i)] * self.t[(n, n)];
                if lhs > rhs + tol {
                    return Err(SimError::CorruptState(format!(
                        "Cauchy-Schwarz violated at R[{i},{n}]: {lhs} > {rhs}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exact overlaps of the current weights.
pub fn measure(teacher: &TeacherNetwork, student: &StudentNetwork) -> Result<OrderParameters> {
    SimError::check_len("input dimension", teacher.inputs(), student.inputs())?;
    let (m, k) = (teacher.hidden(), student.hidden());
    let b = teacher.b();
    let j = student.j();
    let t = DMatrix::from_fn(m, m, |a, c| dot(b.row(a), b.row(c)));
    let q = DMatrix::from_fn(k, k, |a, c| dot(j.row(a), j.row(c)));
    let r = DMatrix::from_fn(k, m, |i, n| dot(j.row(i), b.row(n)));
    OrderParameters::new(q, r, t)
}

fn asin_term(cov: f64, var_a: f64, var_b: f64) -> Result<f64> {
    let x = cov / ((1.0 + var_a) * (1.0 + var_b)).sqrt();
    if !x.is_finite() || x.abs() > 1.0 + ASIN_TOLERANCE {
        return Err(SimError::CorruptState(format!("arcsine argument {x} outside [-1, 1]")));
    }
    Ok(x.clamp(-1.0, 1.0).asin())
}

/// Closed-form generalization error `E[(t - s)^2] / 2` over Gaussian inputs.
pub fn analytic_generalization_error(op: &OrderParameters, v: &[f64], w: &[f64]) -> Result<f64> {
    let (m, k) = (op.teacher_units(), op.student_units());
    SimError::check_len("teacher output weights", m, v.len())?;
    SimError::check_len("student output weights", k, w.len())?;
    let (q, r, t) = (&op.q, &op.r, &op.t);

    let mut teacher_term = 0.0;
    for a in 0..m {
        for b in 0..m {
            teacher_term += v[a] * v[b] * asin_term(t[(a, b)], t[(a, a)], t[(b, b)])?;
        }
    }
    let mut student_term = 0.0;
    for i in 0..k {
        for j in 0..k {
            student_term += w[i] * w[j] * asin_term(q[(i, j)], q[(i, i)], q[(j, j)])?;
        }
    }
    let mut cross = 0.0;
    for i in 0..k {
        for n in 0..m {
            cross += w[i] * v[n] * asin_term(r[(i, n)], q[(i, i)], t[(n, n)])?;
        }
    }
    let eg = (teacher_term + student_term - 2.0 * cross) / std::f64::consts::PI;
    if !eg.is_finite() {
        return Err(SimError::NonFinite("generalization error"));
    }
    Ok(eg)
}

/// Samples `(d, y) ~ N(0, [[T, R^T], [R, Q]])` and averages `(t - s)^2 / 2`.
pub fn monte_carlo_generalization_error(
    op: &OrderParameters,
    v: &[f64],
    w: &[f64],
    samples: usize,
    rng: &mut SimRng,
) -> Result<GenErrorReport> {
    if samples < 2 {
        return Err(SimError::invalid("samples", "need at least 2"));
    }
    let analytic = analytic_generalization_error(op, v, w)?;
    let factor = assemble_covariance(op)?;
    let m = op.teacher_units();
    let dim = factor.dim();
    let (mut z, mut x) = (vec![0.0; dim], vec![0.0; dim]);
    // Welford
    let (mut mean, mut m2) = (0.0, 0.0);
    for s in 0..samples {
        factor.sample_into(rng, &mut z, &mut x);
        let t_out: f64 = v.iter().zip(&x[..m]).map(|(a, d)| a * activation(*d)).sum();
        let s_out: f64 = w.iter().zip(&x[m..]).map(|(a, y)| a * activation(*y)).sum();
        let e = 0.5 * (t_out - s_out).powi(2);
        let delta = e - mean;
        mean += delta / (s + 1) as f64;
        m2 += delta * (e - mean);
    }
    let var = m2 / (samples - 1) as f64;
    Ok(GenErrorReport {
        analytic,
        mc_mean: mean,
        mc_stderr: (var / samples as f64).sqrt(),
        samples,
    })
}

/// Degenerate-safe sampling factor of the block covariance (eigendecomposition
/// with eigenvalues below [`EIGEN_FLOOR`] clamped to zero).
pub fn assemble_covariance(op: &OrderParameters) -> Result<GaussianFactor> {
    GaussianFactor::eigen(&op.block_covariance())
}

/// Advances `op` by the rank-one update recorded in `stats`:
/// `R_in += c f_i d_n`, `Q_ij += c (f_i y_j + f_j y_i) + c^2 f_i f_j |xi|^2`
/// with `c = eta / N`. `T` is untouched.
pub fn incremental_update(op: &mut OrderParameters, stats: &StepStats, eta: f64, n: usize) {
    let c = eta / n as f64;
    let (k, m) = (op.student_units(), op.teacher_units());
    let f = &stats.f;
    for i in 0..k {
        if f[i] == 0.0 {
            continue;
        }
        for a in 0..m {
            op.r[(i, a)] += c * f[i] * stats.d[a];
        }
    }
    let c2n = c * c * stats.norm_sq;
    for i in 0..k {
        for j in i..k {
            if f[i] == 0.0 && f[j] == 0.0 {
                continue;
            }
            let inc = c * (f[i] * stats.y[j] + f[j] * stats.y[i]) + c2n * f[i] * f[j];
            op.q[(i, j)] += inc;
            if i != j {
                op.q[(j, i)] = op.q[(i, j)];
            }
        }
    }
}
