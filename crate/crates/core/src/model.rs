//! Teacher and student networks, the hidden-unit activation, input sampling
//! and the forward pass.
//!
//! Both networks are two-layer: `N` inputs feed `M` (teacher) or `K`
//! (student) hidden units through input-to-hidden weight rows, and a single
//! linear output sums the hidden activations with hidden-to-output weights.
//! There are no biases.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::SimRng;

/// sqrt(2 / pi), the slope of the activation at the origin.
pub const ACTIVATION_SLOPE_AT_ZERO: f64 = 0.797_884_560_802_865_4;

/// Default teacher hidden-to-output weight.
pub const TEACHER_OUTPUT_WEIGHT: f64 = 0.5;

/// Variance of the initial student hidden-to-output weights.
pub const STUDENT_W_VARIANCE: f64 = 0.1;

/// Hidden-unit activation `erf(x / sqrt 2)`.
///
/// `libm::erf` is the fdlibm rational approximation (error below one ulp),
/// which keeps results identical across platforms.
#[inline]
pub fn activation(x: f64) -> f64 {
    libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Derivative of [`activation`]: `sqrt(2/pi) * exp(-x^2 / 2)`.
#[inline]
pub fn activation_deriv(x: f64) -> f64 {
    ACTIVATION_SLOPE_AT_ZERO * libm::exp(-0.5 * x * x)
}

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dense row-major weight matrix; row `r` is one hidden unit's weight vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Weights {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            SimError::check_len("weight row", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    fn fill_normal(&mut self, std: f64, rng: &mut SimRng) {
        for x in self.data.iter_mut() {
            *x = std * rng.normal();
        }
    }

    /// Classical Gram-Schmidt over rows, normalizing each to unit length.
    fn orthonormalize(&mut self) {
        for r in 0..self.rows {
            for p in 0..r {
                let proj = dot(self.row(r), self.row(p));
                let (head, tail) = self.data.split_at_mut(r * self.cols);
                let prev = &head[p * self.cols..(p + 1) * self.cols];
                for (x, b) in tail[..self.cols].iter_mut().zip(prev) {
                    *x -= proj * b;
                }
            }
            let norm = dot(self.row(r), self.row(r)).sqrt();
            if norm > 0.0 {
                self.row_mut(r).iter_mut().for_each(|x| *x /= norm);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// Independent random rows, orthogonal only as `N` grows.
    Orthogonal,
    /// Two identical rows (`B_1 = B_2`); requires `M = 2`.
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDist {
    Gaussian,
    Rademacher,
}

/// Optional knobs for teacher construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TeacherOptions {
    /// Apply Gram-Schmidt to the drawn rows.
    pub orthonormalize: bool,
    /// Value of every hidden-to-output weight.
    pub output_weight: f64,
}

impl Default for TeacherOptions {
    fn default() -> Self {
        Self {
            orthonormalize: false,
            output_weight: TEACHER_OUTPUT_WEIGHT,
        }
    }
}

/// Fixed reference network.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherNetwork {
    b: Weights,
    v: Vec<f64>,
    kind: TeacherKind,
}

impl TeacherNetwork {
    pub fn new(b: Weights, v: Vec<f64>, kind: TeacherKind) -> Result<Self> {
        SimError::check_len("teacher output weights", b.rows(), v.len())?;
        if kind == TeacherKind::Singular && (b.rows() != 2 || b.row(0) != b.row(1)) {
            return Err(SimError::invalid(
                "teacher_kind",
                "singular teacher needs exactly two identical rows",
            ));
        }
        Ok(Self { b, v, kind })
    }

    pub fn b(&self) -> &Weights {
        &self.b
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn kind(&self) -> TeacherKind {
        self.kind
    }

    pub fn hidden(&self) -> usize {
        self.b.rows()
    }

    pub fn inputs(&self) -> usize {
        self.b.cols()
    }
}

/// Learnable network. Weights change only through the learning rules.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentNetwork {
    pub(crate) j: Weights,
    pub(crate) w: Vec<f64>,
}

impl StudentNetwork {
    pub fn new(j: Weights, w: Vec<f64>) -> Result<Self> {
        SimError::check_len("student output weights", j.rows(), w.len())?;
        Ok(Self { j, w })
    }

    /// A student that reproduces `teacher` exactly.
    pub fn clone_of(teacher: &TeacherNetwork) -> Self {
        Self {
            j: teacher.b.clone(),
            w: teacher.v.clone(),
        }
    }

    pub fn j(&self) -> &Weights {
        &self.j
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn hidden(&self) -> usize {
        self.j.rows()
    }

    pub fn inputs(&self) -> usize {
        self.j.cols()
    }
}

fn check_dims(hidden: usize, inputs: usize) -> Result<()> {
    if hidden == 0 {
        return Err(SimError::invalid("hidden units", "must be at least 1"));
    }
    if inputs == 0 {
        return Err(SimError::invalid("N", "must be at least 1"));
    }
    Ok(())
}

pub fn make_teacher(m: usize, n: usize, kind: TeacherKind, rng: &mut SimRng) -> Result<TeacherNetwork> {
    make_teacher_with(m, n, kind, &TeacherOptions::default(), rng)
}

/// Draws `B` with i.i.d. N(0, 1/N) entries, row by row. For the singular
/// kind only the first row is drawn and then copied.
pub fn make_teacher_with(
    m: usize,
    n: usize,
    kind: TeacherKind,
    opts: &TeacherOptions,
    rng: &mut SimRng,
) -> Result<TeacherNetwork> {
    check_dims(m, n)?;
    let std = (1.0 / n as f64).sqrt();
    let b = match kind {
        TeacherKind::Orthogonal => {
            let mut b = Weights::zeros(m, n);
            b.fill_normal(std, rng);
            if opts.orthonormalize {
                b.orthonormalize();
            }
            b
        }
        TeacherKind::Singular => {
            if m != 2 {
                return Err(SimError::invalid("M", format!("singular teacher requires M = 2, got {m}")));
            }
            let mut first = Weights::zeros(1, n);
            first.fill_normal(std, rng);
            if opts.orthonormalize {
                first.orthonormalize();
            }
            let row = first.row(0).to_vec();
            Weights::from_rows(&[row.clone(), row])?
        }
    };
    TeacherNetwork::new(b, vec![opts.output_weight; m], kind)
}

/// `J` entries N(0, 1/N) row by row, then `w` entries N(0, 0.1).
pub fn make_student(k: usize, n: usize, rng: &mut SimRng) -> Result<StudentNetwork> {
    check_dims(k, n)?;
    let mut j = Weights::zeros(k, n);
    j.fill_normal((1.0 / n as f64).sqrt(), rng);
    let w_std = STUDENT_W_VARIANCE.sqrt();
    let w = (0..k).map(|_| w_std * rng.normal()).collect();
    Ok(StudentNetwork { j, w })
}

/// One input pattern with its cached squared norm.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSample {
    xi: Vec<f64>,
    norm_sq: f64,
}

impl InputSample {
    pub fn from_vec(xi: Vec<f64>) -> Self {
        let norm_sq = xi.iter().map(|x| x * x).sum();
        Self { xi, norm_sq }
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Redraws in place, reusing the buffer.
    pub fn resample(&mut self, dist: InputDist, rng: &mut SimRng) {
        match dist {
            InputDist::Gaussian => {
                rng.fill_normal(&mut self.xi);
                self.norm_sq = self.xi.iter().map(|x| x * x).sum();
            }
            InputDist::Rademacher => {
                rng.fill_rademacher(&mut self.xi);
                self.norm_sq = self.xi.len() as f64;
            }
        }
    }
}

pub fn sample_input(n: usize, dist: InputDist, rng: &mut SimRng) -> Result<InputSample> {
    check_dims(1, n)?;
    let mut s = InputSample {
        xi: vec![0.0; n],
        norm_sq: 0.0,
    };
    s.resample(dist, rng);
    Ok(s)
}

/// `out[r] = W_r . xi`.
pub fn inner_potentials_into(w: &Weights, input: &InputSample, out: &mut [f64]) -> Result<()> {
    SimError::check_len("input", w.cols(), input.len())?;
    SimError::check_len("potentials", w.rows(), out.len())?;
    for (o, row) in out.iter_mut().zip(w.iter_rows()) {
        *o = dot(row, input.xi());
    }
    Ok(())
}

pub fn inner_potentials(w: &Weights, input: &InputSample) -> Result<Vec<f64>> {
    let mut out = vec![0.0; w.rows()];
    inner_potentials_into(w, input, &mut out)?;
    Ok(out)
}

/// `sum_r out_weights[r] * activation(potentials[r])`.
pub fn forward(out_weights: &[f64], potentials: &[f64]) -> Result<f64> {
    SimError::check_len("forward", out_weights.len(), potentials.len())?;
    Ok(out_weights
        .iter()
        .zip(potentials)
        .map(|(w, x)| w * activation(*x))
        .sum())
}
