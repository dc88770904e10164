use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::model::{make_teacher, StudentNetwork, TeacherKind, Weights};
use crate::orderparams::{measure, monte_carlo_generalization_error, OrderParameters};
use crate::rng::SimRng;

/// Pass threshold on |analytic - MC| in standard errors.
pub const Z_THRESHOLD: f64 = 5.0;

const VERIFY_N: usize = 400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyTrial {
    pub index: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub singular: bool,
    pub analytic: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub trials: Vec<VerifyTrial>,
    pub passed: usize,
    pub threshold: f64,
}

/// Smallest standard error used in a z-score. States whose MC error is zero
/// up to rounding (a perfect student) would otherwise divide noise by noise.
const STDERR_FLOOR: f64 = 1e-12;

fn z_score(analytic: f64, mc: f64, stderr: f64) -> f64 {
    (analytic - mc) / stderr.max(STDERR_FLOOR)
}

/// Random finite-`N` state: a teacher as used in training, a student
/// `J = C B + s G` with correlated and independent parts, and `w ~ N(0, 1)`.
fn random_state(index: usize, max_m: usize, max_k: usize, rng: &mut SimRng) -> Result<(OrderParameters, Vec<f64>, Vec<f64>, bool)> {
    let m = 1 + rng.below(max_m);
    let k = 1 + rng.below(max_k);
    let singular = m == 2 && rng.uniform() < 0.25;
    let kind = if singular { TeacherKind::Singular } else { TeacherKind::Orthogonal };
    let teacher = make_teacher(m, VERIFY_N, kind, rng)?;
    let std = (1.0 / VERIFY_N as f64).sqrt();
    let mut rows = Vec::with_capacity(k);
    for _ in 0..k {
        let c: Vec<f64> = (0..m).map(|_| 0.6 * rng.normal()).collect();
        let s = 0.2 + 1.3 * rng.uniform();
        let row: Vec<f64> = (0..VERIFY_N)
            .map(|x| {
                let corr: f64 = (0..m).map(|n| c[n] * teacher.b().row(n)[x]).sum();
                corr + s * std * rng.normal()
            })
            .collect();
        rows.push(row);
    }
    let w = (0..k).map(|_| rng.normal()).collect();
    let student = StudentNetwork::new(Weights::from_rows(&rows)?, w)?;
    let op = measure(&teacher, &student).map_err(|e| SimError::CorruptState(format!("trial {index}: {e}")))?;
    Ok((op, teacher.v().to_vec(), student.w().to_vec(), singular))
}

/// Student identical to a random teacher with `M` units.
pub fn perfect_state(m: usize, n: usize, seed: u64) -> Result<(OrderParameters, Vec<f64>, Vec<f64>)> {
    let teacher = make_teacher(m, n, TeacherKind::Orthogonal, &mut SimRng::aux(seed, 0))?;
    let student = StudentNetwork::clone_of(&teacher);
    Ok((measure(&teacher, &student)?, teacher.v().to_vec(), student.w().to_vec()))
}

fn check_trial(index: usize, op: &OrderParameters, v: &[f64], w: &[f64], samples: usize, seed: u64, singular: bool) -> Result<VerifyTrial> {
    let mut rng = SimRng::aux(seed, 2 * index as u64 + 1);
    let rep = monte_carlo_generalization_error(op, v, w, samples, &mut rng)?;
    let z = z_score(rep.analytic, rep.mc_mean, rep.mc_stderr);
    Ok(VerifyTrial {
        index,
        m: op.teacher_units(),
        k: op.student_units(),
        singular,
        analytic: rep.analytic,
        mc_mean: rep.mc_mean,
        mc_stderr: rep.mc_stderr,
        z,
        pass: z.abs() <= Z_THRESHOLD,
    })
}

fn report(trials: Vec<VerifyTrial>) -> VerificationReport {
    VerificationReport {
        passed: trials.iter().filter(|t| t.pass).count(),
        trials,
        threshold: Z_THRESHOLD,
    }
}

/// Compares the closed-form error against Monte-Carlo on the given states.
pub fn verify_states(states: &[(OrderParameters, Vec<f64>, Vec<f64>)], samples: usize, seed: u64) -> Result<VerificationReport> {
    let trials = states
        .iter()
        .enumerate()
        .map(|(i, (op, v, w))| check_trial(i, op, v, w, samples, seed, false))
        .collect::<Result<_>>()?;
    Ok(report(trials))
}

/// Random-state verification. Trial `i` builds its state from auxiliary
/// stream `2i` and samples from stream `2i + 1`, so the report does not
/// depend on `threads`.
pub fn verify_generalization_error(
    trials: usize,
    max_m: usize,
    max_k: usize,
    samples: usize,
    seed: u64,
    threads: usize,
) -> Result<VerificationReport> {
    if trials == 0 {
        return Err(SimError::invalid("trials", "must be at least 1"));
    }
    if max_m == 0 || max_k == 0 {
        return Err(SimError::invalid("max_M", "max_M and max_K must be at least 1"));
    }
    let one = |i: usize| -> Result<VerifyTrial> {
        let mut rng = SimRng::aux(seed, 2 * i as u64);
        let (op, v, w, singular) = random_state(i, max_m, max_k, &mut rng)?;
        check_trial(i, &op, &v, &w, samples, seed, singular)
    };
    let out: Vec<VerifyTrial> = if threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| SimError::invalid("threads", e.to_string()))?;
        pool.install(|| (0..trials).into_par_iter().map(one).collect::<Result<_>>())?
    } else {
        (0..trials).map(one).collect::<Result<_>>()?
    };
    Ok(report(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_state_passes() {
        let state = perfect_state(3, 200, 9).unwrap();
        let rep = verify_states(&[state], 1000, 9).unwrap();
        assert_eq!(rep.passed, 1);
        assert!(rep.trials[0].analytic.abs() < 1e-12);
        assert!(rep.trials[0].z.abs() < 1e-6);
    }

    #[test]
    fn random_trials_are_deterministic_and_pass() {
        let a = verify_generalization_error(6, 4, 4, 20_000, 3, 1).unwrap();
        assert_eq!(a, verify_generalization_error(6, 4, 4, 20_000, 3, 1).unwrap());
        assert_eq!(a, verify_generalization_error(6, 4, 4, 20_000, 3, 2).unwrap());
        assert!(a.passed >= 5, "{a:?}");
        assert!(a.trials.iter().all(|t| t.m <= 4 && t.k <= 4 && t.analytic >= 0.0));
    }

    #[test]
    fn z_score_edge_cases() {
        assert_eq!(z_score(0.1, 0.1, 0.0), 0.0);
        assert!(z_score(0.1, 0.2, 0.0).abs() > 1e9);
        assert!((z_score(0.3, 0.1, 0.1) - 2.0).abs() < 1e-12);
    }
}
