use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{run, RunSummary};
use super::SimConfig;
use crate::error::{Result, SimError};

/// Scalar metrics extracted from one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub final_mse: f64,
    pub symmetry_break_t: Option<f64>,
    pub singular_dwell: Option<f64>,
    pub diverged: bool,
}

impl RunMetrics {
    pub fn from_summary(summary: &RunSummary) -> Self {
        Self {
            final_mse: summary.final_record.mse_window,
            symmetry_break_t: summary.symmetry_break_t,
            singular_dwell: summary.singular_dwell,
            diverged: summary.diverged,
        }
    }

    /// `self - other` per metric; optional metrics only when both exist.
    pub fn minus(&self, other: &Self) -> MetricMedians {
        let sub = |a: Option<f64>, b: Option<f64>| Some(a? - b?);
        MetricMedians {
            final_mse: Some(self.final_mse - other.final_mse),
            symmetry_break_t: sub(self.symmetry_break_t, other.symmetry_break_t),
            singular_dwell: sub(self.singular_dwell, other.singular_dwell),
        }
    }
}

/// Per-metric values; used both for medians and for paired differences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMedians {
    pub final_mse: Option<f64>,
    pub symmetry_break_t: Option<f64>,
    pub singular_dwell: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub seed: u64,
    pub base: RunMetrics,
    pub variant: RunMetrics,
    /// `variant - base`.
    pub diff: MetricMedians,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<PairedRow>,
    pub base: MetricMedians,
    pub variant: MetricMedians,
    pub diff: MetricMedians,
}

/// Median of the finite values present; the mean of the middle pair for an
/// even count.
fn median(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = values.flatten().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn medians<'a>(rows: impl Iterator<Item = &'a MetricMedians> + Clone) -> MetricMedians {
    MetricMedians {
        final_mse: median(rows.clone().map(|m| m.final_mse)),
        symmetry_break_t: median(rows.clone().map(|m| m.symmetry_break_t)),
        singular_dwell: median(rows.map(|m| m.singular_dwell)),
    }
}

fn as_values(m: &RunMetrics) -> MetricMedians {
    MetricMedians {
        final_mse: Some(m.final_mse),
        symmetry_break_t: m.symmetry_break_t,
        singular_dwell: m.singular_dwell,
    }
}

/// Runs `base` and `variant` once per seed and tabulates paired metrics.
///
/// The two configs may differ only in `rule`; their own `seed` fields are
/// ignored. With `threads > 1` the runs execute on a dedicated pool; rows are
/// always in seed order, so the report does not depend on `threads`.
pub fn compare(base: &SimConfig, variant: &SimConfig, seeds: &[u64], threads: usize) -> Result<ComparisonReport> {
    if seeds.len() < 3 {
        return Err(SimError::invalid("seeds", format!("need at least 3, got {}", seeds.len())));
    }
    let mut aligned = variant.clone();
    aligned.rule = base.rule;
    aligned.seed = base.seed;
    if aligned != *base {
        return Err(SimError::invalid("variant", "configs may differ only in rule"));
    }
    base.validate()?;
    variant.validate()?;

    let one = |seed: u64| -> Result<PairedRow> {
        let mut b = base.clone();
        b.seed = seed;
        let mut v = variant.clone();
        v.seed = seed;
        let base = RunMetrics::from_summary(&run(&b)?.summary);
        let variant = RunMetrics::from_summary(&run(&v)?.summary);
        Ok(PairedRow {
            seed,
            diff: variant.minus(&base),
            base,
            variant,
        })
    };
    let rows: Vec<PairedRow> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| SimError::invalid("threads", e.to_string()))?;
        pool.install(|| seeds.par_iter().map(|&s| one(s)).collect::<Result<_>>())?
    } else {
        seeds.iter().map(|&s| one(s)).collect::<Result<_>>()?
    };

    let base_vals: Vec<MetricMedians> = rows.iter().map(|r| as_values(&r.base)).collect();
    let variant_vals: Vec<MetricMedians> = rows.iter().map(|r| as_values(&r.variant)).collect();
    Ok(ComparisonReport {
        base: medians(base_vals.iter()),
        variant: medians(variant_vals.iter()),
        diff: medians(rows.iter().map(|r| &r.diff)),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Rule;
    use crate::model::TeacherKind;

    fn base() -> SimConfig {
        let mut c = SimConfig::new(2, 3, 3_000, 0, Rule::Sgd).with_n(30);
        c.eta = 0.5;
        c.teacher_kind = TeacherKind::Singular;
        c
    }

    #[test]
    fn median_rules() {
        assert_eq!(median([Some(3.0), None, Some(1.0), Some(2.0)].into_iter()), Some(2.0));
        assert_eq!(median([Some(4.0), Some(1.0)].into_iter()), Some(2.5));
        assert_eq!(median([None, Some(f64::NAN)].into_iter()), None);
    }

    #[test]
    fn identical_configs_give_zero_differences() {
        let r = compare(&base(), &base(), &[1, 2, 3], 1).unwrap();
        for row in &r.rows {
            assert_eq!(row.base, row.variant);
            assert_eq!(row.diff.final_mse, Some(0.0));
            assert_eq!(row.diff.singular_dwell, Some(0.0));
        }
        assert_eq!(r.diff.final_mse, Some(0.0));
    }

    #[test]
    fn swapping_negates_and_threads_do_not_matter() {
        let v = {
            let mut v = base();
            v.rule = Rule::dropout(0.5);
            v
        };
        let seeds = [4, 5, 6, 7];
        let ab = compare(&base(), &v, &seeds, 1).unwrap();
        let ba = compare(&v, &base(), &seeds, 1).unwrap();
        assert_eq!(ab.base, ba.variant);
        for (x, y) in ab.rows.iter().zip(&ba.rows) {
            assert_eq!(x.diff.final_mse.map(|d| -d), y.diff.final_mse);
            assert_eq!(x.diff.singular_dwell.map(|d| -d), y.diff.singular_dwell);
        }
        assert_eq!(ab.diff.final_mse.map(|d| -d), ba.diff.final_mse);
        assert_eq!(compare(&base(), &v, &seeds, 3).unwrap(), ab);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(compare(&base(), &base(), &[1, 2], 1).is_err());
        let mut v = base();
        v.eta = 0.1;
        assert!(compare(&base(), &v, &[1, 2, 3], 1).is_err());
    }
}
