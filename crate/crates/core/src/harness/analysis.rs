use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// A maximal flat stretch of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub t_start: f64,
    pub t_end: f64,
    /// Mean value over the interval.
    pub level: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauOptions {
    /// Largest |d ln(value) / dt| counted as flat.
    pub slope_tol: f64,
    pub min_duration: f64,
    /// Records on each side of the centre used by the slope fit.
    pub fit_half_width: usize,
}

impl Default for PlateauOptions {
    fn default() -> Self {
        Self {
            slope_tol: 1e-5,
            min_duration: 200.0,
            fit_half_width: 25,
        }
    }
}

/// Trailing mean over `window` entries; the first `window - 1` outputs average
/// whatever is available.
pub fn windowed_mse(errors: &[f64], window: usize) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(SimError::invalid("errors", "empty series"));
    }
    if window == 0 {
        return Err(SimError::invalid("window", "must be at least 1"));
    }
    let mut out = Vec::with_capacity(errors.len());
    let mut sum = 0.0;
    for (i, e) in errors.iter().enumerate() {
        sum += e;
        if i >= window {
            sum -= errors[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let tm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in points {
        sxy += (t - tm) * (y - ym);
        sxx += (t - tm) * (t - tm);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Plateaus with the default fit half-width.
pub fn detect_plateaus(series: &[(f64, f64)], slope_tol: f64, min_duration: f64) -> Result<Vec<Plateau>> {
    detect_plateaus_with(
        series,
        &PlateauOptions {
            slope_tol,
            min_duration,
            ..PlateauOptions::default()
        },
    )
}

/// Maximal runs of records whose local log-slope (least squares over a
/// centred window, clipped at the ends) is at most `slope_tol` in magnitude,
/// kept when they last at least `min_duration`.
pub fn detect_plateaus_with(series: &[(f64, f64)], opts: &PlateauOptions) -> Result<Vec<Plateau>> {
    if series.len() < 3 {
        return Err(SimError::invalid("series", format!("need at least 3 points, got {}", series.len())));
    }
    if series.windows(2).any(|w| !(w[0].0 <= w[1].0)) {
        return Err(SimError::invalid("series", "t must be non-decreasing"));
    }
    let logs: Vec<(f64, f64)> = series.iter().map(|&(t, v)| (t, v.max(1e-300).ln())).collect();
    let h = opts.fit_half_width.max(1);
    let flat: Vec<bool> = (0..logs.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(logs.len());
            least_squares_slope(&logs[lo..hi]).abs() <= opts.slope_tol
        })
        .collect();

    let mut out = Vec::new();
    let mut i = 0;
    while i < flat.len() {
        if !flat[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < flat.len() && flat[i] {
            i += 1;
        }
        let run = &series[start..i];
        let (t_start, t_end) = (run[0].0, run[run.len() - 1].0);
        if t_end - t_start >= opts.min_duration {
            out.push(Plateau {
                t_start,
                t_end,
                level: run.iter().map(|p| p.1).sum::<f64>() / run.len() as f64,
            });
        }
    }
    Ok(out)
}

/// Symmetry break with default plateau options and a 3-record trailing mean.
pub fn detect_symmetry_break(series: &[(f64, f64)], drop_factor: f64) -> Option<f64> {
    detect_symmetry_break_with(series, drop_factor, 3, &PlateauOptions::default())
}

/// Earliest `t` at which the mean of the last `trailing` records (counted from
/// the start of a plateau) falls below `drop_factor` times that plateau's level.
pub fn detect_symmetry_break_with(
    series: &[(f64, f64)],
    drop_factor: f64,
    trailing: usize,
    opts: &PlateauOptions,
) -> Option<f64> {
    let plateaus = detect_plateaus_with(series, opts).ok()?;
    let trailing = trailing.max(1);
    plateaus.iter().find_map(|p| {
        let start = series.iter().position(|q| q.0 >= p.t_start)?;
        let threshold = drop_factor * p.level;
        (start..series.len()).find_map(|i| {
            let lo = (i + 1).saturating_sub(trailing).max(start);
            let win = &series[lo..=i];
            let mean = win.iter().map(|q| q.1).sum::<f64>() / win.len() as f64;
            (mean < threshold).then_some(series[i].0)
        })
    })
}

/// Time spent with `max |R_in|` inside `[lo, hi]` before it first exceeds
/// `hi`. Each record contributes the interval up to the next record. If `hi`
/// is never exceeded the whole series duration is returned.
pub fn singular_dwell(r_series: &[(f64, Vec<f64>)], band: (f64, f64)) -> Result<f64> {
    let (lo, hi) = band;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(SimError::invalid("singular_band", format!("need 0 < lo < hi < 1, got ({lo}, {hi})")));
    }
    let (first, last) = match (r_series.first(), r_series.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(SimError::invalid("R series", "empty series")),
    };
    let mut dwell = 0.0;
    for (i, (t, r)) in r_series.iter().enumerate() {
        let x = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if x > hi {
            return Ok(dwell);
        }
        if x >= lo {
            if let Some((t_next, _)) = r_series.get(i + 1) {
                dwell += t_next - t;
            }
        }
    }
    Ok(last - first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(f: impl Fn(f64) -> f64, n: usize, dt: f64) -> Vec<(f64, f64)> {
        (0..n).map(|i| (i as f64 * dt, f(i as f64 * dt))).collect()
    }

    #[test]
    fn windowed_mse_examples() {
        assert!(windowed_mse(&[], 3).is_err());
        let alt: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let out = windowed_mse(&alt, 2).unwrap();
        assert_eq!(out[0], 0.0);
        assert!(out[1..].iter().all(|&x| x == 0.5));
        assert_eq!(windowed_mse(&alt, 1).unwrap(), alt);
        let out = windowed_mse(&[1.0, 2.0, 3.0, 4.0], 3).unwrap();
        assert_eq!(out, vec![1.0, 1.5, 2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn windowed_mse_of_constant(c in 0.0f64..10.0, len in 1usize..200, window in 1usize..50) {
            for x in windowed_mse(&vec![c; len], window).unwrap() {
                prop_assert!((x - c).abs() <= 1e-12 * c.max(1.0));
            }
        }

        #[test]
        fn windowed_mse_matches_direct_mean(xs in prop::collection::vec(0.0f64..1.0, 1..100), window in 1usize..20) {
            let out = windowed_mse(&xs, window).unwrap();
            for i in 0..xs.len() {
                let lo = (i + 1).saturating_sub(window);
                let direct = xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
                prop_assert!((out[i] - direct).abs() < 1e-12);
            }
        }

        #[test]
        fn plateaus_disjoint_and_ordered(xs in prop::collection::vec(0.01f64..1.0, 3..300)) {
            let s: Vec<(f64, f64)> = xs.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect();
            let opts = PlateauOptions { slope_tol: 1e-2, min_duration: 5.0, fit_half_width: 3 };
            let ps = detect_plateaus_with(&s, &opts).unwrap();
            for p in &ps {
                prop_assert!(p.t_end - p.t_start >= 5.0);
            }
            for w in ps.windows(2) {
                prop_assert!(w[0].t_end < w[1].t_start);
            }
        }
    }

    #[test]
    fn plateau_examples() {
        assert!(detect_plateaus(&[(0.0, 1.0), (1.0, 1.0)], 1e-5, 1.0).is_err());
        let decay = series(|t| (-1e-3 * t).exp(), 1000, 1.0);
        assert!(detect_plateaus(&decay, 1e-5, 200.0).unwrap().is_empty());
        let flat = series(|_| 0.3, 500, 1.0);
        let ps = detect_plateaus(&flat, 1e-5, 200.0).unwrap();
        assert_eq!(ps.len(), 1);
        assert_eq!((ps[0].t_start, ps[0].t_end), (0.0, 499.0));
        assert!((ps[0].level - 0.3).abs() < 1e-15);
    }

    #[test]
    fn piecewise_fixture() {
        // fast drop on [0, 100), flat on [100, 500], fast drop afterwards
        let f = |t: f64| {
            if t < 100.0 {
                0.1 * (-0.02 * (t - 100.0)).exp()
            } else if t <= 500.0 {
                0.1
            } else {
                0.1 * (-0.02 * (t - 500.0)).exp()
            }
        };
        let s = series(f, 700, 1.0);
        let opts = PlateauOptions {
            slope_tol: 1e-5,
            min_duration: 200.0,
            fit_half_width: 1,
        };
        let ps = detect_plateaus_with(&s, &opts).unwrap();
        assert_eq!(ps.len(), 1, "{ps:?}");
        assert!((ps[0].t_start - 100.0).abs() <= 1.0, "{ps:?}");
        assert!((ps[0].t_end - 500.0).abs() <= 1.0, "{ps:?}");
    }

    #[test]
    fn symmetry_break_examples() {
        let constant = series(|_| 0.2, 600, 1.0);
        assert_eq!(detect_symmetry_break(&constant, 0.5), None);
        let increasing = series(|t| 0.01 * (0.01 * t).exp(), 600, 1.0);
        assert_eq!(detect_symmetry_break(&increasing, 0.5), None);

        let step = series(|t| if t < 400.0 { 0.1 } else { 0.001 }, 800, 1.0);
        let t = detect_symmetry_break_with(&step, 0.5, 1, &PlateauOptions::default()).unwrap();
        assert!((t - 400.0).abs() <= 1.0, "{t}");
        let t = detect_symmetry_break(&step, 0.5).unwrap();
        assert!((t - 400.0).abs() <= 2.0, "{t}");
    }

    fn ramp(values: &[f64], dt: f64) -> Vec<(f64, Vec<f64>)> {
        values.iter().enumerate().map(|(i, &v)| (i as f64 * dt, vec![0.1, -v, 0.0, 0.2])).collect()
    }

    #[test]
    fn singular_dwell_examples() {
        let band = (0.8, 0.98);
        assert!(singular_dwell(&[], band).is_err());
        assert!(singular_dwell(&ramp(&[0.5], 1.0), (0.9, 0.8)).is_err());
        assert_eq!(singular_dwell(&ramp(&[0.5, 0.5, 0.99, 0.5], 2.0), band).unwrap(), 0.0);
        assert_eq!(singular_dwell(&ramp(&[0.89; 11], 2.0), band).unwrap(), 20.0);

        // linear ramp from 0.5 to 1.0 over t in [0, 500]: inside the band for 180 t-units
        let vals: Vec<f64> = (0..=500).map(|i| 0.5 + i as f64 / 1000.0).collect();
        let d = singular_dwell(&ramp(&vals, 1.0), band).unwrap();
        assert!((d - 180.0).abs() <= 1.0, "{d}");
        // the same ramp sampled more coarsely
        let coarse: Vec<f64> = (0..=50).map(|i| 0.5 + i as f64 / 100.0).collect();
        let d = singular_dwell(&ramp(&coarse, 10.0), band).unwrap();
        assert!((d - 180.0).abs() <= 10.0, "{d}");
    }
}
