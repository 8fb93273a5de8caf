//! Training metrics: the per-evaluation row, its CSV encoding, and the
//! aggregation math used for plotting.
//!
//! The metrics CSV holds only deterministic columns so that two runs with
//! the same config and seed produce byte-identical files; wall-clock timing
//! is kept on the row struct but written to a separate sidecar by the
//! harness. Floats are encoded with shortest round-trip formatting.

use thiserror::Error;

/// One evaluation snapshot during training.
///
/// `p_hat` statistics are over the evaluation episodes' final normalized
/// performance; the losses and entropy are means over the gradient updates
/// since the previous row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    /// Environment steps taken so far.
    pub step: u64,
    pub mean_p_hat: f64,
    pub std_p_hat: f64,
    pub median_p_hat: f64,
    pub q25_p_hat: f64,
    pub q75_p_hat: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    /// Wall-clock seconds since training started. Not part of the
    /// deterministic CSV encoding.
    pub wall_seconds: f64,
}

/// Header of the deterministic metrics CSV (column order is fixed).
pub const METRICS_HEADER: &str =
    "step,mean_p_hat,std_p_hat,median_p_hat,q25_p_hat,q75_p_hat,actor_loss,critic_loss,entropy";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics csv line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("metrics csv header mismatch: found {0:?}")]
    Header(String),
}

/// Encodes one row (without the trailing newline).
pub fn format_metrics_row(row: &MetricsRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        row.step,
        row.mean_p_hat,
        row.std_p_hat,
        row.median_p_hat,
        row.q25_p_hat,
        row.q75_p_hat,
        row.actor_loss,
        row.critic_loss,
        row.entropy
    )
}

/// Renders a complete metrics CSV document.
pub fn format_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format_metrics_row(row));
        out.push('\n');
    }
    out
}

/// Parses a metrics CSV document (as written by [`format_metrics_csv`] or a
/// truncated prefix of one, which is what a reader sees mid-run).
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        Some((_, h)) => return Err(MetricsError::Header(h.to_string())),
        None => return Err(MetricsError::Header(String::new())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(MetricsError::Parse {
                line: i + 1,
                message: format!("expected 9 fields, found {}", fields.len()),
            });
        }
        let mut nums = [0.0f64; 8];
        let step: u64 = fields[0].parse().map_err(|_| MetricsError::Parse {
            line: i + 1,
            message: format!("bad step {:?}", fields[0]),
        })?;
        for (j, f) in fields[1..].iter().enumerate() {
            nums[j] = f.parse().map_err(|_| MetricsError::Parse {
                line: i + 1,
                message: format!("bad number {f:?}"),
            })?;
        }
        rows.push(MetricsRow {
            step,
            mean_p_hat: nums[0],
            std_p_hat: nums[1],
            median_p_hat: nums[2],
            q25_p_hat: nums[3],
            q75_p_hat: nums[4],
            actor_loss: nums[5],
            critic_loss: nums[6],
            entropy: nums[7],
            wall_seconds: 0.0,
        });
    }
    Ok(rows)
}

/// Summary statistics of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation (divide by `n`).
    pub std: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Linearly interpolated quantile of a sorted sample (the common
/// `pos = q * (n - 1)` convention). Panics on an empty sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    assert!((0.0..=1.0).contains(&q));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Mean, population std, and quartiles of a sample.
pub fn summarize(values: &[f64]) -> Summary {
    assert!(!values.is_empty(), "summary of empty sample");
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in sample"));
    Summary {
        n,
        mean,
        std: var.sqrt(),
        median: quantile_sorted(&sorted, 0.5),
        q25: quantile_sorted(&sorted, 0.25),
        q75: quantile_sorted(&sorted, 0.75),
    }
}

/// One aggregated curve point: per-step mean and std over runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub mean: f64,
    pub std: f64,
}

/// Linear interpolation of `(step, value)` samples at `step`; clamps to the
/// endpoints outside the sampled range.
fn interp(points: &[(u64, f64)], step: u64) -> f64 {
    debug_assert!(!points.is_empty());
    if step <= points[0].0 {
        return points[0].1;
    }
    if step >= points[points.len() - 1].0 {
        return points[points.len() - 1].1;
    }
    let idx = points.partition_point(|(s, _)| *s <= step);
    let (s0, v0) = points[idx - 1];
    let (s1, v1) = points[idx];
    if s1 == s0 {
        return v0;
    }
    let t = (step - s0) as f64 / (s1 - s0) as f64;
    v0 + t * (v1 - v0)
}

/// Aggregates several runs of `(step, value)` samples into a mean/std curve.
///
/// If the runs share a step grid it is used as-is. Otherwise every run is
/// linearly resampled onto the coarsest grid (the run with the fewest
/// points) and `resampled` is set so callers can warn.
pub fn aggregate_curves(runs: &[Vec<(u64, f64)>]) -> (Vec<CurvePoint>, bool) {
    assert!(!runs.is_empty(), "aggregating zero runs");
    assert!(runs.iter().all(|r| !r.is_empty()), "empty run in aggregate");
    let same_grid = runs
        .iter()
        .all(|r| r.len() == runs[0].len() && r.iter().zip(&runs[0]).all(|(a, b)| a.0 == b.0));
    let grid: Vec<u64> = if same_grid {
        runs[0].iter().map(|(s, _)| *s).collect()
    } else {
        let coarsest = runs
            .iter()
            .min_by_key(|r| r.len())
            .expect("nonempty runs")
            .clone();
        coarsest.iter().map(|(s, _)| *s).collect()
    };
    let curve = grid
        .iter()
        .map(|&step| {
            let vals: Vec<f64> = runs.iter().map(|r| interp(r, step)).collect();
            let s = summarize(&vals);
            CurvePoint {
                step,
                mean: s.mean,
                std: s.std,
            }
        })
        .collect();
    (curve, !same_grid)
}

/// Regularized lower incomplete gamma `P(a, x)` by its power series,
/// accurate for `x < a + 1`.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..500 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (a * x.ln() - x - libm::lgamma(a)).exp()
}

/// Regularized upper incomplete gamma `Q(a, x)` by Lentz's continued
/// fraction, accurate for `x >= a + 1`.
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (a * x.ln() - x - libm::lgamma(a)).exp()
}

/// Survival function of the chi-square distribution with `dof` degrees of
/// freedom: `P(X > x)`. Used to turn goodness-of-fit statistics into
/// p-values.
pub fn chi_square_sf(x: f64, dof: f64) -> f64 {
    assert!(dof > 0.0, "chi-square needs positive degrees of freedom");
    assert!(x.is_finite() && x >= 0.0, "chi-square statistic must be >= 0");
    let a = 0.5 * dof;
    let t = 0.5 * x;
    if t == 0.0 {
        1.0
    } else if t < a + 1.0 {
        1.0 - gamma_p_series(a, t)
    } else {
        gamma_q_continued_fraction(a, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64) -> MetricsRow {
        MetricsRow {
            step,
            mean_p_hat: 0.5 + step as f64 * 1e-3,
            std_p_hat: 0.1,
            median_p_hat: 0.55,
            q25_p_hat: 0.4,
            q75_p_hat: 0.6,
            actor_loss: -1.25,
            critic_loss: 0.033,
            entropy: 2.5,
            wall_seconds: 12.0,
        }
    }

    #[test]
    fn csv_round_trip_drops_only_wall_seconds() {
        let rows = vec![row(0), row(2000)];
        let text = format_metrics_csv(&rows);
        let parsed = parse_metrics_csv(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        for (a, b) in parsed.iter().zip(&rows) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.mean_p_hat, b.mean_p_hat);
            assert_eq!(a.actor_loss, b.actor_loss);
            assert_eq!(a.wall_seconds, 0.0);
        }
    }

    #[test]
    fn truncated_documents_parse_as_prefix() {
        let text = format_metrics_csv(&[row(0), row(2000)]);
        // Cut mid-way through the last line: parsing the complete-line
        // prefix must succeed.
        let cut = text.rfind("2000,").unwrap();
        let prefix = &text[..cut];
        let parsed = parse_metrics_csv(prefix).unwrap();
        assert_eq!(parsed.len(), 1);
    }

    #[test]
    fn header_mismatch_is_an_error() {
        assert!(matches!(
            parse_metrics_csv("nope\n1,2,3"),
            Err(MetricsError::Header(_))
        ));
    }

    #[test]
    fn quantiles_match_hand_values() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&sorted, 0.5), 2.5);
        assert_eq!(quantile_sorted(&sorted, 0.25), 1.75);
        assert_eq!(quantile_sorted(&sorted, 0.75), 3.25);
        assert_eq!(quantile_sorted(&sorted, 0.0), 1.0);
        assert_eq!(quantile_sorted(&sorted, 1.0), 4.0);
        assert_eq!(quantile_sorted(&[7.0], 0.5), 7.0);
    }

    #[test]
    fn summary_of_constant_sample_has_zero_std() {
        let s = summarize(&[0.3, 0.3, 0.3]);
        assert_eq!(s.mean, 0.3);
        assert_eq!(s.std, 0.0);
        assert_eq!(s.median, 0.3);
    }

    #[test]
    fn aggregate_identical_runs_zero_std() {
        let run: Vec<(u64, f64)> = vec![(0, 0.0), (100, 0.5), (200, 0.8)];
        let (curve, resampled) = aggregate_curves(&[run.clone(), run.clone(), run]);
        assert!(!resampled);
        assert_eq!(curve.len(), 3);
        // Identical runs: only float summation residue remains.
        assert!(curve.iter().all(|p| p.std < 1e-12));
        assert_eq!(curve[1].mean, 0.5);
    }

    #[test]
    fn aggregate_mismatched_grids_resamples_onto_coarsest() {
        let fine: Vec<(u64, f64)> = (0..=4).map(|i| (i * 50, i as f64)).collect();
        let coarse: Vec<(u64, f64)> = vec![(0, 0.0), (100, 10.0), (200, 20.0)];
        let (curve, resampled) = aggregate_curves(&[fine, coarse]);
        assert!(resampled);
        assert_eq!(curve.len(), 3);
        assert_eq!(curve[0].step, 0);
        // fine at 100 interpolates to 2.0; mean of (2, 10) = 6.
        assert_eq!(curve[1].mean, 6.0);
    }

    /// For even degrees of freedom the survival function has the closed form
    /// `exp(-x/2) * sum_{k<dof/2} (x/2)^k / k!`, an independent reference.
    fn even_dof_sf(x: f64, half_dof: usize) -> f64 {
        let t = 0.5 * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..half_dof {
            term *= t / k as f64;
            sum += term;
        }
        (-t).exp() * sum
    }

    #[test]
    fn chi_square_sf_matches_even_dof_closed_form() {
        for &(x, dof) in &[
            (3.0, 2.0),
            (5.0, 4.0),
            (9.5, 10.0),
            (60.391, 80.0),
            (101.879, 80.0),
            (124.839, 80.0),
            (250.0, 80.0),
        ] {
            let reference = even_dof_sf(x, dof as usize / 2);
            let got = chi_square_sf(x, dof);
            assert!(
                (got - reference).abs() <= 1e-12 * reference.max(1e-300),
                "sf({x}, {dof}) = {got}, closed form {reference}"
            );
        }
    }

    #[test]
    fn chi_square_sf_matches_table_quantiles() {
        // Standard distribution-table entries for 80 degrees of freedom.
        assert!((chi_square_sf(60.391, 80.0) - 0.95).abs() < 5e-4);
        assert!((chi_square_sf(101.879, 80.0) - 0.05).abs() < 5e-5);
        assert!((chi_square_sf(124.839, 80.0) - 0.001).abs() < 2e-6);
        // dof 1 and 2 have elementary forms: erfc(sqrt(x/2)) and exp(-x/2).
        assert!((chi_square_sf(4.0, 1.0) - libm::erfc(2.0f64.sqrt())).abs() < 1e-12);
        assert!((chi_square_sf(3.0, 2.0) - (-1.5f64).exp()).abs() < 1e-12);
        assert_eq!(chi_square_sf(0.0, 5.0), 1.0);
    }

    #[test]
    fn mean_and_std_recompute_exactly() {
        let vals = [0.1, 0.4, 0.7, 0.2];
        let s = summarize(&vals);
        let mean = vals.iter().sum::<f64>() / 4.0;
        assert!((s.mean - mean).abs() < 1e-15);
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!((s.std - var.sqrt()).abs() < 1e-15);
    }
}
