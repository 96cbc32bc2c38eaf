//! Parameter sweeps across configs, seeds and schedulers.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{apply_env, parse_document, PerUser, SystemConfig};
use crate::engine::run;
use crate::error::{Error, Result};
use crate::sched::SchedulerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    PAvg,
    Q,
    /// Total users `N`; the NRT count stays at the base value and the RT
    /// count becomes `N - n_nrt`.
    NUsers,
    /// RT user count.
    NRtComplexity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: SystemConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Schedulers compared on identical traffic; defaults to the base one.
    #[serde(default)]
    pub schedulers: Vec<SchedulerKind>,
    /// Optional CSV destination, used when the CLI gets no `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

/// One sweep cell result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub seed: u64,
    pub scheduler: SchedulerKind,
    pub sum_throughput: f64,
    pub avg_power: f64,
    pub min_delivery_ratio: f64,
    pub mean_sets_evaluated: f64,
}

pub const SWEEP_CSV_HEADER: &str =
    "axis_value,seed,scheduler,sum_throughput,avg_power,min_delivery_ratio,mean_sets_evaluated";

impl SweepRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.axis_value,
            self.seed,
            self.scheduler.name(),
            self.sum_throughput,
            self.avg_power,
            self.min_delivery_ratio,
            self.mean_sets_evaluated
        )
    }

    /// Parses a row written by [`SweepRow::csv`].
    pub fn parse_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = |what: &str| Error::Parse {
            line: 0,
            reason: format!("sweep row {line:?}: {what}"),
        };
        if f.len() != 7 {
            return Err(bad("expected 7 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        Ok(Self {
            axis_value: num(f[0])?,
            seed: f[1].parse().map_err(|_| bad("bad seed"))?,
            scheduler: f[2].parse()?,
            sum_throughput: num(f[3])?,
            avg_power: num(f[4])?,
            min_delivery_ratio: num(f[5])?,
            mean_sets_evaluated: num(f[6])?,
        })
    }
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_with_env(&text, std::env::vars())
    }

    /// Parses JSON or dotted key-value (`base.p_avg = 10`). Environment
    /// overrides address the same keys (`DLSCHED_BASE__P_AVG`).
    pub fn from_str_with_env<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut doc = parse_document(text)?;
        apply_env(&mut doc.value, env)?;
        let spec: SweepSpec = doc.deserialize()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn schedulers(&self) -> Vec<SchedulerKind> {
        if self.schedulers.is_empty() {
            vec![self.base.scheduler]
        } else {
            self.schedulers.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("values", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        for &v in &self.values {
            for s in self.schedulers() {
                self.cell_config(v, self.seeds[0], s)?.validate()?;
            }
        }
        Ok(())
    }

    /// Config for one `(value, seed, scheduler)` cell.
    pub fn cell_config(&self, value: f64, seed: u64, scheduler: SchedulerKind) -> Result<SystemConfig> {
        let mut c = self.base.clone();
        c.seed = seed;
        c.scheduler = scheduler;
        let count = |field: &str| -> Result<usize> {
            if value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::config(field, format!("{value} is not a user count")))
            }
        };
        let scalar_rt = |c: &SystemConfig| -> Result<()> {
            for (name, v) in [("lambda_rt", &c.lambda_rt), ("q", &c.q)] {
                if matches!(v, PerUser::List(_)) {
                    return Err(Error::config(
                        format!("base.{name}"),
                        "must be a scalar when the RT count varies",
                    ));
                }
            }
            Ok(())
        };
        match self.axis {
            SweepAxis::PAvg => c.p_avg = value,
            SweepAxis::Q => c.q = PerUser::Scalar(value),
            SweepAxis::NUsers => {
                scalar_rt(&c)?;
                let n = count("values")?;
                c.n_rt = n.checked_sub(c.n_nrt).ok_or_else(|| {
                    Error::config("values", format!("N = {n} is below n_nrt = {}", c.n_nrt))
                })?;
            }
            SweepAxis::NRtComplexity => {
                scalar_rt(&c)?;
                c.n_rt = count("values")?;
            }
        }
        Ok(c)
    }

    /// Every cell in output order: value, then seed, then scheduler.
    pub fn cells(&self) -> Vec<(f64, u64, SchedulerKind)> {
        let scheds = self.schedulers();
        let mut out = Vec::new();
        for &v in &self.values {
            for &s in &self.seeds {
                for &k in &scheds {
                    out.push((v, s, k));
                }
            }
        }
        out
    }
}

/// Runs every cell on a pool of `jobs` threads (0 = rayon default). Rows
/// reach `sink` in cell order, a batch at a time, so an interrupted sweep
/// keeps the rows already written.
pub fn run_sweep_streaming<F>(spec: &SweepSpec, jobs: usize, mut sink: F) -> Result<()>
where
    F: FnMut(&SweepRow) -> Result<()>,
{
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let cells = spec.cells();
    let batch = pool.current_num_threads().max(1);
    for chunk in cells.chunks(batch) {
        let rows: Vec<Result<SweepRow>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&(v, seed, k)| {
                    let cfg = spec.cell_config(v, seed, k)?;
                    let r = run(&cfg)?;
                    Ok(SweepRow {
                        axis_value: v,
                        seed,
                        scheduler: k,
                        sum_throughput: r.sum_throughput,
                        avg_power: r.avg_power,
                        min_delivery_ratio: r.min_delivery_ratio,
                        mean_sets_evaluated: r.mean_sets_evaluated,
                    })
                })
                .collect()
        });
        for row in rows {
            sink(&row?)?;
        }
    }
    Ok(())
}

pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    run_sweep_streaming(spec, jobs, |r| {
        rows.push(r.clone());
        Ok(())
    })?;
    Ok(rows)
}

/// Writes the header and rows, flushing after each row.
pub fn write_sweep_csv(spec: &SweepSpec, jobs: usize, mut w: impl Write) -> Result<usize> {
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    let mut n = 0;
    run_sweep_streaming(spec, jobs, |r| {
        writeln!(w, "{}", r.csv())?;
        w.flush()?;
        n += 1;
        Ok(())
    })?;
    Ok(n)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// True when `series` never rises by more than `tol_frac` of its range,
/// and rises at most `max_inversions` times.
pub fn non_increasing_with_noise(series: &[f64], max_inversions: usize, tol_frac: f64) -> bool {
    let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let range = hi - lo;
    let mut inversions = 0;
    for w in series.windows(2) {
        let rise = w[1] - w[0];
        if rise > 0.0 {
            inversions += 1;
            if rise > tol_frac * range {
                return false;
            }
        }
    }
    inversions <= max_inversions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SweepSpec {
        let mut base = SystemConfig::new(2, 2, 10.0);
        base.lambda_rt = PerUser::Scalar(0.5);
        base.lambda_nrt = PerUser::Scalar(0.5);
        base.q = PerUser::Scalar(0.3);
        base.horizon = 300;
        SweepSpec {
            base,
            axis: SweepAxis::PAvg,
            values: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            seeds: vec![1, 2],
            schedulers: vec![SchedulerKind::Onoff, SchedulerKind::Fixedp],
            output: None,
        }
    }

    #[test]
    fn row_count_and_order() {
        let s = spec();
        let rows = run_sweep(&s, 3).unwrap();
        assert_eq!(rows.len(), 2 * 5 * 2);
        let cells = s.cells();
        for (r, c) in rows.iter().zip(&cells) {
            assert_eq!((r.axis_value, r.seed, r.scheduler), *c);
        }
    }

    #[test]
    fn deterministic_across_pool_sizes() {
        let a = run_sweep(&spec(), 1).unwrap();
        let b = run_sweep(&spec(), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let s = spec();
        let mut buf = Vec::new();
        let n = write_sweep_csv(&s, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
        let parsed: Vec<SweepRow> = lines.map(|l| SweepRow::parse_csv(l).unwrap()).collect();
        assert_eq!(parsed.len(), n);
        assert_eq!(parsed, run_sweep(&s, 2).unwrap());
    }

    #[test]
    fn user_axes_adjust_counts() {
        let mut s = spec();
        s.axis = SweepAxis::NUsers;
        s.values = vec![5.0];
        assert_eq!(s.cell_config(5.0, 0, SchedulerKind::Onoff).unwrap().n_rt, 3);
        assert!(s.cell_config(1.0, 0, SchedulerKind::Onoff).is_err());
        s.axis = SweepAxis::NRtComplexity;
        assert_eq!(s.cell_config(7.0, 0, SchedulerKind::Onoff).unwrap().n_rt, 7);
        assert!(s.cell_config(2.5, 0, SchedulerKind::Onoff).is_err());
    }

    #[test]
    fn empty_values_rejected() {
        let mut s = spec();
        s.values.clear();
        assert!(matches!(s.validate(), Err(Error::Config { .. })));
    }

    #[test]
    fn key_value_spec() {
        let text = "\
base.n_rt = 1
base.n_nrt = 1
base.p_avg = 5
base.horizon = 10
axis = q
values = [0.1, 0.2]
seeds = [1]
schedulers = [onoff, fixedp]
";
        let s = SweepSpec::from_str_with_env(text, std::iter::empty()).unwrap();
        assert_eq!(s.axis, SweepAxis::Q);
        assert_eq!(s.schedulers(), vec![SchedulerKind::Onoff, SchedulerKind::Fixedp]);
        assert_eq!(s.cells().len(), 4);
    }

    #[test]
    fn trend_helpers() {
        assert!(non_increasing_with_noise(&[5.0, 4.0, 3.0], 1, 0.01));
        assert!(non_increasing_with_noise(&[5.0, 4.0, 4.005, 3.0], 1, 0.01));
        assert!(!non_increasing_with_noise(&[5.0, 4.0, 4.5, 3.0], 1, 0.01));
        assert!(non_increasing_with_noise(&[2.0, 2.0, 2.0], 1, 0.01));
        let x = [2.0, 4.0, 8.0];
        assert!((loglog_slope(&x, &[4.0, 16.0, 64.0]) - 2.0).abs() < 1e-12);
    }
}
