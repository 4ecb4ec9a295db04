//! CSV output of traces and sweep summaries, and preset execution.
//!
//! Layout of a preset run under `out/<preset>/<series>/`:
//! `summary.csv`, and per swept point `<key>_<value>.csv` (slot-wise mean
//! over trials), `<key>_<value>.ini` (the full configuration) and
//! `trials/<key>_<value>/trial_<k>.csv`. Summary statistics are time
//! means after burn-in, averaged over the per-trial files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::presets::Preset;
use crate::sim::{run_monte_carlo, MonteCarloResult, SlotRecord};

pub const TRACE_HEADER: &str =
    "slot, bmse_model, err_empirical, active_count, energy_sum_j, battery_mean_j, z_queue, lyapunov";
pub const SUMMARY_HEADER: &str =
    "sweep_value, bmse_mean, bmse_std, active_mean, energy_mean_j, battery_mean_j";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SummaryRow {
    pub sweep_value: f64,
    pub bmse_mean: f64,
    pub bmse_std: f64,
    pub active_mean: f64,
    pub energy_mean_j: f64,
    pub battery_mean_j: f64,
}

impl SummaryRow {
    pub fn new(sweep_value: f64, mc: &MonteCarloResult) -> Self {
        Self {
            sweep_value,
            bmse_mean: mc.mean.bmse,
            bmse_std: mc.std.bmse,
            active_mean: mc.mean.active,
            energy_mean_j: mc.mean.energy_j,
            battery_mean_j: mc.mean.battery_j,
        }
    }
}

/// Shortest round-trip form, in scientific notation for magnitudes far
/// from one.
fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn write_trace(mut w: impl Write, records: &[SlotRecord]) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{}, {}, {}, {}, {}, {}, {}, {}",
            r.slot,
            num(r.bmse_model),
            num(r.err_empirical),
            num(r.active_count),
            num(r.energy_sum_j),
            num(r.battery_mean_j),
            num(r.z_queue),
            num(r.lyapunov)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(mut w: impl Write, rows: &[SummaryRow]) -> Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{}, {}, {}, {}, {}, {}",
            num(r.sweep_value),
            num(r.bmse_mean),
            num(r.bmse_std),
            num(r.active_mean),
            num(r.energy_mean_j),
            num(r.battery_mean_j)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows(path: &Path, header: &str) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let expected: Vec<&str> = header.split(", ").collect();
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(Error::InvalidArgument(format!(
            "{}: unexpected header {found:?}",
            path.display()
        )));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            rec.iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|e| {
                        Error::InvalidArgument(format!("{}: bad number `{f}`: {e}", path.display()))
                    })
                })
                .collect()
        })
        .collect()
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<SlotRecord>> {
    Ok(read_rows(path.as_ref(), TRACE_HEADER)?
        .into_iter()
        .map(|f| SlotRecord {
            slot: f[0] as usize,
            bmse_model: f[1],
            err_empirical: f[2],
            active_count: f[3],
            energy_sum_j: f[4],
            battery_mean_j: f[5],
            z_queue: f[6],
            lyapunov: f[7],
        })
        .collect())
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    Ok(read_rows(path.as_ref(), SUMMARY_HEADER)?
        .into_iter()
        .map(|f| SummaryRow {
            sweep_value: f[0],
            bmse_mean: f[1],
            bmse_std: f[2],
            active_mean: f[3],
            energy_mean_j: f[4],
            battery_mean_j: f[5],
        })
        .collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Outcome of one swept point, without the traces.
#[derive(Debug, Clone, PartialEq)]
pub struct PointReport {
    pub row: SummaryRow,
    pub upper_violations: usize,
    pub lower_violations: usize,
    pub brownouts: usize,
}

impl PointReport {
    pub fn new(sweep_value: f64, mc: &MonteCarloResult) -> Self {
        Self {
            row: SummaryRow::new(sweep_value, mc),
            upper_violations: mc.traces.iter().map(|t| t.upper_violations).sum(),
            lower_violations: mc.traces.iter().map(|t| t.lower_violations).sum(),
            brownouts: mc.traces.iter().map(|t| t.brownouts).sum(),
        }
    }
}

/// Writes `<stem>.csv`, `<stem>.ini` and the per-trial traces into `dir`.
pub fn write_point(dir: &Path, stem: &str, cfg: &ExperimentConfig, mc: &MonteCarloResult) -> Result<()> {
    write_trace(create(&dir.join(format!("{stem}.csv")))?, &mc.mean_records())?;
    let mut ini = create(&dir.join(format!("{stem}.ini")))?;
    ini.write_all(cfg.emit().as_bytes())?;
    ini.flush()?;
    let width = mc.traces.len().saturating_sub(1).to_string().len();
    for (k, t) in mc.traces.iter().enumerate() {
        let path = dir.join("trials").join(stem).join(format!("trial_{k:0width$}.csv"));
        write_trace(create(&path)?, &t.records)?;
    }
    Ok(())
}

/// Runs `cfg.sim.trials` trials of one configuration and writes the point.
pub fn run_point(cfg: &ExperimentConfig, sweep_value: f64, dir: &Path, stem: &str) -> Result<PointReport> {
    let mc = run_monte_carlo(cfg, cfg.sim.trials)?;
    write_point(dir, stem, cfg, &mc)?;
    Ok(PointReport::new(sweep_value, &mc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesReport {
    pub label: String,
    pub dir: PathBuf,
    pub points: Vec<PointReport>,
}

impl SeriesReport {
    pub fn rows(&self) -> Vec<SummaryRow> {
        self.points.iter().map(|p| p.row).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetReport {
    pub name: String,
    pub sweep_key: String,
    pub series: Vec<SeriesReport>,
}

impl PresetReport {
    pub fn points(&self) -> impl Iterator<Item = &PointReport> {
        self.series.iter().flat_map(|s| s.points.iter())
    }

    pub fn upper_violations(&self) -> usize {
        self.points().map(|p| p.upper_violations).sum()
    }

    pub fn lower_violations(&self) -> usize {
        self.points().map(|p| p.lower_violations).sum()
    }

    /// Plain-text summary table, one block per series.
    pub fn table(&self) -> String {
        let mut out = format!("preset {}\n", self.name);
        for s in &self.series {
            out += &format!("\n[{}]\n{:>12} {:>12} {:>12} {:>10} {:>14} {:>14}\n",
                s.label, self.sweep_key, "bmse_mean", "bmse_std", "active", "energy_j", "battery_j");
            for r in s.rows() {
                out += &format!(
                    "{:>12} {:>12.5e} {:>12.3e} {:>10.3} {:>14.5e} {:>14.5e}\n",
                    r.sweep_value, r.bmse_mean, r.bmse_std, r.active_mean, r.energy_mean_j, r.battery_mean_j
                );
            }
        }
        out
    }
}

pub fn point_stem(sweep_key: &str, value: f64) -> String {
    format!("{sweep_key}_{value}")
}

/// Runs every point of `preset` and writes its outputs under
/// `out_dir/<preset name>`. Points run concurrently; each point's files
/// are written by the task that computed it.
pub fn run_preset(preset: &Preset, out_dir: &Path) -> Result<PresetReport> {
    let root = out_dir.join(preset.name);
    let jobs: Vec<(usize, usize)> = preset
        .series
        .iter()
        .enumerate()
        .flat_map(|(s, ser)| (0..ser.points.len()).map(move |p| (s, p)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(s, p)| {
            let ser = &preset.series[s];
            let pt = &ser.points[p];
            let stem = point_stem(preset.sweep_key, pt.value);
            run_point(&pt.config, pt.value, &root.join(&ser.label), &stem)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut it = reports.into_iter();
    let mut series = Vec::with_capacity(preset.series.len());
    for ser in &preset.series {
        let dir = root.join(&ser.label);
        let points: Vec<PointReport> = it.by_ref().take(ser.points.len()).collect();
        let rows: Vec<SummaryRow> = points.iter().map(|p| p.row).collect();
        write_summary(create(&dir.join("summary.csv"))?, &rows)?;
        series.push(SeriesReport {
            label: ser.label.clone(),
            dir,
            points,
        });
    }
    Ok(PresetReport {
        name: preset.name.to_string(),
        sweep_key: preset.sweep_key.to_string(),
        series,
    })
}

/// Runs a single configuration as a one-point sweep over `v`.
pub fn run_config(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PresetReport> {
    let point = run_point(cfg, cfg.control.v, out_dir, "trace")?;
    write_summary(create(&out_dir.join("summary.csv"))?, &[point.row])?;
    Ok(PresetReport {
        name: "run".into(),
        sweep_key: "v".into(),
        series: vec![SeriesReport {
            label: cfg.control.algorithm.name().into(),
            dir: out_dir.to_path_buf(),
            points: vec![point],
        }],
    })
}
