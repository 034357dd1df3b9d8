//! Output files. Everything goes through a temporary file in the target
//! directory followed by a rename, so readers never see a half-written file.

use std::io::Write;
use std::path::Path;

use rotpump_core::integrate::{CycleSummary, SimResult};
use rotpump_core::sweep::SweepRow;
use rotpump_core::BasisIndex;
use serde::Serialize;

/// Rows below this population are omitted from trajectories.
pub const SPARSE_FLOOR: f64 = 1e-12;

pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        write(&mut buf)?;
        buf.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Serialize)]
struct TrajectoryRow<'a> {
    time: f64,
    label: &'a str,
    n: u32,
    population: f64,
}

pub fn trajectory_csv(out: &mut dyn Write, basis: &BasisIndex, result: &SimResult) -> std::io::Result<()> {
    let labels: Vec<(String, u32)> = (0..basis.dim())
        .map(|i| {
            let (label, n) = basis.label(i);
            (label.to_string(), n)
        })
        .collect();
    // Headers come from the row struct's field names.
    let mut w = csv::Writer::from_writer(out);
    for sample in &result.samples {
        for ((label, n), &population) in labels.iter().zip(&sample.populations) {
            if population > SPARSE_FLOOR {
                w.serialize(TrajectoryRow { time: sample.time, label, n: *n, population })?;
            }
        }
    }
    w.flush()
}

#[derive(Serialize)]
pub struct Summary<'a> {
    pub efficiency: f64,
    pub loss_u: f64,
    pub cycles: usize,
    pub per_cycle: &'a [CycleSummary],
    pub truncation_warning: bool,
    pub steps: u64,
    pub wall_time_s: f64,
}

impl<'a> Summary<'a> {
    pub fn new(result: &'a SimResult) -> Self {
        Summary {
            efficiency: result.efficiency,
            loss_u: result.loss_u,
            cycles: result.per_cycle.len(),
            per_cycle: &result.per_cycle,
            truncation_warning: result.truncation_flag,
            steps: result.step_count,
            wall_time_s: result.wall_time.as_secs_f64(),
        }
    }
}

pub fn summary_json(out: &mut dyn Write, result: &SimResult) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut *out, &Summary::new(result))?;
    writeln!(out)
}

#[derive(Serialize)]
struct SweepCsvRow {
    axis1: f64,
    axis2: Option<f64>,
    efficiency: Option<f64>,
    loss: Option<f64>,
    flag: &'static str,
}

pub fn sweep_csv(out: &mut dyn Write, rows: &[SweepRow]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(SweepCsvRow {
            axis1: row.axis1,
            axis2: row.axis2,
            efficiency: row.efficiency,
            loss: row.loss,
            flag: row.flag(),
        })?;
    }
    w.flush()
}

/// Full per-point detail, including error messages and timings.
pub fn sweep_json(out: &mut dyn Write, rows: &[SweepRow]) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut *out, rows)?;
    writeln!(out)
}
