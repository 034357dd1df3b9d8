//! Parameter sweeps over one or two axes.
//!
//! A sweep plan is a TOML file with a `[base]` run configuration and one or
//! two axes. Each grid point is an independent run; points are farmed out to
//! a rayon pool and the results come back in grid order, axis1 outermost.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{anchor, line_of_offset, RunConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub base: RunConfig,
    pub axis1: Axis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis2: Option<Axis>,
}

/// A swept parameter with explicit values or an inclusive linear range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
}

impl Axis {
    pub fn list(path: &str, values: Vec<f64>) -> Self {
        Axis { path: path.into(), values: Some(values), from: None, to: None, points: None }
    }

    pub fn range(path: &str, from: f64, to: f64, points: usize) -> Self {
        Axis { path: path.into(), values: None, from: Some(from), to: Some(to), points: Some(points) }
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        let values = match (&self.values, self.from, self.to, self.points) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(a), Some(b), Some(n)) => match n {
                0 => Vec::new(),
                1 => vec![a],
                _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
            },
            _ => {
                return Err(Error::invalid(
                    "values",
                    format!("axis `{}` needs either `values` or all of `from`, `to`, `points`", self.path),
                ))
            }
        };
        if values.is_empty() {
            return Err(Error::invalid("values", format!("axis `{}` has no points", self.path)));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid("values", format!("axis `{}` contains {v}", self.path)));
        }
        Ok(values)
    }
}

/// Outcome of one grid point. Failed points keep their coordinates and carry
/// the error message instead of numbers.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis1: f64,
    pub axis2: Option<f64>,
    pub efficiency: Option<f64>,
    pub loss: Option<f64>,
    pub truncation: bool,
    pub wall_time: f64,
    pub error: Option<String>,
}

impl SweepRow {
    /// Short status for tabular output.
    pub fn flag(&self) -> &'static str {
        match (&self.error, self.truncation) {
            (Some(_), _) => "error",
            (None, true) => "truncation",
            (None, false) => "ok",
        }
    }
}

impl SweepPlan {
    pub fn from_toml_str(source: &str) -> Result<Self> {
        let plan: SweepPlan = toml::from_str(source).map_err(|e| Error::Config {
            line: e.span().map(|span| line_of_offset(source, span.start)),
            message: e.message().to_string(),
        })?;
        plan.validate().map_err(|e| anchor(e, source))?;
        Ok(plan)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::Config {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_toml_str(&source)
    }

    /// Checks the axes and that the base configuration accepts every path.
    /// Individual grid points may still fail validation; those become error
    /// rows at run time.
    pub fn validate(&self) -> Result<()> {
        self.base.prepare()?;
        for axis in std::iter::once(&self.axis1).chain(&self.axis2) {
            let first = axis.grid()?[0];
            self.base.clone().set_param(&axis.path, first)?;
        }
        Ok(())
    }

    /// Grid points in row order.
    pub fn points(&self) -> Result<Vec<(f64, Option<f64>)>> {
        let a1 = self.axis1.grid()?;
        Ok(match &self.axis2 {
            None => a1.into_iter().map(|x| (x, None)).collect(),
            Some(axis) => {
                let a2 = axis.grid()?;
                a1.iter().flat_map(|&x| a2.iter().map(move |&y| (x, Some(y)))).collect()
            }
        })
    }

    fn run_point(&self, x: f64, y: Option<f64>) -> SweepRow {
        let start = Instant::now();
        let outcome = (|| {
            let mut cfg = self.base.clone();
            cfg.set_param(&self.axis1.path, x)?;
            if let (Some(axis), Some(y)) = (&self.axis2, y) {
                cfg.set_param(&axis.path, y)?;
            }
            cfg.prepare()?.run()
        })();
        let wall_time = start.elapsed().as_secs_f64();
        match outcome {
            Ok(r) => {
                log::info!("sweep point ({x}, {y:?}): efficiency {:.6}", r.efficiency);
                SweepRow {
                    axis1: x,
                    axis2: y,
                    efficiency: Some(r.efficiency),
                    loss: Some(r.loss_u),
                    truncation: r.truncation_flag,
                    wall_time,
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("sweep point ({x}, {y:?}) failed: {e}");
                SweepRow {
                    axis1: x,
                    axis2: y,
                    efficiency: None,
                    loss: None,
                    truncation: false,
                    wall_time,
                    error: Some(e.to_string()),
                }
            }
        }
    }
}

/// Runs every grid point on `workers` threads (0 picks the rayon default).
pub fn run_sweep(plan: &SweepPlan, workers: usize) -> Result<Vec<SweepRow>> {
    let points = plan.points()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    Ok(pool.install(|| points.par_iter().map(|&(x, y)| plan.run_point(x, y)).collect()))
}
