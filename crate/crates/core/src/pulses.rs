//! Gaussian pulse envelopes, detuning programs and the STIRAP / SCRAP / CARP
//! schedules built from them. Frequencies are in units of ν, times in 1/ν.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::{RamanStep, SystemSpec};
use crate::error::{Error, Result};

/// Half-width of the simulation window around the outermost pulse centres,
/// in units of the pulse width. The envelope there is `e^-25` of its peak.
pub const WINDOW_WIDTHS: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseEnvelope {
    pub omega0: f64,
    pub center: f64,
    pub width: f64,
}

impl PulseEnvelope {
    pub fn new(omega0: f64, center: f64, width: f64) -> Self {
        Self { omega0, center, width }
    }

    /// Rabi frequency `omega0 * exp(-(t - center)^2 / width^2)`.
    pub fn at(&self, t: f64) -> f64 {
        let x = (t - self.center) / self.width;
        self.omega0 * (-x * x).exp()
    }
}

/// Single-photon detuning as a function of time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DetuningProgram {
    Constant(f64),
    /// `base - alpha * (t - reference)`.
    Chirp { base: f64, alpha: f64, reference: f64 },
}

impl DetuningProgram {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            DetuningProgram::Constant(value) => value,
            DetuningProgram::Chirp { base, alpha, reference } => base - alpha * (t - reference),
        }
    }

    /// Coefficients `(offset, slope)` with `at(t) == offset + slope * t`.
    pub fn affine(&self) -> (f64, f64) {
        match *self {
            DetuningProgram::Constant(value) => (value, 0.0),
            DetuningProgram::Chirp { base, alpha, reference } => (base + alpha * reference, -alpha),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pulse {
    pub envelope: PulseEnvelope,
    pub detuning: DetuningProgram,
}

/// One pump/Stokes pair driving `transition`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduledStep {
    pub transition: RamanStep,
    pub pump: Pulse,
    pub stokes: Pulse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseSchedule {
    pub steps: Vec<ScheduledStep>,
    pub t_start: f64,
    pub t_end: f64,
}

impl PulseSchedule {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t <= self.t_end
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Stirap,
    Scrap,
    Carp,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Stirap => "stirap",
            Scheme::Scrap => "scrap",
            Scheme::Carp => "carp",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stirap" => Ok(Scheme::Stirap),
            "scrap" => Ok(Scheme::Scrap),
            "carp" => Ok(Scheme::Carp),
            other => Err(Error::invalid("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

/// Pulse parameters shared by every step of a schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    pub omega0_p: f64,
    pub omega0_s: f64,
    /// Gaussian width T.
    pub width: f64,
    /// Half of the Stokes-to-pump delay.
    pub tau: f64,
    /// Delay between consecutive pulse pairs.
    pub tau_tilde: f64,
    pub delta_p: f64,
    pub delta_s: f64,
    /// Chirp rate of the CARP Stokes detuning.
    pub alpha: f64,
}

impl PulseParams {
    pub fn validate(&self, scheme: Scheme) -> Result<()> {
        let finite = [
            ("omega0_p", self.omega0_p),
            ("omega0_s", self.omega0_s),
            ("width", self.width),
            ("tau", self.tau),
            ("tau_tilde", self.tau_tilde),
            ("delta_p", self.delta_p),
            ("delta_s", self.delta_s),
            ("alpha", self.alpha),
        ];
        for (key, value) in finite {
            if !value.is_finite() {
                return Err(Error::invalid(key, "must be finite"));
            }
        }
        if !(self.width > 0.0) {
            return Err(Error::invalid("width", "pulse width must be positive"));
        }
        if self.omega0_p < 0.0 {
            return Err(Error::invalid("omega0_p", "must be non-negative"));
        }
        if self.omega0_s < 0.0 {
            return Err(Error::invalid("omega0_s", "must be non-negative"));
        }
        if self.tau_tilde < 0.0 {
            return Err(Error::invalid("tau_tilde", "must be non-negative"));
        }
        if scheme == Scheme::Carp && self.tau != 0.0 {
            return Err(Error::invalid("tau", "CARP uses simultaneous pulses (tau = 0)"));
        }
        Ok(())
    }
}

/// Builds one pump/Stokes pair per chain entry. Step `k` has its pump centred
/// at `3 tau + k tau_tilde` and its Stokes pulse at `tau + k tau_tilde`.
pub fn make_schedule(scheme: Scheme, spec: &SystemSpec, params: &PulseParams) -> Result<PulseSchedule> {
    params.validate(scheme)?;
    let width = params.width;
    let steps: Vec<ScheduledStep> = spec
        .chain
        .iter()
        .enumerate()
        .map(|(k, &transition)| {
            let offset = k as f64 * params.tau_tilde;
            let pump_center = 3.0 * params.tau + offset;
            let stokes_center = params.tau + offset;
            let (pump_detuning, stokes_detuning) = match scheme {
                Scheme::Stirap | Scheme::Scrap => (
                    DetuningProgram::Constant(params.delta_p),
                    DetuningProgram::Constant(params.delta_s),
                ),
                Scheme::Carp => (
                    DetuningProgram::Constant(params.delta_p),
                    DetuningProgram::Chirp { base: params.delta_p, alpha: params.alpha, reference: offset },
                ),
            };
            ScheduledStep {
                transition,
                pump: Pulse {
                    envelope: PulseEnvelope::new(params.omega0_p, pump_center, width),
                    detuning: pump_detuning,
                },
                stokes: Pulse {
                    envelope: PulseEnvelope::new(params.omega0_s, stokes_center, width),
                    detuning: stokes_detuning,
                },
            }
        })
        .collect();

    let centers = steps.iter().flat_map(|s| [s.pump.envelope.center, s.stokes.envelope.center]);
    let (lo, hi) = centers.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c), hi.max(c)));
    if steps.is_empty() {
        return Err(Error::invalid("chain", "must contain at least one step"));
    }
    Ok(PulseSchedule {
        steps,
        t_start: lo - WINDOW_WIDTHS * width,
        t_end: hi + WINDOW_WIDTHS * width,
    })
}
