//! Run configuration files.
//!
//! A configuration is TOML with a few top-level keys and the sections
//! `[system]`, `[pulse]`, `[integrator]` and `[initial]`. Every frequency is
//! in units of the trap frequency ν and every time in units of 1/ν.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{mixed_lambda_state, thermal_state};
use crate::basis::{build_basis, delta2_chain, ladder_chain, BasisIndex, Internal, RamanStep, SystemSpec};
use crate::dynamics::DensityState;
use crate::error::{Error, Result};
use crate::integrate::{run_cycles, IntegratorConfig, SimResult};
use crate::pulses::{make_schedule, PulseParams, PulseSchedule, Scheme};

const HEADER: &str = "\
# rotpump run configuration
# Frequencies and rates are in units of the trap frequency nu; times in 1/nu.
";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scheme: Scheme,
    #[serde(default = "one")]
    pub cycles: u32,
    /// Default output directory when none is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub system: SystemSection,
    pub pulse: PulseSection,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub initial: InitialState,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub j_max: u32,
    pub n_max: u32,
    pub eta: f64,
    pub gamma_j: f64,
    pub gamma_u: f64,
    pub beta_b: f64,
    #[serde(default)]
    pub chain: ChainSpec,
}

/// Either a named chain or explicit `[upper, lower]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainSpec {
    Named(ChainName),
    Steps(Vec<[u32; 2]>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainName {
    Ladder,
    Delta2,
}

impl Default for ChainSpec {
    fn default() -> Self {
        ChainSpec::Named(ChainName::Ladder)
    }
}

impl ChainSpec {
    pub fn steps(&self, j_max: u32) -> Vec<RamanStep> {
        match self {
            ChainSpec::Named(ChainName::Ladder) => ladder_chain(j_max),
            ChainSpec::Named(ChainName::Delta2) => delta2_chain(j_max),
            ChainSpec::Steps(pairs) => pairs.iter().map(|&[u, l]| RamanStep::new(u, l)).collect(),
        }
    }
}

/// Pulse parameters. Optional fields fall back to: `omega0_s = omega0_p`,
/// `tau_tilde = 6 width`, `delta_s = delta_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub omega0_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega0_s: Option<f64>,
    pub width: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_tilde: Option<f64>,
    pub delta_p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_s: Option<f64>,
    #[serde(default)]
    pub alpha: f64,
}

impl PulseSection {
    pub fn params(&self) -> PulseParams {
        PulseParams {
            omega0_p: self.omega0_p,
            omega0_s: self.omega0_s.unwrap_or(self.omega0_p),
            width: self.width,
            tau: self.tau,
            tau_tilde: self.tau_tilde.unwrap_or(6.0 * self.width),
            delta_p: self.delta_p,
            delta_s: self.delta_s.unwrap_or(self.delta_p),
            alpha: self.alpha,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagonalEntry {
    pub label: String,
    pub n: u32,
    pub p: f64,
}

/// Initial density matrix.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// Thermal rotational distribution, motional ground state.
    #[default]
    Thermal,
    /// `p_ground` in `|0,0⟩`, the rest in `|1,0⟩`.
    LambdaMixture { p_ground: f64 },
    Diagonal { populations: Vec<DiagonalEntry> },
}

impl InitialState {
    pub fn build(&self, basis: &BasisIndex, spec: &SystemSpec) -> Result<DensityState> {
        match self {
            InitialState::Thermal => thermal_state(basis, spec),
            InitialState::LambdaMixture { p_ground } => {
                if !(0.0..=1.0).contains(p_ground) {
                    return Err(Error::invalid("p_ground", format!("{p_ground} is not a probability")));
                }
                mixed_lambda_state(basis, *p_ground, 1.0 - p_ground)
            }
            InitialState::Diagonal { populations } => {
                let entries = populations
                    .iter()
                    .map(|e| Ok((e.label.parse::<Internal>()?, e.n, e.p)))
                    .collect::<Result<Vec<_>>>()?;
                DensityState::diagonal(basis, &entries, 0.0).map_err(|e| match e {
                    Error::InvalidParameter { key, reason } if key == "rho" => {
                        Error::invalid("populations", reason)
                    }
                    other => other,
                })
            }
        }
    }
}

/// Everything needed to start a run.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub spec: SystemSpec,
    pub basis: BasisIndex,
    pub schedule: PulseSchedule,
    pub rho0: DensityState,
    pub integrator: IntegratorConfig,
    pub cycles: u32,
}

impl Prepared {
    pub fn run(&self) -> Result<SimResult> {
        run_cycles(&self.spec, &self.schedule, &self.rho0, &self.integrator, self.cycles)
    }
}

impl RunConfig {
    /// Parses and validates; errors carry the line of the offending key.
    pub fn from_toml_str(source: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(source).map_err(|e| Error::Config {
            line: e.span().map(|span| line_of_offset(source, span.start)),
            message: e.message().to_string(),
        })?;
        config.prepare().map_err(|e| anchor(e, source))?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).map_err(|e| Error::Config {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_toml_str(&source)
    }

    pub fn system_spec(&self) -> SystemSpec {
        let s = &self.system;
        SystemSpec {
            j_max: s.j_max,
            n_max: s.n_max,
            eta: s.eta,
            gamma_j: s.gamma_j,
            gamma_u: s.gamma_u,
            beta_b: s.beta_b,
            chain: s.chain.steps(s.j_max),
        }
    }

    pub fn prepare(&self) -> Result<Prepared> {
        if self.cycles == 0 {
            return Err(Error::invalid("cycles", "must be at least 1"));
        }
        let spec = self.system_spec();
        spec.validate()?;
        let basis = build_basis(&spec)?;
        let schedule = make_schedule(self.scheme, &spec, &self.pulse.params())?;
        self.integrator.validate()?;
        let rho0 = self.initial.build(&basis, &spec)?;
        Ok(Prepared { spec, basis, schedule, rho0, integrator: self.integrator.clone(), cycles: self.cycles })
    }

    /// Copy with every defaulted value written out.
    pub fn resolved(&self) -> Self {
        let p = self.pulse.params();
        let mut out = self.clone();
        out.pulse.omega0_s = Some(p.omega0_s);
        out.pulse.tau_tilde = Some(p.tau_tilde);
        out.pulse.delta_s = Some(p.delta_s);
        out
    }

    /// Fully resolved TOML, with a header stating the units.
    pub fn to_toml_string(&self) -> String {
        let body = toml::to_string(&self.resolved()).expect("configuration serialises");
        format!("{HEADER}{body}")
    }

    /// Sets the scalar at `path`. The shorthands `pulse.omega0`,
    /// `pulse.delta` and `system.gamma` set both members of a pair.
    pub fn set_param(&mut self, path: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::invalid(path, "value must be finite"));
        }
        let integer = |v: f64| -> Result<u32> {
            if v.fract() == 0.0 && v >= 0.0 && v <= f64::from(u32::MAX) {
                Ok(v as u32)
            } else {
                Err(Error::invalid(path, format!("{v} is not a non-negative integer")))
            }
        };
        let p = &mut self.pulse;
        let s = &mut self.system;
        let i = &mut self.integrator;
        match path {
            "cycles" => self.cycles = integer(value)?,
            "system.j_max" => s.j_max = integer(value)?,
            "system.n_max" => s.n_max = integer(value)?,
            "system.eta" => s.eta = value,
            "system.gamma" => {
                s.gamma_j = value;
                s.gamma_u = value;
            }
            "system.gamma_j" => s.gamma_j = value,
            "system.gamma_u" => s.gamma_u = value,
            "system.beta_b" => s.beta_b = value,
            "pulse.omega0" => {
                p.omega0_p = value;
                p.omega0_s = Some(value);
            }
            "pulse.omega0_p" => p.omega0_p = value,
            "pulse.omega0_s" => p.omega0_s = Some(value),
            "pulse.width" => p.width = value,
            "pulse.tau" => p.tau = value,
            "pulse.tau_tilde" => p.tau_tilde = Some(value),
            "pulse.delta" => {
                p.delta_p = value;
                p.delta_s = Some(value);
            }
            "pulse.delta_p" => p.delta_p = value,
            "pulse.delta_s" => p.delta_s = Some(value),
            "pulse.alpha" => p.alpha = value,
            "integrator.rel_tol" => i.rel_tol = value,
            "integrator.abs_tol" => i.abs_tol = value,
            "integrator.max_step" => i.max_step = value,
            "integrator.sample_interval" => i.sample_interval = Some(value),
            "initial.p_ground" => match &mut self.initial {
                InitialState::LambdaMixture { p_ground } => *p_ground = value,
                _ => return Err(Error::invalid(path, "initial state is not a lambda mixture")),
            },
            other => return Err(Error::UnknownParameter(other.to_string())),
        }
        Ok(())
    }
}

/// 1-based line containing byte `offset`.
pub(crate) fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// 1-based line on which `key` is assigned, if any.
pub(crate) fn line_of_key(source: &str, key: &str) -> Option<usize> {
    source.lines().position(|line| {
        let line = line.trim_start();
        line.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Turns a validation error into a line-anchored configuration error.
pub(crate) fn anchor(error: Error, source: &str) -> Error {
    let line = match &error {
        Error::InvalidParameter { key, .. } => {
            let key = key.rsplit('.').next().unwrap_or(key);
            line_of_key(source, key).or_else(|| match key {
                "width" | "omega0_p" | "omega0_s" | "tau" | "tau_tilde" | "delta_p" | "delta_s" | "alpha" => {
                    line_of_key(source, "[pulse]")
                }
                _ => None,
            })
        }
        Error::UnknownLabel(_) => line_of_key(source, "label"),
        Error::Config { .. } => return error,
        _ => None,
    };
    Error::Config { line, message: error.to_string() }
}
