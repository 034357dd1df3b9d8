//! Initial states, figures of merit and closed-form estimates.

use crate::basis::{BasisIndex, Internal, SystemSpec};
use crate::dynamics::DensityState;
use crate::error::{Error, Result};
use crate::pulses::PulseSchedule;

/// Normalised rotational populations `(2J+1) exp(-βB J(J+1)) / Z` for
/// `J = 0..=j_max`.
pub fn thermal_populations(j_max: u32, beta_b: f64) -> Vec<f64> {
    let weights: Vec<f64> = (0..=j_max)
        .map(|j| {
            let j = f64::from(j);
            (2.0 * j + 1.0) * (-beta_b * j * (j + 1.0)).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / z).collect()
}

/// Partition function truncated at `j_max`.
pub fn partition_function(j_max: u32, beta_b: f64) -> f64 {
    (0..=j_max)
        .map(|j| {
            let j = f64::from(j);
            (2.0 * j + 1.0) * (-beta_b * j * (j + 1.0)).exp()
        })
        .sum()
}

/// Thermal rotational distribution with the motion in its ground state.
pub fn thermal_state(basis: &BasisIndex, spec: &SystemSpec) -> Result<DensityState> {
    if !(spec.beta_b > 0.0) {
        return Err(Error::invalid("beta_b", "must be positive"));
    }
    let entries: Vec<_> = thermal_populations(basis.j_max(), spec.beta_b)
        .into_iter()
        .enumerate()
        .map(|(j, p)| (Internal::Rot(j as u32), 0, p))
        .collect();
    DensityState::diagonal(basis, &entries, 0.0)
}

/// `p_ground |0,0⟩⟨0,0| + p_excited_rot |1,0⟩⟨1,0|`.
pub fn mixed_lambda_state(basis: &BasisIndex, p_ground: f64, p_excited_rot: f64) -> Result<DensityState> {
    for (key, p) in [("p_ground", p_ground), ("p_excited_rot", p_excited_rot)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(key, format!("{p} is not a probability")));
        }
    }
    if (p_ground + p_excited_rot - 1.0).abs() > 1e-12 {
        return Err(Error::invalid("p_excited_rot", "probabilities must sum to 1"));
    }
    DensityState::diagonal(basis, &[(Internal::Rot(0), 0, p_ground), (Internal::Rot(1), 0, p_excited_rot)], 0.0)
}

/// Total population of the rotational ground state.
pub fn efficiency(basis: &BasisIndex, rho: &DensityState) -> f64 {
    rho.label_population(basis, Internal::Rot(0))
}

/// Total population lost to the uncoupled manifold.
pub fn loss_u(basis: &BasisIndex, rho: &DensityState) -> f64 {
    rho.label_population(basis, Internal::Uncoupled)
}

/// Far-detuned reduction of one Raman step to a two-level system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EffectiveTwoLevel {
    /// Two-photon coupling `η Ωᵖ Ωˢ / Δᵖ`.
    pub omega_eff: f64,
    /// Splitting `δ + Sˢ - Sᵖ` with `δ = Δˢ - Δᵖ`.
    pub delta_eff: f64,
    pub stark_s: f64,
    pub stark_p: f64,
}

pub fn effective_two_level(spec: &SystemSpec, schedule: &PulseSchedule, step: usize, t: f64) -> Result<EffectiveTwoLevel> {
    let step = schedule
        .steps
        .get(step)
        .ok_or_else(|| Error::invalid("step", format!("schedule has {} steps", schedule.steps.len())))?;
    let delta_p = step.pump.detuning.at(t);
    let delta_s = step.stokes.detuning.at(t);
    if delta_p == 0.0 {
        return Err(Error::SingularDetuning("pump"));
    }
    if delta_s == 0.0 {
        return Err(Error::SingularDetuning("stokes"));
    }
    let omega_p = step.pump.envelope.at(t);
    let omega_s = step.stokes.envelope.at(t);
    let stark_s = (spec.eta * omega_s).powi(2) / (4.0 * delta_s);
    let stark_p = omega_p * omega_p / (4.0 * delta_p);
    Ok(EffectiveTwoLevel {
        omega_eff: spec.eta * omega_p * omega_s / delta_p,
        delta_eff: delta_s - delta_p + stark_s - stark_p,
        stark_s,
        stark_p,
    })
}

/// Adiabaticity ratio `Ω₀² T² / (|τ| |Δᵖ| exp(2τ²/T²))` for delayed Gaussian
/// pulses. Zero delay gives `+∞`.
pub fn scrap_margin(omega0: f64, width: f64, tau: f64, delta_p: f64) -> f64 {
    if tau == 0.0 {
        return f64::INFINITY;
    }
    let ratio = tau / width;
    (omega0 * width).powi(2) / (tau.abs() * delta_p.abs() * (2.0 * ratio * ratio).exp())
}

/// Landau–Zener parameter `η² Ω₀⁴ / (2 Δᵖ² |α|)`.
pub fn lz_parameter(eta: f64, omega0: f64, delta_p: f64, alpha: f64) -> Result<f64> {
    if alpha == 0.0 {
        return Err(Error::invalid("alpha", "must be nonzero"));
    }
    if delta_p == 0.0 {
        return Err(Error::SingularDetuning("pump"));
    }
    Ok(eta * eta * omega0.powi(4) / (2.0 * delta_p * delta_p * alpha.abs()))
}

/// Population moved by a single chirped passage, `p_init (1 - e^{-πΛ})`.
pub fn lz_prediction(eta: f64, omega0: f64, delta_p: f64, alpha: f64, p_init: f64) -> Result<f64> {
    let lambda = lz_parameter(eta, omega0, delta_p, alpha)?;
    Ok(p_init * -(-std::f64::consts::PI * lambda).exp_m1())
}

/// Ground-state population after a ladder of steps, each with efficiency
/// `epsilon_step`: level `J` needs `J` steps, so `Σ_J P_J ε^J`.
pub fn chain_estimate(epsilon_step: f64, populations: &[f64]) -> f64 {
    populations.iter().zip(0i32..).map(|(p, j)| p * epsilon_step.powi(j)).sum()
}

/// Number of rotational levels holding more than `p_cut` at temperature
/// `kT/B`, `⌈√(-ln(2 p_cut) kT/B)⌉`.
pub fn populated_levels(kt_over_b: f64, p_cut: f64) -> Result<u32> {
    if !(kt_over_b > 0.0 && kt_over_b.is_finite()) {
        return Err(Error::invalid("kt_over_b", "must be positive"));
    }
    if !(p_cut > 0.0 && p_cut < 0.5) {
        return Err(Error::invalid("p_cut", "must lie in (0, 0.5)"));
    }
    Ok((-(2.0 * p_cut).ln() * kt_over_b).sqrt().ceil() as u32)
}
