//! Rotational cooling of a trapped molecular ion by adiabatic passage.
//!
//! The crate builds the joint rotational ⊗ motional state space, assembles the
//! time-dependent Lindblad generator for sequences of two-photon Raman pulses
//! (STIRAP, SCRAP and CARP), integrates it, and provides the analytic
//! estimates used to check the numerics.

pub mod analysis;
pub mod basis;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod pulses;
pub mod sweep;

pub use basis::{build_basis, BasisIndex, Internal, RamanStep, SystemSpec};
pub use dynamics::{hamiltonian_at, master_rhs, motional_reset, DensityState, MasterEquation};
pub use error::{Error, Result};

pub use pulses::{make_schedule, PulseEnvelope, PulseParams, PulseSchedule, Scheme};
pub use integrate::{run, run_cycles, IntegratorConfig, SimResult};
