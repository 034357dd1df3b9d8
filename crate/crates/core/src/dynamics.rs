//! Time-dependent Hamiltonian, Lindblad right-hand side and the idealised
//! motional reset.
//!
//! Units: ħ = ν = 1. Every laser couples one rotational level to the shared
//! excited level `e` through a carrier, a red sideband (`σ₊ â`) and a blue
//! sideband (`σ₊ â†`), all with amplitude `Ω/2` and the sidebands carrying an
//! extra `η √n`.
//!
//! ## Rotating frame
//!
//! The window is split into one frame per Raman step, switching halfway
//! between consecutive step centres. Within step `s`'s frame every rotational
//! level `L` gets a frame detuning `d_L(t)`: step `s` claims its own levels
//! first (upper: pump detuning, lower: `Δˢ + ν`), then the remaining steps in
//! order of distance from `s`. The excited level sits at `E_e = Δᵖ_s` and `L`
//! at `E_e - d_L`, so a single Λ step reads
//!
//! ```text
//! H = ν â†â + Δᵖ |e⟩⟨e| + (Δᵖ - Δˢ - ν) |J-1⟩⟨J-1| + couplings
//! ```
//!
//! and `|J, n⟩ ↔ |J-1, n+1⟩` is two-photon resonant at `Δᵖ = Δˢ`. A laser whose
//! own detuning `d_k` differs from the frame of the level it drives carries the
//! phase `exp(i ∫₀ᵗ (d_k - d_L) dt)`. Only lasers of other steps ever do, and
//! they are weak while the frame is in use; keeping the active step's
//! couplings free of fast phases matters for the exponential integrator.
//!
//! Crossing a frame boundary is an exact diagonal unitary on `ρ`, see
//! [`MasterEquation::change_frame`]. Populations are the same in every frame.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::basis::{build_basis, BasisIndex, Internal, SystemSpec};
use crate::error::{Error, Result};
use crate::pulses::{PulseEnvelope, PulseSchedule};

type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Lasers whose envelope has fallen below this fraction of the peak are left
/// out of the Hamiltonian.
pub const ENVELOPE_FLOOR: f64 = 1e-20;

/// Tolerance on `|tr ρ - 1|` accepted when constructing a [`DensityState`].
pub const TRACE_TOLERANCE: f64 = 1e-8;

/// Density matrix at a given time. Always exactly Hermitian.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    matrix: DMatrix<C64>,
    pub time: f64,
}

impl DensityState {
    /// Wraps `matrix`, symmetrising it to `(ρ + ρ†)/2`.
    pub fn new(matrix: DMatrix<C64>, time: f64) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        let mut state = Self { matrix, time };
        state.hermitize();
        let trace = state.trace();
        if (trace - 1.0).abs() > TRACE_TOLERANCE {
            return Err(Error::invalid("rho", format!("trace is {trace}, expected 1")));
        }
        Ok(state)
    }

    /// `|label, n⟩⟨label, n|`.
    pub fn pure(basis: &BasisIndex, label: Internal, n: u32, time: f64) -> Result<Self> {
        Self::diagonal(basis, &[(label, n, 1.0)], time)
    }

    /// Diagonal state from `(label, n, population)` triples.
    pub fn diagonal(basis: &BasisIndex, entries: &[(Internal, u32, f64)], time: f64) -> Result<Self> {
        let dim = basis.dim();
        let mut matrix = DMatrix::zeros(dim, dim);
        for &(label, n, p) in entries {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("population", format!("{p} is outside [0, 1]")));
            }
            let i = basis.index(label, n)?;
            matrix[(i, i)] += C64::new(p, 0.0);
        }
        Self::new(matrix, time)
    }

    pub(crate) fn from_raw(matrix: DMatrix<C64>, time: f64) -> Self {
        Self { matrix, time }
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn hermitize(&mut self) {
        let dim = self.dim();
        hermitize_slice(self.matrix.as_mut_slice(), dim);
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).sum()
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }

    /// `tr ρ²`.
    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Summed population of every state with the given internal label.
    pub fn label_population(&self, basis: &BasisIndex, label: Internal) -> f64 {
        let start = basis.block_start(label).expect("label belongs to the basis");
        (start..start + basis.n_levels()).map(|i| self.matrix[(i, i)].re).sum()
    }

    /// Summed population of every state with motional number `n`.
    pub fn motional_population(&self, basis: &BasisIndex, n: u32) -> f64 {
        basis
            .internal_labels()
            .map(|label| {
                let i = basis.index(label, n).expect("n within cutoff");
                self.matrix[(i, i)].re
            })
            .sum()
    }
}

/// In-place `(ρ + ρ†)/2` on a column-major square buffer.
pub(crate) fn hermitize_slice(data: &mut [C64], dim: usize) {
    for b in 0..dim {
        let diag = b + b * dim;
        data[diag] = C64::new(data[diag].re, 0.0);
        for a in (b + 1)..dim {
            let lower = a + b * dim;
            let upper = b + a * dim;
            let avg = (data[lower] + data[upper].conj()) * 0.5;
            data[lower] = avg;
            data[upper] = avg.conj();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Affine {
    offset: f64,
    slope: f64,
}

impl Affine {
    fn from_pair((offset, slope): (f64, f64)) -> Self {
        Self { offset, slope }
    }

    fn at(&self, t: f64) -> f64 {
        self.offset + self.slope * t
    }

    fn minus(&self, other: &Affine) -> Affine {
        Affine { offset: self.offset - other.offset, slope: self.slope - other.slope }
    }

    fn is_zero(&self) -> bool {
        self.offset == 0.0 && self.slope == 0.0
    }

    /// `∫_{t0}^{t} (offset + slope s) ds`.
    fn integral(&self, t0: f64, t: f64) -> f64 {
        let dt = t - t0;
        self.offset * dt + 0.5 * self.slope * dt * (t + t0)
    }
}

#[derive(Clone, Debug)]
struct Laser {
    level: usize,
    /// First flat index of the driven rotational level.
    level_start: usize,
    envelope: PulseEnvelope,
    /// The laser's own detuning, `Δᵖ` or `Δˢ + ν`.
    detuning: Affine,
}

/// Rotating frame used while one step is active.
#[derive(Clone, Debug)]
struct Frame {
    /// Time from which this frame applies.
    start: f64,
    excited: Affine,
    /// Frame detuning `d_L` for every rotational level, if any laser drives it.
    levels: Vec<Option<Affine>>,
    /// Coupling phase rate of each laser; `None` when it matches its level.
    rates: Vec<Option<Affine>>,
}

impl Frame {
    /// Frame energy of each internal label as an affine function of time.
    fn energy(&self, label: Internal) -> Affine {
        let zero = Affine { offset: 0.0, slope: 0.0 };
        match label {
            Internal::Rot(j) => self.levels[j as usize].map_or(zero, |d| self.excited.minus(&d)),
            Internal::Excited => self.excited,
            Internal::Uncoupled => zero,
        }
    }
}

/// Hamiltonian as a real diagonal plus couplings between the excited block and
/// the rotational blocks. A coupling `(row, col, v)` sets `H[row, col] = v`
/// and `H[col, row] = v̄`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseHamiltonian {
    pub diag: Vec<f64>,
    pub couplings: Vec<(usize, usize, C64)>,
}

impl SparseHamiltonian {
    pub fn to_dense(&self) -> DMatrix<C64> {
        let dim = self.diag.len();
        let mut h = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            dim,
            self.diag.iter().map(|&d| C64::new(d, 0.0)),
        ));
        for &(r, c, v) in &self.couplings {
            h[(r, c)] += v;
            h[(c, r)] += v.conj();
        }
        h
    }
}

/// Precomputed Lindblad generator for a fixed system and schedule.
#[derive(Clone, Debug)]
pub struct MasterEquation {
    basis: BasisIndex,
    eta: f64,
    /// Ordered by start time; the first starts at `-∞`.
    frames: Vec<Frame>,
    lasers: Vec<Laser>,
    gamma_j: f64,
    gamma_u: f64,
    t_start: f64,
    t_end: f64,
    sqrt_n: Vec<f64>,
}

impl MasterEquation {
    pub fn new(spec: &SystemSpec, schedule: &PulseSchedule) -> Result<Self> {
        let basis = build_basis(spec)?;
        if schedule.steps.is_empty() {
            return Err(Error::invalid("schedule", "no pulse steps"));
        }
        for step in &schedule.steps {
            let t = step.transition;
            if t.upper > spec.j_max || t.lower >= t.upper {
                return Err(Error::invalid("schedule", format!("step {} -> {} does not fit j_max", t.upper, t.lower)));
            }
        }

        let n_rot = spec.j_max as usize + 1;
        let steps = &schedule.steps;
        let own = |k: usize| {
            let step = &steps[k];
            [
                (step.transition.upper as usize, step.pump.envelope, Affine::from_pair(step.pump.detuning.affine())),
                (step.transition.lower as usize, step.stokes.envelope, stokes_frame(step.stokes.detuning.affine())),
            ]
        };
        let mut lasers = Vec::with_capacity(2 * steps.len());
        for k in 0..steps.len() {
            for (level, envelope, detuning) in own(k) {
                lasers.push(Laser {
                    level,
                    level_start: basis.block_start(Internal::Rot(level as u32))?,
                    envelope,
                    detuning,
                });
            }
        }

        let centre = |k: usize| 0.5 * (steps[k].pump.envelope.center + steps[k].stokes.envelope.center);
        let mut frames = Vec::with_capacity(steps.len());
        for s in 0..steps.len() {
            let mut order: Vec<usize> = (0..steps.len()).collect();
            order.sort_by_key(|&k| (k.abs_diff(s), k > s));
            let mut levels: Vec<Option<Affine>> = vec![None; n_rot];
            for k in order {
                for (level, _, detuning) in own(k) {
                    levels[level].get_or_insert(detuning);
                }
            }
            let excited = levels[steps[s].transition.upper as usize].expect("active step's upper level is framed");
            let rates = lasers
                .iter()
                .map(|laser| {
                    let rate = laser.detuning.minus(&levels[laser.level].expect("driven level is framed"));
                    (!rate.is_zero()).then_some(rate)
                })
                .collect();
            let start = if s == 0 { f64::NEG_INFINITY } else { 0.5 * (centre(s - 1) + centre(s)) };
            frames.push(Frame { start, excited, levels, rates });
        }

        Ok(Self {
            basis,
            eta: spec.eta,
            frames,
            lasers,
            gamma_j: spec.gamma_j,
            gamma_u: spec.gamma_u,
            t_start: schedule.t_start,
            t_end: schedule.t_end,
            sqrt_n: (0..=spec.n_max + 1).map(|n| f64::from(n).sqrt()).collect(),
        })
    }

    pub fn basis(&self) -> &BasisIndex {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn window(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    pub fn total_decay(&self) -> f64 {
        f64::from(self.basis.j_max() + 1) * self.gamma_j + self.gamma_u
    }

    /// Number of rotating frames, one per step.
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Index of the frame in use at `t`.
    pub fn frame_at(&self, t: f64) -> usize {
        self.frames.iter().rposition(|f| f.start <= t).unwrap_or(0)
    }

    /// Times at which the frame changes, in order.
    pub fn frame_boundaries(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().skip(1).map(|f| f.start)
    }

    /// Re-expresses `rho` (column-major) at time `t` from frame `from` in
    /// frame `to`: `ρ_ab → e^{i(χ_a - χ_b)} ρ_ab` with
    /// `χ_X = -∫₀ᵗ (E_X^to - E_X^from)`.
    pub fn change_frame(&self, from: usize, to: usize, t: f64, rho: &mut [C64]) {
        if from == to {
            return;
        }
        let b = &self.basis;
        let dim = b.dim();
        let levels = b.n_levels();
        let mut phase = vec![C64::default(); dim];
        for label in b.internal_labels() {
            let drift = self.frames[to].energy(label).minus(&self.frames[from].energy(label));
            let chi = C64::from_polar(1.0, -drift.integral(0.0, t));
            let start = b.block_start(label).expect("label in basis");
            phase[start..start + levels].fill(chi);
        }
        for col in 0..dim {
            let right = phase[col].conj();
            for row in 0..dim {
                rho[row + col * dim] *= phase[row] * right;
            }
        }
    }

    /// Fills `h` with the Hamiltonian at `t` in the frame in use at `t`.
    pub fn hamiltonian_into(&self, t: f64, h: &mut SparseHamiltonian) {
        self.hamiltonian_in(self.frame_at(t), t, h);
    }

    /// Fills `h` with the Hamiltonian at `t` in frame `frame`, reusing its
    /// allocations.
    pub fn hamiltonian_in(&self, frame: usize, t: f64, h: &mut SparseHamiltonian) {
        let b = &self.basis;
        let levels = b.n_levels();
        let dim = b.dim();
        h.diag.clear();
        h.diag.resize(dim, 0.0);
        h.couplings.clear();

        let f = &self.frames[frame];
        let e_energy = f.excited.at(t);
        let e_start = b.block_start(Internal::Excited).expect("excited block");
        for (j, d) in f.levels.iter().enumerate() {
            let energy = d.map_or(0.0, |d| e_energy - d.at(t));
            for n in 0..levels {
                h.diag[j * levels + n] = energy + n as f64;
            }
        }
        for n in 0..levels {
            h.diag[e_start + n] = e_energy + n as f64;
            h.diag[e_start + levels + n] = n as f64;
        }

        for (laser, rate) in self.lasers.iter().zip(&f.rates) {
            let omega = laser.envelope.at(t);
            if omega <= laser.envelope.omega0 * ENVELOPE_FLOOR || omega == 0.0 {
                continue;
            }
            let phase = rate.map_or(C64::new(1.0, 0.0), |r| C64::from_polar(1.0, r.integral(0.0, t)));
            let carrier = phase * (0.5 * omega);
            let side = carrier * self.eta;
            for n in 0..levels {
                let col = laser.level_start + n;
                h.couplings.push((e_start + n, col, carrier));
                if n >= 1 {
                    h.couplings.push((e_start + n - 1, col, side * self.sqrt_n[n]));
                }
                if n + 1 < levels {
                    h.couplings.push((e_start + n + 1, col, side * self.sqrt_n[n + 1]));
                }
            }
        }
    }

    pub fn hamiltonian(&self, t: f64) -> SparseHamiltonian {
        let mut h = SparseHamiltonian::default();
        self.hamiltonian_into(t, &mut h);
        h
    }

    /// `dρ/dt` in frame `frame` for a Hermitian `rho` stored column-major.
    /// `scratch` must hold `dim²` entries; `h` is overwritten with the
    /// Hamiltonian at `t`.
    pub fn rhs_hermitian(
        &self,
        frame: usize,
        t: f64,
        rho: &[C64],
        out: &mut [C64],
        scratch: &mut [C64],
        h: &mut SparseHamiltonian,
    ) {
        self.hamiltonian_in(frame, t, h);
        self.commutator_hermitian(rho, out, scratch, h, None);
        self.add_damping(rho, out);
        self.add_jumps(rho, out);
    }

    /// The part of `dρ/dt` left over once the diagonal generator frozen at
    /// `reference` (energies `reference`, plus the excited-state damping) is
    /// split off. Used by the exponential integrator.
    #[allow(clippy::too_many_arguments)]
    pub fn rhs_remainder(
        &self,
        frame: usize,
        t: f64,
        rho: &[C64],
        out: &mut [C64],
        scratch: &mut [C64],
        h: &mut SparseHamiltonian,
        reference: &[f64],
    ) {
        self.hamiltonian_in(frame, t, h);
        self.commutator_hermitian(rho, out, scratch, h, Some(reference));
        self.add_jumps(rho, out);
    }

    /// Diagonal of the Liouvillian for the frozen energies `energies`:
    /// `-i(E_a - E_b) - (Γ/2)([a ∈ e] + [b ∈ e])`, column-major.
    pub fn diagonal_generator(&self, energies: &[f64], out: &mut [C64]) {
        let dim = self.dim();
        let half = 0.5 * self.total_decay();
        let e_start = self.basis.block_start(Internal::Excited).expect("excited block");
        let in_e = |i: usize| f64::from(u8::from((e_start..e_start + self.basis.n_levels()).contains(&i)));
        for b in 0..dim {
            for a in 0..dim {
                out[a + b * dim] = C64::new(-half * (in_e(a) + in_e(b)), -(energies[a] - energies[b]));
            }
        }
    }

    /// Largest rate at which any diagonal energy drifts.
    pub fn max_energy_slope(&self) -> f64 {
        let mut slope: f64 = 0.0;
        for f in &self.frames {
            for label in self.basis.internal_labels() {
                slope = slope.max(f.energy(label).slope.abs());
            }
        }
        slope
    }

    /// `-i[H, ρ]` for Hermitian `rho`, with `reference` subtracted from the
    /// diagonal of `H` when given.
    fn commutator_hermitian(
        &self,
        rho: &[C64],
        out: &mut [C64],
        scratch: &mut [C64],
        h: &SparseHamiltonian,
        reference: Option<&[f64]>,
    ) {
        let dim = self.dim();
        debug_assert_eq!(rho.len(), dim * dim);
        // Z = i ρ H, column by column; then -i[H, ρ] = Z + Z†.
        for b in 0..dim {
            let d = h.diag[b] - reference.map_or(0.0, |r| r[b]);
            let w = I * d;
            let col = &rho[b * dim..(b + 1) * dim];
            let z = &mut scratch[b * dim..(b + 1) * dim];
            if d == 0.0 {
                z.fill(C64::default());
            } else {
                for (z, r) in z.iter_mut().zip(col) {
                    *z = w * r;
                }
            }
        }
        for &(r, c, v) in &h.couplings {
            axpy(scratch, rho, dim, c, r, I * v);
            axpy(scratch, rho, dim, r, c, I * v.conj());
        }
        for b in 0..dim {
            for a in b..dim {
                let value = scratch[a + b * dim] + scratch[b + a * dim].conj();
                out[a + b * dim] = value;
                out[b + a * dim] = value.conj();
            }
        }
    }

    /// `dρ/dt` in the frame in use at `t`, without assuming `rho` is
    /// Hermitian.
    pub fn rhs_general(&self, t: f64, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let h = self.hamiltonian(t).to_dense();
        let mut out = (&h * rho - rho * &h) * (-I);
        self.add_dissipator(rho.as_slice(), out.as_mut_slice());
        out
    }

    fn add_dissipator(&self, rho: &[C64], out: &mut [C64]) {
        self.add_damping(rho, out);
        self.add_jumps(rho, out);
    }

    /// `-(Γ/2){P_e, ρ}`: every excited column, then every excited row.
    fn add_damping(&self, rho: &[C64], out: &mut [C64]) {
        let half = 0.5 * self.total_decay();
        if half == 0.0 {
            return;
        }
        let dim = self.dim();
        let start = self.basis.block_start(Internal::Excited).expect("excited block");
        let e_range = start..start + self.basis.n_levels();
        for col in e_range.clone() {
            for row in 0..dim {
                out[row + col * dim] -= rho[row + col * dim] * half;
            }
        }
        for col in 0..dim {
            for row in e_range.clone() {
                out[row + col * dim] -= rho[row + col * dim] * half;
            }
        }
    }

    /// Feeding terms `Γ σ₋ ρ σ₊` from the excited block into every sink.
    fn add_jumps(&self, rho: &[C64], out: &mut [C64]) {
        let b = &self.basis;
        let dim = b.dim();
        let levels = b.n_levels();
        let e_start = b.block_start(Internal::Excited).expect("excited block");
        let targets = (0..=b.j_max())
            .map(|j| (Internal::Rot(j), self.gamma_j))
            .chain([(Internal::Uncoupled, self.gamma_u)]);
        for (label, rate) in targets {
            if rate == 0.0 {
                continue;
            }
            let start = b.block_start(label).expect("label in basis");
            for m in 0..levels {
                for n in 0..levels {
                    out[(start + n) + (start + m) * dim] += rho[(e_start + n) + (e_start + m) * dim] * rate;
                }
            }
        }
    }
}

/// `out[:, dst] += w * rho[:, src]` for column-major square buffers.
#[inline]
fn axpy(out: &mut [C64], rho: &[C64], dim: usize, dst: usize, src: usize, w: C64) {
    let src_col = &rho[src * dim..(src + 1) * dim];
    for (o, r) in out[dst * dim..(dst + 1) * dim].iter_mut().zip(src_col) {
        *o += w * r;
    }
}

/// Frame detuning of a level driven by a Stokes pulse: `Δˢ + ν`.
fn stokes_frame(detuning: (f64, f64)) -> Affine {
    Affine { offset: detuning.0 + 1.0, slope: detuning.1 }
}

/// Dense Hamiltonian at `t`, in the frame in use at `t`.
pub fn hamiltonian_at(spec: &SystemSpec, schedule: &PulseSchedule, t: f64) -> Result<DMatrix<C64>> {
    if !schedule.contains(t) {
        return Err(Error::OutsideWindow { t, start: schedule.t_start, end: schedule.t_end });
    }
    Ok(MasterEquation::new(spec, schedule)?.hamiltonian(t).to_dense())
}

/// Right-hand side of the master equation, `-i[H, ρ] + L(ρ) + L_u(ρ)`.
pub fn master_rhs(spec: &SystemSpec, schedule: &PulseSchedule, rho: &DensityState, t: f64) -> Result<DMatrix<C64>> {
    let eq = MasterEquation::new(spec, schedule)?;
    if rho.dim() != eq.dim() {
        return Err(Error::DimensionMismatch { expected: eq.dim(), found: rho.dim() });
    }
    Ok(eq.rhs_general(t, rho.matrix()))
}

/// Moves each internal label's population to `|label, 0⟩` and drops every
/// coherence.
pub fn motional_reset(basis: &BasisIndex, rho: &DensityState) -> Result<DensityState> {
    if rho.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: rho.dim() });
    }
    let dim = basis.dim();
    let mut matrix = DMatrix::zeros(dim, dim);
    for label in basis.internal_labels() {
        let population = rho.label_population(basis, label);
        let i = basis.index(label, 0)?;
        matrix[(i, i)] = C64::new(population, 0.0);
    }
    Ok(DensityState::from_raw(matrix, rho.time))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulses::{make_schedule, PulseParams, Scheme};
    use proptest::prelude::*;

    fn carp_params(omega0: f64) -> PulseParams {
        PulseParams {
            omega0_p: omega0,
            omega0_s: omega0,
            width: 800.0,
            tau: 0.0,
            tau_tilde: 4800.0,
            delta_p: 100.0,
            delta_s: 100.0,
            alpha: 4.69e-5,
        }
    }

    fn lambda(gamma: f64) -> (SystemSpec, PulseSchedule) {
        let spec = SystemSpec::ladder(1, 2, 0.1, gamma, 0.15);
        let schedule = make_schedule(Scheme::Carp, &spec, &carp_params(5.0)).unwrap();
        (spec, schedule)
    }

    fn random_state(basis: &BasisIndex, seed: u64) -> DensityState {
        // A = random complex matrix; ρ = A A† / tr.
        let dim = basis.dim();
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = DMatrix::from_fn(dim, dim, |_, _| C64::new(next(), next()));
        let m = &a * a.adjoint();
        let tr: f64 = (0..dim).map(|i| m[(i, i)].re).sum();
        DensityState::new(m / C64::new(tr, 0.0), 0.0).unwrap()
    }

    #[test]
    fn far_tail_has_no_couplings() {
        let (spec, schedule) = lambda(0.01);
        let h = hamiltonian_at(&spec, &schedule, schedule.t_start).unwrap();
        let basis = build_basis(&spec).unwrap();
        for r in 0..basis.dim() {
            for c in 0..basis.dim() {
                if r != c {
                    assert!(h[(r, c)].norm() < 1e-10);
                }
            }
        }
        // ν n plus the detuning terms
        let t = schedule.t_start;
        let e1 = basis.index(Internal::Excited, 1).unwrap();
        let j0 = basis.index(Internal::Rot(0), 2).unwrap();
        let j1 = basis.index(Internal::Rot(1), 2).unwrap();
        assert!((h[(e1, e1)].re - 101.0).abs() < 1e-12);
        assert!((h[(j1, j1)].re - 2.0).abs() < 1e-12);
        let two_photon = 100.0 - schedule.steps[0].stokes.detuning.at(t);
        assert!((h[(j0, j0)].re - (2.0 + two_photon - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn coupling_elements_at_pump_peak() {
        let (spec, schedule) = lambda(0.01);
        let basis = build_basis(&spec).unwrap();
        let h = hamiltonian_at(&spec, &schedule, 0.0).unwrap();
        let idx = |l, n| basis.index(l, n).unwrap();
        let carrier = h[(idx(Internal::Excited, 0), idx(Internal::Rot(1), 0))];
        let blue = h[(idx(Internal::Excited, 1), idx(Internal::Rot(1), 0))];
        let blue2 = h[(idx(Internal::Excited, 2), idx(Internal::Rot(1), 1))];
        assert!((carrier - C64::new(2.5, 0.0)).norm() < 1e-12);
        assert!((blue - C64::new(0.25, 0.0)).norm() < 1e-12);
        assert!((blue2.re - 0.353_553_390_593_273_8).abs() < 1e-12);
        // red sideband ⟨e,0|H|1,1⟩ = η Ω √1 / 2
        let red = h[(idx(Internal::Excited, 0), idx(Internal::Rot(1), 1))];
        assert!((red.re - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rejects_time_outside_window() {
        let (spec, schedule) = lambda(0.01);
        assert!(matches!(
            hamiltonian_at(&spec, &schedule, schedule.t_end + 1.0),
            Err(Error::OutsideWindow { .. })
        ));
    }

    #[test]
    fn dark_ground_state_is_stationary() {
        let spec = SystemSpec::ladder(1, 2, 0.1, 0.01, 0.15);
        let schedule = make_schedule(Scheme::Carp, &spec, &carp_params(0.0)).unwrap();
        let basis = build_basis(&spec).unwrap();
        let rho = DensityState::pure(&basis, Internal::Rot(0), 0, 0.0).unwrap();
        let d = master_rhs(&spec, &schedule, &rho, 0.0).unwrap();
        assert!(d.iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn excited_decay_rates() {
        let (spec, schedule) = lambda(0.01);
        let basis = build_basis(&spec).unwrap();
        let rho = DensityState::pure(&basis, Internal::Excited, 0, 0.0).unwrap();
        let d = master_rhs(&spec, &schedule, &rho, schedule.t_start).unwrap();
        let at = |l, n| {
            let i = basis.index(l, n).unwrap();
            d[(i, i)].re
        };
        assert!((at(Internal::Excited, 0) + 0.03).abs() < 1e-12);
        assert!((at(Internal::Uncoupled, 0) - 0.01).abs() < 1e-12);
        assert!((at(Internal::Rot(0), 0) - 0.01).abs() < 1e-12);
        assert!((at(Internal::Rot(1), 0) - 0.01).abs() < 1e-12);
        for n in 1..=2 {
            for l in [Internal::Rot(0), Internal::Rot(1), Internal::Uncoupled] {
                assert_eq!(at(l, n), 0.0);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let (spec, schedule) = lambda(0.01);
        let other = build_basis(&SystemSpec::ladder(1, 3, 0.1, 0.01, 0.15)).unwrap();
        let rho = DensityState::pure(&other, Internal::Rot(0), 0, 0.0).unwrap();
        assert!(matches!(master_rhs(&spec, &schedule, &rho, 0.0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn fast_rhs_matches_dense_commutator() {
        let spec = SystemSpec::ladder(3, 3, 0.1, 0.02, 0.15);
        let schedule = make_schedule(Scheme::Carp, &spec, &carp_params(5.0)).unwrap();
        let eq = MasterEquation::new(&spec, &schedule).unwrap();
        let rho = random_state(eq.basis(), 7);
        let dim = eq.dim();
        for &t in &[0.0, 2400.0, 4800.0 + 300.0, 9600.0 - 50.0] {
            let reference = eq.rhs_general(t, rho.matrix());
            let mut out = vec![C64::default(); dim * dim];
            let mut scratch = vec![C64::default(); dim * dim];
            let mut h = SparseHamiltonian::default();
            eq.rhs_hermitian(eq.frame_at(t), t, rho.matrix().as_slice(), &mut out, &mut scratch, &mut h);
            for (x, y) in out.iter().zip(reference.iter()) {
                assert!((x - y).norm() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn multistep_frame_phases() {
        // Level 1 is step 0's Stokes level and step 1's pump level. Each
        // frame leaves its own step's lasers phase free.
        let spec = SystemSpec::ladder(2, 2, 0.1, 0.0, 0.15);
        let schedule = make_schedule(Scheme::Carp, &spec, &carp_params(5.0)).unwrap();
        let eq = MasterEquation::new(&spec, &schedule).unwrap();
        assert_eq!(eq.frame_count(), 2);
        assert_eq!(eq.frame_boundaries().collect::<Vec<_>>(), vec![2400.0]);
        assert_eq!((eq.frame_at(-1e9), eq.frame_at(2399.0), eq.frame_at(2400.0), eq.frame_at(1e9)), (0, 0, 1, 1));
        let phased = |f: usize| eq.frames[f].rates.iter().map(Option::is_some).collect::<Vec<_>>();
        assert_eq!(phased(0), [false, false, true, false]);
        assert_eq!(phased(1), [false, true, false, false]);
    }

    #[test]
    fn frame_change_is_a_gauge_transformation() {
        // H' = D H D† + i Ḋ D† with D = diag(e^{iχ(t)}); compare couplings
        // and the ρ-independent physics: populations and |ρ_ab|.
        let spec = SystemSpec::ladder(2, 2, 0.1, 0.01, 0.15);
        let schedule = make_schedule(Scheme::Carp, &spec, &carp_params(5.0)).unwrap();
        let eq = MasterEquation::new(&spec, &schedule).unwrap();
        let dim = eq.dim();
        let t = 2400.0;
        let rho = random_state(eq.basis(), 3);
        let mut moved = rho.matrix().as_slice().to_vec();
        eq.change_frame(0, 1, t, &mut moved);
        for (a, b) in moved.iter().zip(rho.matrix().iter()) {
            assert!((a.norm() - b.norm()).abs() < 1e-14);
        }
        // Commuting the transformation with the coupling part of the RHS:
        // D (-i[V₀, ρ]) D† = -i[V₁, DρD†] for the off-diagonal couplings.
        let mut h0 = SparseHamiltonian::default();
        let mut h1 = SparseHamiltonian::default();
        eq.hamiltonian_in(0, t, &mut h0);
        eq.hamiltonian_in(1, t, &mut h1);
        let mut couplings0 = h0.clone();
        couplings0.diag.fill(0.0);
        let mut v0 = couplings0.to_dense();
        let mut as_slice = v0.as_mut_slice().to_vec();
        eq.change_frame(0, 1, t, &mut as_slice);
        v0.as_mut_slice().copy_from_slice(&as_slice);
        let mut couplings1 = h1.clone();
        couplings1.diag.fill(0.0);
        let v1 = couplings1.to_dense();
        for (a, b) in v0.iter().zip(v1.iter()) {
            assert!((a - b).norm() < 1e-9, "{a} vs {b}");
        }
        // Diagonal energies shift by the frame energy difference, and the
        // transformation round-trips.
        let mut back = moved.clone();
        eq.change_frame(1, 0, t, &mut back);
        for (a, b) in back.iter().zip(rho.matrix().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(h0.diag.len(), dim);
    }

    #[test]
    fn reset_examples() {
        let basis = build_basis(&SystemSpec::ladder(1, 3, 0.1, 0.01, 0.15)).unwrap();
        let rho = DensityState::pure(&basis, Internal::Rot(0), 3, 2.0).unwrap();
        let reset = motional_reset(&basis, &rho).unwrap();
        assert_eq!(reset, DensityState::pure(&basis, Internal::Rot(0), 0, 2.0).unwrap());

        let rho = DensityState::diagonal(&basis, &[(Internal::Rot(1), 0, 0.5), (Internal::Rot(0), 2, 0.5)], 0.0).unwrap();
        let reset = motional_reset(&basis, &rho).unwrap();
        let expect = DensityState::diagonal(&basis, &[(Internal::Rot(1), 0, 0.5), (Internal::Rot(0), 0, 0.5)], 0.0).unwrap();
        assert_eq!(reset, expect);
    }

    #[test]
    fn density_state_validation() {
        let basis = build_basis(&SystemSpec::ladder(1, 1, 0.1, 0.01, 0.15)).unwrap();
        let half = DMatrix::from_diagonal_element(basis.dim(), basis.dim(), C64::new(0.5, 0.0));
        assert!(DensityState::new(half, 0.0).is_err());
        assert!(DensityState::new(DMatrix::zeros(3, 4), 0.0).is_err());
        assert!(DensityState::diagonal(&basis, &[(Internal::Rot(0), 0, 1.5)], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn hamiltonian_is_hermitian(t in -4000.0f64..4000.0, omega in 0.0f64..10.0) {
            let spec = SystemSpec::ladder(2, 3, 0.1, 0.01, 0.15);
            let schedule = make_schedule(Scheme::Carp, &spec, &carp_params(omega)).unwrap();
            let t = t.clamp(schedule.t_start, schedule.t_end);
            let h = hamiltonian_at(&spec, &schedule, t).unwrap();
            let diff = (&h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            prop_assert!(diff < 1e-12);
        }

        #[test]
        fn rhs_is_traceless_and_hermitian(seed in any::<u64>(), t in -4000.0f64..4000.0) {
            let (spec, schedule) = lambda(0.05);
            let basis = build_basis(&spec).unwrap();
            let rho = random_state(&basis, seed);
            let d = master_rhs(&spec, &schedule, &rho, t).unwrap();
            let trace: C64 = (0..basis.dim()).map(|i| d[(i, i)]).sum();
            prop_assert!(trace.norm() < 1e-12);
            let asym = (&d - d.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            prop_assert!(asym < 1e-12);
        }

        #[test]
        fn reset_preserves_trace(seed in any::<u64>()) {
            let basis = build_basis(&SystemSpec::ladder(2, 3, 0.1, 0.01, 0.15)).unwrap();
            let rho = random_state(&basis, seed);
            let reset = motional_reset(&basis, &rho).unwrap();
            prop_assert!((reset.trace() - rho.trace()).abs() < 1e-14);
            for label in basis.internal_labels() {
                prop_assert!((reset.label_population(&basis, label) - rho.label_population(&basis, label)).abs() < 1e-14);
            }
        }

        #[test]
        fn decay_keeps_motional_number(n0 in 0u32..=3, seed in any::<u64>()) {
            // With every envelope off, the dissipator maps a state supported on
            // n0 into states supported on n0.
            let spec = SystemSpec::ladder(2, 3, 0.1, 0.05, 0.15);
            let schedule = make_schedule(Scheme::Carp, &spec, &carp_params(0.0)).unwrap();
            let basis = build_basis(&spec).unwrap();
            let labels: Vec<_> = basis.internal_labels().collect();
            let mut x = seed | 1;
            let entries: Vec<_> = labels.iter().map(|&l| {
                x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                (l, n0, (x % 1000) as f64 + 1.0)
            }).collect();
            let total: f64 = entries.iter().map(|e| e.2).sum();
            let entries: Vec<_> = entries.into_iter().map(|(l, n, w)| (l, n, w / total)).collect();
            let rho = DensityState::diagonal(&basis, &entries, 0.0).unwrap();
            let d = master_rhs(&spec, &schedule, &rho, 0.0).unwrap();
            for i in 0..basis.dim() {
                for j in 0..basis.dim() {
                    if basis.label(i).1 != n0 || basis.label(j).1 != n0 {
                        prop_assert!(d[(i, j)].norm() == 0.0);
                    }
                }
            }
        }
    }
}
