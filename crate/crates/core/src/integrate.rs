//! Adaptive Dormand–Prince 5(4) propagation of the master equation.

use std::time::{Duration, Instant};

use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{Internal, SystemSpec};
use crate::dynamics::{hermitize_slice, motional_reset, DensityState, MasterEquation, SparseHamiltonian};
use crate::error::{Error, Result};
use crate::pulses::PulseSchedule;

type C64 = Complex64;

/// Population allowed at the motional cutoff before a run is flagged.
pub const TRUNCATION_LIMIT: f64 = 1e-3;
/// Largest tolerated `|tr ρ(t) - tr ρ(t_start)|`.
pub const TRACE_DRIFT_LIMIT: f64 = 1e-6;
/// Eigenvalues below this are reported as a positivity violation.
pub const POSITIVITY_LIMIT: f64 = -1e-6;

/// Time-stepping scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Fourth-order exponential Runge–Kutta that integrates the diagonal
    /// generator exactly, with an embedded error estimate. Its step size does
    /// not depend on the detuning.
    #[default]
    Exponential,
    /// Dormand–Prince 5(4). Stability caps its step near `1/Δ`.
    Dopri5,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Spacing of recorded samples; `None` means a twentieth of the first
    /// pump's width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
    pub hermitize_every_step: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::default(),
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: 0.05,
            sample_interval: None,
            hermitize_every_step: true,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol), ("max_step", self.max_step)];
        for (key, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(key, format!("must be positive, got {value}")));
            }
        }
        // Below this the error estimate is pure roundoff and the controller
        // can stall on steps that never fail.
        if self.rel_tol < 10.0 * f64::EPSILON {
            return Err(Error::invalid("rel_tol", format!("{} is below double precision", self.rel_tol)));
        }
        if let Some(dt) = self.sample_interval {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::invalid("sample_interval", format!("must be positive, got {dt}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub populations: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CycleSummary {
    pub efficiency: f64,
    pub loss_u: f64,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct SimResult {
    /// Populations of every basis state at the sample times. Later cycles are
    /// offset by the schedule duration so times increase monotonically.
    pub samples: Vec<Sample>,
    pub final_state: DensityState,
    pub efficiency: f64,
    pub loss_u: f64,
    /// Set when the final population at `n_max` exceeds [`TRUNCATION_LIMIT`].
    pub truncation_flag: bool,
    pub edge_population: f64,
    pub step_count: u64,
    pub rejected_steps: u64,
    pub wall_time: Duration,
    /// Smallest eigenvalue seen at any sample.
    pub min_eigenvalue: f64,
    pub per_cycle: Vec<CycleSummary>,
}

/// Scaled max norm: every entry's local error stays within its tolerance.
/// The exponential method propagates its fourth-order solution and takes
/// hundreds of thousands of steps per run, so an RMS norm lets errors in a few
/// coherences pile up into a visible purity loss.
fn error_max_norm(err: impl Iterator<Item = C64>, y: &[C64], y_new: &[C64], cfg: &IntegratorConfig) -> f64 {
    let mut worst: f64 = 0.0;
    for ((e, a), b) in err.zip(y).zip(y_new) {
        let scale = cfg.abs_tol + cfg.rel_tol * a.norm_sqr().max(b.norm_sqr()).sqrt();
        worst = worst.max(e.norm() / scale);
    }
    worst
}

/// Scaled RMS norm used for error control.
fn error_norm(err: impl Iterator<Item = C64>, y: &[C64], y_new: &[C64], cfg: &IntegratorConfig) -> f64 {
    let mut sum = 0.0;
    for ((e, a), b) in err.zip(y).zip(y_new) {
        let scale = cfg.abs_tol + cfg.rel_tol * a.norm_sqr().max(b.norm_sqr()).sqrt();
        sum += e.norm_sqr() / (scale * scale);
    }
    (sum / y.len() as f64).sqrt()
}

/// One-step scheme driven by [`integrate`].
trait Stepper {
    /// Prepares derivative information at `(t, y)`, with `y` in `frame`.
    fn start(&mut self, t: f64, y: &[C64], frame: usize);
    /// Attempts a step of `h`; the candidate is left in `candidate()` and the
    /// scaled error is returned.
    fn attempt(&mut self, t: f64, y: &[C64], h: f64) -> f64;
    fn candidate(&mut self) -> &mut Vec<C64>;
    /// Called once the candidate has been adopted as the state at `t`.
    fn accepted(&mut self, t: f64, y: &[C64]);
    /// Next step after an accepted (`ok`) or rejected attempt of `h`.
    fn propose(&mut self, h: f64, err: f64, ok: bool) -> f64;
    fn first_step(&mut self, t: f64, y: &[C64]) -> f64;
}

// Dormand–Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - BETA * 0.75;
const MIN_SHRINK: f64 = 0.2;
const MAX_GROW: f64 = 10.0;

struct Dopri {
    eq: MasterEquation,
    cfg: IntegratorConfig,
    k: [Vec<C64>; 7],
    stage: Vec<C64>,
    y_new: Vec<C64>,
    scratch: Vec<C64>,
    h: SparseHamiltonian,
    frame: usize,
    err_old: f64,
}

impl Dopri {
    fn new(eq: MasterEquation, cfg: &IntegratorConfig) -> Self {
        let len = eq.dim() * eq.dim();
        let zero = || vec![C64::default(); len];
        Self {
            eq,
            cfg: cfg.clone(),
            k: std::array::from_fn(|_| zero()),
            stage: zero(),
            y_new: zero(),
            scratch: zero(),
            h: SparseHamiltonian::default(),
            frame: 0,
            err_old: 1e-4,
        }
    }

    fn eval_stage(&mut self, t: f64, slot: usize) {
        let Self { eq, k, scratch, h, stage, frame, .. } = self;
        eq.rhs_hermitian(*frame, t, stage, &mut k[slot], scratch, h);
    }

    fn combine(&mut self, y: &[C64], h: f64, weights: &[(usize, f64)]) {
        self.stage.copy_from_slice(y);
        for &(slot, a) in weights {
            let w = h * a;
            for (s, k) in self.stage.iter_mut().zip(&self.k[slot]) {
                *s += k * w;
            }
        }
    }
}

impl Stepper for Dopri {
    fn start(&mut self, t: f64, y: &[C64], frame: usize) {
        self.frame = frame;
        let Self { eq, k, scratch, h, .. } = self;
        eq.rhs_hermitian(frame, t, y, &mut k[0], scratch, h);
    }

    fn attempt(&mut self, t: f64, y: &[C64], h: f64) -> f64 {
        self.combine(y, h, &[(0, A21)]);
        self.eval_stage(t + C2 * h, 1);
        self.combine(y, h, &[(0, A31), (1, A32)]);
        self.eval_stage(t + C3 * h, 2);
        self.combine(y, h, &[(0, A41), (1, A42), (2, A43)]);
        self.eval_stage(t + C4 * h, 3);
        self.combine(y, h, &[(0, A51), (1, A52), (2, A53), (3, A54)]);
        self.eval_stage(t + C5 * h, 4);
        self.combine(y, h, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)]);
        self.eval_stage(t + h, 5);
        self.combine(y, h, &[(0, A71), (2, A73), (3, A74), (4, A75), (5, A76)]);
        std::mem::swap(&mut self.stage, &mut self.y_new);
        {
            let Self { eq, k, scratch, h: ham, y_new, frame, .. } = self;
            eq.rhs_hermitian(*frame, t + h, y_new, &mut k[6], scratch, ham);
        }
        let k = &self.k;
        let err = (0..y.len())
            .map(|i| (k[0][i] * E1 + k[2][i] * E3 + k[3][i] * E4 + k[4][i] * E5 + k[5][i] * E6 + k[6][i] * E7) * h);
        error_norm(err, y, &self.y_new, &self.cfg)
    }

    fn candidate(&mut self) -> &mut Vec<C64> {
        &mut self.y_new
    }

    fn accepted(&mut self, _t: f64, _y: &[C64]) {
        self.k.swap(0, 6);
    }

    fn propose(&mut self, h: f64, err: f64, ok: bool) -> f64 {
        if !err.is_finite() {
            return h * MIN_SHRINK;
        }
        let fac11 = err.powf(EXPO);
        if ok {
            let fac = (fac11 / self.err_old.powf(BETA) / SAFETY).clamp(1.0 / MAX_GROW, 1.0 / MIN_SHRINK);
            self.err_old = err.max(1e-4);
            (h / fac).min(self.cfg.max_step)
        } else {
            h / (fac11 / SAFETY).min(1.0 / MIN_SHRINK)
        }
    }

    /// Starting step following Hairer, Nørsett & Wanner (II.4).
    fn first_step(&mut self, t: f64, y: &[C64]) -> f64 {
        let cfg = self.cfg.clone();
        let norm = |v: &[C64]| error_norm(v.iter().copied(), y, y, &cfg);
        let d0 = norm(y);
        let d1 = norm(&self.k[0]);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(cfg.max_step);
        self.combine(y, h0, &[(0, 1.0)]);
        self.eval_stage(t + h0, 1);
        let diff: Vec<C64> = self.k[1].iter().zip(&self.k[0]).map(|(a, b)| a - b).collect();
        let d2 = norm(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
        (100.0 * h0).min(h1).min(cfg.max_step)
    }
}

/// Elementwise coefficients of Krogstad's fourth-order exponential
/// Runge–Kutta step for one step size, with `z = h L` for the diagonal
/// generator `L`.
struct EtdCoefficients {
    h: f64,
    /// `e^{z/2}`
    half: Vec<C64>,
    /// `e^{z}`
    full: Vec<C64>,
    /// `(h/2) φ₁(z/2)`
    q: Vec<C64>,
    /// `h φ₂(z/2)`
    q2: Vec<C64>,
    /// `h φ₁(z)` and `2h φ₂(z)`
    r1: Vec<C64>,
    r2: Vec<C64>,
    /// `h (φ₁ - 3φ₂ + 4φ₃)`, `h (2φ₂ - 4φ₃)`, `h (4φ₃ - φ₂)`
    f1: Vec<C64>,
    f2: Vec<C64>,
    f3: Vec<C64>,
}

/// `(φ₁, φ₂, φ₃)` with `φ_k(z) = Σ_j z^j / (j+k)!`.
fn phi123(z: C64) -> (C64, C64, C64) {
    if z.norm_sqr() < 1.0 {
        let mut term = C64::new(1.0, 0.0);
        let mut sums = [C64::default(); 3];
        // term = z^j / j!; φ_k collects z^j / (j+k)!
        for j in 0..24 {
            let jf = j as f64;
            sums[0] += term / (jf + 1.0);
            sums[1] += term / ((jf + 1.0) * (jf + 2.0));
            sums[2] += term / ((jf + 1.0) * (jf + 2.0) * (jf + 3.0));
            term *= z / (jf + 1.0);
        }
        (sums[0], sums[1], sums[2])
    } else {
        let p1 = (z.exp() - 1.0) / z;
        let p2 = (p1 - 1.0) / z;
        let p3 = (p2 - 0.5) / z;
        (p1, p2, p3)
    }
}

impl EtdCoefficients {
    fn new(generator: &[C64], h: f64) -> Self {
        let len = generator.len();
        let mut c = Self {
            h,
            half: Vec::with_capacity(len),
            full: Vec::with_capacity(len),
            q: Vec::with_capacity(len),
            q2: Vec::with_capacity(len),
            r1: Vec::with_capacity(len),
            r2: Vec::with_capacity(len),
            f1: Vec::with_capacity(len),
            f2: Vec::with_capacity(len),
            f3: Vec::with_capacity(len),
        };
        for &l in generator {
            let z = l * h;
            let (hp1, hp2, _) = phi123(z * 0.5);
            let (p1, p2, p3) = phi123(z);
            c.half.push((z * 0.5).exp());
            c.full.push(z.exp());
            c.q.push(hp1 * (0.5 * h));
            c.q2.push(hp2 * h);
            c.r1.push(p1 * h);
            c.r2.push(p2 * (2.0 * h));
            c.f1.push((p1 - p2 * 3.0 + p3 * 4.0) * h);
            c.f2.push((p2 * 2.0 - p3 * 4.0) * h);
            c.f3.push((p3 * 4.0 - p2) * h);
        }
        c
    }
}

/// Energy drift tolerated before the frozen diagonal generator is rebuilt.
const REFERENCE_DRIFT: f64 = 0.05;

/// Krogstad's scheme with an embedded third-order solution that swaps the
/// last stage for the derivative at the new point (which the next step needs
/// anyway), so the error estimate costs no extra evaluation.
struct Exponential {
    eq: MasterEquation,
    cfg: IntegratorConfig,
    /// Energies the diagonal generator was frozen at.
    reference: Vec<f64>,
    reference_time: f64,
    generator: Vec<C64>,
    slope: f64,
    coef: Option<EtdCoefficients>,
    /// Remainder at the current state and at the candidate.
    n0: Vec<C64>,
    n_new: Vec<C64>,
    na: Vec<C64>,
    nb: Vec<C64>,
    nc: Vec<C64>,
    a: Vec<C64>,
    b: Vec<C64>,
    c: Vec<C64>,
    y_new: Vec<C64>,
    scratch: Vec<C64>,
    h: SparseHamiltonian,
    frame: usize,
}

impl Exponential {
    fn new(eq: MasterEquation, cfg: &IntegratorConfig) -> Self {
        let dim = eq.dim();
        let zero = || vec![C64::default(); dim * dim];
        let slope = eq.max_energy_slope();
        Self {
            eq,
            cfg: cfg.clone(),
            reference: vec![0.0; dim],
            reference_time: f64::NAN,
            generator: zero(),
            slope,
            coef: None,
            n0: zero(),
            n_new: zero(),
            na: zero(),
            nb: zero(),
            nc: zero(),
            a: zero(),
            b: zero(),
            c: zero(),
            y_new: zero(),
            scratch: zero(),
            h: SparseHamiltonian::default(),
            frame: 0,
        }
    }

    fn freeze(&mut self, t: f64) {
        self.eq.hamiltonian_in(self.frame, t, &mut self.h);
        self.reference.copy_from_slice(&self.h.diag);
        self.reference_time = t;
        self.eq.diagonal_generator(&self.reference, &mut self.generator);
        self.coef = None;
    }

    fn remainder(&mut self, t: f64, stage: Stage) {
        let Self { eq, scratch, h, reference, n_new, na, nb, nc, a, b, c, y_new, frame, .. } = self;
        let (input, out): (&[C64], &mut [C64]) = match stage {
            Stage::A => (a, na),
            Stage::B => (b, nb),
            Stage::C => (c, nc),
            Stage::New => (y_new, n_new),
        };
        eq.rhs_remainder(*frame, t, input, out, scratch, h, reference);
    }
}

#[derive(Clone, Copy)]
enum Stage {
    A,
    B,
    C,
    New,
}

impl Stepper for Exponential {
    fn start(&mut self, t: f64, y: &[C64], frame: usize) {
        self.frame = frame;
        self.freeze(t);
        let Self { eq, scratch, h, reference, n0, .. } = self;
        eq.rhs_remainder(frame, t, y, n0, scratch, h, reference);
    }

    fn attempt(&mut self, t: f64, y: &[C64], h: f64) -> f64 {
        if self.coef.as_ref().map_or(true, |c| (c.h - h).abs() > 1e-9 * h) {
            self.coef = Some(EtdCoefficients::new(&self.generator, h));
        }
        let coef = self.coef.take().expect("coefficients prepared");
        let n = y.len();
        for i in 0..n {
            self.a[i] = coef.half[i] * y[i] + coef.q[i] * self.n0[i];
        }
        self.remainder(t + 0.5 * h, Stage::A);
        for i in 0..n {
            self.b[i] = self.a[i] + coef.q2[i] * (self.na[i] - self.n0[i]);
        }
        self.remainder(t + 0.5 * h, Stage::B);
        for i in 0..n {
            self.c[i] = coef.full[i] * y[i] + coef.r1[i] * self.n0[i] + coef.r2[i] * (self.nb[i] - self.n0[i]);
        }
        self.remainder(t + h, Stage::C);
        for i in 0..n {
            self.y_new[i] = coef.full[i] * y[i]
                + coef.f1[i] * self.n0[i]
                + coef.f2[i] * (self.na[i] + self.nb[i])
                + coef.f3[i] * self.nc[i];
        }
        self.remainder(t + h, Stage::New);
        let err = (0..n).map(|i| coef.f3[i] * (self.nc[i] - self.n_new[i]));
        let norm = error_max_norm(err, y, &self.y_new, &self.cfg);
        self.coef = Some(coef);
        norm
    }

    fn candidate(&mut self) -> &mut Vec<C64> {
        &mut self.y_new
    }

    fn accepted(&mut self, t: f64, y: &[C64]) {
        if self.slope * (t - self.reference_time).abs() > REFERENCE_DRIFT {
            self.start(t, y, self.frame);
        } else {
            std::mem::swap(&mut self.n0, &mut self.n_new);
        }
    }

    /// Steps are kept to `max_step / 2^k` so the coefficient tables are
    /// rarely rebuilt.
    fn propose(&mut self, h: f64, err: f64, ok: bool) -> f64 {
        if !ok || !err.is_finite() {
            return 0.5 * h;
        }
        // The estimate scales as h⁴.
        if err * 16.0 < 0.8 && 2.0 * h <= self.cfg.max_step * (1.0 + 1e-12) {
            2.0 * h
        } else {
            h
        }
    }

    fn first_step(&mut self, _t: f64, _y: &[C64]) -> f64 {
        self.cfg.max_step
    }
}

fn sample_times(t_start: f64, t_end: f64, dt: f64) -> Vec<f64> {
    let count = ((t_end - t_start) / dt).floor() as usize;
    let mut times: Vec<f64> = (0..=count).map(|i| t_start + i as f64 * dt).filter(|&t| t < t_end - 1e-9 * dt).collect();
    times.push(t_end);
    times
}

struct Segment {
    samples: Vec<Sample>,
    state: DensityState,
    steps: u64,
    rejected: u64,
    min_eigenvalue: f64,
}

fn integrate(eq: MasterEquation, rho0: &DensityState, cfg: &IntegratorConfig, t0: f64, t1: f64) -> Result<Segment> {
    let dim = eq.dim();
    if rho0.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: rho0.dim() });
    }
    let mut frame = eq.frame_at(t0);
    let boundaries: Vec<f64> = eq.frame_boundaries().filter(|&b| b > t0 && b < t1).collect();
    let mut stepper: Box<dyn Stepper> = match cfg.method {
        Method::Exponential => Box::new(Exponential::new(eq.clone(), cfg)),
        Method::Dopri5 => Box::new(Dopri::new(eq.clone(), cfg)),
    };
    let interval = cfg.sample_interval.unwrap_or((t1 - t0) / 20.0);
    let targets = sample_times(t0, t1, interval);
    // Stops are sample times and frame boundaries, merged.
    let mut stops: Vec<(f64, bool)> = targets[1..].iter().map(|&t| (t, true)).collect();
    for &b in &boundaries {
        if !targets.iter().any(|&t| (t - b).abs() <= 1e-9 * interval) {
            stops.push((b, false));
        }
    }
    stops.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut y: Vec<C64> = rho0.matrix().as_slice().to_vec();
    let trace = |y: &[C64]| (0..dim).map(|i| y[i * (dim + 1)].re).sum::<f64>();
    let trace0 = trace(&y);
    let mut t = t0;
    stepper.start(t, &y, frame);
    let mut h = stepper.first_step(t, &y);
    let mut steps = 0u64;
    let mut rejected = 0u64;
    let mut last_good = t;

    let mut samples = Vec::with_capacity(targets.len());
    let mut min_eigenvalue = f64::INFINITY;
    let mut record = |t: f64, y: &[C64], samples: &mut Vec<Sample>| {
        let state = DensityState::from_raw(nalgebra::DMatrix::from_column_slice(dim, dim, y), t);
        min_eigenvalue = min_eigenvalue.min(state.min_eigenvalue());
        samples.push(Sample { time: t, populations: state.populations() });
    };
    record(t, &y, &mut samples);

    for &(target, is_sample) in &stops {
        while t < target {
            let remaining = target - t;
            let landing = h * (1.0 + 1e-3) >= remaining;
            let step = if landing { remaining } else { h };
            if step < 1e-12 * t.abs().max(1.0) || step < cfg.max_step * 1e-12 {
                return Err(Error::StepUnderflow { t, h: step, last_good });
            }
            let err = stepper.attempt(t, &y, step);
            let ok = err <= 1.0;
            let proposal = stepper.propose(step, err, ok);
            if !ok {
                rejected += 1;
                h = proposal;
                continue;
            }
            t = if landing { target } else { t + step };
            std::mem::swap(&mut y, stepper.candidate());
            if cfg.hermitize_every_step {
                hermitize_slice(&mut y, dim);
            }
            stepper.accepted(t, &y);
            steps += 1;
            last_good = t;
            let now = trace(&y);
            if (now - trace0).abs() > TRACE_DRIFT_LIMIT {
                return Err(Error::TraceDrift { t, trace: now });
            }
            // A short landing step says nothing about the natural step size.
            h = if landing { h.max(proposal) } else { proposal };
        }
        let next = eq.frame_at(t);
        if next != frame {
            eq.change_frame(frame, next, t, &mut y);
            frame = next;
            stepper.start(t, &y, frame);
        }
        if is_sample {
            record(t, &y, &mut samples);
        }
    }

    let state = DensityState::from_raw(nalgebra::DMatrix::from_column_slice(dim, dim, &y), t);
    if min_eigenvalue < POSITIVITY_LIMIT {
        warn!("density matrix lost positivity: smallest eigenvalue {min_eigenvalue:.3e}");
    }
    Ok(Segment { samples, state, steps, rejected, min_eigenvalue })
}

fn summarize(spec: &SystemSpec, eq: &MasterEquation, state: &DensityState) -> (f64, f64, f64) {
    let basis = eq.basis();
    let efficiency = state.label_population(basis, Internal::Rot(0));
    let loss = state.label_population(basis, Internal::Uncoupled);
    let edge = state.motional_population(basis, spec.n_max);
    (efficiency, loss, edge)
}

/// Propagates `rho0` across the whole schedule window. The state's own
/// timestamp is ignored; integration always starts at `schedule.t_start`.
pub fn run(spec: &SystemSpec, schedule: &PulseSchedule, rho0: &DensityState, cfg: &IntegratorConfig) -> Result<SimResult> {
    run_cycles(spec, schedule, rho0, cfg, 1)
}

/// Alternates a full pulse sequence with an idealised motional reset,
/// `cycles` times. No reset follows the last sequence.
pub fn run_cycles(
    spec: &SystemSpec,
    schedule: &PulseSchedule,
    rho0: &DensityState,
    cfg: &IntegratorConfig,
    cycles: u32,
) -> Result<SimResult> {
    if cycles == 0 {
        return Err(Error::invalid("cycles", "must be at least 1"));
    }
    cfg.validate()?;
    let started = Instant::now();
    let eq = MasterEquation::new(spec, schedule)?;
    let mut cfg = cfg.clone();
    if cfg.sample_interval.is_none() {
        cfg.sample_interval = Some(schedule.steps[0].pump.envelope.width / 20.0);
    }

    let mut state = rho0.clone();
    let mut samples = Vec::new();
    let mut per_cycle = Vec::with_capacity(cycles as usize);
    let mut step_count = 0;
    let mut rejected_steps = 0;
    let mut min_eigenvalue = f64::INFINITY;
    for cycle in 0..cycles {
        if cycle > 0 {
            state = motional_reset(eq.basis(), &state)?;
        }
        let segment = integrate(eq.clone(), &state, &cfg, schedule.t_start, schedule.t_end)?;
        let offset = f64::from(cycle) * schedule.duration();
        let skip = usize::from(cycle > 0);
        samples.extend(segment.samples.into_iter().skip(skip).map(|mut s| {
            s.time += offset;
            s
        }));
        state = segment.state;
        let (efficiency, loss_u, _) = summarize(spec, &eq, &state);
        per_cycle.push(CycleSummary { efficiency, loss_u, steps: segment.steps });
        step_count += segment.steps;
        rejected_steps += segment.rejected;
        min_eigenvalue = min_eigenvalue.min(segment.min_eigenvalue);
    }

    let (efficiency, loss_u, edge_population) = summarize(spec, &eq, &state);
    let truncation_flag = edge_population > TRUNCATION_LIMIT;
    if truncation_flag {
        warn!("population {edge_population:.2e} at n = {} exceeds {TRUNCATION_LIMIT:e}; increase n_max", spec.n_max);
    }
    Ok(SimResult {
        samples,
        final_state: state,
        efficiency,
        loss_u,
        truncation_flag,
        edge_population,
        step_count,
        rejected_steps,
        wall_time: started.elapsed(),
        min_eigenvalue,
        per_cycle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;
    use crate::pulses::{make_schedule, PulseParams, Scheme};

    fn quiet_schedule(spec: &SystemSpec) -> PulseSchedule {
        let params = PulseParams {
            omega0_p: 0.0,
            omega0_s: 0.0,
            width: 20.0,
            tau: 0.0,
            tau_tilde: 120.0,
            delta_p: 10.0,
            delta_s: 10.0,
            alpha: 0.0,
        };
        make_schedule(Scheme::Carp, spec, &params).unwrap()
    }

    #[test]
    fn frozen_dynamics() {
        let spec = SystemSpec::ladder(1, 2, 0.1, 0.0, 0.15);
        let schedule = quiet_schedule(&spec);
        let basis = build_basis(&spec).unwrap();
        let rho0 = DensityState::diagonal(
            &basis,
            &[(Internal::Rot(0), 1, 0.25), (Internal::Rot(1), 0, 0.5), (Internal::Excited, 2, 0.25)],
            0.0,
        )
        .unwrap();
        let res = run(&spec, &schedule, &rho0, &IntegratorConfig::default()).unwrap();
        let diff = (res.final_state.matrix() - rho0.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10, "{diff}");
        for s in &res.samples {
            for (p, q) in s.populations.iter().zip(rho0.populations()) {
                assert!((p - q).abs() < 1e-10);
            }
        }
        assert_eq!(res.samples.first().unwrap().time, schedule.t_start);
        assert_eq!(res.samples.last().unwrap().time, schedule.t_end);
    }

    #[test]
    fn free_decay_matches_exponential() {
        let spec = SystemSpec::ladder(1, 1, 0.1, 0.01, 0.15);
        let schedule = quiet_schedule(&spec);
        let basis = build_basis(&spec).unwrap();
        let rho0 = DensityState::pure(&basis, Internal::Excited, 1, 0.0).unwrap();
        let res = run(&spec, &schedule, &rho0, &IntegratorConfig::default()).unwrap();
        let duration = schedule.duration();
        let pe = (-0.03 * duration).exp();
        let e = basis.index(Internal::Excited, 1).unwrap();
        let u = basis.index(Internal::Uncoupled, 1).unwrap();
        let fin = res.final_state.populations();
        assert!((fin[e] - pe).abs() < 1e-8);
        assert!((fin[u] - (1.0 - pe) / 3.0).abs() < 1e-8);
        assert!((res.loss_u - (1.0 - pe) / 3.0).abs() < 1e-8);
        assert!((res.efficiency - (1.0 - pe) / 3.0).abs() < 1e-8);
    }

    #[test]
    fn cycles_reset_motion() {
        let spec = SystemSpec::ladder(1, 2, 0.1, 0.0, 0.15);
        let schedule = quiet_schedule(&spec);
        let basis = build_basis(&spec).unwrap();
        let rho0 = DensityState::pure(&basis, Internal::Rot(1), 2, 0.0).unwrap();
        let res = run_cycles(&spec, &schedule, &rho0, &IntegratorConfig::default(), 2).unwrap();
        assert_eq!(res.per_cycle.len(), 2);
        let idx = basis.index(Internal::Rot(1), 0).unwrap();
        assert!((res.final_state.populations()[idx] - 1.0).abs() < 1e-10);
        // both cycles' samples, the shared boundary only once
        let single = run(&spec, &schedule, &rho0, &IntegratorConfig::default()).unwrap();
        assert_eq!(res.samples.len(), 2 * single.samples.len() - 1);
        assert!(res.samples.windows(2).all(|w| w[0].time < w[1].time));
    }

    #[test]
    fn truncation_flag_set_at_cutoff() {
        let spec = SystemSpec::ladder(1, 2, 0.1, 0.0, 0.15);
        let schedule = quiet_schedule(&spec);
        let basis = build_basis(&spec).unwrap();
        let rho0 = DensityState::pure(&basis, Internal::Rot(1), 2, 0.0).unwrap();
        let res = run(&spec, &schedule, &rho0, &IntegratorConfig::default()).unwrap();
        assert!(res.truncation_flag);
        assert!((res.edge_population - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        let spec = SystemSpec::ladder(1, 2, 0.1, 0.0, 0.15);
        let schedule = quiet_schedule(&spec);
        let basis = build_basis(&spec).unwrap();
        let rho0 = DensityState::pure(&basis, Internal::Rot(1), 0, 0.0).unwrap();
        let cfg = IntegratorConfig { rel_tol: 0.0, ..IntegratorConfig::default() };
        assert!(run(&spec, &schedule, &rho0, &cfg).is_err());
        let cfg = IntegratorConfig { rel_tol: 1e-30, ..IntegratorConfig::default() };
        assert!(run(&spec, &schedule, &rho0, &cfg).is_err());
        assert!(run_cycles(&spec, &schedule, &rho0, &IntegratorConfig::default(), 0).is_err());
    }

    #[test]
    fn sample_grid_ends_on_window() {
        let times = sample_times(0.0, 1.0, 0.3);
        assert_eq!(times, vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
        assert_eq!(sample_times(0.0, 1.0, 0.5), vec![0.0, 0.5, 1.0]);
    }
}
