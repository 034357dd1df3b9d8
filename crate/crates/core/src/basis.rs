//! Joint internal ⊗ motional state space.
//!
//! Internal labels are the rotational levels `J = 0..=j_max`, the shared
//! electronically excited level `e` and the uncoupled sink `u`. The motional
//! factor is a Fock ladder truncated at `n_max`. States are flattened as
//! `label_slot * (n_max + 1) + n` with slots ordered `J = 0..=j_max, e, u`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Internal (electronic/rotational) label of a basis state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Internal {
    Rot(u32),
    Excited,
    Uncoupled,
}

impl fmt::Display for Internal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Internal::Rot(j) => write!(f, "{j}"),
            Internal::Excited => f.write_str("e"),
            Internal::Uncoupled => f.write_str("u"),
        }
    }
}

impl FromStr for Internal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "e" => Ok(Internal::Excited),
            "u" => Ok(Internal::Uncoupled),
            other => other
                .parse::<u32>()
                .map(Internal::Rot)
                .map_err(|_| Error::UnknownLabel(other.to_string())),
        }
    }
}

/// One Raman step `upper_J -> lower_J`, driven by a pump on `upper ↔ e` and a
/// Stokes pulse on `lower ↔ e`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RamanStep {
    pub upper: u32,
    pub lower: u32,
}

impl RamanStep {
    pub fn new(upper: u32, lower: u32) -> Self {
        Self { upper, lower }
    }
}

/// The ΔJ = 1 ladder `j_max -> j_max - 1, ..., 1 -> 0`.
pub fn ladder_chain(j_max: u32) -> Vec<RamanStep> {
    (1..=j_max).rev().map(|j| RamanStep::new(j, j - 1)).collect()
}

/// The ΔJ = 2 chain `j_max -> j_max - 2, ..., 2 -> 0` used for molecules whose
/// Raman transitions obey ΔJ = 0, ±2. Levels 0 and 1 are both terminal.
pub fn delta2_chain(j_max: u32) -> Vec<RamanStep> {
    (2..=j_max).rev().map(|j| RamanStep::new(j, j - 2)).collect()
}

/// Physical model parameters. Rates are in units of the trap frequency ν.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec {
    pub j_max: u32,
    pub n_max: u32,
    /// Lamb-Dicke parameter, shared by every pulse and level.
    pub eta: f64,
    /// Decay rate from `e` into each rotational level.
    pub gamma_j: f64,
    /// Decay rate from `e` into the uncoupled sink.
    pub gamma_u: f64,
    /// Rotational constant over temperature, βB.
    pub beta_b: f64,
    pub chain: Vec<RamanStep>,
}

impl SystemSpec {
    /// Ladder system with equal decay rates into every channel.
    pub fn ladder(j_max: u32, n_max: u32, eta: f64, gamma: f64, beta_b: f64) -> Self {
        Self {
            j_max,
            n_max,
            eta,
            gamma_j: gamma,
            gamma_u: gamma,
            beta_b,
            chain: ladder_chain(j_max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.j_max < 1 {
            return Err(Error::invalid("j_max", "must be at least 1"));
        }
        if self.n_max < 1 {
            return Err(Error::invalid("n_max", "must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", "must be positive and finite"));
        }
        if !(self.gamma_j >= 0.0 && self.gamma_j.is_finite()) {
            return Err(Error::invalid("gamma_j", "must be non-negative"));
        }
        if !(self.gamma_u >= 0.0 && self.gamma_u.is_finite()) {
            return Err(Error::invalid("gamma_u", "must be non-negative"));
        }
        if !(self.beta_b > 0.0) {
            return Err(Error::invalid("beta_b", "must be positive"));
        }
        if self.chain.is_empty() {
            return Err(Error::invalid("chain", "must contain at least one step"));
        }
        for step in &self.chain {
            if step.lower >= step.upper || step.upper > self.j_max {
                return Err(Error::invalid(
                    "chain",
                    format!(
                        "step {} -> {} needs 0 <= lower < upper <= {}",
                        step.upper, step.lower, self.j_max
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Total decay rate out of the excited manifold.
    pub fn total_decay(&self) -> f64 {
        f64::from(self.j_max + 1) * self.gamma_j + self.gamma_u
    }
}

/// Bijection between `(Internal, n)` pairs and flat indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisIndex {
    j_max: u32,
    n_max: u32,
}

impl BasisIndex {
    pub fn j_max(&self) -> u32 {
        self.j_max
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    /// Number of motional states, `n_max + 1`.
    pub fn n_levels(&self) -> usize {
        self.n_max as usize + 1
    }

    /// Number of internal labels, `j_max + 3`.
    pub fn n_internal(&self) -> usize {
        self.j_max as usize + 3
    }

    pub fn dim(&self) -> usize {
        self.n_internal() * self.n_levels()
    }

    fn slot(&self, label: Internal) -> Result<usize> {
        match label {
            Internal::Rot(j) if j <= self.j_max => Ok(j as usize),
            Internal::Rot(j) => Err(Error::UnknownLabel(format!("J={j}"))),
            Internal::Excited => Ok(self.j_max as usize + 1),
            Internal::Uncoupled => Ok(self.j_max as usize + 2),
        }
    }

    /// Flat index of `|label, n⟩`.
    pub fn index(&self, label: Internal, n: u32) -> Result<usize> {
        if n > self.n_max {
            return Err(Error::invalid("n", format!("{n} exceeds n_max = {}", self.n_max)));
        }
        Ok(self.slot(label)? * self.n_levels() + n as usize)
    }

    /// Inverse of [`BasisIndex::index`]. Panics if `index >= dim()`.
    pub fn label(&self, index: usize) -> (Internal, u32) {
        assert!(index < self.dim(), "basis index {index} out of range");
        let slot = index / self.n_levels();
        let n = (index % self.n_levels()) as u32;
        let label = match slot {
            s if s <= self.j_max as usize => Internal::Rot(s as u32),
            s if s == self.j_max as usize + 1 => Internal::Excited,
            _ => Internal::Uncoupled,
        };
        (label, n)
    }

    /// Internal labels in slot order.
    pub fn internal_labels(&self) -> impl Iterator<Item = Internal> {
        (0..=self.j_max)
            .map(Internal::Rot)
            .chain([Internal::Excited, Internal::Uncoupled])
    }

    /// First flat index of the motional block belonging to `label`.
    pub fn block_start(&self, label: Internal) -> Result<usize> {
        Ok(self.slot(label)? * self.n_levels())
    }
}

pub fn build_basis(spec: &SystemSpec) -> Result<BasisIndex> {
    spec.validate()?;
    Ok(BasisIndex { j_max: spec.j_max, n_max: spec.n_max })
}

type CMatrix = DMatrix<Complex64>;

/// Motional annihilation and creation operators on the full space.
///
/// `â|n_max⟩` keeps its image inside the space; `â†|n_max⟩` is truncated to zero.
pub fn ladder_ops(basis: &BasisIndex) -> (CMatrix, CMatrix) {
    let dim = basis.dim();
    let levels = basis.n_levels();
    let mut annihilate = CMatrix::zeros(dim, dim);
    for block in 0..basis.n_internal() {
        let base = block * levels;
        for n in 1..levels {
            annihilate[(base + n - 1, base + n)] = Complex64::new((n as f64).sqrt(), 0.0);
        }
    }
    let create = annihilate.adjoint();
    (annihilate, create)
}

/// Internal raising `|e⟩⟨label|` and lowering `|label⟩⟨e|`, each tensored with
/// the motional identity.
pub fn sigma_ops(basis: &BasisIndex, label: Internal) -> Result<(CMatrix, CMatrix)> {
    if label == Internal::Excited {
        return Err(Error::UnknownLabel("e has no raising operator".into()));
    }
    let from = basis.block_start(label)?;
    let to = basis.block_start(Internal::Excited)?;
    let dim = basis.dim();
    let mut raise = CMatrix::zeros(dim, dim);
    for n in 0..basis.n_levels() {
        raise[(to + n, from + n)] = Complex64::new(1.0, 0.0);
    }
    let lower = raise.adjoint();
    Ok((raise, lower))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(j_max: u32, n_max: u32) -> BasisIndex {
        build_basis(&SystemSpec::ladder(j_max, n_max, 0.1, 0.01, 0.15)).unwrap()
    }

    #[test]
    fn dimensions() {
        assert_eq!(basis(1, 2).dim(), 12);
        assert_eq!(basis(5, 6).dim(), 56);
    }

    #[test]
    fn rejects_small_cutoffs() {
        let mut spec = SystemSpec::ladder(1, 2, 0.1, 0.01, 0.15);
        spec.j_max = 0;
        spec.chain.clear();
        assert!(build_basis(&spec).is_err());
        let mut spec = SystemSpec::ladder(1, 2, 0.1, 0.01, 0.15);
        spec.n_max = 0;
        assert!(build_basis(&spec).is_err());
    }

    #[test]
    fn rejects_bad_chain() {
        let mut spec = SystemSpec::ladder(2, 2, 0.1, 0.01, 0.15);
        spec.chain.push(RamanStep::new(1, 1));
        assert!(spec.validate().is_err());
        spec.chain = vec![RamanStep::new(3, 0)];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn index_round_trip() {
        let b = basis(3, 4);
        let e0 = b.index(Internal::Excited, 0).unwrap();
        let u3 = b.index(Internal::Uncoupled, 3).unwrap();
        assert_ne!(e0, u3);
        assert!(e0 < b.dim() && u3 < b.dim());
        for i in 0..b.dim() {
            let (label, n) = b.label(i);
            assert_eq!(b.index(label, n).unwrap(), i);
        }
        assert!(b.index(Internal::Rot(4), 0).is_err());
        assert!(b.index(Internal::Rot(0), 5).is_err());
    }

    #[test]
    fn ladder_elements() {
        let b = basis(1, 3);
        let (a, ad) = ladder_ops(&b);
        let i = |n| b.index(Internal::Rot(0), n).unwrap();
        assert_eq!(a[(i(0), i(1))].re, 1.0);
        assert!((ad[(i(3), i(2))].re - 3f64.sqrt()).abs() < 1e-12);
        // vacuum is annihilated
        assert!(a.column(i(0)).iter().all(|z| z.norm() == 0.0));
        let number = &ad * &a;
        for r in 0..b.dim() {
            for c in 0..b.dim() {
                let expect = if r == c { b.label(r).1 as f64 } else { 0.0 };
                assert!((number[(r, c)].re - expect).abs() < 1e-12);
                assert_eq!(number[(r, c)].im, 0.0);
            }
        }
    }

    #[test]
    fn sigma_elements() {
        let b = basis(1, 3);
        let (raise, lower) = sigma_ops(&b, Internal::Rot(1)).unwrap();
        let e2 = b.index(Internal::Excited, 2).unwrap();
        assert_eq!(raise[(e2, b.index(Internal::Rot(1), 2).unwrap())].re, 1.0);
        assert_eq!(raise[(e2, b.index(Internal::Rot(1), 3).unwrap())].re, 0.0);
        assert_eq!(lower, raise.adjoint());

        let (_, lower_u) = sigma_ops(&b, Internal::Uncoupled).unwrap();
        for n in 0..=3 {
            let e = b.index(Internal::Excited, n).unwrap();
            let u = b.index(Internal::Uncoupled, n).unwrap();
            assert_eq!(lower_u[(u, e)].re, 1.0);
        }
        assert!(sigma_ops(&b, Internal::Rot(2)).is_err());
        assert!(sigma_ops(&b, Internal::Excited).is_err());
    }

    #[test]
    fn distinct_labels_have_disjoint_support() {
        let b = basis(2, 2);
        let labels = [Internal::Rot(0), Internal::Rot(1), Internal::Rot(2), Internal::Uncoupled];
        let ops: Vec<_> = labels.iter().map(|&l| sigma_ops(&b, l).unwrap().0).collect();
        for (i, x) in ops.iter().enumerate() {
            for y in ops.iter().skip(i + 1) {
                let overlap = x.iter().zip(y.iter()).any(|(p, q)| p.norm() > 0.0 && q.norm() > 0.0);
                assert!(!overlap);
            }
        }
    }

    #[test]
    fn label_parsing() {
        assert_eq!("e".parse::<Internal>().unwrap(), Internal::Excited);
        assert_eq!("u".parse::<Internal>().unwrap(), Internal::Uncoupled);
        assert_eq!("4".parse::<Internal>().unwrap(), Internal::Rot(4));
        assert!("x".parse::<Internal>().is_err());
        assert_eq!(Internal::Rot(3).to_string(), "3");
    }

    #[test]
    fn chains() {
        assert_eq!(ladder_chain(2), vec![RamanStep::new(2, 1), RamanStep::new(1, 0)]);
        assert_eq!(delta2_chain(4), vec![RamanStep::new(4, 2), RamanStep::new(3, 1), RamanStep::new(2, 0)]);
    }
}
