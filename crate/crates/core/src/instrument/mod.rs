//! Quantum instruments in Kraus form.
//!
//! An instrument is an ordered outcome alphabet with, for every outcome, one
//! or more Kraus operators. Single-operator outcomes make the instrument
//! *perfect*. The effects `E_a = Σ_j V_{a,j}† V_{a,j}` are cached at
//! construction, so Born probabilities cost one trace pairing per outcome.

mod positivity;
mod spec_file;

pub use positivity::{esp_probe, strict_positivity_check, EspResult, PositivityMode};
pub use spec_file::{InstrumentSpec, ModelReference};

use serde::Serialize;

use crate::error::{input, Error, Result};
use crate::linalg::{ComplexMatrix, DensityMatrix, SuperOperator};
use crate::tol;

#[derive(Clone, Debug)]
pub struct KrausInstrument {
    dim: usize,
    alphabet: Vec<String>,
    kraus: Vec<Vec<ComplexMatrix>>,
    effects: Vec<ComplexMatrix>,
}

/// Outcome of [`KrausInstrument::validate`].
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub max_deviation: f64,
    pub passed: bool,
    pub perfect: bool,
}

impl KrausInstrument {
    /// Checks structure only (dimensions, labels, finiteness). Trace
    /// preservation is reported by [`validate`](Self::validate).
    pub fn new(dim: usize, alphabet: Vec<String>, kraus: Vec<Vec<ComplexMatrix>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Structure("dimension must be positive".into()));
        }
        if alphabet.is_empty() || alphabet.len() != kraus.len() {
            return Err(Error::Structure(format!("alphabet has {} symbols but {} Kraus lists were given", alphabet.len(), kraus.len())));
        }
        let mut sorted = alphabet.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != alphabet.len() {
            return Err(Error::Structure("alphabet symbols must be distinct".into()));
        }
        for (a, list) in kraus.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Structure(format!("outcome '{}' has no Kraus operator", alphabet[a])));
            }
            for v in list {
                if v.dim() != dim {
                    return Err(Error::Structure(format!(
                        "outcome '{}' has a {}x{} operator, expected {dim}x{dim}",
                        alphabet[a],
                        v.dim(),
                        v.dim()
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::Structure(format!("outcome '{}' has non-finite entries", alphabet[a])));
                }
            }
        }
        let effects = kraus
            .iter()
            .map(|list| {
                let mut e = ComplexMatrix::zeros(dim);
                for v in list {
                    e = &e + &(&v.adjoint() * v);
                }
                e
            })
            .collect();
        Ok(Self { dim, alphabet, kraus, effects })
    }

    /// One Kraus operator per outcome.
    pub fn perfect(dim: usize, alphabet: Vec<String>, ops: Vec<ComplexMatrix>) -> Result<Self> {
        Self::new(dim, alphabet, ops.into_iter().map(|v| vec![v]).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn n_outcomes(&self) -> usize {
        self.alphabet.len()
    }

    pub fn kraus(&self, a: usize) -> &[ComplexMatrix] {
        &self.kraus[a]
    }

    pub fn effect(&self, a: usize) -> &ComplexMatrix {
        &self.effects[a]
    }

    pub fn is_perfect(&self) -> bool {
        self.kraus.iter().all(|l| l.len() == 1)
    }

    pub fn outcome_index(&self, label: &str) -> Option<usize> {
        self.alphabet.iter().position(|s| s == label)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut total = ComplexMatrix::zeros(self.dim);
        for e in &self.effects {
            total = &total + e;
        }
        let max_deviation = total.max_abs_diff(&ComplexMatrix::identity(self.dim));
        ValidationReport { max_deviation, passed: max_deviation <= tol::TP, perfect: self.is_perfect() }
    }

    fn check_outcome(&self, a: usize) -> Result<()> {
        if a >= self.alphabet.len() {
            return input(format!("outcome index {a} outside alphabet of size {}", self.alphabet.len()));
        }
        Ok(())
    }

    /// `𝒯_a(ρ) = Σ_j V_{a,j} ρ V_{a,j}†`.
    pub fn apply_selective(&self, a: usize, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.check_outcome(a)?;
        Ok(self.selective(a, rho))
    }

    pub(crate) fn selective(&self, a: usize, rho: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.kraus[a][0].sandwich(rho);
        for v in &self.kraus[a][1..] {
            out = &out + &v.sandwich(rho);
        }
        out
    }

    /// `Φ(X) = Σ_a 𝒯_a(X)` on an arbitrary matrix.
    pub fn channel_matrix(&self, x: &ComplexMatrix) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim);
        for a in 0..self.alphabet.len() {
            out = &out + &self.selective(a, x);
        }
        out
    }

    pub fn apply_channel(&self, rho: &DensityMatrix) -> DensityMatrix {
        DensityMatrix::normalized_unchecked(self.channel_matrix(rho.matrix()))
    }

    /// Unnormalized Born weights `tr 𝒯_a(ρ)` with tiny negatives clamped to 0.
    pub fn born_weights(&self, rho: &ComplexMatrix) -> Vec<f64> {
        self.effects.iter().map(|e| e.trace_product(rho).re.max(0.0)).collect()
    }

    /// Born probabilities, renormalized to sum to one.
    pub fn outcome_probabilities(&self, rho: &DensityMatrix) -> Vec<f64> {
        let mut p = self.born_weights(rho.matrix());
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            p.iter_mut().for_each(|x| *x /= total);
        }
        p
    }

    /// Normalized selective update, or the reference state when the outcome
    /// has (numerically) zero probability.
    pub fn posterior(&self, a: usize, rho: &DensityMatrix, reference: &ReferenceState) -> Result<DensityMatrix> {
        self.check_outcome(a)?;
        Ok(self.posterior_unchecked(a, rho.matrix(), reference))
    }

    pub(crate) fn posterior_unchecked(&self, a: usize, rho: &ComplexMatrix, reference: &ReferenceState) -> DensityMatrix {
        let out = self.selective(a, rho);
        if out.trace().re <= tol::ZERO {
            reference.state().clone()
        } else {
            DensityMatrix::normalized_unchecked(out)
        }
    }

    pub fn superoperator(&self) -> SuperOperator {
        let all: Vec<ComplexMatrix> = self.kraus.iter().flatten().cloned().collect();
        SuperOperator::from_kraus(&all)
    }

    pub fn selective_superoperator(&self, a: usize) -> SuperOperator {
        SuperOperator::from_kraus(&self.kraus[a])
    }
}

impl AsRef<KrausInstrument> for KrausInstrument {
    fn as_ref(&self) -> &KrausInstrument {
        self
    }
}

/// Full-rank state substituted when a posterior is undefined.
#[derive(Clone, Debug)]
pub struct ReferenceState(DensityMatrix);

impl ReferenceState {
    pub fn new(rho_star: DensityMatrix) -> Result<Self> {
        if rho_star.matrix().min_eigenvalue() <= tol::PSD {
            return input("reference state must be full rank");
        }
        Ok(Self(rho_star))
    }

    /// `I/d`.
    pub fn maximally_mixed(dim: usize) -> Self {
        Self(DensityMatrix::maximally_mixed(dim))
    }

    pub fn state(&self) -> &DensityMatrix {
        &self.0
    }
}

/// `Φ_n ∘ ⋯ ∘ Φ_1` for the list `[inst_1, …, inst_n]`; identity when empty.
pub fn compose_channels<I: AsRef<KrausInstrument>>(dim: usize, instruments: &[I]) -> Result<SuperOperator> {
    let mut acc = SuperOperator::identity(dim);
    for inst in instruments {
        let inst = inst.as_ref();
        if inst.dim() != dim {
            return Err(Error::Structure("instrument dimensions differ".into()));
        }
        acc = acc.then(&inst.superoperator());
    }
    Ok(acc)
}

/// `E_w = (𝒯_{w_n} ∘ ⋯ ∘ 𝒯_{w_1})†(I)`, so that `⟨ρ, E_w⟩` is the
/// probability of the word `w` from `ρ`.
pub fn povm_cylinder_element<I: AsRef<KrausInstrument>>(instruments: &[I], word: &[usize]) -> Result<ComplexMatrix> {
    if instruments.len() != word.len() {
        return input(format!("word of length {} for {} instruments", word.len(), instruments.len()));
    }
    let Some(first) = instruments.first() else {
        return input("empty instrument list");
    };
    let mut e = ComplexMatrix::identity(first.as_ref().dim());
    for (inst, &a) in instruments.iter().zip(word).rev() {
        let inst = inst.as_ref();
        inst.check_outcome(a)?;
        let mut next = ComplexMatrix::zeros(inst.dim());
        for v in inst.kraus(a) {
            next = &next + &v.dual_sandwich(&e);
        }
        e = next;
    }
    Ok(e)
}
