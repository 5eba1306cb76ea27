//! Strict positivity of maps and the eventual-strict-positivity probe.
//!
//! A positive map `φ` is strictly positive when `φ(|v⟩⟨v|) ≻ 0` for every
//! unit vector `v`. Two deciders are provided:
//!
//! * **monomial-exact**, for maps that keep the diagonal sector diagonal
//!   (the structure induced by basis-preserving instruments). Maps with
//!   diagonal outputs are decided through the dual: `φ(X)_kk = tr(X φ†(E_kk))`,
//!   so strict positivity is `φ†(E_kk) ≻ 0` for every `k`. Qubit maps are
//!   decided by minimising `det φ(ρ(r))` over the Bloch sphere. Other shapes
//!   return `None` from [`monomial_exact`].
//! * **sampled**, a probe: alternating minimisation of `⟨u|φ(|v⟩⟨v|)|u⟩`
//!   from Haar-random starts. A reported failure comes with a witness; a
//!   reported success is not a proof.

use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::environment::DisorderProcess;
use crate::error::{input, Error, Result};
use crate::instrument::compose_channels;
use crate::linalg::{haar_vector, ComplexMatrix, SuperOperator, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositivityMode {
    /// Alternating minimisation from `n_states` Haar-random pure states.
    Sampled {
        n_states: usize,
        seed: u64,
    },
    MonomialExact,
}

impl PositivityMode {
    pub fn sampled_default() -> Self {
        PositivityMode::Sampled { n_states: 200, seed: 0x5eed }
    }
}

/// Threshold on the minimal eigenvalue of `φ(|v⟩⟨v|)`.
const THRESHOLD: f64 = 1e-12;

pub fn strict_positivity_check(phi: &SuperOperator, mode: PositivityMode) -> Result<bool> {
    match mode {
        PositivityMode::MonomialExact => {
            monomial_exact(phi).ok_or_else(|| Error::Unsupported("map does not have a structure the exact decider covers".into()))
        }
        PositivityMode::Sampled { n_states, seed } => Ok(sampled(phi, n_states, seed)),
    }
}

/// Exact decision for maps preserving the diagonal sector; `None` when the
/// structure is not covered.
pub fn monomial_exact(phi: &SuperOperator) -> Option<bool> {
    let d = phi.dim();
    let structure_tol = 1e-12;
    for i in 0..d {
        if !phi.apply(&ComplexMatrix::unit(d, i, i)).is_diagonal(structure_tol) {
            return None;
        }
    }
    if phi.has_diagonal_output(structure_tol) {
        return Some((0..d).all(|k| {
            let dual = phi.apply_dual(&ComplexMatrix::unit(d, k, k));
            dual.min_eigenvalue() > THRESHOLD
        }));
    }
    if d == 2 {
        return Some(qubit_min_determinant(phi) > THRESHOLD);
    }
    None
}

fn pauli(mu: usize) -> ComplexMatrix {
    let (o, z, i) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 1.0));
    let rows = match mu {
        0 => [[o, z], [z, o]],
        1 => [[z, o], [o, z]],
        2 => [[z, -i], [i, z]],
        _ => [[o, z], [z, -o]],
    };
    ComplexMatrix::from_rows(&[rows[0].to_vec(), rows[1].to_vec()]).expect("2x2")
}

/// `min_{|r|=1} 4·det φ((I + r·σ)/2)`, solved as a quadratic minimisation on
/// the unit sphere via the secular equation.
fn qubit_min_determinant(phi: &SuperOperator) -> f64 {
    let sig: Vec<ComplexMatrix> = (0..4).map(pauli).collect();
    // m(r) = u + W r, m_μ = tr(σ_μ φ(ρ(r)))
    let mut u = [0.0; 4];
    let mut w = [[0.0; 3]; 4];
    let out0 = phi.apply(&sig[0]);
    for mu in 0..4 {
        u[mu] = 0.5 * sig[mu].trace_product(&out0).re;
    }
    for k in 0..3 {
        let out = phi.apply(&sig[k + 1]);
        for mu in 0..4 {
            w[mu][k] = 0.5 * sig[mu].trace_product(&out).re;
        }
    }
    let j = [1.0, -1.0, -1.0, -1.0];
    let a = Matrix3::from_fn(|p, q| (0..4).map(|mu| j[mu] * w[mu][p] * w[mu][q]).sum::<f64>());
    let b: [f64; 3] = std::array::from_fn(|p| (0..4).map(|mu| j[mu] * w[mu][p] * u[mu]).sum::<f64>());
    let c: f64 = (0..4).map(|mu| j[mu] * u[mu] * u[mu]).sum();
    let f = |r: &[f64; 3]| -> f64 {
        let mut v = c;
        for p in 0..3 {
            v += 2.0 * b[p] * r[p];
            for q in 0..3 {
                v += r[p] * a[(p, q)] * r[q];
            }
        }
        v
    };
    let eig = a.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let lam: [f64; 3] = std::array::from_fn(|i| eig.eigenvalues[order[i]]);
    let q: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|p| eig.eigenvectors[(p, order[i])]));
    let beta: [f64; 3] = std::array::from_fn(|i| (0..3).map(|p| q[i][p] * b[p]).sum());
    let to_r = |coef: [f64; 3]| -> [f64; 3] { std::array::from_fn(|p| (0..3).map(|i| coef[i] * q[i][p]).sum()) };

    let scale = lam.iter().map(|x| x.abs()).fold(1.0, f64::max);
    let degenerate = |i: usize| (lam[i] - lam[0]).abs() <= 1e-12 * scale;
    let beta_low: f64 = (0..3).filter(|&i| degenerate(i)).map(|i| beta[i] * beta[i]).sum::<f64>().sqrt();
    let norm2 = |mu: f64| -> f64 { (0..3).map(|i| beta[i] * beta[i] / ((lam[i] - mu) * (lam[i] - mu))).sum() };
    let mut candidates: Vec<[f64; 3]> = Vec::new();

    if beta_low > 1e-14 * (1.0 + b.iter().map(|x| x.abs()).sum::<f64>()) {
        let bn = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (mut lo, mut hi) = (lam[0] - bn - 1.0, lam[0]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if norm2(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = 0.5 * (lo + hi);
        candidates.push(to_r(std::array::from_fn(|i| -beta[i] / (lam[i] - mu))));
    } else {
        // hard case: the gradient has no component along the lowest eigenspace
        let part: [f64; 3] = std::array::from_fn(|i| if degenerate(i) { 0.0 } else { -beta[i] / (lam[i] - lam[0]) });
        let pn: f64 = part.iter().map(|x| x * x).sum();
        if pn <= 1.0 {
            let t = (1.0 - pn).sqrt();
            for sign in [1.0, -1.0] {
                let mut coef = part;
                coef[0] += sign * t;
                candidates.push(to_r(coef));
            }
        } else {
            let (mut lo, mut hi) = (lam[0] - b.iter().map(|x| x.abs()).sum::<f64>() - 1.0, lam[0]);
            let norm2_nd =
                |mu: f64| -> f64 { (0..3).filter(|&i| !degenerate(i)).map(|i| beta[i] * beta[i] / ((lam[i] - mu) * (lam[i] - mu))).sum() };
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if norm2_nd(mid) < 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let mu = 0.5 * (lo + hi);
            candidates.push(to_r(std::array::from_fn(|i| if degenerate(i) { 0.0 } else { -beta[i] / (lam[i] - mu) })));
        }
    }
    // eigenvector directions guard against a mis-bracketed root
    for i in 0..3 {
        candidates.push(q[i]);
        candidates.push(q[i].map(|x| -x));
    }
    candidates
        .iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let r = r.map(|x| x / n);
            f(&r)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Smallest `λ_min(φ(|v⟩⟨v|))` found by alternating minimisation.
pub fn sampled_min_eigenvalue(phi: &SuperOperator, n_states: usize, seed: u64) -> f64 {
    let d = phi.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..n_states.max(1) {
        let mut v = haar_vector(d, &mut rng);
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let (vals, vecs) = phi.apply(&ComplexMatrix::outer(&v)).eigh();
            let value = vals[0];
            best = best.min(value);
            if value <= THRESHOLD || (prev.is_finite() && prev - value <= 1e-15 * prev) {
                break;
            }
            prev = value;
            let u = vecs.column(0);
            let (_, dual_vecs) = phi.apply_dual(&ComplexMatrix::outer(&u)).eigh();
            v = dual_vecs.column(0);
        }
        if best <= THRESHOLD {
            break;
        }
    }
    best
}

fn sampled(phi: &SuperOperator, n_states: usize, seed: u64) -> bool {
    sampled_min_eigenvalue(phi, n_states, seed) > THRESHOLD
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EspResult {
    /// Smallest `n ≤ n_max` with `Φ^{(n)}` strictly positive.
    pub n0: Option<usize>,
    pub n_max: usize,
    /// True when every check along the way was decided exactly.
    pub exact: bool,
}

/// Applies the strict-positivity check to `Φ^{(n)} = Φ_n ∘ ⋯ ∘ Φ_1` along
/// the environment (instruments at indices `1..=n`) for `n = 1..=n_max`.
pub fn esp_probe(env: &DisorderProcess, omega_seed: u64, n_max: usize) -> Result<EspResult> {
    if n_max == 0 {
        return input("n_max must be at least 1");
    }
    let env = env.reseeded(omega_seed);
    let d = env.dim();
    let window = env.window(1, n_max);
    let mut acc = SuperOperator::identity(d);
    let mut exact = true;
    for (n, inst) in window.iter().enumerate() {
        acc = acc.then(&compose_channels(d, &[inst.as_ref()])?);
        let verdict = match monomial_exact(&acc) {
            Some(v) => v,
            None => {
                exact = false;
                sampled(&acc, 200, omega_seed ^ n as u64)
            }
        };
        if verdict {
            return Ok(EspResult { n0: Some(n + 1), n_max, exact });
        }
    }
    Ok(EspResult { n0: None, n_max, exact })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instrument::KrausInstrument;

    fn pair_instrument(d: usize, q: impl Fn(usize, usize) -> f64) -> KrausInstrument {
        let mut labels = Vec::new();
        let mut ops = Vec::new();
        for k in 0..d {
            for l in 0..d {
                labels.push(format!("{}{}", k + 1, l + 1));
                ops.push(ComplexMatrix::unit(d, k, l).scale(q(k, l).sqrt()));
            }
        }
        KrausInstrument::perfect(d, labels, ops).unwrap()
    }

    fn cyclic() -> KrausInstrument {
        pair_instrument(3, |k, l| if k == l || k == (l + 1) % 3 { 0.5 } else { 0.0 })
    }

    fn keep_switch(p: f64) -> KrausInstrument {
        let vk = ComplexMatrix::diagonal_from(&[p.sqrt(), (1.0 - p).sqrt()]);
        let vs = ComplexMatrix::from_real_rows(&[&[0.0, p.sqrt()], &[(1.0 - p).sqrt(), 0.0]]).unwrap();
        KrausInstrument::perfect(2, vec!["K".into(), "S".into()], vec![vk, vs]).unwrap()
    }

    #[test]
    fn toy_is_strictly_positive() {
        let toy = pair_instrument(2, |_, _| 0.5);
        let s = toy.superoperator();
        assert!(strict_positivity_check(&s, PositivityMode::MonomialExact).unwrap());
        assert!(strict_positivity_check(&s, PositivityMode::sampled_default()).unwrap());
    }

    #[test]
    fn cyclic_needs_two_steps() {
        let s = cyclic().superoperator();
        assert!(!strict_positivity_check(&s, PositivityMode::MonomialExact).unwrap());
        assert!(strict_positivity_check(&s.then(&s), PositivityMode::MonomialExact).unwrap());
    }

    #[test]
    fn replacement_never_strictly_positive() {
        let rep = pair_instrument(2, |k, _| if k == 0 { 1.0 } else { 0.0 });
        let mut s = rep.superoperator();
        for _ in 0..5 {
            assert!(!strict_positivity_check(&s, PositivityMode::MonomialExact).unwrap());
            assert!(!strict_positivity_check(&s, PositivityMode::sampled_default()).unwrap());
            s = s.then(&rep.superoperator());
        }
    }

    #[test]
    fn keep_switch_exact_and_sampled_agree() {
        let a = keep_switch(0.3).superoperator();
        let b = keep_switch(0.8).superoperator();
        assert!(!strict_positivity_check(&a, PositivityMode::MonomialExact).unwrap());
        assert!(!strict_positivity_check(&a, PositivityMode::sampled_default()).unwrap());
        let two = a.then(&b);
        assert!(strict_positivity_check(&two, PositivityMode::MonomialExact).unwrap());
        assert!(strict_positivity_check(&two, PositivityMode::sampled_default()).unwrap());
    }

    #[test]
    fn qubit_determinant_oracle() {
        // det at pure inputs vs brute-force sphere scan
        let phi = keep_switch(0.3).superoperator().then(&keep_switch(0.7).superoperator());
        let exact = qubit_min_determinant(&phi);
        let mut scan = f64::INFINITY;
        let n = 200;
        for i in 0..=n {
            let th = std::f64::consts::PI * i as f64 / n as f64;
            for j in 0..2 * n {
                let ph = std::f64::consts::PI * j as f64 / n as f64;
                let v = [C64::new((th / 2.0).cos(), 0.0), C64::from_polar((th / 2.0).sin(), ph)];
                let out = phi.apply(&ComplexMatrix::outer(&v));
                let det = (out[(0, 0)] * out[(1, 1)] - out[(0, 1)] * out[(1, 0)]).re;
                scan = scan.min(4.0 * det);
            }
        }
        assert!(exact <= scan + 1e-12);
        assert!(exact > scan - 1e-3);
    }

    #[test]
    fn unsupported_structure_is_reported() {
        let h = ComplexMatrix::from_real_rows(&[&[1.0, 1.0, 0.0], &[1.0, -1.0, 0.0], &[0.0, 0.0, 2f64.sqrt()]])
            .unwrap()
            .scale(1.0 / 2f64.sqrt());
        let s = SuperOperator::from_kraus(&[h]);
        assert!(strict_positivity_check(&s, PositivityMode::MonomialExact).is_err());
    }
}
