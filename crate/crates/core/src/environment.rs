//! Stationary, invertible disorder processes.
//!
//! A [`DisorderProcess`] assigns an instrument to every integer index. The
//! randomness at index `n` comes from a counter-based stream keyed by
//! `(seed, n)`, so the shift `θ` is just index translation and negative
//! indices are as cheap as positive ones. Finite-Markov drivers are made
//! two-sided: the state at 0 is drawn from `π`, later states use `P`, earlier
//! states use the time reversal `P̂(y, x) = π(x) P(x, y) / π(y)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{input, Error, Result};
use crate::instrument::KrausInstrument;
use crate::rng::{domain, keyed_uniform, sample_index, zigzag};

/// Row-stochastic, irreducible and aperiodic transition matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain {
    p: Vec<Vec<f64>>,
    pi: Vec<f64>,
    reversed: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        let m = p.len();
        if m == 0 || p.iter().any(|r| r.len() != m) {
            return input("transition matrix must be square and nonempty");
        }
        for (x, row) in p.iter().enumerate() {
            if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return input(format!("row {x} has negative or non-finite entries"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return input(format!("row {x} sums to {s}, not 1"));
            }
        }
        if !is_primitive(&p) {
            return input("chain is reducible or periodic");
        }
        let pi = stationary_distribution(&p)?;
        let residual = (0..m).map(|y| ((0..m).map(|x| pi[x] * p[x][y]).sum::<f64>() - pi[y]).abs()).fold(0.0, f64::max);
        if residual > 1e-10 {
            return Err(Error::Numerical(format!("stationary vector residual {residual:.2e}")));
        }
        let reversed = (0..m).map(|y| (0..m).map(|x| pi[x] * p[x][y] / pi[y]).collect()).collect();
        Ok(Self { p, pi, reversed })
    }

    pub fn n_states(&self) -> usize {
        self.p.len()
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    pub fn reversed(&self) -> &[Vec<f64>] {
        &self.reversed
    }

    pub fn power(&self, n: usize) -> Vec<Vec<f64>> {
        matrix_power(&self.p, n)
    }

    /// `Σ_x π(x) TV(Pⁿ(x, ·), π)`.
    pub fn beta_mixing(&self, n: usize) -> f64 {
        let pn = self.power(n);
        let m = self.n_states();
        (0..m).map(|x| self.pi[x] * 0.5 * (0..m).map(|y| (pn[x][y] - self.pi[y]).abs()).sum::<f64>()).sum()
    }

    /// Second-largest eigenvalue modulus.
    pub fn slem(&self) -> f64 {
        let m = self.n_states();
        let mat = DMatrix::from_fn(m, m, |i, j| self.p[i][j]);
        let mut moduli: Vec<f64> = mat.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        moduli.sort_by(|a, b| b.total_cmp(a));
        moduli.get(1).copied().unwrap_or(0.0)
    }
}

fn matrix_power(p: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let m = p.len();
    let mut acc: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..n {
        acc = (0..m).map(|i| (0..m).map(|j| (0..m).map(|k| acc[i][k] * p[k][j]).sum()).collect()).collect();
    }
    acc
}

/// Wielandt: a nonnegative `m x m` matrix is primitive iff its
/// `(m−1)² + 1`-th power is entrywise positive.
fn is_primitive(p: &[Vec<f64>]) -> bool {
    let m = p.len();
    let pattern: Vec<Vec<bool>> = p.iter().map(|r| r.iter().map(|&v| v > 0.0).collect()).collect();
    let mut acc = pattern.clone();
    for _ in 1..((m - 1) * (m - 1) + 1) {
        acc = (0..m).map(|i| (0..m).map(|j| (0..m).any(|k| acc[i][k] && pattern[k][j])).collect()).collect();
    }
    acc.iter().all(|r| r.iter().all(|&b| b))
}

fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = p.len();
    let mut a = DMatrix::from_fn(m, m, |i, j| p[j][i] - if i == j { 1.0 } else { 0.0 });
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::zeros(m);
    rhs[m - 1] = 1.0;
    let pi = a.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular stationary system".into()))?;
    Ok(pi.iter().map(|&v| v.max(0.0)).collect())
}

/// β-mixing coefficient of the stationary chain at lag `n`; an upper bound
/// for its α-mixing coefficient.
pub fn markov_beta_mixing_bound(p: &[Vec<f64>], pi: &[f64], n: usize) -> Result<f64> {
    let chain = MarkovChain::new(p.to_vec())?;
    let dev = chain.stationary().iter().zip(pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if pi.len() != chain.n_states() || dev > 1e-8 {
        return input("supplied π is not the stationary distribution of P");
    }
    Ok(chain.beta_mixing(n))
}

/// `δ(Q) = 1 − min_{i,j} Σ_k min(q_ki, q_kj)` for a column-stochastic `Q`
/// given as `q[row][col]`.
pub fn dobrushin_coefficient(q: &[Vec<f64>]) -> Result<f64> {
    let m = q.len();
    if m == 0 || q.iter().any(|r| r.len() != m) {
        return input("matrix must be square and nonempty");
    }
    for j in 0..m {
        let s: f64 = (0..m).map(|k| q[k][j]).sum();
        if (s - 1.0).abs() > 1e-10 || (0..m).any(|k| q[k][j] < 0.0) {
            return input(format!("column {j} is not a probability vector"));
        }
    }
    let mut min_overlap: f64 = 1.0;
    for i in 0..m {
        for j in i + 1..m {
            let ov: f64 = (0..m).map(|k| q[k][i].min(q[k][j])).sum();
            min_overlap = min_overlap.min(ov);
        }
    }
    Ok((1.0 - min_overlap).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub enum DisorderKind {
    Deterministic,
    Iid,
    FiniteMarkov(MarkovChain),
}

impl DisorderKind {
    pub fn name(&self) -> &'static str {
        match self {
            DisorderKind::Deterministic => "deterministic",
            DisorderKind::Iid => "iid",
            DisorderKind::FiniteMarkov(_) => "finite-markov",
        }
    }
}

/// Randomness available when building the instrument at one index.
#[derive(Clone, Copy, Debug)]
pub struct EnvPoint {
    pub index: i64,
    /// Hidden Markov state, for finite-Markov drivers.
    pub state: Option<usize>,
    seed: u64,
}

impl EnvPoint {
    pub fn new(seed: u64, index: i64, state: Option<usize>) -> Self {
        Self { index, state, seed }
    }

    /// Uniform `[0, 1)` draw number `slot` at this index.
    pub fn uniform(&self, slot: u32) -> f64 {
        keyed_uniform(self.seed, domain::ENV_PARAMS, zigzag(self.index), slot)
    }
}

/// Maps the randomness at an index to an instrument.
pub trait InstrumentField: Send + Sync {
    fn dim(&self) -> usize;
    fn instrument(&self, point: &EnvPoint) -> KrausInstrument;
}

struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> InstrumentField for FnField<F>
where
    F: Fn(&EnvPoint) -> KrausInstrument + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn instrument(&self, point: &EnvPoint) -> KrausInstrument {
        (self.f)(point)
    }
}

/// Two-sided stationary instrument sequence `n ↦ 𝒱_{θⁿω}`.
#[derive(Clone)]
pub struct DisorderProcess {
    kind: DisorderKind,
    seed: u64,
    origin: i64,
    field: Arc<dyn InstrumentField>,
    fixed: Option<Arc<KrausInstrument>>,
}

impl fmt::Debug for DisorderProcess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DisorderProcess").field("kind", &self.kind.name()).field("seed", &self.seed).field("origin", &self.origin).finish()
    }
}

impl DisorderProcess {
    pub fn new(kind: DisorderKind, seed: u64, field: Arc<dyn InstrumentField>) -> Self {
        let mut env = Self { kind, seed, origin: 0, field, fixed: None };
        if env.kind == DisorderKind::Deterministic {
            env.fixed = Some(Arc::new(env.field.instrument(&EnvPoint::new(seed, 0, None))));
        }
        env
    }

    pub fn from_fn<F>(kind: DisorderKind, seed: u64, dim: usize, f: F) -> Self
    where
        F: Fn(&EnvPoint) -> KrausInstrument + Send + Sync + 'static,
    {
        Self::new(kind, seed, Arc::new(FnField { dim, f }))
    }

    /// The same instrument at every index.
    pub fn constant(inst: KrausInstrument) -> Self {
        let dim = inst.dim();
        let inst = Arc::new(inst);
        let shared = inst.clone();
        let mut env = Self::from_fn(DisorderKind::Deterministic, 0, dim, move |_| (*shared).clone());
        env.fixed = Some(inst);
        env
    }

    pub fn kind(&self) -> &DisorderKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn is_deterministic(&self) -> bool {
        self.kind == DisorderKind::Deterministic
    }

    pub fn field(&self) -> Arc<dyn InstrumentField> {
        self.field.clone()
    }

    /// Index translation: `shifted(m).instrument_at(n) == instrument_at(n + m)`.
    pub fn shifted(&self, m: i64) -> Self {
        let mut env = self.clone();
        env.origin += m;
        env
    }

    /// The same law with a different realization `ω`.
    pub fn reseeded(&self, seed: u64) -> Self {
        if seed == self.seed {
            return self.clone();
        }
        let mut env = Self::new(self.kind.clone(), seed, self.field.clone());
        env.origin = self.origin;
        env
    }

    pub fn hidden_state(&self, n: i64) -> Option<usize> {
        match &self.kind {
            DisorderKind::FiniteMarkov(chain) => Some(markov_states(chain, self.seed, self.origin + n, 1)[0]),
            _ => None,
        }
    }

    pub fn instrument_at(&self, n: i64) -> Arc<KrausInstrument> {
        self.window(n, 1).pop().expect("window of length one")
    }

    /// Instruments at indices `start, start + 1, …, start + len − 1`.
    pub fn window(&self, start: i64, len: usize) -> Vec<Arc<KrausInstrument>> {
        if let Some(inst) = &self.fixed {
            return vec![inst.clone(); len];
        }
        let first = self.origin + start;
        let states: Vec<Option<usize>> = match &self.kind {
            DisorderKind::FiniteMarkov(chain) => markov_states(chain, self.seed, first, len).into_iter().map(Some).collect(),
            _ => vec![None; len],
        };
        states
            .into_iter()
            .enumerate()
            .map(|(k, state)| Arc::new(self.field.instrument(&EnvPoint::new(self.seed, first + k as i64, state))))
            .collect()
    }

    /// Mixing bounds of the driver: zero for deterministic and i.i.d.
    /// drivers, the β-mixing coefficient (capped at 1/4) for Markov drivers.
    pub fn mixing_profile(&self, n_max: usize) -> MixingProfile {
        match &self.kind {
            DisorderKind::FiniteMarkov(chain) => {
                let beta: Vec<f64> = (0..=n_max).map(|n| chain.beta_mixing(n)).collect();
                let alpha_bound: Vec<f64> = beta.iter().map(|b| b.min(0.25)).collect();
                let r = chain.slem();
                let rate = if r > 1e-12 && r < 1.0 {
                    let c = (1..=n_max).map(|n| beta[n] / r.powi(n as i32)).fold(0.0, f64::max);
                    Some((c, r))
                } else if beta.iter().skip(1).all(|&b| b <= 1e-15) {
                    Some((0.0, 0.0))
                } else {
                    None
                };
                MixingProfile { alpha_bound, rate }
            }
            _ => {
                let mut alpha_bound = vec![0.0; n_max + 1];
                alpha_bound[0] = 0.25;
                MixingProfile { alpha_bound, rate: Some((0.0, 0.0)) }
            }
        }
    }
}

/// Hidden states at absolute indices `first..first + len`.
fn markov_states(chain: &MarkovChain, seed: u64, first: i64, len: usize) -> Vec<usize> {
    let u = |n: i64| keyed_uniform(seed, domain::ENV_DRIVER, zigzag(n), 0);
    let last = first + len as i64 - 1;
    let x0 = sample_index(chain.stationary(), u(0)).expect("stationary vector has mass");
    let mut out = Vec::with_capacity(len);
    if first <= 0 {
        // walk backward from 0 to `first`
        let mut back = vec![x0];
        let mut x = x0;
        for n in (first..0).rev() {
            x = sample_index(&chain.reversed()[x], u(n)).expect("reversed row has mass");
            back.push(x);
        }
        back.reverse();
        // back[k] is the state at index first + k, for indices ≤ 0
        out.extend(back.into_iter().take(len));
        let mut x = x0;
        for n in 1..=last {
            x = sample_index(&chain.transition()[x], u(n)).expect("row has mass");
            out.push(x);
        }
    } else {
        let mut x = x0;
        for n in 1..=last {
            x = sample_index(&chain.transition()[x], u(n)).expect("row has mass");
            if n >= first {
                out.push(x);
            }
        }
    }
    out
}

/// `α(n)` bounds with optional geometric constants `(C, r)`, `α(n) ≤ C rⁿ`.
#[derive(Clone, Debug, Serialize)]
pub struct MixingProfile {
    /// Entry `n` bounds `α(n)`; entry 0 is the trivial bound 1/4.
    pub alpha_bound: Vec<f64>,
    pub rate: Option<(f64, f64)>,
}

impl MixingProfile {
    pub fn alpha(&self, n: usize) -> f64 {
        if let Some(&v) = self.alpha_bound.get(n) {
            return v;
        }
        match self.rate {
            Some((c, r)) => (c * r.powi(n as i32)).min(0.25),
            None => *self.alpha_bound.last().unwrap_or(&0.25),
        }
    }

    pub fn zero(n_max: usize) -> Self {
        let mut alpha_bound = vec![0.0; n_max + 1];
        alpha_bound[0] = 0.25;
        Self { alpha_bound, rate: Some((0.0, 0.0)) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ComplexMatrix;

    fn two_state(a: f64, b: f64) -> Vec<Vec<f64>> {
        vec![vec![1.0 - a, a], vec![b, 1.0 - b]]
    }

    /// Instrument whose single parameter is readable from the Kraus entries.
    fn probe_field(point: &EnvPoint) -> KrausInstrument {
        let x = match point.state {
            Some(s) => 0.2 + 0.3 * s as f64,
            None => 0.2 + 0.6 * point.uniform(0),
        };
        let v0 = ComplexMatrix::diagonal_from(&[x.sqrt(), x.sqrt()]);
        let v1 = ComplexMatrix::diagonal_from(&[(1.0 - x).sqrt(), (1.0 - x).sqrt()]);
        KrausInstrument::perfect(2, vec!["a".into(), "b".into()], vec![v0, v1]).unwrap()
    }

    fn param(inst: &KrausInstrument) -> f64 {
        inst.kraus(0)[0][(0, 0)].re.powi(2)
    }

    #[test]
    fn deterministic_is_constant() {
        let env = DisorderProcess::from_fn(DisorderKind::Deterministic, 3, 2, probe_field);
        let x = param(&env.instrument_at(0));
        for n in [-7, 1, 100] {
            assert_eq!(param(&env.instrument_at(n)), x);
        }
    }

    #[test]
    fn same_key_same_instrument() {
        let env = DisorderProcess::from_fn(DisorderKind::Iid, 3, 2, probe_field);
        let a = env.instrument_at(-4);
        let b = env.instrument_at(-4);
        assert_eq!(a.kraus(0)[0], b.kraus(0)[0]);
        assert_ne!(param(&env.instrument_at(5)), param(&env.instrument_at(6)));
    }

    #[test]
    fn iid_parameters_follow_declared_uniform_law() {
        let env = DisorderProcess::from_fn(DisorderKind::Iid, 11, 2, probe_field);
        let mut xs: Vec<f64> = env.window(1, 100_000).iter().map(|i| param(i)).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = ((x - 0.2) / 0.6).clamp(0.0, 1.0);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // asymptotic 1% critical value
        assert!(d * n.sqrt() < 1.628, "KS statistic {d}");
    }

    #[test]
    fn shift_consistency() {
        let chain = MarkovChain::new(two_state(0.1, 0.3)).unwrap();
        for kind in [DisorderKind::Iid, DisorderKind::FiniteMarkov(chain)] {
            let env = DisorderProcess::from_fn(kind, 5, 2, probe_field);
            for m in [-9i64, -1, 0, 3, 12] {
                let sh = env.shifted(m);
                for n in -6i64..6 {
                    assert_eq!(param(&env.instrument_at(n + m)), param(&sh.instrument_at(n)));
                }
            }
        }
    }

    #[test]
    fn window_agrees_with_pointwise_evaluation() {
        let chain = MarkovChain::new(two_state(0.2, 0.4)).unwrap();
        let env = DisorderProcess::from_fn(DisorderKind::FiniteMarkov(chain), 9, 2, probe_field);
        let w = env.window(-5, 12);
        for (k, inst) in w.iter().enumerate() {
            assert_eq!(param(inst), param(&env.instrument_at(-5 + k as i64)));
        }
    }

    #[test]
    fn markov_driver_is_stationary_two_sided() {
        let chain = MarkovChain::new(two_state(0.1, 0.3)).unwrap();
        let pi1 = chain.stationary()[1];
        for n in [-50i64, 0, 50] {
            let hits = (0..4000u64)
                .filter(|&s| {
                    let env = DisorderProcess::from_fn(DisorderKind::FiniteMarkov(chain.clone()), s, 2, probe_field);
                    env.hidden_state(n) == Some(1)
                })
                .count() as f64
                / 4000.0;
            let se = (pi1 * (1.0 - pi1) / 4000.0).sqrt();
            assert!((hits - pi1).abs() < 4.0 * se, "n={n}: {hits} vs {pi1}");
        }
    }

    #[test]
    fn reversed_kernel_is_stochastic() {
        let chain = MarkovChain::new(vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.4, 0.4, 0.2]]).unwrap();
        for row in chain.reversed() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_mixing_examples() {
        let p = two_state(0.5, 0.5);
        let chain = MarkovChain::new(p.clone()).unwrap();
        for n in 1..5 {
            assert!(markov_beta_mixing_bound(&p, chain.stationary(), n).unwrap().abs() < 1e-15);
        }
        let (a, b) = (0.1, 0.2);
        let p = two_state(a, b);
        let chain = MarkovChain::new(p.clone()).unwrap();
        let pi = chain.stationary().to_vec();
        let mut prev = f64::INFINITY;
        for n in 0..30 {
            // oracle: explicit repeated multiplication of distributions
            let mut rows = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
            for _ in 0..n {
                rows = rows.iter().map(|r| vec![r[0] * p[0][0] + r[1] * p[1][0], r[0] * p[0][1] + r[1] * p[1][1]]).collect();
            }
            let oracle: f64 = (0..2).map(|x| pi[x] * 0.5 * ((rows[x][0] - pi[0]).abs() + (rows[x][1] - pi[1]).abs())).sum();
            let got = markov_beta_mixing_bound(&p, &pi, n).unwrap();
            assert!((got - oracle).abs() < 1e-14);
            let closed = (1.0f64 - a - b).abs().powi(n as i32) * 2.0 * a * b / ((a + b) * (a + b));
            assert!((got - closed).abs() < 1e-14);
            assert!(got <= prev + 1e-15 && got <= 1.0);
            prev = got;
        }
        assert!(markov_beta_mixing_bound(&two_state(1.0, 1.0), &[0.5, 0.5], 1).is_err());
    }

    #[test]
    fn reducible_chain_rejected() {
        assert!(MarkovChain::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).is_err());
        assert!(MarkovChain::new(vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn dobrushin_examples() {
        let q = vec![vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5]];
        assert!((dobrushin_coefficient(&q).unwrap() - 0.5).abs() < 1e-15);
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(dobrushin_coefficient(&id).unwrap(), 1.0);
        let u = vec![vec![1.0 / 3.0; 3]; 3];
        assert!(dobrushin_coefficient(&u).unwrap().abs() < 1e-15);
        assert!(dobrushin_coefficient(&[vec![0.5, 0.5], vec![0.6, 0.5]]).is_err());
    }

    #[test]
    fn mixing_profiles() {
        let env = DisorderProcess::from_fn(DisorderKind::Iid, 1, 2, probe_field);
        let prof = env.mixing_profile(10);
        assert!((1..=10).all(|n| prof.alpha(n) == 0.0));
        let chain = MarkovChain::new(two_state(0.1, 0.2)).unwrap();
        let env = DisorderProcess::from_fn(DisorderKind::FiniteMarkov(chain.clone()), 1, 2, probe_field);
        let prof = env.mixing_profile(20);
        let (c, r) = prof.rate.unwrap();
        assert!((r - 0.7).abs() < 1e-10);
        for n in 1..=20 {
            assert!(prof.alpha(n) <= c * r.powi(n as i32) + 1e-15);
            assert!(prof.alpha(n) <= prof.alpha(n - 1) + 1e-15 && prof.alpha(n) <= 0.25);
        }
    }
}
