//! Quenched and annealed trajectory sampling, pattern counting and exact
//! enumeration of cylinder probabilities.
//!
//! Step `k ≥ 1` of a trajectory started at index `origin` uses the instrument
//! at `origin + k`. Outcomes are stored as alphabet indices.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::environment::DisorderProcess;
use crate::error::{input, Error, Result};
use crate::instrument::{KrausInstrument, ReferenceState};
use crate::linalg::{ComplexMatrix, DensityMatrix};
use crate::rng::{derive_seed, domain, stream};
use crate::stationary::solve_stationary_state;
use crate::tol;

/// Default cap on the number of enumerated words.
pub const ENUMERATION_CAP: usize = 1_000_000;

#[derive(Clone, Debug)]
pub struct TrajectorySample {
    pub outcomes: Vec<usize>,
    /// `ρ_1, …, ρ_n` when requested.
    pub posteriors: Option<Vec<DensityMatrix>>,
    pub env_seed: u64,
    pub rng_seed: u64,
    pub quenched: bool,
}

/// A nonempty word whose letters are sets of outcomes. Plain words use
/// singleton letters.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pattern {
    slots: Vec<Vec<usize>>,
}

/// A named set of outcomes usable as one pattern letter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutcomeClass {
    pub label: String,
    pub outcomes: Vec<usize>,
}

impl Pattern {
    pub fn new(word: Vec<usize>, n_outcomes: usize) -> Result<Self> {
        Self::from_slots(word.into_iter().map(|a| vec![a]).collect(), n_outcomes)
    }

    pub fn from_slots(slots: Vec<Vec<usize>>, n_outcomes: usize) -> Result<Self> {
        if slots.is_empty() {
            return input("pattern must be nonempty");
        }
        let mut slots = slots;
        for s in &mut slots {
            if s.is_empty() {
                return input("pattern letter must allow at least one outcome");
            }
            if let Some(&a) = s.iter().find(|&&a| a >= n_outcomes) {
                return input(format!("pattern symbol {a} outside alphabet of size {n_outcomes}"));
            }
            s.sort_unstable();
            s.dedup();
        }
        Ok(Self { slots })
    }

    /// Parses either comma-separated labels (`"K,S"`) or a concatenation of
    /// labels split greedily by longest match (`"KS"`).
    pub fn parse(text: &str, alphabet: &[String]) -> Result<Self> {
        Self::parse_with_classes(text, alphabet, &[])
    }

    /// As [`Pattern::parse`], also accepting class labels as letters.
    /// Outcome labels take precedence over class labels of equal length.
    pub fn parse_with_classes(text: &str, alphabet: &[String], classes: &[OutcomeClass]) -> Result<Self> {
        let text = text.trim();
        let letters: Vec<(&str, Vec<usize>)> = alphabet
            .iter()
            .enumerate()
            .map(|(a, l)| (l.as_str(), vec![a]))
            .chain(classes.iter().map(|c| (c.label.as_str(), c.outcomes.clone())))
            .collect();
        let lookup = |s: &str| letters.iter().find(|(l, _)| *l == s).map(|(_, o)| o.clone());
        let slots = if text.contains(',') {
            text.split(',')
                .map(|s| lookup(s.trim()).ok_or_else(|| Error::Input(format!("unknown outcome label '{}'", s.trim()))))
                .collect::<Result<Vec<_>>>()?
        } else {
            let mut slots = Vec::new();
            let mut rest = text;
            while !rest.is_empty() {
                let best = letters
                    .iter()
                    .filter(|(l, _)| !l.is_empty() && rest.starts_with(l))
                    .fold(None, |best: Option<&(&str, Vec<usize>)>, x| match best {
                        Some(b) if b.0.len() >= x.0.len() => Some(b),
                        _ => Some(x),
                    })
                    .ok_or_else(|| Error::Input(format!("cannot split '{rest}' into outcome labels")))?;
                slots.push(best.1.clone());
                rest = &rest[best.0.len()..];
            }
            slots
        };
        Self::from_slots(slots, alphabet.len())
    }

    /// The outcome word, if every letter is a single outcome.
    pub fn word(&self) -> Option<Vec<usize>> {
        self.slots.iter().map(|s| (s.len() == 1).then(|| s[0])).collect()
    }

    pub fn slots(&self) -> &[Vec<usize>] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn display(&self, alphabet: &[String]) -> String {
        self.slots
            .iter()
            .map(|s| {
                let names: Vec<&str> = s.iter().map(|&a| alphabet[a].as_str()).collect();
                if names.len() == 1 {
                    names[0].to_string()
                } else {
                    format!("{{{}}}", names.join("|"))
                }
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    /// `δN_k`: does the pattern start at zero-based position `k`?
    pub fn matches_at(&self, outcomes: &[usize], k: usize) -> bool {
        outcomes.get(k..k + self.slots.len()).is_some_and(|w| w.iter().zip(&self.slots).all(|(a, s)| s.binary_search(a).is_ok()))
    }
}

/// `N_n^b`: overlapping matches starting at positions `1..=n`.
pub fn pattern_count(outcomes: &[usize], b: &Pattern, n: usize) -> Result<usize> {
    if outcomes.len() < n + b.len() - 1 {
        return input(format!("record of length {} too short for {n} windows of length {}", outcomes.len(), b.len()));
    }
    Ok((0..n).filter(|&k| b.matches_at(outcomes, k)).count())
}

pub type InitialRule = Arc<dyn Fn(&DisorderProcess, i64) -> Result<DensityMatrix> + Send + Sync>;

/// Initial state as a rule of the environment seen from the origin.
#[derive(Clone)]
pub enum InitialState {
    Fixed(DensityMatrix),
    /// `ρ^{(i)}`, zero-based.
    Basis(usize),
    MaximallyMixed,
    /// The dynamically stationary state at the origin.
    Stationary,
    Rule(InitialRule),
}

impl std::fmt::Debug for InitialState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialState::Fixed(_) => write!(f, "Fixed"),
            InitialState::Basis(i) => write!(f, "Basis({i})"),
            InitialState::MaximallyMixed => write!(f, "MaximallyMixed"),
            InitialState::Stationary => write!(f, "Stationary"),
            InitialState::Rule(_) => write!(f, "Rule"),
        }
    }
}

impl InitialState {
    pub fn resolve(&self, env: &DisorderProcess, origin: i64) -> Result<DensityMatrix> {
        let d = env.dim();
        match self {
            InitialState::Fixed(rho) if rho.dim() == d => Ok(rho.clone()),
            InitialState::Fixed(rho) => input(format!("initial state has dimension {}, expected {d}", rho.dim())),
            InitialState::Basis(i) if *i < d => Ok(DensityMatrix::basis(d, *i)),
            InitialState::Basis(i) => input(format!("basis index {i} out of range for dimension {d}")),
            InitialState::MaximallyMixed => Ok(DensityMatrix::maximally_mixed(d)),
            InitialState::Stationary => {
                let sol = solve_stationary_state(env, origin, tol::STATIONARY, 4096)?;
                sol.state.ok_or_else(|| Error::Numerical("stationary state did not converge".into()))
            }
            InitialState::Rule(f) => f(env, origin),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SampleOptions {
    pub record_posteriors: bool,
    /// Fallback state for zero-probability branches; `I/d` when absent.
    pub reference: Option<ReferenceState>,
}

/// Runs one trajectory through a precomputed instrument window.
pub fn run_window<R: Rng + ?Sized>(
    window: &[Arc<KrausInstrument>],
    rho0: &DensityMatrix,
    reference: &ReferenceState,
    record: bool,
    rng: &mut R,
) -> Result<(Vec<usize>, Option<Vec<DensityMatrix>>)> {
    let mut rho = rho0.matrix().clone();
    let mut outcomes = Vec::with_capacity(window.len());
    let mut posteriors = record.then(|| Vec::with_capacity(window.len()));
    for (k, inst) in window.iter().enumerate() {
        let weights = inst.born_weights(&rho);
        let total: f64 = weights.iter().sum();
        if !(total > tol::ZERO) {
            return Err(Error::Numerical(format!("degenerate Born vector at step {} (total weight {total:.3e})", k + 1)));
        }
        let u: f64 = rng.gen();
        let a = crate::rng::sample_index(&weights, u).expect("positive total weight");
        let next = inst.posterior_unchecked(a, &rho, reference);
        if let Some(p) = posteriors.as_mut() {
            p.push(next.clone());
        }
        rho = next.into_matrix();
        outcomes.push(a);
    }
    Ok((outcomes, posteriors))
}

fn reference_for(env: &DisorderProcess, opts: &SampleOptions) -> ReferenceState {
    opts.reference.clone().unwrap_or_else(|| ReferenceState::maximally_mixed(env.dim()))
}

/// One quenched trajectory of `steps` outcomes under `env` from `origin`,
/// randomness keyed by `(seed, trajectory_id)`.
pub fn sample_quenched(
    env: &DisorderProcess,
    origin: i64,
    rho0: &DensityMatrix,
    steps: usize,
    seed: u64,
    trajectory_id: u64,
    opts: &SampleOptions,
) -> Result<TrajectorySample> {
    if steps == 0 {
        return input("steps must be at least 1");
    }
    if rho0.dim() != env.dim() {
        return input("initial state dimension does not match the environment");
    }
    let window = env.window(origin + 1, steps);
    let mut rng = stream(seed, domain::TRAJECTORY, trajectory_id);
    let (outcomes, posteriors) = run_window(&window, rho0, &reference_for(env, opts), opts.record_posteriors, &mut rng)?;
    Ok(TrajectorySample { outcomes, posteriors, env_seed: env.seed(), rng_seed: seed, quenched: true })
}

/// Environment seed used by annealed trajectory `trajectory_id`.
pub fn annealed_env_seed(seed: u64, trajectory_id: u64) -> u64 {
    derive_seed(seed, domain::ENV_DRAW, trajectory_id)
}

/// Draws a fresh environment, evaluates the initial-state rule on it and
/// samples a quenched trajectory from index 0.
pub fn sample_annealed(
    env: &DisorderProcess,
    rho0: &InitialState,
    steps: usize,
    seed: u64,
    trajectory_id: u64,
    opts: &SampleOptions,
) -> Result<TrajectorySample> {
    let drawn = if env.is_deterministic() { env.clone() } else { env.reseeded(annealed_env_seed(seed, trajectory_id)) };
    let rho = rho0.resolve(&drawn, 0)?;
    let mut s = sample_quenched(&drawn, 0, &rho, steps, seed, trajectory_id, opts)?;
    s.quenched = false;
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Disorder {
    /// All trajectories share the given environment.
    Quenched,
    /// Every trajectory draws its own environment.
    Annealed,
}

/// `n_trajectories` outcome records in parallel. Trajectory `t` uses the
/// stream keyed by `(seed, t)`, so results do not depend on thread count.
pub fn sample_batch(
    env: &DisorderProcess,
    rho0: &InitialState,
    steps: usize,
    n_trajectories: usize,
    seed: u64,
    disorder: Disorder,
) -> Result<Vec<Vec<usize>>> {
    if steps == 0 || n_trajectories == 0 {
        return input("steps and trajectories must be positive");
    }
    let reference = ReferenceState::maximally_mixed(env.dim());
    if disorder == Disorder::Quenched || env.is_deterministic() {
        let rho = rho0.resolve(env, 0)?;
        let window = env.window(1, steps);
        (0..n_trajectories as u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream(seed, domain::TRAJECTORY, t);
                run_window(&window, &rho, &reference, false, &mut rng).map(|r| r.0)
            })
            .collect()
    } else {
        let opts = SampleOptions::default();
        (0..n_trajectories as u64).into_par_iter().map(|t| sample_annealed(env, rho0, steps, seed, t, &opts).map(|s| s.outcomes)).collect()
    }
}

/// Exact law of length-`len` words, indexed by lexicographic rank.
#[derive(Clone, Debug)]
pub struct WordDistribution {
    n_outcomes: usize,
    len: usize,
    probs: Vec<f64>,
}

impl WordDistribution {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn n_outcomes(&self) -> usize {
        self.n_outcomes
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn rank(&self, word: &[usize]) -> usize {
        word.iter().fold(0, |r, &a| r * self.n_outcomes + a)
    }

    pub fn word(&self, mut rank: usize) -> Vec<usize> {
        let mut w = vec![0; self.len];
        for k in (0..self.len).rev() {
            w[k] = rank % self.n_outcomes;
            rank /= self.n_outcomes;
        }
        w
    }

    pub fn prob(&self, word: &[usize]) -> f64 {
        if word.len() != self.len || word.iter().any(|&a| a >= self.n_outcomes) {
            return 0.0;
        }
        self.probs[self.rank(word)]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Total-variation distance to the empirical law of `samples` (only the
    /// first `len` symbols of each sample are used).
    pub fn tv_distance<S: AsRef<[usize]>>(&self, samples: &[S]) -> f64 {
        let mut counts = vec![0usize; self.probs.len()];
        for s in samples {
            counts[self.rank(&s.as_ref()[..self.len])] += 1;
        }
        let n = samples.len() as f64;
        0.5 * counts.iter().zip(&self.probs).map(|(&c, &p)| (c as f64 / n - p).abs()).sum::<f64>()
    }

    /// Nonzero-probability words with their probabilities.
    pub fn support(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.probs.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(r, &p)| (self.word(r), p))
    }
}

fn check_cap(n_outcomes: usize, len: usize, cap: usize) -> Result<usize> {
    let mut total: usize = 1;
    for _ in 0..len {
        total = total
            .checked_mul(n_outcomes)
            .filter(|&t| t <= cap)
            .ok_or_else(|| Error::Cap(format!("{n_outcomes}^{len} words exceed the enumeration cap {cap}; use Monte Carlo sampling")))?;
    }
    Ok(total)
}

/// Depth-first enumeration of `tr 𝒯_{a_n} ∘ ⋯ ∘ 𝒯_{a_1}(ρ_0)`; branches of
/// zero mass are pruned.
pub(crate) fn enumerate_words<I: AsRef<KrausInstrument>>(window: &[I], rho0: &ComplexMatrix, visit: &mut dyn FnMut(&[usize], f64)) {
    fn rec<I: AsRef<KrausInstrument>>(window: &[I], state: &ComplexMatrix, prefix: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize], f64)) {
        let depth = prefix.len();
        if depth == window.len() {
            visit(prefix, state.trace().re.max(0.0));
            return;
        }
        let inst = window[depth].as_ref();
        for a in 0..inst.n_outcomes() {
            let next = inst.selective(a, state);
            if next.trace().re <= 0.0 {
                continue;
            }
            prefix.push(a);
            rec(window, &next, prefix, visit);
            prefix.pop();
        }
    }
    rec(window, rho0, &mut Vec::with_capacity(window.len()), visit);
}

pub fn exact_cylinder_distribution(env: &DisorderProcess, origin: i64, rho0: &DensityMatrix, n: usize) -> Result<WordDistribution> {
    exact_cylinder_distribution_capped(env, origin, rho0, n, ENUMERATION_CAP)
}

pub fn exact_cylinder_distribution_capped(
    env: &DisorderProcess,
    origin: i64,
    rho0: &DensityMatrix,
    n: usize,
    cap: usize,
) -> Result<WordDistribution> {
    if n == 0 {
        return input("word length must be at least 1");
    }
    let window = env.window(origin + 1, n);
    let n_outcomes = window[0].n_outcomes();
    if window.iter().any(|i| i.n_outcomes() != n_outcomes) {
        return Err(Error::Structure("alphabet size varies along the environment".into()));
    }
    let size = check_cap(n_outcomes, n, cap)?;
    let mut dist = WordDistribution { n_outcomes, len: n, probs: vec![0.0; size] };
    let mut probs = std::mem::take(&mut dist.probs);
    enumerate_words(&window, rho0.matrix(), &mut |w, p| probs[dist.rank(w)] = p);
    dist.probs = probs;
    let total = dist.total();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Numerical(format!("cylinder probabilities sum to {total}")));
    }
    Ok(dist)
}

/// Exact `(E N_n^b, Var N_n^b)` by enumeration of words of length `n + m − 1`.
pub fn exact_pattern_moments(env: &DisorderProcess, origin: i64, rho0: &DensityMatrix, n: usize, b: &Pattern) -> Result<(f64, f64)> {
    if n == 0 {
        return input("n must be at least 1");
    }
    let len = n + b.len() - 1;
    let window = env.window(origin + 1, len);
    check_cap(window[0].n_outcomes(), len, ENUMERATION_CAP)?;
    let (mut m1, mut m2) = (0.0, 0.0);
    enumerate_words(&window, rho0.matrix(), &mut |w, p| {
        let c = (0..n).filter(|&k| b.matches_at(w, k)).count() as f64;
        m1 += p * c;
        m2 += p * c * c;
    });
    Ok((m1, (m2 - m1 * m1).max(0.0)))
}

/// One record per line: alphabet indices separated by spaces.
pub fn write_dump<W: Write, S: AsRef<[usize]>>(mut out: W, records: &[S]) -> Result<()> {
    for r in records {
        let line: Vec<String> = r.as_ref().iter().map(|a| a.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_dump<R: BufRead>(input_: R) -> Result<Vec<Vec<usize>>> {
    input_
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| {
            l?.split_whitespace().map(|t| t.parse::<usize>().map_err(|e| Error::Input(format!("bad dump token '{t}': {e}")))).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::DisorderKind;

    fn toy(d: usize) -> KrausInstrument {
        let mut labels = Vec::new();
        let mut ops = Vec::new();
        for k in 0..d {
            for l in 0..d {
                labels.push(format!("{}{}", k + 1, l + 1));
                ops.push(ComplexMatrix::unit(d, k, l).scale((1.0 / d as f64).sqrt()));
            }
        }
        KrausInstrument::perfect(d, labels, ops).unwrap()
    }

    fn amplitude_damping(gamma: f64) -> KrausInstrument {
        let v0 = ComplexMatrix::diagonal_from(&[1.0, (1.0 - gamma).sqrt()]);
        let v1 = ComplexMatrix::from_real_rows(&[&[0.0, gamma.sqrt()], &[0.0, 0.0]]).unwrap();
        KrausInstrument::perfect(2, vec!["0".into(), "1".into()], vec![v0, v1]).unwrap()
    }

    #[test]
    fn pattern_count_examples() {
        let p = Pattern::new(vec![0, 0], 2).unwrap();
        assert_eq!(pattern_count(&[0, 0, 0, 0], &p, 3).unwrap(), 3);
        let p = Pattern::new(vec![1, 2], 3).unwrap();
        assert_eq!(pattern_count(&[1, 2, 1, 2, 1], &p, 4).unwrap(), 2);
        let rec = [0, 1, 1, 0, 1, 1, 1];
        let p = Pattern::new(vec![1], 2).unwrap();
        assert_eq!(pattern_count(&rec, &p, rec.len()).unwrap(), 5);
        assert!(pattern_count(&rec, &Pattern::new(vec![1, 1], 2).unwrap(), 7).is_err());
    }

    #[test]
    fn pattern_parsing() {
        let ab: Vec<String> = ["K", "S"].iter().map(|s| s.to_string()).collect();
        assert_eq!(Pattern::parse("KS", &ab).unwrap().word().unwrap(), [0, 1]);
        assert_eq!(Pattern::parse("S, K", &ab).unwrap().word().unwrap(), [1, 0]);
        assert!(Pattern::parse("KX", &ab).is_err());
        let ab: Vec<String> = ["-1", "0", "+1"].iter().map(|s| s.to_string()).collect();
        assert_eq!(Pattern::parse("+1-1", &ab).unwrap().word().unwrap(), [2, 0]);
    }

    #[test]
    fn toy_posteriors_are_basis_states() {
        let env = DisorderProcess::constant(toy(2));
        let opts = SampleOptions { record_posteriors: true, reference: None };
        let s = sample_quenched(&env, 0, &DensityMatrix::maximally_mixed(2), 20, 1, 0, &opts).unwrap();
        for (a, rho) in s.outcomes.iter().zip(s.posteriors.unwrap()) {
            let k = a / 2;
            assert!(rho.matrix().max_abs_diff(DensityMatrix::basis(2, k).matrix()) < 1e-12);
        }
    }

    #[test]
    fn single_outcome_instrument_gives_constant_record() {
        let inst = KrausInstrument::perfect(2, vec!["x".into()], vec![ComplexMatrix::identity(2)]).unwrap();
        let env = DisorderProcess::constant(inst);
        let s = sample_quenched(&env, 0, &DensityMatrix::maximally_mixed(2), 50, 3, 0, &SampleOptions::default()).unwrap();
        assert!(s.outcomes.iter().all(|&a| a == 0));
    }

    #[test]
    fn toy_two_step_law() {
        let env = DisorderProcess::constant(toy(2));
        let dist = exact_cylinder_distribution(&env, 0, &DensityMatrix::maximally_mixed(2), 2).unwrap();
        for (r, &p) in dist.probabilities().iter().enumerate() {
            let w = dist.word(r);
            let (k1, _l1, _k2, l2) = (w[0] / 2, w[0] % 2, w[1] / 2, w[1] % 2);
            let expect = if l2 == k1 { 0.125 } else { 0.0 };
            assert!((p - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn amplitude_damping_from_ground_never_clicks() {
        let env = DisorderProcess::constant(amplitude_damping(0.5));
        let dist = exact_cylinder_distribution(&env, 0, &DensityMatrix::basis(2, 0), 5).unwrap();
        for (w, p) in dist.support() {
            assert!(w.iter().all(|&a| a == 0), "{w:?} has mass {p}");
        }
    }

    #[test]
    fn cap_is_enforced() {
        let env = DisorderProcess::constant(toy(3));
        let err = exact_cylinder_distribution_capped(&env, 0, &DensityMatrix::maximally_mixed(3), 4, 1000).unwrap_err();
        assert!(matches!(err, Error::Cap(_)));
    }

    #[test]
    fn toy_moments() {
        let env = DisorderProcess::constant(toy(2));
        let b = Pattern::new(vec![1], 4).unwrap();
        let (m, _) = exact_pattern_moments(&env, 0, &DensityMatrix::maximally_mixed(2), 4, &b).unwrap();
        assert!((m - 1.0).abs() < 1e-14);
        // (1,1),(2,2) violates the chaining rule
        let z = Pattern::new(vec![0, 3], 4).unwrap();
        assert_eq!(exact_pattern_moments(&env, 0, &DensityMatrix::maximally_mixed(2), 4, &z).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn length_two_frequencies_match_enumeration() {
        let inst = amplitude_damping(0.4);
        let env = DisorderProcess::constant(inst);
        let rho0 = DensityMatrix::maximally_mixed(2);
        let dist = exact_cylinder_distribution(&env, 0, &rho0, 2).unwrap();
        let runs = sample_batch(&env, &InitialState::Fixed(rho0), 2, 100_000, 5, Disorder::Quenched).unwrap();
        for (r, &p) in dist.probabilities().iter().enumerate() {
            let w = dist.word(r);
            let f = runs.iter().filter(|s| s[..] == w[..]).count() as f64 / runs.len() as f64;
            let se = (p * (1.0 - p) / runs.len() as f64).sqrt();
            assert!((f - p).abs() <= 4.0 * se + 1e-12, "{w:?}: {f} vs {p}");
        }
    }

    #[test]
    fn annealed_is_mixture_of_quenched() {
        // two-point environment: damping 0.2 or 0.7, chosen per index
        let env = DisorderProcess::from_fn(DisorderKind::Iid, 17, 2, |pt| amplitude_damping(if pt.uniform(0) < 0.5 { 0.2 } else { 0.7 }));
        let rho0 = DensityMatrix::maximally_mixed(2);
        // exact annealed law of length-2 words: average over the 4 environment windows
        let mut exact = [0.0; 4];
        for g1 in [0.2, 0.7] {
            for g2 in [0.2, 0.7] {
                let w = [Arc::new(amplitude_damping(g1)), Arc::new(amplitude_damping(g2))];
                enumerate_words(&w, rho0.matrix(), &mut |word, p| exact[word[0] * 2 + word[1]] += 0.25 * p);
            }
        }
        let runs = sample_batch(&env, &InitialState::MaximallyMixed, 2, 100_000, 9, Disorder::Annealed).unwrap();
        for (r, &p) in exact.iter().enumerate() {
            let f = runs.iter().filter(|s| s[0] * 2 + s[1] == r).count() as f64 / 1e5;
            assert!((f - p).abs() <= 4.0 * (p * (1.0 - p) / 1e5).sqrt(), "{r}: {f} vs {p}");
        }
    }

    #[test]
    fn annealed_toy_marginals_uniform() {
        let env = DisorderProcess::from_fn(DisorderKind::Iid, 3, 2, |_| toy(2));
        let runs = sample_batch(&env, &InitialState::Basis(0), 3, 40_000, 2, Disorder::Annealed).unwrap();
        for a in 0..4 {
            let f = runs.iter().filter(|s| s[2] == a).count() as f64 / 40_000.0;
            assert!((f - 0.25).abs() < 4.0 * (0.1875f64 / 40_000.0).sqrt());
        }
    }

    #[test]
    fn deterministic_annealed_equals_quenched() {
        let env = DisorderProcess::constant(toy(2));
        let a = sample_annealed(&env, &InitialState::Basis(1), 30, 4, 8, &SampleOptions::default()).unwrap();
        let q = sample_quenched(&env, 0, &DensityMatrix::basis(2, 1), 30, 4, 8, &SampleOptions::default()).unwrap();
        assert_eq!(a.outcomes, q.outcomes);
        assert!(!a.quenched && q.quenched);
    }

    #[test]
    fn batch_is_thread_count_independent() {
        let env = DisorderProcess::constant(amplitude_damping(0.3));
        let a = sample_batch(&env, &InitialState::MaximallyMixed, 10, 200, 1, Disorder::Quenched).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| sample_batch(&env, &InitialState::MaximallyMixed, 10, 200, 1, Disorder::Quenched).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn dump_round_trip() {
        let recs = vec![vec![0, 1, 2], vec![3, 0]];
        let mut buf = Vec::new();
        write_dump(&mut buf, &recs).unwrap();
        assert_eq!(read_dump(&buf[..]).unwrap(), recs);
    }
}
