//! Basis-preserving (monomial) instruments: label maps, terminal-label laws,
//! block couplings and coalescence of coupled outcome records.
//!
//! Under the monomial structure a basis state stays a basis state, so the
//! law of an `L`-block from `ρ^{(i)}` is a walk on labels: outcome `a` has
//! probability `‖V_a e_x‖²` and moves the label from `x` to `f_a(x)`.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::environment::DisorderProcess;
use crate::error::{input, Error, Result};
use crate::instrument::KrausInstrument;
use crate::rng::{derive_seed, domain, sample_index, stream};
use crate::trajectory::{InitialState, Pattern};

/// Magnitude below which a Kraus entry counts as zero.
const ENTRY_TOL: f64 = 1e-10;

/// `f_a` for every outcome `a`, as `maps[a][i]` (zero-based labels).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LabelMap {
    dim: usize,
    maps: Vec<Vec<usize>>,
}

impl LabelMap {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_outcomes(&self) -> usize {
        self.maps.len()
    }

    pub fn apply(&self, a: usize, i: usize) -> usize {
        self.maps[a][i]
    }

    /// `f_u(i) = f_{u_L} ∘ ⋯ ∘ f_{u_1}(i)`.
    pub fn apply_word(&self, word: &[usize], i: usize) -> usize {
        word.iter().fold(i, |x, &a| self.maps[a][x])
    }

    pub fn maps(&self) -> &[Vec<usize>] {
        &self.maps
    }
}

/// Observed targets `f_a(i)` for columns with nonzero image.
#[derive(Clone, Debug)]
struct LabelEvidence {
    dim: usize,
    seen: Vec<Vec<Option<usize>>>,
}

impl LabelEvidence {
    fn new(dim: usize, n_outcomes: usize) -> Self {
        Self { dim, seen: vec![vec![None; dim]; n_outcomes] }
    }

    fn absorb(&mut self, inst: &KrausInstrument) -> Result<()> {
        if !inst.is_perfect() {
            return Err(Error::Unsupported("basis-label structure is only defined for perfect instruments".into()));
        }
        if inst.dim() != self.dim || inst.n_outcomes() != self.seen.len() {
            return Err(Error::Structure("instrument shape changed between environments".into()));
        }
        let d = self.dim;
        for a in 0..inst.n_outcomes() {
            let v = &inst.kraus(a)[0];
            let scale = v.max_abs().max(1.0);
            let mut targets: Vec<Option<usize>> = vec![None; d];
            for i in 0..d {
                let rows: Vec<usize> = (0..d).filter(|&k| v[(k, i)].norm() > ENTRY_TOL * scale).collect();
                match rows.len() {
                    0 => {}
                    1 => targets[i] = Some(rows[0]),
                    _ => {
                        return Err(Error::Hypothesis(format!(
                            "outcome '{}' maps basis vector {} onto {} basis vectors, not a single ray",
                            inst.alphabet()[a],
                            i + 1,
                            rows.len()
                        )))
                    }
                }
            }
            for i in 0..d {
                for j in i + 1..d {
                    if targets[i].is_some() && targets[i] == targets[j] {
                        return Err(Error::Hypothesis(format!(
                            "outcome '{}' sends basis vectors {} and {} to the same ray; images are not orthogonal",
                            inst.alphabet()[a],
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
            for (i, t) in targets.into_iter().enumerate() {
                if let Some(k) = t {
                    match self.seen[a][i] {
                        Some(prev) if prev != k => {
                            return Err(Error::Hypothesis(format!(
                                "label map of outcome '{}' at basis vector {} depends on the environment ({} vs {})",
                                inst.alphabet()[a],
                                i + 1,
                                prev + 1,
                                k + 1
                            )))
                        }
                        _ => self.seen[a][i] = Some(k),
                    }
                }
            }
        }
        Ok(())
    }

    /// Unobserved columns carry no probability; they get the outcome's
    /// single target when it has one and are fixed otherwise.
    fn finish(self) -> LabelMap {
        let maps = self
            .seen
            .iter()
            .map(|row| {
                let mut targets: Vec<usize> = row.iter().flatten().copied().collect();
                targets.dedup();
                let common = if targets.len() == 1 { Some(targets[0]) } else { None };
                row.iter().enumerate().map(|(i, t)| t.or(common).unwrap_or(i)).collect()
            })
            .collect();
        LabelMap { dim: self.dim, maps }
    }
}

/// Basis-ray check for one instrument, returning the extracted label map or
/// a hypothesis error describing the violation.
pub fn check_a1(inst: &KrausInstrument) -> Result<LabelMap> {
    let mut ev = LabelEvidence::new(inst.dim(), inst.n_outcomes());
    ev.absorb(inst)?;
    Ok(ev.finish())
}

/// Basis-ray check over `n_samples` environment draws, also requiring the
/// label maps to agree across draws.
pub fn check_a1_env(env: &DisorderProcess, n_samples: usize, seed: u64) -> Result<LabelMap> {
    let first = env.instrument_at(1);
    let mut ev = LabelEvidence::new(first.dim(), first.n_outcomes());
    ev.absorb(&first)?;
    if !env.is_deterministic() {
        for j in 0..n_samples as u64 {
            let e = env.reseeded(derive_seed(seed, domain::ENV_DRAW, j));
            for inst in e.window(1, 2) {
                ev.absorb(&inst)?;
            }
        }
    }
    Ok(ev.finish())
}

/// One word of a block law: the word, its probability and its terminal label.
#[derive(Clone, Debug)]
pub struct BlockWord {
    pub word: Vec<usize>,
    pub prob: f64,
    pub terminal: usize,
}

/// Law of the outcome block over `window` from `ρ^{(i)}`, zero-mass words omitted.
pub fn block_law(window: &[Arc<KrausInstrument>], labels: &LabelMap, i: usize) -> Vec<BlockWord> {
    fn rec(window: &[Arc<KrausInstrument>], labels: &LabelMap, x: usize, p: f64, prefix: &mut Vec<usize>, out: &mut Vec<BlockWord>) {
        let depth = prefix.len();
        if depth == window.len() {
            out.push(BlockWord { word: prefix.clone(), prob: p, terminal: x });
            return;
        }
        let inst = &window[depth];
        for a in 0..inst.n_outcomes() {
            let w = inst.effect(a)[(x, x)].re;
            if w <= 0.0 {
                continue;
            }
            prefix.push(a);
            rec(window, labels, labels.apply(a, x), p * w, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(window, labels, i, 1.0, &mut Vec::with_capacity(window.len()), &mut out);
    out
}

fn terminal_from_block(block: &[BlockWord], d: usize) -> Vec<f64> {
    let mut p = vec![0.0; d];
    for w in block {
        p[w.terminal] += w.prob;
    }
    p
}

fn check_block_cap(n_outcomes: usize, l: usize) -> Result<()> {
    let total = (n_outcomes as f64).powi(l as i32);
    if total > crate::trajectory::ENUMERATION_CAP as f64 {
        return Err(Error::Cap(format!("{n_outcomes}^{l} block words exceed the enumeration cap")));
    }
    Ok(())
}

/// `P̄^{(L)}(i, ·)`: law of the label after the `L` steps following `origin`.
pub fn terminal_label_law(env: &DisorderProcess, origin: i64, i: usize, l: usize) -> Result<Vec<f64>> {
    let window = env.window(origin + 1, l);
    let labels = labels_for_window(&window)?;
    if i >= labels.dim() {
        return input(format!("label {i} out of range"));
    }
    check_block_cap(labels.n_outcomes(), l)?;
    Ok(terminal_from_block(&block_law(&window, &labels, i), labels.dim()))
}

fn labels_for_window(window: &[Arc<KrausInstrument>]) -> Result<LabelMap> {
    let first = window.first().ok_or_else(|| Error::Input("block length must be at least 1".into()))?;
    let mut ev = LabelEvidence::new(first.dim(), first.n_outcomes());
    for inst in window {
        ev.absorb(inst)?;
    }
    Ok(ev.finish())
}

fn overlap(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a.min(*b)).sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct OverlapReport {
    /// Minimum pairwise terminal-law overlap over the sampled environments.
    pub epsilon: f64,
    pub l: usize,
    pub n_env_samples: usize,
    /// True when the environment is deterministic and the value is exact.
    pub exact: bool,
}

/// Empirical block-mergeability constant: the minimum over sampled `ω` and
/// label pairs of `Σ_k min{P̄(i,k), P̄(j,k)}`.
pub fn overlap_criterion(env: &DisorderProcess, env_samples: usize, l: usize, seed: u64) -> Result<OverlapReport> {
    if l == 0 {
        return input("block length must be at least 1");
    }
    let exact = env.is_deterministic();
    let n = if exact { 1 } else { env_samples.max(1) };
    let mins: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let e = if exact { env.clone() } else { env.reseeded(derive_seed(seed, domain::ENV_DRAW, j)) };
            let window = e.window(1, l);
            let labels = labels_for_window(&window)?;
            check_block_cap(labels.n_outcomes(), l)?;
            let d = labels.dim();
            let laws: Vec<Vec<f64>> = (0..d).map(|i| terminal_from_block(&block_law(&window, &labels, i), d)).collect();
            let mut m: f64 = 1.0;
            for i in 0..d {
                for k in i + 1..d {
                    m = m.min(overlap(&laws[i], &laws[k]));
                }
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let epsilon = mins.into_iter().fold(1.0, f64::min);
    Ok(OverlapReport { epsilon, l, n_env_samples: n, exact })
}

/// Maximal coupling `λ(k, ℓ) = r_k 1{k=ℓ} + (1−α) p̃(k) q̃(ℓ)` with
/// `r_k = min{p_k, q_k}` and `α = Σ r_k`.
pub fn maximal_label_coupling(p: &[f64], q: &[f64]) -> Result<Vec<Vec<f64>>> {
    if p.len() != q.len() || p.is_empty() {
        return input("coupled vectors must have equal nonzero length");
    }
    for v in [p, q] {
        if v.iter().any(|&x| !(x >= -1e-12)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return input("coupled vectors must be probability vectors");
        }
    }
    let d = p.len();
    let r: Vec<f64> = p.iter().zip(q).map(|(a, b)| a.min(*b).max(0.0)).collect();
    let alpha: f64 = r.iter().sum();
    let mut lambda = vec![vec![0.0; d]; d];
    for k in 0..d {
        lambda[k][k] = r[k];
    }
    let rest = 1.0 - alpha;
    if rest > 1e-15 {
        for k in 0..d {
            for l in 0..d {
                lambda[k][l] += (p[k] - r[k]).max(0.0) * (q[l] - r[l]).max(0.0) / rest;
            }
        }
    }
    Ok(lambda)
}

/// Sparse coupling of two block laws. Words are stored as lexicographic
/// ranks in `𝒜^L`.
#[derive(Clone, Debug)]
pub struct BlockCoupling {
    pub l: usize,
    pub n_outcomes: usize,
    pub i: usize,
    pub j: usize,
    /// `(rank(u), rank(v), κ(u, v))` with positive mass.
    pub joint: Vec<(usize, usize, f64)>,
    /// `κ{f_u(i) = f_v(j)}`.
    pub merge_mass: f64,
    /// Terminal-label overlap `Σ_k min{P̄(i,k), P̄(j,k)}`.
    pub overlap: f64,
}

fn rank(word: &[usize], n_outcomes: usize) -> usize {
    word.iter().fold(0, |r, &a| r * n_outcomes + a)
}

fn unrank(mut r: usize, n_outcomes: usize, l: usize) -> Vec<usize> {
    let mut w = vec![0; l];
    for k in (0..l).rev() {
        w[k] = r % n_outcomes;
        r /= n_outcomes;
    }
    w
}

impl BlockCoupling {
    pub fn word(&self, r: usize) -> Vec<usize> {
        unrank(r, self.n_outcomes, self.l)
    }

    /// Both marginals as dense vectors indexed by word rank.
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let size = self.n_outcomes.pow(self.l as u32);
        let (mut a, mut b) = (vec![0.0; size], vec![0.0; size]);
        for &(u, v, p) in &self.joint {
            a[u] += p;
            b[v] += p;
        }
        (a, b)
    }

    pub fn sample(&self, u: f64) -> (Vec<usize>, Vec<usize>) {
        let weights: Vec<f64> = self.joint.iter().map(|e| e.2).collect();
        let k = sample_index(&weights, u).expect("coupling has mass");
        (self.word(self.joint[k].0), self.word(self.joint[k].1))
    }
}

fn conditional_laws(block: &[BlockWord], d: usize, n_outcomes: usize) -> (Vec<f64>, Vec<Vec<(usize, f64)>>) {
    let p = terminal_from_block(block, d);
    let reference = vec![(0usize, 1.0)]; // u_* = lexicographically first word
    let mut gamma: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d];
    for w in block {
        gamma[w.terminal].push((rank(&w.word, n_outcomes), w.prob / p[w.terminal]));
    }
    for k in 0..d {
        if p[k] <= 0.0 {
            gamma[k] = reference.clone();
        }
    }
    (p, gamma)
}

fn couple_blocks(window: &[Arc<KrausInstrument>], labels: &LabelMap, i: usize, j: usize) -> Result<BlockCoupling> {
    let d = labels.dim();
    let n_outcomes = labels.n_outcomes();
    let l = window.len();
    let bi = block_law(window, labels, i);
    if i == j {
        let joint: Vec<(usize, usize, f64)> = bi
            .iter()
            .map(|w| {
                let r = rank(&w.word, n_outcomes);
                (r, r, w.prob)
            })
            .collect();
        return Ok(BlockCoupling { l, n_outcomes, i, j, joint, merge_mass: 1.0, overlap: 1.0 });
    }
    let bj = block_law(window, labels, j);
    let (pi, gi) = conditional_laws(&bi, d, n_outcomes);
    let (pj, gj) = conditional_laws(&bj, d, n_outcomes);
    let lambda = maximal_label_coupling(&pi, &pj)?;
    let mut acc: HashMap<(usize, usize), f64> = HashMap::new();
    for k in 0..d {
        for m in 0..d {
            if lambda[k][m] <= 0.0 {
                continue;
            }
            for &(u, pu) in &gi[k] {
                for &(v, pv) in &gj[m] {
                    *acc.entry((u, v)).or_insert(0.0) += lambda[k][m] * pu * pv;
                }
            }
        }
    }
    let mut joint: Vec<(usize, usize, f64)> = acc.into_iter().map(|((u, v), p)| (u, v, p)).collect();
    joint.sort_by_key(|a| (a.0, a.1));
    let merge_mass = joint
        .iter()
        .filter(|&&(u, v, _)| labels.apply_word(&unrank(u, n_outcomes, l), i) == labels.apply_word(&unrank(v, n_outcomes, l), j))
        .map(|e| e.2)
        .sum();
    Ok(BlockCoupling { l, n_outcomes, i, j, joint, merge_mass, overlap: overlap(&pi, &pj) })
}

/// Coupling of the `L`-block laws from `ρ^{(i)}` and `ρ^{(j)}` for the
/// instruments following `origin`: the diagonal self-coupling when `i = j`,
/// otherwise the mixture of conditional block laws over the maximal
/// coupling of terminal labels.
pub fn build_block_coupling(env: &DisorderProcess, origin: i64, i: usize, j: usize, l: usize) -> Result<BlockCoupling> {
    let window = env.window(origin + 1, l);
    let labels = labels_for_window(&window)?;
    if i >= labels.dim() || j >= labels.dim() {
        return input("label out of range");
    }
    check_block_cap(labels.n_outcomes(), l)?;
    couple_blocks(&window, &labels, i, j)
}

/// One coupled pair of outcome records.
#[derive(Clone, Debug)]
pub struct CoalescenceRun {
    /// Block index at which the hidden labels first agree (`0` if they start equal).
    pub r_star: Option<usize>,
    /// `inf{t ≥ 1 : a_n = b_n for all recorded n ≥ t}`; `None` if the labels never met.
    pub t_out: Option<usize>,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoalescenceStats {
    #[serde(skip)]
    pub runs: Vec<CoalescenceRun>,
    pub l: usize,
    pub epsilon: f64,
    pub n_blocks: usize,
    pub n_runs: usize,
    pub censored: usize,
    pub mean_t_out: f64,
    pub stderr_t_out: f64,
    pub mean_r_star: f64,
    /// `(r, P̂(R_* > r), binomial stderr)` for `r = 1..=10`.
    pub tail: Vec<(usize, f64, f64)>,
    /// Censoring exceeded `(1−ε)^{n_blocks} n_runs + 4σ`.
    pub flagged: bool,
}

impl CoalescenceStats {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["run_id", "R_star", "T_out"]).map_err(csv_err)?;
        for (k, r) in self.runs.iter().enumerate() {
            let rs = r.r_star.map_or("inf".to_string(), |v| v.to_string());
            let t = r.t_out.map_or("inf".to_string(), |v| v.to_string());
            w.write_record([k.to_string(), rs, t]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn sample_step<R: Rng + ?Sized>(inst: &KrausInstrument, x: usize, rng: &mut R) -> usize {
    let w: Vec<f64> = (0..inst.n_outcomes()).map(|a| inst.effect(a)[(x, x)].re.max(0.0)).collect();
    sample_index(&w, rng.gen()).expect("basis state has an outcome")
}

/// Runs the two-sided block coupling `n_runs` times for `n_blocks` blocks.
/// Run `r` reseeds a random environment with the seed derived from
/// `(seed, r)`; initial labels are drawn from the maximal coupling of the
/// diagonals of `ϑ` and `η`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_coalescence(
    env: &DisorderProcess,
    theta: &InitialState,
    eta: &InitialState,
    l: usize,
    epsilon: f64,
    n_blocks: usize,
    n_runs: usize,
    seed: u64,
) -> Result<CoalescenceStats> {
    if l == 0 || n_blocks == 0 || n_runs == 0 {
        return input("L, n_blocks and n_runs must be positive");
    }
    let labels = check_a1_env(env, 32, seed)?;
    check_block_cap(labels.n_outcomes(), l)?;
    let deterministic = env.is_deterministic();
    // block couplings of a deterministic environment depend only on the label pair
    let shared_window = deterministic.then(|| env.window(1, l));
    let cache: Option<Vec<Vec<BlockCoupling>>> = match &shared_window {
        Some(w) => {
            let d = labels.dim();
            Some((0..d).map(|i| (0..d).map(|j| couple_blocks(w, &labels, i, j)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?)
        }
        None => None,
    };
    let runs: Vec<CoalescenceRun> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| -> Result<CoalescenceRun> {
            let e = if deterministic { env.clone() } else { env.reseeded(derive_seed(seed, domain::ENV_DRAW, r)) };
            let mut rng = stream(seed, domain::COUPLING, r);
            let p = theta.resolve(&e, 0)?.populations();
            let q = eta.resolve(&e, 0)?.populations();
            let lambda = maximal_label_coupling(&p, &q)?;
            let flat: Vec<f64> = lambda.iter().flatten().copied().collect();
            let idx = sample_index(&flat, rng.gen()).expect("initial coupling has mass");
            let d = labels.dim();
            let (mut x, mut y) = (idx / d, idx % d);
            let mut r_star = (x == y).then_some(0);
            let total = n_blocks * l;
            let window = if deterministic { Vec::new() } else { e.window(1, total) };
            let mut a = Vec::with_capacity(total);
            let mut b = Vec::with_capacity(total);
            for blk in 0..n_blocks {
                let block_window = || -> &[Arc<KrausInstrument>] {
                    match &shared_window {
                        Some(w) => w,
                        None => &window[blk * l..(blk + 1) * l],
                    }
                };
                if x == y {
                    for inst in block_window() {
                        let s = sample_step(inst, x, &mut rng);
                        x = labels.apply(s, x);
                        a.push(s);
                        b.push(s);
                    }
                    y = x;
                } else {
                    let built;
                    let coupling = match &cache {
                        Some(c) => &c[x][y],
                        None => {
                            built = couple_blocks(block_window(), &labels, x, y)?;
                            &built
                        }
                    };
                    let (u, v) = coupling.sample(rng.gen());
                    x = labels.apply_word(&u, x);
                    y = labels.apply_word(&v, y);
                    a.extend_from_slice(&u);
                    b.extend_from_slice(&v);
                    if x == y && r_star.is_none() {
                        r_star = Some(blk + 1);
                    }
                }
            }
            let t_out = r_star.map(|_| a.iter().zip(&b).rposition(|(u, v)| u != v).map_or(1, |k| k + 2));
            Ok(CoalescenceRun { r_star, t_out, a, b })
        })
        .collect::<Result<_>>()?;
    Ok(summarize(runs, l, epsilon, n_blocks))
}

fn summarize(runs: Vec<CoalescenceRun>, l: usize, epsilon: f64, n_blocks: usize) -> CoalescenceStats {
    let n_runs = runs.len();
    let n = n_runs as f64;
    let censored = runs.iter().filter(|r| r.r_star.is_none()).count();
    // censored runs enter the means at the horizon value, a lower bound
    let t: Vec<f64> = runs.iter().map(|r| r.t_out.unwrap_or(n_blocks * l + 1) as f64).collect();
    let mean_t_out = t.iter().sum::<f64>() / n;
    let var = if n > 1.0 { t.iter().map(|v| (v - mean_t_out).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let mean_r_star = runs.iter().map(|r| r.r_star.unwrap_or(n_blocks) as f64).sum::<f64>() / n;
    let tail = (1..=10)
        .map(|r| {
            let f = runs.iter().filter(|x| x.r_star.is_none_or(|s| s > r)).count() as f64 / n;
            (r, f, (f * (1.0 - f) / n).sqrt())
        })
        .collect();
    let p = (1.0 - epsilon).clamp(0.0, 1.0).powi(n_blocks as i32);
    let flagged = censored as f64 > p * n + 4.0 * (n * p * (1.0 - p)).sqrt();
    CoalescenceStats {
        runs,
        l,
        epsilon,
        n_blocks,
        n_runs,
        censored,
        mean_t_out,
        stderr_t_out: (var / n).sqrt(),
        mean_r_star,
        tail,
        flagged,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiscrepancyPoint {
    pub n: usize,
    /// `(1/√n) E|Σ_{k≤n} (δN_k(B) − δN_k(A))|`.
    pub mean: f64,
    pub stderr: f64,
}

/// Admissibility discrepancy of coupled records. Records shorter than
/// `n + m − 1` are extended implicitly: after `T_out` the two records agree,
/// so indices past the last disagreement contribute nothing.
pub fn admissibility_discrepancy(runs: &[CoalescenceRun], b: &Pattern, n_grid: &[usize]) -> Result<Vec<DiscrepancyPoint>> {
    if runs.is_empty() {
        return input("no coupled runs");
    }
    let m = b.len();
    let mut out = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let vals: Vec<f64> = runs
            .iter()
            .map(|r| -> Result<f64> {
                let len = r.a.len();
                let limit = if len >= n + m - 1 {
                    n
                } else {
                    // every window touching a disagreement must lie in the record
                    let last_diff = r.a.iter().zip(&r.b).rposition(|(u, v)| u != v);
                    match (r.t_out, last_diff) {
                        (Some(_), None) => 0,
                        (Some(_), Some(k)) if k + m <= len => (k + 1).min(n),
                        _ => return input(format!("record of length {len} cannot resolve horizon {n}")),
                    }
                };
                let diff = (0..limit).map(|k| b.matches_at(&r.b, k) as i64 - b.matches_at(&r.a, k) as i64).sum::<i64>();
                Ok(diff.unsigned_abs() as f64 / (n as f64).sqrt())
            })
            .collect::<Result<_>>()?;
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let var = if k > 1.0 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
        out.push(DiscrepancyPoint { n, mean, stderr: (var / k).sqrt() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{ComplexMatrix, DensityMatrix};
    use crate::trajectory::exact_cylinder_distribution;

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

    fn amplitude_damping(gamma: f64) -> KrausInstrument {
        let v0 = ComplexMatrix::diagonal_from(&[1.0, (1.0 - gamma).sqrt()]);
        let v1 = ComplexMatrix::from_real_rows(&[&[0.0, gamma.sqrt()], &[0.0, 0.0]]).unwrap();
        KrausInstrument::perfect(2, vec!["0".into(), "1".into()], vec![v0, v1]).unwrap()
    }

    fn noisy(alpha: f64) -> KrausInstrument {
        pair_instrument(2, |k, l| if k == l { 1.0 - alpha } else { 0.0 } + alpha / 2.0)
    }

    #[test]
    fn toy_labels() {
        let m = check_a1(&pair_instrument(2, |_, _| 0.5)).unwrap();
        for a in 0..4 {
            for i in 0..2 {
                assert_eq!(m.apply(a, i), a / 2);
            }
        }
    }

    #[test]
    fn damping_labels() {
        let m = check_a1(&amplitude_damping(0.3)).unwrap();
        assert_eq!(m.maps(), &[vec![0, 1], vec![0, 0]]);
    }

    #[test]
    fn hadamard_fails() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let h = ComplexMatrix::from_real_rows(&[&[s, s], &[s, -s]]).unwrap();
        let inst = KrausInstrument::perfect(2, vec!["h".into()], vec![h]).unwrap();
        assert!(matches!(check_a1(&inst), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn terminal_laws() {
        let env = DisorderProcess::constant(pair_instrument(3, |_, _| 1.0 / 3.0));
        let p = terminal_label_law(&env, 0, 2, 1).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let env = DisorderProcess::constant(amplitude_damping(0.4));
        assert_eq!(terminal_label_law(&env, 0, 0, 1).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn terminal_law_matches_matrix_power() {
        let inst = pair_instrument(3, |k, l| if k == l || k == (l + 1) % 3 { 0.5 } else { 0.0 });
        let env = DisorderProcess::constant(inst);
        let t3 = crate::stationary::label_block_matrix(&env.window(1, 3)).unwrap();
        for i in 0..3 {
            let p = terminal_label_law(&env, 0, i, 3).unwrap();
            for k in 0..3 {
                assert!((p[k] - t3[k][i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn overlap_examples() {
        let toy = DisorderProcess::constant(pair_instrument(2, |_, _| 0.5));
        assert_eq!(overlap_criterion(&toy, 10, 1, 0).unwrap().epsilon, 1.0);
        let cyc = DisorderProcess::constant(pair_instrument(3, |k, l| if k == l || k == (l + 1) % 3 { 0.5 } else { 0.0 }));
        // √q² reproduces q to one ulp
        assert!((overlap_criterion(&cyc, 10, 1, 0).unwrap().epsilon - 0.5).abs() <= 2.0 * f64::EPSILON);
        let nl = DisorderProcess::constant(noisy(0.3));
        assert!(overlap_criterion(&nl, 10, 1, 0).unwrap().epsilon >= 0.3 - 1e-15);
    }

    #[test]
    fn maximal_coupling_examples() {
        let lam = maximal_label_coupling(&[0.7, 0.3], &[0.4, 0.6]).unwrap();
        assert!((lam[0][0] + lam[1][1] - 0.7).abs() < 1e-15);
        assert!((lam[0][0] + lam[0][1] - 0.7).abs() < 1e-15 && (lam[0][1] + lam[1][1] - 0.6).abs() < 1e-15);
        let same = maximal_label_coupling(&[0.2, 0.8], &[0.2, 0.8]).unwrap();
        assert_eq!(same[0][1] + same[1][0], 0.0);
        let disj = maximal_label_coupling(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(disj[0][0] + disj[1][1], 0.0);
        assert!(maximal_label_coupling(&[0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn block_coupling_marginals_match_direct_block_laws() {
        let models = [
            pair_instrument(2, |_, _| 0.5),
            noisy(0.3),
            amplitude_damping(0.6),
            pair_instrument(3, |k, l| if k == l || k == (l + 1) % 3 { 0.5 } else { 0.0 }),
        ];
        for inst in models {
            let d = inst.dim();
            let env = DisorderProcess::constant(inst);
            for l in 1..=3 {
                for i in 0..d {
                    for j in 0..d {
                        let c = build_block_coupling(&env, 0, i, j, l).unwrap();
                        let (mi, mj) = c.marginals();
                        let di = exact_cylinder_distribution(&env, 0, &DensityMatrix::basis(d, i), l).unwrap();
                        let dj = exact_cylinder_distribution(&env, 0, &DensityMatrix::basis(d, j), l).unwrap();
                        for r in 0..mi.len() {
                            assert!((mi[r] - di.probabilities()[r]).abs() < 1e-10);
                            assert!((mj[r] - dj.probabilities()[r]).abs() < 1e-10);
                        }
                        assert!(c.merge_mass >= c.overlap - 1e-12);
                        if i == j {
                            assert_eq!(c.merge_mass, 1.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn toy_coalesces_in_first_block() {
        let env = DisorderProcess::constant(pair_instrument(2, |_, _| 0.5));
        let stats = simulate_coalescence(&env, &InitialState::Basis(0), &InitialState::Basis(1), 1, 1.0, 5, 2000, 3).unwrap();
        for r in &stats.runs {
            assert!(r.t_out.unwrap() <= 2);
            assert!(r.t_out.unwrap() <= r.r_star.unwrap() + 1);
        }
        assert!(!stats.flagged);
    }

    #[test]
    fn merged_runs_stay_merged() {
        let env = DisorderProcess::constant(noisy(0.3));
        let stats = simulate_coalescence(&env, &InitialState::Basis(0), &InitialState::Basis(1), 1, 0.3, 40, 3000, 5).unwrap();
        for r in &stats.runs {
            if let (Some(rs), Some(t)) = (r.r_star, r.t_out) {
                assert!(r.a[rs..] == r.b[rs..]);
                assert!(t <= rs + 1);
            }
        }
        let bound = 1.0 / 0.3 + 1.0;
        assert!(stats.mean_t_out <= bound + 3.0 * stats.stderr_t_out);
        for &(r, f, se) in &stats.tail {
            assert!(f <= 0.7f64.powi(r as i32) + 3.0 * se + 1e-12);
        }
    }

    #[test]
    fn discrepancy_vanishes_for_identical_starts() {
        let env = DisorderProcess::constant(noisy(0.3));
        let stats = simulate_coalescence(&env, &InitialState::Basis(1), &InitialState::Basis(1), 1, 0.3, 10, 200, 2).unwrap();
        let b = Pattern::new(vec![0], 4).unwrap();
        for p in admissibility_discrepancy(&stats.runs, &b, &[5, 100, 2000]).unwrap() {
            assert_eq!(p.mean, 0.0);
        }
    }

    #[test]
    fn toy_discrepancy_bounded() {
        let env = DisorderProcess::constant(pair_instrument(2, |_, _| 0.5));
        let stats = simulate_coalescence(&env, &InitialState::Basis(0), &InitialState::Basis(1), 1, 1.0, 4, 500, 8).unwrap();
        let b = Pattern::new(vec![1, 2], 4).unwrap();
        for p in admissibility_discrepancy(&stats.runs, &b, &[1, 2, 50, 2000]).unwrap() {
            assert!(p.mean <= 2.0 / (p.n as f64).sqrt() + 1e-12);
        }
    }
}
