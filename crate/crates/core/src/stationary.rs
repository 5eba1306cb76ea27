//! Dynamically stationary states, forgetting rates and the group-action
//! rate bound.
//!
//! The stationary state at index `k` is the limit of
//! `x_n = Φ_k ∘ Φ_{k−1} ∘ ⋯ ∘ Φ_{k−n+1}(ρ_*)` with `ρ_* = I/d`. Depths are
//! doubled and `x_n`, `x_{2n}`, `x_{2n+1}` compared in trace norm.

use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::check_a1;
use crate::environment::DisorderProcess;
use crate::error::{input, Error, Result};
use crate::instrument::KrausInstrument;
use crate::linalg::{trace_norm, ComplexMatrix, DensityMatrix};
use crate::rng::{derive_seed, domain};
use crate::trajectory::InitialState;

#[derive(Clone, Debug, Serialize)]
pub struct StationaryStateSolution {
    /// `s(ω)` at the requested index; `None` when the iteration did not settle.
    #[serde(skip)]
    pub state: Option<DensityMatrix>,
    pub back_depth: usize,
    pub cauchy_gap: f64,
    pub converged: bool,
}

fn push_back(env: &DisorderProcess, index: i64, depth: usize) -> ComplexMatrix {
    let d = env.dim();
    let mut x = ComplexMatrix::identity(d).scale(1.0 / d as f64);
    for inst in env.window(index - depth as i64 + 1, depth) {
        x = inst.channel_matrix(&x);
    }
    x
}

/// Backward iteration with doubling depths `1, 2, 4, …` up to
/// `max_back_depth`. Non-convergence is reported, not raised.
pub fn solve_stationary_state(env: &DisorderProcess, origin: i64, tol: f64, max_back_depth: usize) -> Result<StationaryStateSolution> {
    if max_back_depth < 2 {
        return input("max_back_depth must be at least 2");
    }
    let mut n = 1;
    let mut gap = f64::INFINITY;
    while 2 * n <= max_back_depth {
        let a = push_back(env, origin, n);
        let b = push_back(env, origin, 2 * n);
        // the odd depth catches orbits of even period, which (n, 2n) alone misses
        let c = push_back(env, origin, 2 * n + 1);
        gap = trace_norm(&(&b - &a))?.max(trace_norm(&(&c - &b))?);
        if gap <= tol {
            return Ok(StationaryStateSolution {
                state: Some(DensityMatrix::new(b.hermitian_part())?),
                back_depth: n,
                cauchy_gap: gap,
                converged: true,
            });
        }
        n *= 2;
    }
    Ok(StationaryStateSolution { state: None, back_depth: n, cauchy_gap: gap, converged: false })
}

fn stationary_or_fail(env: &DisorderProcess, index: i64) -> Result<DensityMatrix> {
    let sol = solve_stationary_state(env, index, crate::tol::STATIONARY, 4096)?;
    sol.state
        .ok_or_else(|| Error::Numerical(format!("stationary iteration did not converge at index {index} (gap {:.2e})", sol.cauchy_gap)))
}

/// `max_n ‖Φ^{(n)}(s(ω)) − s(θⁿω)‖₁` over `horizons`, with the solver
/// supplied by the caller.
pub fn verify_stationarity_with<F>(env: &DisorderProcess, origin: i64, horizons: &[usize], solver: F) -> Result<f64>
where
    F: Fn(&DisorderProcess, i64) -> Result<DensityMatrix>,
{
    let s0 = solver(env, origin)?;
    let n_max = horizons.iter().copied().max().unwrap_or(0);
    let window = env.window(origin + 1, n_max);
    let mut x = s0.into_matrix();
    let mut worst: f64 = 0.0;
    for (k, inst) in window.iter().enumerate() {
        x = inst.channel_matrix(&x);
        let n = k + 1;
        if horizons.contains(&n) {
            let target = solver(env, origin + n as i64)?;
            worst = worst.max(trace_norm(&(&x - target.matrix()))?);
        }
    }
    Ok(worst)
}

pub fn verify_stationarity(env: &DisorderProcess, origin: i64, horizons: &[usize]) -> Result<f64> {
    verify_stationarity_with(env, origin, horizons, stationary_or_fail)
}

#[derive(Clone, Debug, Serialize)]
pub struct ForgettingEstimate {
    pub n_values: Vec<usize>,
    pub beta_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `(C, r)` from a least-squares fit of `log β̂_n = log C + n log r`.
    pub fitted_rate: Option<(f64, f64)>,
    /// Standard error of the fitted log-slope.
    pub slope_stderr: Option<f64>,
    pub n_env_samples: usize,
    pub solver_failures: usize,
}

/// Monte Carlo estimate of `β_n(ϑ) = E‖Φ^{(n)}_ω(ϑ(ω)) − s(θⁿω)‖₁`.
/// Environment draw `j` uses the seed derived from `(seed, j)`.
pub fn estimate_beta(
    env: &DisorderProcess,
    theta: &InitialState,
    n_values: &[usize],
    n_env_samples: usize,
    seed: u64,
) -> Result<ForgettingEstimate> {
    if n_values.is_empty() || n_env_samples == 0 {
        return input("need at least one horizon and one environment sample");
    }
    let n_max = *n_values.iter().max().unwrap();
    let draws: Vec<Option<Vec<f64>>> = (0..n_env_samples as u64)
        .into_par_iter()
        .map(|j| -> Result<Option<Vec<f64>>> {
            let e = if env.is_deterministic() { env.clone() } else { env.reseeded(derive_seed(seed, domain::ENV_DRAW, j)) };
            let start = theta.resolve(&e, 0)?;
            let mut x = start.into_matrix();
            let mut out = Vec::with_capacity(n_values.len());
            for (k, inst) in e.window(1, n_max).iter().enumerate() {
                x = inst.channel_matrix(&x);
                if n_values.contains(&(k + 1)) {
                    match solve_stationary_state(&e, k as i64 + 1, crate::tol::STATIONARY, 4096)?.state {
                        Some(s) => out.push(trace_norm(&(&x - s.matrix()))?),
                        None => return Ok(None),
                    }
                }
            }
            Ok(Some(out))
        })
        .collect::<Result<_>>()?;
    let failures = draws.iter().filter(|d| d.is_none()).count();
    if failures as f64 > 0.01 * n_env_samples as f64 {
        return Err(Error::Numerical(format!("stationary solver failed on {failures} of {n_env_samples} environment draws")));
    }
    let ok: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    let m = ok.len() as f64;
    // horizon order follows the sorted positions visited above
    let mut visited: Vec<usize> = n_values.to_vec();
    visited.sort_unstable();
    visited.dedup();
    let mut beta_hat = Vec::new();
    let mut stderr = Vec::new();
    for &n in n_values {
        let pos = visited.iter().position(|&v| v == n).unwrap();
        let mean = ok.iter().map(|v| v[pos]).sum::<f64>() / m;
        let var = if m > 1.0 { ok.iter().map(|v| (v[pos] - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
        beta_hat.push(mean.clamp(0.0, 2.0));
        stderr.push((var / m).sqrt());
    }
    let (fitted_rate, slope_stderr) = log_linear_fit(n_values, &beta_hat);
    Ok(ForgettingEstimate {
        n_values: n_values.to_vec(),
        beta_hat,
        stderr,
        fitted_rate,
        slope_stderr,
        n_env_samples,
        solver_failures: failures,
    })
}

/// Least squares on the points with `β̂ > 1e-14`; needs at least three.
fn log_linear_fit(ns: &[usize], beta: &[f64]) -> (Option<(f64, f64)>, Option<f64>) {
    let pts: Vec<(f64, f64)> = ns.iter().zip(beta).filter(|(_, &b)| b > 1e-14).map(|(&n, &b)| (n as f64, b.ln())).collect();
    if pts.len() < 3 {
        return (None, None);
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return (None, None);
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum();
    let se = (rss / (k - 2.0) / sxx).sqrt();
    (Some((icpt.exp(), slope.exp())), Some(se))
}

/// `r_n = 2λ^{⌊n/L⌋} + 2d qⁿ`.
pub fn group_rate_bound(lambda: f64, l: usize, d: usize, q: f64, n: usize) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return input(format!("λ = {lambda} outside (0, 1)"));
    }
    if !(q > 0.0 && q < 1.0) {
        return input(format!("q = {q} outside (0, 1)"));
    }
    if l == 0 || d == 0 {
        return input("L and d must be at least 1");
    }
    Ok(2.0 * lambda.powi((n / l) as i32) + 2.0 * d as f64 * q.powi(n as i32))
}

/// `λ = 1 − dε₀`, required to lie in `(0, 1)`.
pub fn lambda_from_epsilon0(d: usize, eps0: f64) -> Result<f64> {
    let lambda = 1.0 - d as f64 * eps0;
    if !(eps0 > 0.0) || lambda <= 0.0 {
        return input(format!("dε₀ = {} must lie in (0, 1)", d as f64 * eps0));
    }
    Ok(lambda)
}

/// Column-stochastic `T[k][i]`: probability of label `k` after one step from
/// label `i`.
pub fn label_transition_matrix(inst: &KrausInstrument) -> Result<Vec<Vec<f64>>> {
    let labels = check_a1(inst)?;
    let d = inst.dim();
    let mut t = vec![vec![0.0; d]; d];
    for i in 0..d {
        let rho = ComplexMatrix::unit(d, i, i);
        for (a, w) in inst.born_weights(&rho).into_iter().enumerate() {
            t[labels.apply(a, i)][i] += w;
        }
    }
    Ok(t)
}

/// `T_{θ^Lω} ⋯ T_{θω}` for the instruments in `window`.
pub fn label_block_matrix(window: &[std::sync::Arc<KrausInstrument>]) -> Result<Vec<Vec<f64>>> {
    let d = window.first().map(|i| i.dim()).ok_or_else(|| Error::Input("empty window".into()))?;
    let mut acc: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for inst in window {
        let t = label_transition_matrix(inst)?;
        acc = (0..d).map(|i| (0..d).map(|j| (0..d).map(|k| t[i][k] * acc[k][j]).sum()).collect()).collect();
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::DisorderKind;

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

    fn noisy_label(d: usize, alpha: f64) -> KrausInstrument {
        pair_instrument(d, |k, l| if k == l { 1.0 - alpha } else { 0.0 } + alpha / d as f64)
    }

    fn cyclic() -> KrausInstrument {
        pair_instrument(3, |k, l| if k == l || k == (l + 1) % 3 { 0.5 } else { 0.0 })
    }

    fn amplitude_damping(gamma: f64) -> KrausInstrument {
        let v0 = ComplexMatrix::diagonal_from(&[1.0, (1.0 - gamma).sqrt()]);
        let v1 = ComplexMatrix::from_real_rows(&[&[0.0, gamma.sqrt()], &[0.0, 0.0]]).unwrap();
        KrausInstrument::perfect(2, vec!["0".into(), "1".into()], vec![v0, v1]).unwrap()
    }

    #[test]
    fn toy_stationary_state_at_depth_one() {
        let env = DisorderProcess::constant(pair_instrument(2, |_, _| 0.5));
        let sol = solve_stationary_state(&env, 0, 1e-9, 64).unwrap();
        assert!(sol.converged && sol.back_depth == 1);
        assert!(sol.state.unwrap().matrix().max_abs_diff(DensityMatrix::maximally_mixed(2).matrix()) < 1e-15);
        assert!(verify_stationarity(&env, 0, &[1, 2, 3]).unwrap() < 1e-14);
    }

    #[test]
    fn amplitude_damping_settles_in_ground_state() {
        let env = DisorderProcess::constant(amplitude_damping(0.5));
        let sol = solve_stationary_state(&env, 3, 1e-9, 4096).unwrap();
        assert!(sol.converged && sol.cauchy_gap <= 1e-9);
        assert!(sol.state.unwrap().matrix().max_abs_diff(DensityMatrix::basis(2, 0).matrix()) < 1e-9);
    }

    #[test]
    fn replacement_settles_immediately() {
        let env = DisorderProcess::constant(pair_instrument(2, |k, _| if k == 0 { 1.0 } else { 0.0 }));
        let sol = solve_stationary_state(&env, 0, 1e-9, 16).unwrap();
        assert!(sol.state.unwrap().matrix().max_abs_diff(DensityMatrix::basis(2, 0).matrix()) < 1e-15);
    }

    #[test]
    fn non_convergence_is_reported() {
        // swap on span{e0, e1}, e2 fed into e0: I/3 has a period-two orbit
        let v1 = ComplexMatrix::from_real_rows(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]).unwrap();
        let v2 = ComplexMatrix::unit(3, 0, 2);
        let env = DisorderProcess::constant(KrausInstrument::perfect(3, vec!["x".into(), "y".into()], vec![v1, v2]).unwrap());
        let sol = solve_stationary_state(&env, 0, 1e-9, 64).unwrap();
        assert!(!sol.converged && sol.state.is_none());
        assert!((sol.cauchy_gap - 2.0 / 3.0).abs() < 1e-12);
        assert!(solve_stationary_state(&env, 0, 1e-9, 1).is_err());
    }

    #[test]
    fn noisy_label_and_cyclic_residuals() {
        let env = DisorderProcess::constant(noisy_label(2, 0.3));
        assert!(verify_stationarity(&env, 0, &[1, 2, 3, 4, 5]).unwrap() <= 1e-8);
        let env = DisorderProcess::constant(cyclic());
        let sol = solve_stationary_state(&env, 0, 1e-9, 4096).unwrap();
        assert!(sol.state.unwrap().matrix().max_abs_diff(DensityMatrix::maximally_mixed(3).matrix()) < 1e-9);
        assert!(verify_stationarity(&env, 0, &[1, 2, 3, 4, 5]).unwrap() <= 1e-8);
    }

    #[test]
    fn noisy_label_beta_within_closed_form() {
        let alpha = 0.3;
        let env = DisorderProcess::constant(noisy_label(2, alpha));
        let ns: Vec<usize> = (1..=15).collect();
        let est = estimate_beta(&env, &InitialState::Basis(0), &ns, 4, 1).unwrap();
        for (k, &n) in ns.iter().enumerate() {
            // closed form: ‖(1−α)ⁿ(ρ − I/2)‖₁ = (1−α)ⁿ for a basis start
            let oracle = (1.0 - alpha).powi(n as i32);
            assert!((est.beta_hat[k] - oracle).abs() < 1e-12);
            assert!(est.beta_hat[k] <= 2.0 * (1.0 - alpha).powi(n as i32));
        }
        let (_, r) = est.fitted_rate.unwrap();
        assert!((r - 0.7).abs() < 1e-9);
    }

    #[test]
    fn disordered_damping_beta() {
        let env = DisorderProcess::from_fn(DisorderKind::Iid, 4, 2, |pt| amplitude_damping(0.5 + 0.4 * pt.uniform(0)));
        let ns: Vec<usize> = (1..=10).collect();
        let est = estimate_beta(&env, &InitialState::Basis(1), &ns, 200, 3).unwrap();
        for (k, &n) in ns.iter().enumerate() {
            assert!(est.beta_hat[k] <= 2.0 * 0.5f64.powf(n as f64 / 2.0) + 3.0 * est.stderr[k]);
        }
    }

    #[test]
    fn group_rate_examples() {
        let eps0 = 0.2f64.powi(2);
        let lambda = lambda_from_epsilon0(3, eps0).unwrap();
        assert!((lambda - 0.88).abs() < 1e-15);
        let q = 0.9;
        let r4 = group_rate_bound(lambda, 2, 3, q, 4).unwrap();
        assert!((r4 - (2.0 * 0.88f64.powi(2) + 6.0 * q.powi(4))).abs() < 1e-14);
        let mut prev = f64::INFINITY;
        for m in 1..30 {
            let r = group_rate_bound(lambda, 2, 3, q, 2 * m).unwrap();
            assert!(r < prev);
            prev = r;
        }
        assert!(lambda_from_epsilon0(3, 0.34).is_err());
        assert!(group_rate_bound(0.0, 1, 2, 0.5, 3).is_err());
    }

    #[test]
    fn transition_matrices() {
        let q = label_transition_matrix(&cyclic()).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                let expect = if k == l || k == (l + 1) % 3 { 0.5 } else { 0.0 };
                assert!((q[k][l] - expect).abs() <= 2.0 * f64::EPSILON);
            }
        }
        let t = label_transition_matrix(&pair_instrument(3, |_, _| 1.0 / 3.0)).unwrap();
        assert!(t.iter().flatten().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn diagonal_sector_matches_label_chain() {
        for inst in [cyclic(), noisy_label(3, 0.4), amplitude_damping(0.3)] {
            let d = inst.dim();
            let t = label_transition_matrix(&inst).unwrap();
            let x: Vec<f64> = (0..d).map(|i| (i + 1) as f64).collect();
            let out = inst.channel_matrix(&ComplexMatrix::diagonal_from(&x));
            for k in 0..d {
                let tx: f64 = (0..d).map(|i| t[k][i] * x[i]).sum();
                assert!((out[(k, k)].re - tx).abs() < 1e-12);
            }
            assert!(out.dephased().max_abs_diff(&out) < 1e-12);
        }
    }
}
