//! Randomized invariant suites, 1000 cases per zoo model.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use qtraj::coupling::{build_block_coupling, check_a1_env, simulate_coalescence};
use qtraj::instrument::{povm_cylinder_element, ReferenceState};
use qtraj::linalg::{projective_distance, trace_norm, ComplexMatrix, DensityMatrix, C64};
use qtraj::trajectory::{exact_cylinder_distribution, run_window, InitialState};
use qtraj::zoo::{Model, MODEL_NAMES};
use qtraj::{tol, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: u32 = 1000;

fn models() -> Vec<Model> {
    MODEL_NAMES.iter().map(|n| Model::named(n, 11).unwrap()).collect()
}

fn a1_models() -> Vec<Model> {
    models().into_iter().filter(|m| check_a1_env(&m.process, 32, 5).is_ok()).collect()
}

/// Runs `body` on `CASES` random `(environment seed, index, rng seed)` triples per model.
fn for_each_model(models: Vec<Model>, cases: u32, body: impl Fn(&Model, u64, i64, &mut ChaCha8Rng) -> Result<(), TestCaseError>) {
    for m in &models {
        let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
        let strat = (any::<u64>(), -1000i64..1000, any::<u64>());
        runner
            .run(&strat, |(env_seed, origin, rng_seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
                body(m, env_seed, origin, &mut rng)
            })
            .unwrap_or_else(|e| panic!("{}: {e}", m.sheet.model));
    }
}

fn fail(e: Error) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

fn random_word(n_outcomes: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..n_outcomes)).collect()
}

#[test]
fn instruments_validate_at_every_environment_point() {
    for_each_model(models(), CASES, |m, s, n, _| {
        let inst = m.process.reseeded(s).instrument_at(n);
        let r = inst.validate();
        prop_assert!(r.passed, "Σ E_a deviates from I by {:.3e}", r.max_deviation);
        for a in 0..inst.n_outcomes() {
            let e = inst.effect(a);
            prop_assert!(e.hermitian_deviation() <= tol::HERM);
            prop_assert!(e.min_eigenvalue() >= -tol::PSD);
        }
        Ok(())
    });
}

#[test]
fn born_probabilities_match_povm_elements() {
    for_each_model(models(), CASES, |m, s, n, rng| {
        let env = m.process.reseeded(s);
        let rho = DensityMatrix::random_mixed(env.dim(), rng);
        let inst = env.instrument_at(n);
        let p = inst.outcome_probabilities(&rho);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= tol::TRACE);
        for (a, pa) in p.iter().enumerate() {
            let e = povm_cylinder_element(std::slice::from_ref(&inst), &[a]).map_err(fail)?;
            prop_assert!((e.trace_product(rho.matrix()).re - pa).abs() <= 1e-10);
        }
        Ok(())
    });
}

#[test]
fn posterior_chain_rule() {
    let reference = |d| ReferenceState::maximally_mixed(d);
    for_each_model(models(), CASES, |m, s, n, rng| {
        let env = m.process.reseeded(s);
        let len = rng.gen_range(1..=4);
        let window = env.window(n + 1, len);
        let rho = DensityMatrix::random_mixed(env.dim(), rng);
        // a word that occurs with positive probability, and an arbitrary one
        let (sampled, _) = run_window(&window, &rho, &reference(env.dim()), false, rng).map_err(fail)?;
        let arbitrary = random_word(window[0].n_outcomes(), len, rng);
        for w in [sampled, arbitrary] {
            let mut state = rho.clone();
            let mut sequential = 1.0;
            for (inst, &a) in window.iter().zip(&w) {
                sequential *= inst.outcome_probabilities(&state)[a];
                state = inst.posterior(a, &state, &reference(env.dim())).map_err(fail)?;
            }
            let mut direct = rho.matrix().clone();
            for (inst, &a) in window.iter().zip(&w) {
                direct = inst.apply_selective(a, &direct).map_err(fail)?;
            }
            let povm = povm_cylinder_element(&window, &w).map_err(fail)?.trace_product(rho.matrix()).re;
            prop_assert!((sequential - direct.trace().re).abs() <= 1e-10, "{sequential} vs {}", direct.trace().re);
            prop_assert!((povm - direct.trace().re).abs() <= 1e-10);
        }
        Ok(())
    });
}

#[test]
fn mixture_decomposition_for_basis_preserving_models() {
    let models = a1_models();
    assert!(models.len() >= 10, "only {} models passed the basis-ray check", models.len());
    for_each_model(models, CASES, |m, s, n, rng| {
        let env = m.process.reseeded(s);
        let d = env.dim();
        let rho = DensityMatrix::random_mixed(d, rng);
        let populations = rho.populations();
        let k = env.instrument_at(n + 1).n_outcomes();
        let max_len = (1..=4).take_while(|&l| k.pow(l as u32) <= 256).last().unwrap_or(1);
        let len = rng.gen_range(1..=max_len);
        let mixed = exact_cylinder_distribution(&env, n, &rho, len).map_err(fail)?;
        let from_basis: Vec<_> = (0..d)
            .map(|i| exact_cylinder_distribution(&env, n, &DensityMatrix::basis(d, i), len))
            .collect::<Result<_, _>>()
            .map_err(fail)?;
        for (r, p) in mixed.probabilities().iter().enumerate() {
            let q: f64 = populations.iter().zip(&from_basis).map(|(a, law)| a * law.probabilities()[r]).sum();
            prop_assert!((p - q).abs() <= 1e-10, "word {:?}: {p} vs {q}", mixed.word(r));
        }
        Ok(())
    });
}

#[test]
fn block_coupling_marginals_reproduce_block_laws() {
    for_each_model(a1_models(), CASES, |m, s, n, rng| {
        let env = m.process.reseeded(s);
        let d = env.dim();
        let l = m.sheet.l.clamp(1, 3);
        let (i, j) = (rng.gen_range(0..d), rng.gen_range(0..d));
        let c = build_block_coupling(&env, n, i, j, l).map_err(fail)?;
        let (mi, mj) = c.marginals();
        let law_i = exact_cylinder_distribution(&env, n, &DensityMatrix::basis(d, i), l).map_err(fail)?;
        let law_j = exact_cylinder_distribution(&env, n, &DensityMatrix::basis(d, j), l).map_err(fail)?;
        for r in 0..law_i.len() {
            prop_assert!((mi[r] - law_i.probabilities()[r]).abs() <= 1e-10);
            prop_assert!((mj[r] - law_j.probabilities()[r]).abs() <= 1e-10);
        }
        Ok(())
    });
}

#[test]
fn once_merged_outcomes_stay_merged() {
    for_each_model(a1_models(), CASES, |m, s, _, rng| {
        let d = m.sheet.dim;
        let (i, j) = (rng.gen_range(0..d), rng.gen_range(0..d));
        let stats = simulate_coalescence(
            &m.process.reseeded(s),
            &InitialState::Basis(i),
            &InitialState::Basis(j),
            m.sheet.l.clamp(1, 3),
            m.sheet.epsilon,
            12,
            2,
            rng.gen(),
        )
        .map_err(fail)?;
        for run in &stats.runs {
            prop_assert_eq!(run.a.len(), run.b.len());
            if let Some(t) = run.t_out {
                prop_assert!(t >= 1);
                prop_assert!(run.a[t - 1..] == run.b[t - 1..], "records differ after T_out = {}", t);
                if t >= 2 {
                    prop_assert_ne!(run.a[t - 2], run.b[t - 2]);
                }
            }
        }
        Ok(())
    });
}

fn random_matrix(d: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(d, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

#[test]
fn trace_norm_and_projective_metric_properties() {
    for_each_model(models(), CASES, |m, s, n, rng| {
        let d = m.sheet.dim;
        let (a, b, c) = (random_matrix(d, rng), random_matrix(d, rng), random_matrix(d, rng));
        let t = |x: &ComplexMatrix| trace_norm(x).unwrap();
        let lam: f64 = rng.gen_range(-3.0..3.0);
        prop_assert!(t(&(&a + &b)) <= t(&a) + t(&b) + 1e-10);
        prop_assert!((t(&a.scale(lam)) - lam.abs() * t(&a)).abs() <= 1e-10 * (1.0 + t(&a)));
        prop_assert!((t(&a.adjoint()) - t(&a)).abs() <= 1e-10);
        prop_assert!(t(&(&a - &c)) <= t(&(&a - &b)) + t(&(&b - &c)) + 1e-10);

        // the instrument's channel contracts the trace distance
        let inst = m.process.reseeded(s).instrument_at(n);
        let (rho, sigma) = (DensityMatrix::random_mixed(d, rng), DensityMatrix::random_mixed(d, rng));
        let diff = rho.matrix() - sigma.matrix();
        prop_assert!(t(&inst.channel_matrix(&diff)) <= t(&diff) + 1e-10);

        let (x, y) = (inst.apply_channel(&rho), inst.apply_channel(&sigma));
        let dxy = projective_distance(&x, &y);
        prop_assert!(projective_distance(&x, &x) <= 1e-9);
        prop_assert!((dxy - projective_distance(&y, &x)).abs() <= 1e-9);
        prop_assert!(0.5 * t(&(x.matrix() - y.matrix())) <= dxy + 1e-9 && dxy <= 1.0);
        Ok(())
    });
}
