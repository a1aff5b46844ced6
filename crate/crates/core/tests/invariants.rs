//! Property tests for structural invariants.

use num_complex::Complex64;
use proptest::prelude::*;
use tcsl_core::analysis::{born_statistics, classify_outcome, linear_fit};
use tcsl_core::dynamics::{step_sde, NoisePath, NoiseSource};
use tcsl_core::master::{decay_solution, evolve, CollapseTerm, MatrixOperator};
use tcsl_core::operators::{count_constraints, hamiltonian_single, translate_state, PoincareParams};
use tcsl_core::{make_grid, Basis, DensityMatrix, OperatorSpec, WaveFunction};

fn random_state(seed: &[(f64, f64)]) -> WaveFunction {
    let grid = make_grid(8, 8, 0.6, 0.9, 0.0, 0.0).unwrap();
    let comps: Vec<(Vec<usize>, Complex64)> = seed
        .iter()
        .enumerate()
        .map(|(i, (re, im))| (vec![(3 * i + 1) % 8, (5 * i + 2) % 8], Complex64::new(*re, *im)))
        .collect();
    WaveFunction::superposition(grid, 1, Basis::MomentumEnergy, &comps).unwrap()
}

fn amplitudes() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 2..6)
        .prop_filter("non-zero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 0.1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn boosts_preserve_mass_shell_and_compose(p in -5.0..5.0f64, e in -5.0..5.0f64, a in -1.0..1.0f64, b in -1.0..1.0f64) {
        let (p1, e1) = PoincareParams::boost(a).boost_momentum(p, e);
        prop_assert!(((p1 * p1 - e1 * e1) - (p * p - e * e)).abs() < 1e-9 * (1.0 + p * p + e * e));
        let (p2, e2) = PoincareParams::boost(b).boost_momentum(p1, e1);
        let (p3, e3) = PoincareParams::boost(a + b).boost_momentum(p, e);
        prop_assert!((p2 - p3).abs() < 1e-9 * (1.0 + p.abs() + e.abs()));
        prop_assert!((e2 - e3).abs() < 1e-9 * (1.0 + p.abs() + e.abs()));
    }

    #[test]
    fn boosts_preserve_intervals(x1 in -5.0..5.0f64, t1 in -5.0..5.0f64, x2 in -5.0..5.0f64, t2 in -5.0..5.0f64, th in -1.5..1.5f64) {
        let b = PoincareParams::boost(th);
        let (y1, s1) = b.boost_event(x1, t1);
        let (y2, s2) = b.boost_event(x2, t2);
        let before = (x1 - x2).powi(2) - (t1 - t2).powi(2);
        let after = (y1 - y2).powi(2) - (s1 - s2).powi(2);
        prop_assert!((before - after).abs() < 1e-9 * (1.0 + before.abs() + 100.0));
    }

    #[test]
    fn velocities_add_relativistically(v in -0.95..0.95f64, w in -0.95..0.95f64) {
        // Boosting a particle with velocity v = p/E by rapidity atanh(w).
        let (p, e) = (v, 1.0);
        let (p1, e1) = PoincareParams::boost(w.atanh()).boost_momentum(p, e);
        prop_assert!((p1 / e1 - (v - w) / (1.0 - v * w)).abs() < 1e-12);
        prop_assert!(p1 / e1 > -1.0 && p1 / e1 < 1.0);
    }

    #[test]
    fn basis_changes_and_free_steps_are_unitary(amps in amplitudes(), ds in 0.0..3.0f64) {
        let psi = random_state(&amps);
        prop_assert!((psi.norm_sq() - 1.0).abs() < 1e-12);
        let pt = psi.to_position_time().unwrap();
        prop_assert!((pt.norm_sq() - 1.0).abs() < 1e-12);
        let back = pt.to_momentum_energy().unwrap();
        let gap = (back.amplitudes() - psi.amplitudes()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(gap < 1e-12);
        let h = hamiltonian_single(0.7).unwrap();
        let out = tcsl_core::dynamics::step_deterministic(&psi, &h, ds).unwrap();
        prop_assert!((out.norm_sq() - 1.0).abs() < 1e-12);
        prop_assert!((out.expectation(&OperatorSpec::energy(0)).unwrap() - psi.expectation(&OperatorSpec::energy(0)).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn translations_preserve_momentum_energy_density(amps in amplitudes(), a in -3.0..3.0f64, tau in -3.0..3.0f64) {
        let psi = random_state(&amps);
        let moved = translate_state(&psi, a, tau).unwrap();
        let gap = (moved.density() - psi.density()).iter().map(|d| d.abs()).fold(0.0, f64::max);
        prop_assert!(gap < 1e-12);
    }

    #[test]
    fn stochastic_steps_return_normalised_states(amps in amplitudes(), seed in 0u64..1000, lambda in 0.0..0.2f64) {
        let psi = random_state(&amps);
        let gens = [OperatorSpec::collapse_mass(0).with_lambda(lambda), OperatorSpec::time(0).with_lambda(lambda)];
        let ds = 1e-3;
        let path = NoisePath::generate(NoiseSource::new(seed, 0), ds, &[lambda, lambda], 1);
        match step_sde(&psi, None, &gens, &path.increments[0], ds) {
            Ok(out) => {
                prop_assert!((out.state.norm_sq() - 1.0).abs() < 1e-12);
                prop_assert_eq!(out.state.basis(), Basis::MomentumEnergy);
            }
            Err(tcsl_core::Error::StepRejected { suggested, .. }) => prop_assert!(suggested < ds),
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn master_evolution_preserves_trace_and_positivity(amps in amplitudes(), lambda in 0.0..2.0f64, s in 0.0..2.0f64) {
        let v: Vec<Complex64> = amps.iter().map(|(a, b)| Complex64::new(*a, *b)).collect();
        let labels = (0..v.len()).map(|i| i.to_string()).collect();
        let rho = DensityMatrix::from_pure(labels, &v).unwrap();
        let diag: Vec<f64> = (0..v.len()).map(|i| i as f64 * 0.7 - 1.0).collect();
        let terms = [CollapseTerm::new(MatrixOperator::diagonal(&diag), lambda)];
        let closed = decay_solution(&rho, None, &terms, s).unwrap();
        prop_assert!((closed.trace().re - 1.0).abs() < 1e-12);
        prop_assert!(closed.min_eigenvalue() > -1e-12);
        prop_assert!(closed.purity() <= rho.purity() + 1e-12);
        let numeric = evolve(&rho, None, &terms, s, 200).unwrap();
        prop_assert!(numeric.max_abs_diff(&closed).unwrap() < 1e-8);
    }

    #[test]
    fn constraint_count_matches_the_formula(n in 2usize..40) {
        let (pairs, coords, fixed) = count_constraints(n).unwrap();
        prop_assert_eq!(pairs, n * (n - 1) / 2);
        prop_assert_eq!(coords, 2 * (n - 1));
        prop_assert_eq!(fixed, n >= 4);
    }

    #[test]
    fn line_fit_recovers_exact_lines(slope in -10.0..10.0f64, icpt in -10.0..10.0f64) {
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.3 - 1.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + icpt).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.intercept - icpt).abs() < 1e-9);
    }

    #[test]
    fn born_counts_partition_the_outcomes(outcomes in prop::collection::vec(prop::option::of(0usize..3), 1..200)) {
        match born_statistics(&outcomes, &[0.2, 0.3, 0.5]) {
            Ok(r) => {
                prop_assert_eq!(r.total, outcomes.len());
                prop_assert_eq!(r.counts.iter().sum::<usize>() + r.uncollapsed, outcomes.len());
            }
            Err(_) => prop_assert!(outcomes.iter().all(|o| o.is_none())),
        }
    }

    #[test]
    fn classification_needs_a_small_variance(mean in -3.0..3.0f64, var in 0.0..1.0f64) {
        let eigs = [-2.0, 0.0, 2.0];
        if let Some(i) = classify_outcome(mean, var, &eigs, 2.0) {
            prop_assert!(var <= 1e-3 * 4.0 + 1e-15);
            prop_assert!((eigs[i] - mean).abs() <= 1.0);
        }
    }
}
