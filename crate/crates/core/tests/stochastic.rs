use std::f64::consts::PI;

use num_complex::Complex64;
use tcsl_core::dynamics::{
    run_trajectory, step_deterministic, step_sde, CoherencePair, CollapseSystem, NoiseKind, NoisePath, NoiseSource,
    RunConfig,
};
use tcsl_core::master::{evolve, CollapseTerm, MatrixOperator};
use tcsl_core::operators::hamiltonian_single;
use tcsl_core::{make_grid, Basis, DensityMatrix, Error, GridSpec, OperatorSpec, WaveFunction};

/// 4x4 lattice with `dp = dE = 1`.
fn small_grid() -> GridSpec {
    make_grid(4, 4, PI / 2.0, PI / 2.0, 0.0, 0.0).unwrap()
}

/// Superposition of `(p, E) = (1, 0)` and `(0, 1)`, eigenvalues `+1` and `-1`.
fn two_level(c: f64) -> WaveFunction {
    WaveFunction::superposition(
        small_grid(),
        1,
        Basis::MomentumEnergy,
        &[
            (vec![3, 2], Complex64::new(c.sqrt(), 0.0)),
            (vec![2, 3], Complex64::new((1.0 - c).sqrt(), 0.0)),
        ],
    )
    .unwrap()
}

fn mass(lambda: f64) -> OperatorSpec {
    OperatorSpec::collapse_mass(0).with_lambda(lambda)
}

#[test]
fn noise_paths_are_reproducible_and_scaled() {
    let src = NoiseSource::new(42, 7);
    let a = NoisePath::generate(src, 0.01, &[2.0, 0.5], 20_000);
    let b = NoisePath::generate(src, 0.01, &[2.0, 0.5], 20_000);
    assert_eq!(a, b);
    assert_ne!(a, NoisePath::generate(NoiseSource::new(42, 8), 0.01, &[2.0, 0.5], 20_000));
    for (i, lambda) in [2.0, 0.5].into_iter().enumerate() {
        let n = a.increments.len() as f64;
        let mean = a.increments.iter().map(|v| v[i]).sum::<f64>() / n;
        let var = a.increments.iter().map(|v| v[i] * v[i]).sum::<f64>() / n;
        let target = lambda * 0.01;
        assert!(mean.abs() < 4.0 * (target / n).sqrt());
        assert!((var - target).abs() < 0.05 * target, "{var} vs {target}");
    }
    let neg = a.negated();
    assert_eq!(neg.increments[3][1], -a.increments[3][1]);
    assert_eq!(neg.source, src.negated());
}

#[test]
fn rademacher_increments_have_fixed_magnitude() {
    let src = NoiseSource::new(1, 0).with_kind(NoiseKind::Rademacher);
    let p = NoisePath::generate(src, 0.04, &[1.0], 1000);
    assert!(p.increments.iter().all(|v| (v[0].abs() - 0.2).abs() < 1e-15));
    let ups = p.increments.iter().filter(|v| v[0] > 0.0).count();
    assert!((400..600).contains(&ups));
}

#[test]
fn zero_strength_step_is_the_free_step() {
    let grid = make_grid(16, 16, 0.8, 0.8, 0.0, 0.0).unwrap();
    let psi = WaveFunction::from_fn(grid, 1, Basis::PositionTime, |c| {
        Complex64::new((-(c[0] * c[0] + c[1] * c[1]) / 2.0).exp(), 0.0)
    })
    .unwrap()
    .to_momentum_energy()
    .unwrap();
    let h = hamiltonian_single(1.3).unwrap();
    let a = step_sde(&psi, Some(&h), &[mass(0.0)], &[0.0], 0.05).unwrap().state;
    let b = step_deterministic(&psi, &h, 0.05).unwrap();
    let gap = (a.amplitudes() - b.amplitudes()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(gap < 1e-14, "{gap:e}");
}

#[test]
fn steps_keep_unit_norm_and_reject_large_ds() {
    let psi = two_level(0.5);
    let out = step_sde(&psi, None, &[mass(1.0)], &[0.1], 0.01).unwrap();
    assert!((out.state.norm_sq() - 1.0).abs() < 1e-12);
    match step_sde(&psi, None, &[mass(1.0)], &[0.1], 0.5) {
        Err(Error::StepRejected { product, suggested, .. }) => {
            assert!((product - 0.5).abs() < 1e-12);
            assert!((suggested - 0.1).abs() < 1e-12);
        }
        other => panic!("expected a rejected step, got {other:?}"),
    }
}

#[test]
fn run_refines_oversized_steps() {
    let psi = two_level(0.5);
    let cfg = RunConfig::new(1.0, 0.25, 1);
    let rec = run_trajectory(&psi, None, &[mass(1.0)], &cfg, 3, 0).unwrap();
    assert!(rec.refined_steps > 0);
    assert_eq!(rec.samples.len(), 5);
    assert!(rec.samples.iter().all(|s| s.norm_error < 1e-12));
}

#[test]
fn sampling_schedule_includes_the_last_step() {
    let psi = two_level(0.3);
    let cfg = RunConfig::new(1.0, 0.01, 30);
    let rec = run_trajectory(&psi, None, &[mass(1.0)], &cfg, 3, 0).unwrap();
    let s = rec.s_values();
    assert_eq!(s.len(), 5);
    assert!((s[0] + 0.5).abs() < 1e-12);
    assert!((s[4] - 0.5).abs() < 1e-9);
    assert!(RunConfig::new(1.0, 0.3, 1).n_steps().is_err());
}

#[test]
fn antithetic_norm_drift_is_second_order() {
    let psi = WaveFunction::superposition(
        small_grid(),
        1,
        Basis::MomentumEnergy,
        &[
            (vec![3, 2], Complex64::new(0.6, 0.0)),
            (vec![2, 3], Complex64::new(0.0, 0.64)),
            (vec![0, 1], Complex64::new(0.48, 0.0)),
        ],
    )
    .unwrap();
    let lambda = 0.5;
    let (mean, var) = psi.moments(&mass(lambda)).unwrap();
    let fourth: f64 = psi
        .density()
        .indexed_iter()
        .map(|(i, w)| {
            let p = small_grid().p(i[0]);
            let e = small_grid().e(i[1]);
            w * (p * p - e * e - mean).powi(4)
        })
        .sum::<f64>()
        * small_grid().cell(Basis::MomentumEnergy);
    assert!(var > 0.0);
    let system = CollapseSystem::new(small_grid(), 1, None, &[mass(lambda)]).unwrap();
    for ds in [1e-3, 1e-4] {
        let db = (lambda * ds).sqrt();
        let up = system.step(&psi, &[db], ds).unwrap().norm_drift;
        let down = system.step(&psi, &[-db], ds).unwrap().norm_drift;
        // Leading term of the exponential factor averaged over both signs.
        let expected = -4.0 / 3.0 * (lambda * ds).powi(2) * fourth;
        let got = 0.5 * (up + down);
        assert!((got - expected).abs() < 0.02 * expected.abs(), "ds {ds}: {got:e} vs {expected:e}");
    }
}

#[test]
fn ensemble_density_matrix_follows_the_master_equation() {
    let lambda = 1.0;
    let psi = two_level(0.3);
    let mut cfg = RunConfig::new(0.5, 0.005, 20);
    cfg.coherences = vec![CoherencePair {
        basis: Basis::MomentumEnergy,
        a: vec![3, 2],
        b: vec![2, 3],
    }];
    let n = 800;
    let mut acc = [Complex64::new(0.0, 0.0); 6];
    let mut pop = 0.0;
    for k in 0..n {
        let rec = run_trajectory(&psi, None, &[mass(lambda)], &cfg, 9, k).unwrap();
        for (slot, s) in acc.iter_mut().zip(&rec.samples) {
            *slot += Complex64::new(s.coherences[0][0], s.coherences[0][1]) / n as f64;
        }
        let last = rec.samples.last().unwrap();
        pop += (last.generator_mean[0] + 1.0) / 2.0 / n as f64;
    }
    let rho0 = DensityMatrix::from_pure(
        vec!["+1".into(), "-1".into()],
        &[Complex64::new(0.3f64.sqrt(), 0.0), Complex64::new(0.7f64.sqrt(), 0.0)],
    )
    .unwrap();
    let term = [CollapseTerm::new(MatrixOperator::diagonal(&[1.0, -1.0]), lambda)];
    for (i, got) in acc.iter().enumerate() {
        let s = 0.1 * i as f64;
        let rho = if i == 0 { rho0.clone() } else { evolve(&rho0, None, &term, s, 100).unwrap() };
        let want = rho.get(0, 1);
        assert!((got - want).norm() < 0.05 * rho0.get(0, 1).norm(), "s = {s}: {got} vs {want}");
    }
    // Populations are martingales.
    assert!((pop - 0.3).abs() < 0.04, "{pop}");
}

#[test]
fn collapse_reaches_an_eigenstate_with_born_weights() {
    let psi = two_level(0.25);
    let cfg = RunConfig::new(6.25, 0.025, 250);
    let n = 600;
    let mut plus = 0;
    for k in 0..n {
        let rec = run_trajectory(&psi, None, &[mass(1.0)], &cfg, 77, k).unwrap();
        let last = rec.samples.last().unwrap();
        assert!(last.generator_var[0] < 1e-3);
        if last.generator_mean[0] > 0.0 {
            plus += 1;
        }
    }
    let f = plus as f64 / n as f64;
    let se = (0.25f64 * 0.75 / n as f64).sqrt();
    assert!((f - 0.25).abs() < 4.0 * se, "{f}");
}

#[test]
fn sign_crossings_track_the_side_of_the_mean() {
    // <A> starts at -0.4; trajectories that end near +1 crossed an odd number of times.
    let psi = two_level(0.3);
    let cfg = RunConfig::new(4.0, 0.02, 200);
    let mut odd = 0;
    for k in 0..60 {
        let rec = run_trajectory(&psi, None, &[mass(1.0)], &cfg, 5, k).unwrap();
        let last = rec.samples.last().unwrap();
        let n = last.sign_crossings[0];
        assert_eq!(n % 2 == 1, last.generator_mean[0] > 0.0, "trajectory {k}: {n} crossings");
        assert_eq!(last.refined_steps, rec.refined_steps);
        odd += n % 2;
    }
    assert!(odd > 0);
}
