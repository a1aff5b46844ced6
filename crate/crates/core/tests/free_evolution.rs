use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use num_complex::Complex64;
use tcsl_core::dynamics::step_deterministic;
use tcsl_core::operators::{hamiltonian_multi, hamiltonian_single, translate_state};
use tcsl_core::oracles::{gaussian_state, GaussianParams};
use tcsl_core::{make_grid, Basis, OperatorSpec, WaveFunction};

fn packet() -> GaussianParams {
    GaussianParams {
        sigma_x: 1.1,
        sigma_t: 0.9,
        x_bar: -0.4,
        t_bar: 0.7,
        p_bar: -0.5,
        e_bar: 1.2,
        mass: 1.5,
    }
}

fn grid() -> tcsl_core::GridSpec {
    make_grid(64, 64, 0.5, 0.5, 0.0, 0.0).unwrap().with_momentum_centre(-0.5, 1.2)
}

#[test]
fn lattice_gaussian_matches_momentum_energy_closed_form() {
    let g = packet();
    let grid = grid();
    let psi = gaussian_state(&grid, &[g], 0.4).unwrap();
    for j in (0..64).step_by(5) {
        for k in (0..64).step_by(7) {
            let exact = g.momentum_energy_amplitude(grid.p(j), grid.e(k), 0.4);
            assert_abs_diff_eq!((psi.amplitudes()[[j, k]] - exact).norm(), 0.0, epsilon = 1e-12);
        }
    }
}

#[test]
fn evolution_tracks_the_position_time_closed_form_at_several_s() {
    let g = packet();
    let grid = grid();
    let h = hamiltonian_single(g.mass).unwrap();
    let mut psi = gaussian_state(&grid, &[g], -2.0).unwrap();
    let ds = 0.25;
    for step in 1..=16 {
        psi = step_deterministic(&psi, &h, ds).unwrap();
        let s = -2.0 + ds * step as f64;
        if step % 4 == 0 {
            let pt = psi.to_position_time().unwrap();
            let mut worst = 0.0f64;
            for j in 0..64 {
                for k in 0..64 {
                    let exact = g.position_time_amplitude(grid.x(j), grid.t(k), s);
                    worst = worst.max((pt.amplitudes()[[j, k]] - exact).norm());
                }
            }
            assert!(worst < 1e-8, "s = {s}: max error {worst:e}");
        }
    }
}

#[test]
fn deterministic_steps_compose_and_preserve_norm() {
    let g = packet();
    let h = hamiltonian_single(g.mass).unwrap();
    let psi = gaussian_state(&grid(), &[g], 0.0).unwrap();
    let one = step_deterministic(&psi, &h, 1.0).unwrap();
    let two = step_deterministic(&step_deterministic(&psi, &h, 0.3).unwrap(), &h, 0.7).unwrap();
    let gap = (one.amplitudes() - two.amplitudes()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(gap < 1e-13);
    assert_abs_diff_eq!(one.norm_sq(), 1.0, epsilon = 1e-12);
}

#[test]
fn spreading_law_for_both_axes() {
    let g = packet();
    let h = hamiltonian_single(g.mass).unwrap();
    let psi = gaussian_state(&grid(), &[g], 0.0).unwrap();
    for s in [0.5, 1.5, 3.0] {
        let pt = step_deterministic(&psi, &h, s).unwrap().to_position_time().unwrap();
        let k = s / (2.0 * g.mass);
        let vx = g.sigma_x.powi(2) + (k / g.sigma_x).powi(2);
        let vt = g.sigma_t.powi(2) + (k / g.sigma_t).powi(2);
        assert_abs_diff_eq!(pt.variance(&OperatorSpec::position(0)).unwrap(), vx, epsilon = 1e-8);
        assert_abs_diff_eq!(pt.variance(&OperatorSpec::time(0)).unwrap(), vt, epsilon = 1e-8);
        let (cx, ct) = g.centre(s);
        assert_abs_diff_eq!(pt.expectation(&OperatorSpec::position(0)).unwrap(), cx, epsilon = 1e-8);
        assert_abs_diff_eq!(pt.expectation(&OperatorSpec::time(0)).unwrap(), ct, epsilon = 1e-8);
    }
}

#[test]
fn two_free_particles_evolve_independently() {
    let a = packet();
    let b = GaussianParams {
        x_bar: 0.8,
        p_bar: 0.3,
        mass: 0.7,
        ..packet()
    };
    let grid = make_grid(16, 16, 1.0, 1.0, 0.0, 0.0).unwrap().with_momentum_centre(0.0, 1.2);
    let h = hamiltonian_multi(&[a.mass, b.mass]).unwrap();
    let pair = gaussian_state(&grid, &[a, b], 0.0).unwrap();
    let out = step_deterministic(&pair, &h, 0.8).unwrap();
    let expected = WaveFunction::product(&[
        step_deterministic(&gaussian_state(&grid, &[a], 0.0).unwrap(), &hamiltonian_single(a.mass).unwrap(), 0.8)
            .unwrap(),
        step_deterministic(&gaussian_state(&grid, &[b], 0.0).unwrap(), &hamiltonian_single(b.mass).unwrap(), 0.8)
            .unwrap(),
    ])
    .unwrap();
    let gap = (out.amplitudes() - expected.amplitudes()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(gap < 1e-12);
}

#[test]
fn translation_moves_the_density() {
    let g = packet();
    let psi = gaussian_state(&grid(), &[g], 0.0).unwrap();
    let moved = translate_state(&psi, 1.5, -2.0).unwrap().to_position_time().unwrap();
    let x = moved.expectation(&OperatorSpec::position(0)).unwrap();
    let t = moved.expectation(&OperatorSpec::time(0)).unwrap();
    assert_abs_diff_eq!(x, g.x_bar + 1.5, epsilon = 1e-9);
    assert_abs_diff_eq!(t, g.t_bar - 2.0, epsilon = 1e-9);
}

#[test]
fn basis_round_trip_is_unitary() {
    let grid = make_grid(8, 16, 0.7, 0.3, 0.5, -1.0).unwrap();
    let psi = WaveFunction::from_fn(grid, 1, Basis::PositionTime, |c| {
        Complex64::from_polar((-(c[0] - 0.5).powi(2) - (c[1] + 1.0).powi(2)).exp(), c[0] * PI)
    })
    .unwrap();
    let me = psi.to_momentum_energy().unwrap();
    assert_abs_diff_eq!(me.norm_sq(), 1.0, epsilon = 1e-12);
    let back = me.to_position_time().unwrap();
    let gap = (back.amplitudes() - psi.amplitudes()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(gap < 1e-13);
}
