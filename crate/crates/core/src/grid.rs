//! Discretised Hilbert space over Fourier-dual (x, t) and (p, E) lattices.
//!
//! Every particle owns one x axis and one t axis. A state with `n` particles
//! is stored as a dense tensor of shape `[n_x, n_t, n_x, n_t, ...]` (particle
//! `i` owns axes `2i` and `2i + 1`). The lattice transform realises
//!
//! ```text
//! <x, t | psi> = (1 / 2 pi) * integral dp dE exp(i p x - i E t) <p, E | psi>
//! ```
//!
//! per particle: the energy kernel carries the opposite sign so that the
//! energy operator acts as `+i d/dt`.

use std::f64::consts::PI;
use std::fmt;

use ndarray::{ArrayD, IxDyn, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{transform_axis, AxisMap};
use crate::operators::OperatorSpec;

/// Lattice description for one particle.
///
/// Positions are `centre_x + (k - n_x/2) dx`; momenta are
/// `centre_p + (j - n_x/2) dp` with `dp = 2 pi / (n_x dx)`. The time and
/// energy axes follow the same pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_x: usize,
    pub n_t: usize,
    pub dx: f64,
    pub dt_lat: f64,
    pub centre_x: f64,
    pub centre_t: f64,
    #[serde(default)]
    pub centre_p: f64,
    #[serde(default)]
    pub centre_e: f64,
}

fn valid_size(n: usize) -> bool {
    n >= 4 && n.is_power_of_two()
}

fn valid_spacing(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// Build a lattice centred on `(centre_x, centre_t)` with the momentum-energy
/// lattice centred on the origin.
pub fn make_grid(
    n_x: usize,
    n_t: usize,
    dx: f64,
    dt_lat: f64,
    centre_x: f64,
    centre_t: f64,
) -> Result<GridSpec> {
    let grid = GridSpec {
        n_x,
        n_t,
        dx,
        dt_lat,
        centre_x,
        centre_t,
        centre_p: 0.0,
        centre_e: 0.0,
    };
    grid.validate()?;
    Ok(grid)
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for n in [self.n_x, self.n_t] {
            if !valid_size(n) {
                return Err(Error::LatticeSize(n));
            }
        }
        for d in [self.dx, self.dt_lat] {
            if !valid_spacing(d) {
                return Err(Error::Spacing(d));
            }
        }
        for c in [self.centre_x, self.centre_t, self.centre_p, self.centre_e] {
            if !c.is_finite() {
                return Err(Error::InvalidParameter(format!("lattice centre {c}")));
            }
        }
        Ok(())
    }

    /// Re-centre the momentum-energy lattice on `(p, e)`.
    pub fn with_momentum_centre(mut self, p: f64, e: f64) -> Self {
        self.centre_p = p;
        self.centre_e = e;
        self
    }

    pub fn dp(&self) -> f64 {
        2.0 * PI / (self.n_x as f64 * self.dx)
    }

    pub fn de(&self) -> f64 {
        2.0 * PI / (self.n_t as f64 * self.dt_lat)
    }

    pub fn x(&self, k: usize) -> f64 {
        self.centre_x + (k as f64 - (self.n_x / 2) as f64) * self.dx
    }

    pub fn t(&self, k: usize) -> f64 {
        self.centre_t + (k as f64 - (self.n_t / 2) as f64) * self.dt_lat
    }

    pub fn p(&self, j: usize) -> f64 {
        self.centre_p + (j as f64 - (self.n_x / 2) as f64) * self.dp()
    }

    pub fn e(&self, j: usize) -> f64 {
        self.centre_e + (j as f64 - (self.n_t / 2) as f64) * self.de()
    }

    /// Lattice values along the first (x or p) axis of a particle.
    pub fn first_axis(&self, basis: Basis) -> Vec<f64> {
        match basis {
            Basis::PositionTime => (0..self.n_x).map(|k| self.x(k)).collect(),
            Basis::MomentumEnergy => (0..self.n_x).map(|k| self.p(k)).collect(),
        }
    }

    /// Lattice values along the second (t or E) axis of a particle.
    pub fn second_axis(&self, basis: Basis) -> Vec<f64> {
        match basis {
            Basis::PositionTime => (0..self.n_t).map(|k| self.t(k)).collect(),
            Basis::MomentumEnergy => (0..self.n_t).map(|k| self.e(k)).collect(),
        }
    }

    /// Per-particle cell volume in the given basis.
    pub fn cell(&self, basis: Basis) -> f64 {
        match basis {
            Basis::PositionTime => self.dx * self.dt_lat,
            Basis::MomentumEnergy => self.dp() * self.de(),
        }
    }

    pub fn shape(&self, n_particles: usize) -> Vec<usize> {
        (0..n_particles).flat_map(|_| [self.n_x, self.n_t]).collect()
    }

    fn x_map(&self, to: Basis) -> AxisMap {
        let (dp, s2pi) = (self.dp(), (2.0 * PI).sqrt());
        match to {
            Basis::PositionTime => AxisMap {
                n: self.n_x,
                cu: self.centre_x,
                du: self.dx,
                cv: self.centre_p,
                dv: dp,
                sign: 1.0,
                scale: dp / s2pi,
            },
            Basis::MomentumEnergy => AxisMap {
                n: self.n_x,
                cu: self.centre_p,
                du: dp,
                cv: self.centre_x,
                dv: self.dx,
                sign: -1.0,
                scale: self.dx / s2pi,
            },
        }
    }

    fn t_map(&self, to: Basis) -> AxisMap {
        let (de, s2pi) = (self.de(), (2.0 * PI).sqrt());
        match to {
            Basis::PositionTime => AxisMap {
                n: self.n_t,
                cu: self.centre_t,
                du: self.dt_lat,
                cv: self.centre_e,
                dv: de,
                sign: -1.0,
                scale: de / s2pi,
            },
            Basis::MomentumEnergy => AxisMap {
                n: self.n_t,
                cu: self.centre_e,
                du: de,
                cv: self.centre_t,
                dv: self.dt_lat,
                sign: 1.0,
                scale: self.dt_lat / s2pi,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    PositionTime,
    MomentumEnergy,
}

impl Basis {
    pub fn other(self) -> Basis {
        match self {
            Basis::PositionTime => Basis::MomentumEnergy,
            Basis::MomentumEnergy => Basis::PositionTime,
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::PositionTime => "position-time",
            Basis::MomentumEnergy => "momentum-energy",
        })
    }
}

/// A normalised state on the tensor-product lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    grid: GridSpec,
    n_particles: usize,
    basis: Basis,
    amplitudes: ArrayD<Complex64>,
}

impl WaveFunction {
    /// Wrap an amplitude array, normalising it.
    pub fn from_amplitudes(
        grid: GridSpec,
        n_particles: usize,
        basis: Basis,
        amplitudes: ArrayD<Complex64>,
    ) -> Result<Self> {
        grid.validate()?;
        if n_particles == 0 {
            return Err(Error::InvalidParameter("a state needs at least one particle".into()));
        }
        let expected = grid.shape(n_particles);
        if amplitudes.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                expected,
                found: amplitudes.shape().to_vec(),
            });
        }
        Self::raw(grid, n_particles, basis, amplitudes).normalised()
    }

    pub(crate) fn raw(
        grid: GridSpec,
        n_particles: usize,
        basis: Basis,
        amplitudes: ArrayD<Complex64>,
    ) -> Self {
        Self {
            grid,
            n_particles,
            basis,
            amplitudes,
        }
    }

    /// Sample `f(coords)` over the lattice, where `coords` lists
    /// `[c_0a, c_0b, c_1a, c_1b, ...]` in the chosen basis.
    pub fn from_fn<F>(grid: GridSpec, n_particles: usize, basis: Basis, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Complex64,
    {
        grid.validate()?;
        let a = grid.first_axis(basis);
        let b = grid.second_axis(basis);
        let mut coords = vec![0.0; 2 * n_particles];
        let amps = ArrayD::from_shape_fn(IxDyn(&grid.shape(n_particles)), |idx| {
            for i in 0..n_particles {
                coords[2 * i] = a[idx[2 * i]];
                coords[2 * i + 1] = b[idx[2 * i + 1]];
            }
            f(&coords)
        });
        Self::from_amplitudes(grid, n_particles, basis, amps)
    }

    /// Single lattice-point state.
    pub fn delta(grid: GridSpec, n_particles: usize, basis: Basis, index: &[usize]) -> Result<Self> {
        Self::superposition(grid, n_particles, basis, &[(index.to_vec(), Complex64::new(1.0, 0.0))])
    }

    /// Normalised superposition of lattice points with given amplitudes.
    pub fn superposition(
        grid: GridSpec,
        n_particles: usize,
        basis: Basis,
        components: &[(Vec<usize>, Complex64)],
    ) -> Result<Self> {
        grid.validate()?;
        let shape = grid.shape(n_particles);
        let mut amps = ArrayD::zeros(IxDyn(&shape));
        for (index, c) in components {
            if index.len() != shape.len() || index.iter().zip(&shape).any(|(i, n)| i >= n) {
                return Err(Error::InvalidParameter(format!(
                    "lattice index {index:?} outside shape {shape:?}"
                )));
            }
            amps[IxDyn(index)] += *c;
        }
        Self::from_amplitudes(grid, n_particles, basis, amps)
    }

    /// Tensor product of states sharing one grid and basis.
    pub fn product(factors: &[WaveFunction]) -> Result<Self> {
        let first = factors
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty product".into()))?;
        let mut flat: Vec<Complex64> = vec![Complex64::new(1.0, 0.0)];
        let mut n_particles = 0;
        for f in factors {
            if f.grid != first.grid {
                return Err(Error::GridMismatch);
            }
            if f.basis != first.basis {
                return Err(Error::BasisMismatch {
                    expected: first.basis,
                    found: f.basis,
                });
            }
            let rhs: Vec<Complex64> = f.amplitudes.iter().copied().collect();
            flat = flat
                .iter()
                .flat_map(|a| rhs.iter().map(move |b| a * b))
                .collect();
            n_particles += f.n_particles;
        }
        let amps = ArrayD::from_shape_vec(IxDyn(&first.grid.shape(n_particles)), flat)
            .expect("product shape");
        Self::from_amplitudes(first.grid, n_particles, first.basis, amps)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn amplitudes(&self) -> &ArrayD<Complex64> {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> ArrayD<Complex64> {
        self.amplitudes
    }

    /// Volume element of one multi-particle lattice cell in the current basis.
    pub fn cell_volume(&self) -> f64 {
        self.grid.cell(self.basis).powi(self.n_particles as i32)
    }

    pub fn norm_sq(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.cell_volume()
    }

    pub(crate) fn normalised(mut self) -> Result<Self> {
        let n = self.norm_sq();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::ZeroNorm);
        }
        let inv = 1.0 / n.sqrt();
        self.amplitudes.mapv_inplace(|a| a * inv);
        Ok(self)
    }

    /// Rescale to unit norm in place, returning the squared norm beforehand.
    pub(crate) fn renormalise(&mut self) -> Result<f64> {
        let n = self.norm_sq();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::ZeroNorm);
        }
        let inv = 1.0 / n.sqrt();
        self.amplitudes.mapv_inplace(|a| a * inv);
        Ok(n)
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut ArrayD<Complex64> {
        &mut self.amplitudes
    }

    pub fn to_momentum_energy(&self) -> Result<Self> {
        self.transformed(Basis::MomentumEnergy)
    }

    pub fn to_position_time(&self) -> Result<Self> {
        self.transformed(Basis::PositionTime)
    }

    fn transformed(&self, to: Basis) -> Result<Self> {
        if self.basis != to.other() {
            return Err(Error::BasisMismatch {
                expected: to.other(),
                found: self.basis,
            });
        }
        let mut amps = self.amplitudes.clone();
        let (xm, tm) = (self.grid.x_map(to), self.grid.t_map(to));
        for i in 0..self.n_particles {
            transform_axis(&mut amps, 2 * i, &xm);
            transform_axis(&mut amps, 2 * i + 1, &tm);
        }
        Ok(Self::raw(self.grid, self.n_particles, to, amps))
    }

    /// The same state expressed in `basis` (a clone when already there).
    pub fn in_basis(&self, basis: Basis) -> Self {
        if self.basis == basis {
            self.clone()
        } else {
            self.transformed(basis).expect("basis checked")
        }
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.n_particles != other.n_particles {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// `<self | other>`.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        self.check_compatible(other)?;
        let other = other.in_basis(self.basis);
        let sum: Complex64 = Zip::from(&self.amplitudes)
            .and(&other.amplitudes)
            .fold(Complex64::new(0.0, 0.0), |acc, a, b| acc + a.conj() * b);
        Ok(sum * self.cell_volume())
    }

    /// Probability density `|psi|^2` in the current basis.
    pub fn density(&self) -> ArrayD<f64> {
        self.amplitudes.mapv(|a| a.norm_sqr())
    }

    pub fn expectation(&self, op: &OperatorSpec) -> Result<f64> {
        Ok(self.moments(op)?.0)
    }

    pub fn variance(&self, op: &OperatorSpec) -> Result<f64> {
        Ok(self.moments(op)?.1)
    }

    /// Mean and variance of a diagonal operator, computed in its own basis.
    pub fn moments(&self, op: &OperatorSpec) -> Result<(f64, f64)> {
        let diag = op.diagonal(&self.grid, self.n_particles)?;
        let psi = self.in_basis(op.basis());
        Ok(weighted_moments(&psi.amplitudes, &diag))
    }

    /// Probability within two cells of any lattice edge, in the current basis.
    pub fn edge_probability(&self) -> f64 {
        let shape = self.amplitudes.shape().to_vec();
        let cell = self.cell_volume();
        self.amplitudes
            .indexed_iter()
            .filter(|(idx, _)| {
                (0..shape.len()).any(|a| idx[a] < 2 || idx[a] + 2 >= shape[a])
            })
            .map(|(_, v)| v.norm_sqr())
            .sum::<f64>()
            * cell
    }

    /// Fails with [`Error::Wraparound`] when more than `threshold` probability
    /// sits within two cells of an edge.
    pub fn check_support(&self, threshold: f64) -> Result<()> {
        let p = self.edge_probability();
        if p > threshold {
            Err(Error::Wraparound(p))
        } else {
            Ok(())
        }
    }
}

/// Default edge-probability threshold for the wrap-around monitor.
pub const EDGE_THRESHOLD: f64 = 1e-6;

/// Mean and variance of a diagonal observable under `|amps|^2` weights.
pub(crate) fn weighted_moments(amps: &ArrayD<Complex64>, diag: &ArrayD<f64>) -> (f64, f64) {
    let (mut s0, mut s1) = (0.0, 0.0);
    Zip::from(amps).and(diag).for_each(|a, &d| {
        let w = a.norm_sqr();
        s0 += w;
        s1 += w * d;
    });
    let mean = s1 / s0;
    let mut s2 = 0.0;
    Zip::from(amps).and(diag).for_each(|a, &d| {
        s2 += a.norm_sqr() * (d - mean) * (d - mean);
    });
    (mean, (s2 / s0).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::OperatorSpec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_state(grid: GridSpec, n: usize, basis: Basis, seed: u64) -> WaveFunction {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let amps = ArrayD::from_shape_fn(IxDyn(&grid.shape(n)), |_| Complex64::new(next(), next()));
        WaveFunction::from_amplitudes(grid, n, basis, amps).unwrap()
    }

    #[test]
    fn dual_spacings() {
        let g = make_grid(4, 4, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(g.dp(), 2.0 * PI / 4.0, epsilon = 1e-15);
        let g = make_grid(64, 64, 0.25, 0.25, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(g.dp(), 2.0 * PI / 16.0, epsilon = 1e-15);
        let g = make_grid(8, 4, 0.5, 1.0, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(g.dx * g.dp() * 8.0, 2.0 * PI, epsilon = 1e-14);
        assert_abs_diff_eq!(g.dt_lat * g.de() * 4.0, 2.0 * PI, epsilon = 1e-14);
        assert_abs_diff_eq!(g.cell(Basis::PositionTime), 0.5, epsilon = 0.0);
    }

    #[test]
    fn grid_errors() {
        assert_eq!(make_grid(6, 8, 1.0, 1.0, 0.0, 0.0), Err(Error::LatticeSize(6)));
        assert_eq!(make_grid(2, 8, 1.0, 1.0, 0.0, 0.0), Err(Error::LatticeSize(2)));
        assert_eq!(make_grid(8, 8, 0.0, 1.0, 0.0, 0.0), Err(Error::Spacing(0.0)));
        assert_eq!(make_grid(8, 8, 1.0, -1.0, 0.0, 0.0), Err(Error::Spacing(-1.0)));
    }

    #[test]
    fn delta_becomes_plane_wave_with_opposite_signs() {
        let g = make_grid(8, 8, 0.7, 0.4, 0.3, -0.2)
            .unwrap()
            .with_momentum_centre(0.5, 2.0);
        let (j, k) = (5, 2);
        let (p0, e0) = (g.p(j), g.e(k));
        let psi = WaveFunction::delta(g, 1, Basis::MomentumEnergy, &[j, k]).unwrap();
        let xt = psi.to_position_time().unwrap();
        let amp0 = xt.amplitudes()[[0, 0]];
        for a in 0..8 {
            for b in 0..8 {
                let expected = Complex64::from_polar(
                    1.0,
                    p0 * (g.x(a) - g.x(0)) - e0 * (g.t(b) - g.t(0)),
                );
                let ratio = xt.amplitudes()[[a, b]] / amp0;
                assert!((ratio - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn transform_direction_errors() {
        let g = make_grid(4, 4, 1.0, 1.0, 0.0, 0.0).unwrap();
        let psi = WaveFunction::delta(g, 1, Basis::PositionTime, &[1, 1]).unwrap();
        assert!(matches!(
            psi.to_position_time(),
            Err(Error::BasisMismatch { .. })
        ));
    }

    #[test]
    fn eigenstate_expectation_and_two_point_variance() {
        let g = make_grid(8, 8, 1.0, 1.0, 0.0, 0.0).unwrap();
        let op = OperatorSpec::position(0);
        let psi = WaveFunction::delta(g, 1, Basis::PositionTime, &[5, 3]).unwrap();
        let (m, v) = psi.moments(&op).unwrap();
        assert_abs_diff_eq!(m, g.x(5), epsilon = 1e-10);
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-10);

        // x values 0 and 2 with equal weight
        let c = Complex64::new(1.0, 0.0);
        let psi = WaveFunction::superposition(
            g,
            1,
            Basis::PositionTime,
            &[(vec![4, 0], c), (vec![6, 0], c)],
        )
        .unwrap();
        let (m, v) = psi.moments(&op).unwrap();
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn product_transform_is_product_of_transforms() {
        let g = make_grid(4, 8, 0.5, 0.3, 0.1, 0.0).unwrap();
        let a = random_state(g, 1, Basis::PositionTime, 1);
        let b = random_state(g, 1, Basis::PositionTime, 2);
        let lhs = WaveFunction::product(&[a.clone(), b.clone()])
            .unwrap()
            .to_momentum_energy()
            .unwrap();
        let rhs = WaveFunction::product(&[
            a.to_momentum_energy().unwrap(),
            b.to_momentum_energy().unwrap(),
        ])
        .unwrap();
        let diff = (lhs.amplitudes() - rhs.amplitudes()).mapv(|z| z.norm()).sum();
        assert!(diff < 1e-11);
    }

    #[test]
    fn edge_monitor_flags_boundary_mass() {
        let g = make_grid(16, 16, 1.0, 1.0, 0.0, 0.0).unwrap();
        let inside = WaveFunction::delta(g, 1, Basis::PositionTime, &[8, 8]).unwrap();
        assert!(inside.check_support(EDGE_THRESHOLD).is_ok());
        let edge = WaveFunction::delta(g, 1, Basis::PositionTime, &[1, 8]).unwrap();
        assert!(matches!(edge.check_support(EDGE_THRESHOLD), Err(Error::Wraparound(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn parseval_and_round_trip(seed in any::<u64>(), cx in -3.0..3.0f64, cp in -3.0..3.0f64) {
            let g = make_grid(8, 16, 0.6, 0.45, cx, -cx)
                .unwrap()
                .with_momentum_centre(cp, 2.0 * cp);
            let psi = random_state(g, 1, Basis::PositionTime, seed);
            let me = psi.to_momentum_energy().unwrap();
            prop_assert!((me.norm_sq() - 1.0).abs() < 1e-12);
            let back = me.to_position_time().unwrap();
            let err = (back.amplitudes() - psi.amplitudes()).mapv(|z| z.norm()).fold(0.0f64, |m, &v| m.max(v));
            prop_assert!(err < 1e-12);
        }

        #[test]
        fn transforms_are_linear(s1 in any::<u64>(), s2 in any::<u64>(), re in -2.0..2.0f64, im in -2.0..2.0f64) {
            let g = make_grid(4, 4, 1.0, 0.5, 0.0, 0.0).unwrap();
            let a = random_state(g, 2, Basis::MomentumEnergy, s1);
            let b = random_state(g, 2, Basis::MomentumEnergy, s2);
            let c = Complex64::new(re, im);
            let combo = a.amplitudes() + &b.amplitudes().mapv(|z| z * c);
            let combo = WaveFunction::raw(g, 2, Basis::MomentumEnergy, combo);
            let lhs = combo.to_position_time().unwrap();
            let rhs = a.to_position_time().unwrap().amplitudes()
                + &b.to_position_time().unwrap().amplitudes().mapv(|z| z * c);
            let err = (lhs.amplitudes() - &rhs).mapv(|z| z.norm()).fold(0.0f64, |m, &v| m.max(v));
            prop_assert!(err < 1e-12);
        }
    }
}
