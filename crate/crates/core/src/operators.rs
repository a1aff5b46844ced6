//! Hamiltonians, collapse generators and Poincaré maps.
//!
//! Every operator here is diagonal in one of the two lattice bases, so it is
//! fully described by a real eigenvalue function of the lattice coordinates.

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Basis, GridSpec, WaveFunction, EDGE_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorKind {
    /// `sum_i (p_i^2 - E_i^2) / (2 m_i)` over the first `masses.len()` particles.
    MassShell { masses: Vec<f64> },
    /// `p_i^2 - E_i^2` of particle `i`.
    CollapseMass { particle: usize },
    /// `(x_i - x_j)^2 - (t_i - t_j)^2`.
    Interval { i: usize, j: usize },
    Energy { particle: usize },
    Time { particle: usize },
    Position { particle: usize },
    Momentum { particle: usize },
}

/// A diagonal operator together with its collapse strength.
///
/// `lambda` carries units of `1 / ([eigenvalue]^2 [s])`; it is ignored when
/// the operator is used as a Hamiltonian or an observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    #[serde(flatten)]
    pub kind: OperatorKind,
    #[serde(default)]
    pub lambda: f64,
}

pub fn hamiltonian_single(m: f64) -> Result<OperatorSpec> {
    hamiltonian_multi(&[m])
}

pub fn hamiltonian_multi(masses: &[f64]) -> Result<OperatorSpec> {
    if masses.is_empty() {
        return Err(Error::InvalidParameter("Hamiltonian needs at least one mass".into()));
    }
    if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
        return Err(Error::InvalidParameter(format!("mass constant must be positive, got {m}")));
    }
    Ok(OperatorSpec::new(OperatorKind::MassShell {
        masses: masses.to_vec(),
    }))
}

pub fn interval_operator(i: usize, j: usize) -> Result<OperatorSpec> {
    if i == j {
        return Err(Error::InvalidParameter(format!(
            "interval operator needs two distinct particles, got ({i}, {j})"
        )));
    }
    Ok(OperatorSpec::new(OperatorKind::Interval { i, j }))
}

impl OperatorSpec {
    pub fn new(kind: OperatorKind) -> Self {
        Self { kind, lambda: 0.0 }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn collapse_mass(particle: usize) -> Self {
        Self::new(OperatorKind::CollapseMass { particle })
    }

    pub fn energy(particle: usize) -> Self {
        Self::new(OperatorKind::Energy { particle })
    }

    pub fn time(particle: usize) -> Self {
        Self::new(OperatorKind::Time { particle })
    }

    pub fn position(particle: usize) -> Self {
        Self::new(OperatorKind::Position { particle })
    }

    pub fn momentum(particle: usize) -> Self {
        Self::new(OperatorKind::Momentum { particle })
    }

    pub fn basis(&self) -> Basis {
        match self.kind {
            OperatorKind::MassShell { .. }
            | OperatorKind::CollapseMass { .. }
            | OperatorKind::Energy { .. }
            | OperatorKind::Momentum { .. } => Basis::MomentumEnergy,
            OperatorKind::Interval { .. }
            | OperatorKind::Time { .. }
            | OperatorKind::Position { .. } => Basis::PositionTime,
        }
    }

    /// Number of particles the operator needs to be defined.
    pub fn min_particles(&self) -> usize {
        match &self.kind {
            OperatorKind::MassShell { masses } => masses.len(),
            OperatorKind::Interval { i, j } => i.max(j) + 1,
            OperatorKind::CollapseMass { particle }
            | OperatorKind::Energy { particle }
            | OperatorKind::Time { particle }
            | OperatorKind::Position { particle }
            | OperatorKind::Momentum { particle } => particle + 1,
        }
    }

    /// Eigenvalue at lattice coordinates `[a_0, b_0, a_1, b_1, ...]` given in
    /// the operator's diagonal basis (`(x, t)` or `(p, E)` per particle).
    pub fn eigenvalue(&self, coords: &[f64]) -> f64 {
        let a = |i: usize| coords[2 * i];
        let b = |i: usize| coords[2 * i + 1];
        match &self.kind {
            OperatorKind::MassShell { masses } => masses
                .iter()
                .enumerate()
                .map(|(i, m)| (a(i) * a(i) - b(i) * b(i)) / (2.0 * m))
                .sum(),
            OperatorKind::CollapseMass { particle } => {
                a(*particle) * a(*particle) - b(*particle) * b(*particle)
            }
            OperatorKind::Interval { i, j } => {
                let dx = a(*i) - a(*j);
                let dt = b(*i) - b(*j);
                dx * dx - dt * dt
            }
            OperatorKind::Energy { particle } | OperatorKind::Time { particle } => b(*particle),
            OperatorKind::Position { particle } | OperatorKind::Momentum { particle } => {
                a(*particle)
            }
        }
    }

    /// Eigenvalues over the whole `n_particles` lattice.
    pub fn diagonal(&self, grid: &GridSpec, n_particles: usize) -> Result<ArrayD<f64>> {
        let need = self.min_particles();
        if need > n_particles {
            return Err(Error::ParticleIndex {
                index: need - 1,
                n_particles,
            });
        }
        let basis = self.basis();
        let first = grid.first_axis(basis);
        let second = grid.second_axis(basis);
        let mut coords = vec![0.0; 2 * n_particles];
        Ok(ArrayD::from_shape_fn(IxDyn(&grid.shape(n_particles)), |idx| {
            for i in 0..n_particles {
                coords[2 * i] = first[idx[2 * i]];
                coords[2 * i + 1] = second[idx[2 * i + 1]];
            }
            self.eigenvalue(&coords)
        }))
    }
}

/// Rapidity and translation of a Poincaré transformation in 1+1 dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoincareParams {
    pub theta: f64,
    pub a: f64,
    pub tau: f64,
}

impl PoincareParams {
    pub fn boost(theta: f64) -> Self {
        Self {
            theta,
            a: 0.0,
            tau: 0.0,
        }
    }

    pub fn translation(a: f64, tau: f64) -> Self {
        Self { theta: 0.0, a, tau }
    }

    /// Relative frame velocity `w = tanh(theta)`.
    pub fn velocity(&self) -> f64 {
        self.theta.tanh()
    }

    pub fn gamma(&self) -> f64 {
        self.theta.cosh()
    }

    /// `(p, E) -> (p cosh - E sinh, E cosh - p sinh)`.
    pub fn boost_momentum(&self, p: f64, e: f64) -> (f64, f64) {
        let (c, s) = (self.theta.cosh(), self.theta.sinh());
        (p * c - e * s, e * c - p * s)
    }

    /// `(x, t) -> (x cosh - t sinh, t cosh - x sinh)`.
    pub fn boost_event(&self, x: f64, t: f64) -> (f64, f64) {
        let (c, s) = (self.theta.cosh(), self.theta.sinh());
        (x * c - t * s, t * c - x * s)
    }
}

/// Minimum pairs/coordinates bookkeeping for the pairwise-interval model:
/// `N(N-1)/2` interval constraints against `2(N-1)` relative coordinates.
pub fn count_constraints(n: usize) -> Result<(usize, usize, bool)> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "constraint counting needs at least two particles, got {n}"
        )));
    }
    let pairs = n * (n - 1) / 2;
    let coords = 2 * (n - 1);
    Ok((pairs, coords, pairs >= coords))
}

/// Result of resampling a state under a boost.
#[derive(Debug, Clone)]
pub struct Boosted {
    pub state: WaveFunction,
    /// `|1 - norm|` of the interpolated state before renormalisation.
    pub norm_defect: f64,
}

fn keys_weights(frac: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let w = |x: f64| {
        let x = x.abs();
        if x <= 1.0 {
            (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
        } else if x < 2.0 {
            A * x * x * x - 5.0 * A * x * x + 8.0 * A * x - 4.0 * A
        } else {
            0.0
        }
    };
    [w(1.0 + frac), w(frac), w(1.0 - frac), w(2.0 - frac)]
}

/// Stencil for one target lattice point: four source indices per axis
/// (negative or out-of-range entries contribute zero) and their weights.
struct Stencil {
    iu: [isize; 4],
    wu: [f64; 4],
    iv: [isize; 4],
    wv: [f64; 4],
}

fn stencil(u: f64, v: f64) -> Stencil {
    let (bu, bv) = (u.floor(), v.floor());
    let (fu, fv) = (u - bu, v - bv);
    let (bu, bv) = (bu as isize, bv as isize);
    Stencil {
        iu: [bu - 1, bu, bu + 1, bu + 2],
        wu: keys_weights(fu),
        iv: [bv - 1, bv, bv + 1, bv + 2],
        wv: keys_weights(fv),
    }
}

/// Apply a Lorentz boost of rapidity `theta` to every particle.
///
/// The momentum-energy amplitude is resampled along the inverse hyperbolic
/// rotation with bicubic interpolation. The phase belonging to the lattice
/// centre event is split off before interpolating and reattached at the
/// boosted event, which keeps the interpolated function smooth.
pub fn boost_state(psi: &WaveFunction, theta: f64) -> Result<Boosted> {
    if !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("rapidity {theta}")));
    }
    if theta == 0.0 {
        return Ok(Boosted {
            state: psi.clone(),
            norm_defect: 0.0,
        });
    }
    let out_basis = psi.basis();
    let me = psi.in_basis(Basis::MomentumEnergy);
    let grid = *me.grid();
    let params = PoincareParams::boost(theta);
    let (nx, nt) = (grid.n_x, grid.n_t);
    let (ps, es) = (grid.first_axis(Basis::MomentumEnergy), grid.second_axis(Basis::MomentumEnergy));
    let (dp, de) = (grid.dp(), grid.de());
    let (hx, ht) = ((nx / 2) as f64, (nt / 2) as f64);
    let (cx, ct) = (grid.centre_x, grid.centre_t);
    let (bx, bt) = params.boost_event(cx, ct);

    // Probability that the boost carries outside the usable lattice.
    let leaving = {
        let mut lost = 0.0;
        let cell = grid.cell(Basis::MomentumEnergy);
        let marginal = plane_marginals(&me);
        for w in &marginal {
            for j in 0..nx {
                for k in 0..nt {
                    let (p2, e2) = params.boost_momentum(ps[j], es[k]);
                    let u = (p2 - grid.centre_p) / dp + hx;
                    let v = (e2 - grid.centre_e) / de + ht;
                    if u < 2.0 || v < 2.0 || u > nx as f64 - 3.0 || v > nt as f64 - 3.0 {
                        lost += w[j * nt + k] * cell;
                    }
                }
            }
        }
        lost
    };
    if leaving > EDGE_THRESHOLD {
        return Err(Error::Wraparound(leaving));
    }

    let inverse = PoincareParams::boost(-theta);
    let stencils: Vec<Stencil> = (0..nx * nt)
        .map(|jk| {
            let (j, k) = (jk / nt, jk % nt);
            let (p0, e0) = inverse.boost_momentum(ps[j], es[k]);
            stencil((p0 - grid.centre_p) / dp + hx, (e0 - grid.centre_e) / de + ht)
        })
        .collect();
    // exp(+i (p x_c - E t_c)) removes the centre-event phase; the boosted
    // phase is exp(-i (p x_c' - E t_c')).
    let demod: Vec<Complex64> = (0..nx * nt)
        .map(|jk| {
            let (j, k) = (jk / nt, jk % nt);
            Complex64::from_polar(1.0, ps[j] * cx - es[k] * ct)
        })
        .collect();
    let remod: Vec<Complex64> = (0..nx * nt)
        .map(|jk| {
            let (j, k) = (jk / nt, jk % nt);
            Complex64::from_polar(1.0, -(ps[j] * bx - es[k] * bt))
        })
        .collect();

    let shape = me.amplitudes().shape().to_vec();
    let mut flat: Vec<Complex64> = me.amplitudes().iter().copied().collect();
    for particle in 0..me.n_particles() {
        let outer: usize = shape[..2 * particle].iter().product();
        let inner: usize = shape[2 * particle + 2..].iter().product();
        let at = |o: usize, j: usize, k: usize, r: usize| ((o * nx + j) * nt + k) * inner + r;
        let mut out = vec![Complex64::new(0.0, 0.0); flat.len()];
        for o in 0..outer {
            for r in 0..inner {
                let smooth: Vec<Complex64> = (0..nx * nt)
                    .map(|jk| flat[at(o, jk / nt, jk % nt, r)] * demod[jk])
                    .collect();
                for (jk, st) in stencils.iter().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (a, &iu) in st.iu.iter().enumerate() {
                        if iu < 0 || iu >= nx as isize || st.wu[a] == 0.0 {
                            continue;
                        }
                        for (b, &iv) in st.iv.iter().enumerate() {
                            if iv < 0 || iv >= nt as isize {
                                continue;
                            }
                            acc += smooth[iu as usize * nt + iv as usize] * (st.wu[a] * st.wv[b]);
                        }
                    }
                    out[at(o, jk / nt, jk % nt, r)] = acc * remod[jk];
                }
            }
        }
        flat = out;
    }
    let amps = ArrayD::from_shape_vec(IxDyn(&shape), flat).expect("boost shape");
    let raw = WaveFunction::raw(grid, me.n_particles(), Basis::MomentumEnergy, amps);
    let norm_defect = (1.0 - raw.norm_sq().sqrt()).abs();
    let state = raw.normalised()?.in_basis(out_basis);
    Ok(Boosted { state, norm_defect })
}

/// Per-particle marginal densities over the `(first, second)` plane,
/// flattened as `j * n_t + k`.
fn plane_marginals(psi: &WaveFunction) -> Vec<Vec<f64>> {
    let grid = psi.grid();
    let (nx, nt) = (grid.n_x, grid.n_t);
    let per_cell = grid.cell(psi.basis());
    let others = psi.cell_volume() / per_cell;
    let density = psi.density();
    (0..psi.n_particles())
        .map(|i| {
            let mut m = vec![0.0; nx * nt];
            for (idx, w) in density.indexed_iter() {
                m[idx[2 * i] * nt + idx[2 * i + 1]] += w * others;
            }
            m
        })
        .collect()
}

/// Translate every particle by `(a, tau)` in space and time.
///
/// Exact on the lattice: a phase `exp(-i (a p - tau E))` per particle in the
/// momentum-energy basis, which moves the position-time density by
/// `(+a, +tau)`.
pub fn translate_state(psi: &WaveFunction, a: f64, tau: f64) -> Result<WaveFunction> {
    if !(a.is_finite() && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!("translation ({a}, {tau})")));
    }
    let out_basis = psi.basis();
    let mut me = psi.in_basis(Basis::MomentumEnergy);
    let grid = *me.grid();
    let n = me.n_particles();
    let ps = grid.first_axis(Basis::MomentumEnergy);
    let es = grid.second_axis(Basis::MomentumEnergy);
    for (idx, amp) in me.amplitudes_mut().indexed_iter_mut() {
        let phase: f64 = (0..n)
            .map(|i| -(a * ps[idx[2 * i]] - tau * es[idx[2 * i + 1]]))
            .sum();
        *amp *= Complex64::from_polar(1.0, phase);
    }
    Ok(me.in_basis(out_basis))
}

/// Rapidity whose boost carries velocity `v` to rest.
pub fn rapidity_of(v: f64) -> f64 {
    v.atanh()
}
