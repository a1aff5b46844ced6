//! Closed-form Gaussian packets, their world-tube densities, and the
//! Klein-Gordon residual.
//!
//! A packet with spreads `sigma_x`, `sigma_t` at `s = 0` has the
//! momentum-energy amplitude
//!
//! ```text
//! (2 sx^2/pi)^(1/4) exp(-sx^2 (p - pb)^2 - i xb p)
//!   (2 st^2/pi)^(1/4) exp(-st^2 (E - Eb)^2 + i tb E)  exp(-i s (p^2 - E^2) / 2m)
//! ```

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Basis, GridSpec, WaveFunction};
use crate::operators::PoincareParams;

/// Packet widths, centres and mass for one particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub sigma_x: f64,
    pub sigma_t: f64,
    pub x_bar: f64,
    pub t_bar: f64,
    pub p_bar: f64,
    pub e_bar: f64,
    pub mass: f64,
}

/// Margin, in standard deviations, a packet must keep from the lattice edge.
pub const FIT_SIGMAS: f64 = 4.0;

impl GaussianParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_x", self.sigma_x), ("sigma_t", self.sigma_t), ("mass", self.mass)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("x_bar", self.x_bar), ("t_bar", self.t_bar), ("p_bar", self.p_bar), ("e_bar", self.e_bar)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Position and time spreads at parameter `s`.
    pub fn spreads(&self, s: f64) -> (f64, f64) {
        let k = s / (2.0 * self.mass);
        (
            (self.sigma_x.powi(2) + (k / self.sigma_x).powi(2)).sqrt(),
            (self.sigma_t.powi(2) + (k / self.sigma_t).powi(2)).sqrt(),
        )
    }

    /// Density peak `(x, t)` at parameter `s`.
    pub fn centre(&self, s: f64) -> (f64, f64) {
        (
            self.x_bar + s * self.p_bar / self.mass,
            self.t_bar + s * self.e_bar / self.mass,
        )
    }

    pub fn momentum_energy_amplitude(&self, p: f64, e: f64, s: f64) -> Complex64 {
        let nx = (2.0 * self.sigma_x.powi(2) / PI).powf(0.25);
        let nt = (2.0 * self.sigma_t.powi(2) / PI).powf(0.25);
        let re = -self.sigma_x.powi(2) * (p - self.p_bar).powi(2) - self.sigma_t.powi(2) * (e - self.e_bar).powi(2);
        let im = -self.x_bar * p + self.t_bar * e - s * (p * p - e * e) / (2.0 * self.mass);
        Complex64::from_polar(nx * nt * re.exp(), im)
    }

    /// Closed-form position-time amplitude using principal complex roots.
    pub fn position_time_amplitude(&self, x: f64, t: f64, s: f64) -> Complex64 {
        let k = s / (2.0 * self.mass);
        let i = Complex64::i();
        let factor = |sigma: f64, w: Complex64, b: Complex64, mean: f64| {
            let pre = (sigma * sigma / (2.0 * PI)).powf(0.25) / w.sqrt();
            pre * (b * b / (4.0 * w) - (sigma * mean).powi(2)).exp()
        };
        let wx = Complex64::new(self.sigma_x.powi(2), k);
        let bx = i * (x - self.x_bar) + 2.0 * self.sigma_x.powi(2) * self.p_bar;
        let wt = Complex64::new(self.sigma_t.powi(2), -k);
        let bt = -i * (t - self.t_bar) + 2.0 * self.sigma_t.powi(2) * self.e_bar;
        factor(self.sigma_x, wx, bx, self.p_bar) * factor(self.sigma_t, wt, bt, self.e_bar)
    }

    /// `|psi(x, t; s)|^2`: a separable Gaussian spreading as
    /// `sigma^2 + (s / 2 m sigma)^2` about the world-line.
    pub fn spreading_density(&self, x: f64, t: f64, s: f64) -> f64 {
        let (sx, st) = self.spreads(s);
        let (cx, ct) = self.centre(s);
        gauss(x - cx, sx) * gauss(t - ct, st)
    }

    /// Means carried through a boost of rapidity `theta`; widths are kept.
    pub fn boosted(&self, theta: f64) -> Self {
        let b = PoincareParams::boost(theta);
        let (p, e) = b.boost_momentum(self.p_bar, self.e_bar);
        let (x, t) = b.boost_event(self.x_bar, self.t_bar);
        Self {
            p_bar: p,
            e_bar: e,
            x_bar: x,
            t_bar: t,
            ..*self
        }
    }

    /// Check that the packet keeps [`FIT_SIGMAS`] standard deviations from
    /// every lattice edge in both bases at parameter `s`.
    pub fn check_fit(&self, grid: &GridSpec, s: f64) -> Result<()> {
        let (sx, st) = self.spreads(s);
        let (cx, ct) = self.centre(s);
        let half = |n: usize, d: f64| (n as f64 / 2.0 - 2.0) * d;
        let checks = [
            ("x", cx, sx, grid.centre_x, half(grid.n_x, grid.dx)),
            ("t", ct, st, grid.centre_t, half(grid.n_t, grid.dt_lat)),
            ("p", self.p_bar, 0.5 / self.sigma_x, grid.centre_p, half(grid.n_x, grid.dp())),
            ("E", self.e_bar, 0.5 / self.sigma_t, grid.centre_e, half(grid.n_t, grid.de())),
        ];
        for (name, mean, sd, centre, reach) in checks {
            if (mean - centre).abs() + FIT_SIGMAS * sd > reach {
                return Err(Error::LatticeOverflow(format!(
                    "{name}: mean {mean:.4} +- {FIT_SIGMAS} x {sd:.4} exceeds lattice window {centre:.4} +- {reach:.4}"
                )));
            }
        }
        Ok(())
    }
}

fn gauss(d: f64, sigma: f64) -> f64 {
    (-(d * d) / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma).sqrt()
}

/// Lattice sampling, in the momentum-energy basis, of the product packet at
/// parameter `s`, normalised.
pub fn gaussian_state(grid: &GridSpec, particles: &[GaussianParams], s: f64) -> Result<WaveFunction> {
    if particles.is_empty() {
        return Err(Error::InvalidParameter("at least one packet is required".into()));
    }
    for g in particles {
        g.validate()?;
        g.check_fit(grid, s)?;
    }
    let factors = particles
        .iter()
        .map(|g| {
            WaveFunction::from_fn(*grid, 1, Basis::MomentumEnergy, |c| {
                g.momentum_energy_amplitude(c[0], c[1], s)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    WaveFunction::product(&factors)
}

/// Whether the closed-form world tube is a fair approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeFlags {
    /// `S / (m sigma^2)` for the smaller spread; spreading is negligible
    /// when this is well below one.
    pub spreading_ratio: f64,
    /// `S` over the width in `s` of a single point's visit to the tube;
    /// the infinite-limit integral needs this well above one.
    pub length_ratio: f64,
    pub slow_spreading: bool,
    pub long_tube: bool,
}

impl RegimeFlags {
    pub fn in_regime(&self) -> bool {
        self.slow_spreading && self.long_tube
    }
}

/// Spreading ratio must stay below this for `slow_spreading`.
pub const SPREADING_LIMIT: f64 = 0.1;
/// Length ratio must exceed this for `long_tube`.
pub const LENGTH_LIMIT: f64 = 10.0;

/// Closed-form spacetime density of a slowly spreading packet integrated
/// uniformly over `s in [-S/2, S/2]` with infinite-limit tails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorldTube {
    pub params: GaussianParams,
    pub s_total: f64,
    pub flags: RegimeFlags,
}

pub fn world_tube_density(params: &GaussianParams, s_total: f64) -> Result<WorldTube> {
    params.validate()?;
    if !(s_total.is_finite() && s_total > 0.0) {
        return Err(Error::InvalidParameter(format!("S must be positive, got {s_total}")));
    }
    let sigma = params.sigma_x.min(params.sigma_t);
    let spreading_ratio = s_total / (params.mass * sigma * sigma);
    let rate = ((params.p_bar / params.sigma_x).powi(2) + (params.e_bar / params.sigma_t).powi(2)).sqrt();
    let length_ratio = s_total * rate / params.mass;
    Ok(WorldTube {
        params: *params,
        s_total,
        flags: RegimeFlags {
            spreading_ratio,
            length_ratio,
            slow_spreading: spreading_ratio <= SPREADING_LIMIT,
            long_tube: length_ratio >= LENGTH_LIMIT,
        },
    })
}

impl WorldTube {
    fn width_sq(&self) -> f64 {
        let g = &self.params;
        (g.sigma_x * g.e_bar).powi(2) + (g.sigma_t * g.p_bar).powi(2)
    }

    fn ridge(&self, x: f64, t: f64) -> f64 {
        let g = &self.params;
        g.e_bar * (x - g.x_bar) - g.p_bar * (t - g.t_bar)
    }

    pub fn density(&self, x: f64, t: f64) -> f64 {
        let w = self.width_sq();
        let r = self.ridge(x, t);
        self.params.mass / (self.s_total * (2.0 * PI * w).sqrt()) * (-(r * r) / (2.0 * w)).exp()
    }

    /// Uniform time marginal `m / (S E)`; requires `E > 0`.
    pub fn time_marginal(&self) -> Result<f64> {
        if self.params.e_bar.is_nan() || self.params.e_bar <= 0.0 {
            return Err(Error::InvalidParameter("time marginal needs a positive mean energy".into()));
        }
        Ok(self.params.mass / (self.s_total * self.params.e_bar))
    }

    /// Variance of the conditional density of `x` at fixed `t`.
    pub fn conditional_variance(&self) -> f64 {
        self.width_sq() / self.params.e_bar.powi(2)
    }

    pub fn conditional_density(&self, x: f64, t: f64) -> f64 {
        let var = self.conditional_variance();
        let (slope, intercept) = (self.params.p_bar / self.params.e_bar, self.params.x_bar - self.params.p_bar / self.params.e_bar * self.params.t_bar);
        gauss(x - (intercept + slope * t), var.sqrt())
    }

    /// Half-extent in `t` of the window over which the closed form carries
    /// unit probability.
    pub fn time_half_window(&self) -> f64 {
        self.s_total * self.params.e_bar.abs() / (2.0 * self.params.mass)
    }
}

/// Line `x = slope t + intercept` followed by the conditional density peak.
pub fn conditional_trajectory(params: &GaussianParams) -> Result<(f64, f64)> {
    if params.e_bar == 0.0 {
        return Err(Error::InvalidParameter("mean energy must be non-zero".into()));
    }
    let slope = params.p_bar / params.e_bar;
    Ok((slope, params.x_bar - slope * params.t_bar))
}

/// `|| (d_t^2 - d_x^2 + mu^2) psi || / || psi ||` with spectrally exact
/// derivatives on a single-particle lattice state.
pub fn kg_residual(psi: &WaveFunction, mu2: f64) -> Result<f64> {
    Ok(kg_moments(psi, mu2)?.0)
}

/// Residual divided by the spectral scale `sqrt(<(p^2 + E^2)^2>)`.
pub fn kg_relative_residual(psi: &WaveFunction, mu2: f64) -> Result<f64> {
    let (r, scale) = kg_moments(psi, mu2)?;
    Ok(r / scale)
}

fn kg_moments(psi: &WaveFunction, mu2: f64) -> Result<(f64, f64)> {
    if psi.n_particles() != 1 {
        return Err(Error::InvalidParameter(format!(
            "the Klein-Gordon residual is defined for one particle, got {}",
            psi.n_particles()
        )));
    }
    let me = psi.in_basis(Basis::MomentumEnergy);
    let grid = psi.grid();
    let (mut res, mut scale, mut norm) = (0.0, 0.0, 0.0);
    for ((j, k), a) in me
        .amplitudes()
        .indexed_iter()
        .map(|(idx, a)| ((idx[0], idx[1]), a))
    {
        let (p, e) = (grid.p(j), grid.e(k));
        let w = a.norm_sqr();
        res += w * (p * p - e * e + mu2).powi(2);
        scale += w * (p * p + e * e).powi(2);
        norm += w;
    }
    if norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(((res / norm).sqrt(), (scale / norm).sqrt()))
}

/// State `sum_p phi(p) |omega_p, p>` with `omega_p = sqrt(p^2 + mu^2)`,
/// built from momentum-energy lattice points lying exactly on the shell.
/// Momenta whose `|phi|` falls below `1e-14 max|phi|` are dropped; any other
/// momentum without an on-shell energy point is an error.
pub fn on_shell_state<F>(grid: &GridSpec, mu2: f64, phi: F) -> Result<WaveFunction>
where
    F: Fn(f64) -> Complex64,
{
    if mu2 < 0.0 {
        return Err(Error::InvalidParameter(format!("mu^2 must be non-negative, got {mu2}")));
    }
    grid.validate()?;
    let weights: Vec<Complex64> = (0..grid.n_x).map(|j| phi(grid.p(j))).collect();
    let max = weights.iter().map(|w| w.norm()).fold(0.0, f64::max);
    let mut components = Vec::new();
    for (j, w) in weights.iter().enumerate() {
        if w.norm() <= 1e-14 * max {
            continue;
        }
        let omega = (grid.p(j).powi(2) + mu2).sqrt();
        let k = ((omega - grid.centre_e) / grid.de() + (grid.n_t / 2) as f64).round();
        let on_lattice = k >= 0.0 && (k as usize) < grid.n_t && (grid.e(k as usize) - omega).abs() <= 1e-9 * grid.de();
        if !on_lattice {
            return Err(Error::InvalidParameter(format!(
                "no energy lattice point on the shell at p = {}",
                grid.p(j)
            )));
        }
        components.push((vec![j, k as usize], *w));
    }
    WaveFunction::superposition(*grid, 1, Basis::MomentumEnergy, &components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn packet() -> GaussianParams {
        GaussianParams {
            sigma_x: 1.0,
            sigma_t: 1.5,
            x_bar: 0.3,
            t_bar: -0.2,
            p_bar: 0.6,
            e_bar: 1.0,
            mass: 2.0,
        }
    }

    #[test]
    fn closed_form_density_matches_modulus() {
        let g = packet();
        for &(x, t, s) in &[(0.1, 0.2, 0.0), (1.0, -0.5, 1.7), (-2.0, 1.0, -3.0)] {
            let a = g.position_time_amplitude(x, t, s).norm_sqr();
            assert!((a - g.spreading_density(x, t, s)).abs() < 1e-14);
        }
    }

    #[test]
    fn world_tube_special_values() {
        let tube = world_tube_density(&packet(), 4.0).unwrap();
        let g = packet();
        let peak = tube.density(g.x_bar, g.t_bar);
        assert!((tube.density(g.x_bar + 0.6 * 2.0, g.t_bar + 2.0) - peak).abs() < 1e-15);
        assert!((tube.time_marginal().unwrap() - 0.5).abs() < 1e-15);
        let expected = (1.0 + 2.25 * 0.36) / 1.0;
        assert!((tube.conditional_variance() - expected).abs() < 1e-15);
    }

    #[test]
    fn trajectory_slope() {
        let (slope, icpt) = conditional_trajectory(&packet()).unwrap();
        assert!((slope - 0.6).abs() < 1e-15);
        assert!((icpt - (0.3 + 0.6 * 0.2)).abs() < 1e-15);
        let still = GaussianParams { p_bar: 0.0, ..packet() };
        assert_eq!(conditional_trajectory(&still).unwrap(), (0.0, 0.3));
        let zero = GaussianParams { e_bar: 0.0, ..packet() };
        assert!(conditional_trajectory(&zero).is_err());
    }

    #[test]
    fn massless_plane_wave_is_on_shell() {
        let grid = make_grid(16, 16, 0.5, 0.5, 0.0, 0.0).unwrap();
        let j = 11;
        let p = grid.p(j);
        let psi = on_shell_state(&grid, 0.0, |q| {
            if (q - p).abs() < 1e-12 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .unwrap();
        assert!(kg_residual(&psi, 0.0).unwrap() < 1e-10);
    }

    #[test]
    fn oversized_packet_is_rejected() {
        let grid = make_grid(16, 16, 0.25, 0.25, 0.0, 0.0).unwrap();
        let e = gaussian_state(&grid, &[packet()], 0.0).unwrap_err();
        assert!(matches!(e, Error::LatticeOverflow(_)));
    }
}
