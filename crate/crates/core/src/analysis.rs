//! Spacetime densities, decay-rate fits, Born statistics and drift reports.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dynamics::{Sample, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::grid::{Basis, GridSpec, WaveFunction};

/// Collapse is declared once `Var(A) < COLLAPSE_FRACTION * gap^2`.
pub const COLLAPSE_FRACTION: f64 = 1e-3;

/// Index of the eigenvalue nearest to `mean` if the variance criterion holds.
pub fn classify_outcome(mean: f64, variance: f64, eigenvalues: &[f64], gap: f64) -> Option<usize> {
    if variance >= COLLAPSE_FRACTION * gap * gap {
        return None;
    }
    eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - mean).abs().total_cmp(&(b.1 - mean).abs()))
        .map(|(i, _)| i)
}

/// Time-averaged per-particle density over the position-time lattice.
///
/// Each plane holds `P_i(x, t)` as a density per unit `dx dt`; the
/// multi-particle density is by definition the product of these marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeHistogram {
    pub grid: GridSpec,
    pub n_particles: usize,
    pub s_total: f64,
    pub samples: usize,
    /// Accumulated `sum ds / S`.
    pub weight: f64,
    pub planes: Vec<Array2<f64>>,
}

impl SpacetimeHistogram {
    pub fn new(grid: GridSpec, n_particles: usize, s_total: f64) -> Self {
        Self {
            grid,
            n_particles,
            s_total,
            samples: 0,
            weight: 0.0,
            planes: vec![Array2::zeros((grid.n_x, grid.n_t)); n_particles],
        }
    }

    /// Add `(ds / S) |psi|^2` marginalised onto each particle's plane.
    pub fn accumulate(&mut self, psi: &WaveFunction, ds: f64) -> Result<()> {
        if psi.basis() != Basis::PositionTime {
            return Err(Error::BasisMismatch {
                expected: Basis::PositionTime,
                found: psi.basis(),
            });
        }
        if *psi.grid() != self.grid || psi.n_particles() != self.n_particles {
            return Err(Error::GridMismatch);
        }
        let w = ds / self.s_total;
        let density = psi.density();
        let others = self.grid.cell(Basis::PositionTime).powi(self.n_particles as i32 - 1);
        for (i, plane) in self.planes.iter_mut().enumerate() {
            let mut m = density.clone();
            for axis in (0..2 * self.n_particles).rev() {
                if axis / 2 != i {
                    m = m.sum_axis(Axis(axis));
                }
            }
            let m = m.into_dimensionality::<ndarray::Ix2>().expect("two axes remain");
            plane.scaled_add(w * others, &m);
        }
        self.samples += 1;
        self.weight += w;
        Ok(())
    }

    /// Associative, commutative combination of two partial histograms.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.n_particles != other.n_particles || self.s_total != other.s_total {
            return Err(Error::GridMismatch);
        }
        for (a, b) in self.planes.iter_mut().zip(&other.planes) {
            *a += b;
        }
        self.samples += other.samples;
        self.weight += other.weight;
        Ok(())
    }

    /// Scale every plane, e.g. to average an ensemble sum.
    pub fn scale(&mut self, factor: f64) {
        for p in &mut self.planes {
            p.mapv_inplace(|v| v * factor);
        }
        self.weight *= factor;
    }

    fn plane(&self, particle: usize) -> Result<&Array2<f64>> {
        self.planes.get(particle).ok_or(Error::ParticleIndex {
            index: particle,
            n_particles: self.n_particles,
        })
    }

    pub fn total_mass(&self, particle: usize) -> Result<f64> {
        Ok(self.plane(particle)?.sum() * self.grid.dx * self.grid.dt_lat)
    }

    /// `P(t_k) = sum_j P(x_j, t_k) dx`.
    pub fn time_marginal(&self, particle: usize) -> Result<Vec<f64>> {
        Ok(self
            .plane(particle)?
            .sum_axis(Axis(0))
            .iter()
            .map(|v| v * self.grid.dx)
            .collect())
    }

    /// Nearest lattice time index to `t`.
    pub fn t_index(&self, t: f64) -> usize {
        let k = ((t - self.grid.centre_t) / self.grid.dt_lat + (self.grid.n_t / 2) as f64).round();
        k.clamp(0.0, (self.grid.n_t - 1) as f64) as usize
    }

    /// `P(x | t_k) = P(x, t_k) / P(t_k)` over the x lattice.
    pub fn conditional_density(&self, particle: usize, k: usize) -> Result<Vec<f64>> {
        let plane = self.plane(particle)?;
        if k >= self.grid.n_t {
            return Err(Error::InvalidParameter(format!("time index {k} outside lattice")));
        }
        let column = plane.column(k);
        let pt: f64 = column.sum() * self.grid.dx;
        if pt.is_nan() || pt <= f64::MIN_POSITIVE {
            return Err(Error::EmptySlice(self.grid.t(k)));
        }
        Ok(column.iter().map(|v| v / pt).collect())
    }

    /// Mean and variance of `x` under `P(x | t_k)`.
    pub fn conditional_moments(&self, particle: usize, k: usize) -> Result<(f64, f64)> {
        let c = self.conditional_density(particle, k)?;
        let xs: Vec<f64> = (0..self.grid.n_x).map(|j| self.grid.x(j)).collect();
        let mean: f64 = c.iter().zip(&xs).map(|(p, x)| p * x).sum::<f64>() * self.grid.dx;
        let var: f64 = c.iter().zip(&xs).map(|(p, x)| p * (x - mean).powi(2)).sum::<f64>() * self.grid.dx;
        Ok((mean, var))
    }
}

/// Ordinary least-squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::InvalidParameter(format!("{} x values for {} y values", n, ys.len())));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!("a line fit needs at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("x values are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: (rss / (nf - 2.0) / sxx).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub lambda: f64,
    pub fit: LinearFit,
}

/// Fit `ln |rho_ab|(s)` to a line; `lambda = -2 slope / delta_a^2`.
pub fn fit_decay_rate(s: &[f64], magnitudes: &[f64], delta_a: f64) -> Result<DecayFit> {
    if s.len() < 10 || magnitudes.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs at least 10 samples, got {}",
            magnitudes.len().min(s.len())
        )));
    }
    if delta_a == 0.0 || !delta_a.is_finite() {
        return Err(Error::InvalidParameter("eigenvalue gap must be non-zero".into()));
    }
    if let Some((index, &value)) = magnitudes.iter().enumerate().find(|(_, m)| m.is_nan() || **m <= 0.0) {
        return Err(Error::NonPositive { index, value });
    }
    let logs: Vec<f64> = magnitudes.iter().map(|m| m.ln()).collect();
    let fit = linear_fit(s, &logs)?;
    Ok(DecayFit {
        lambda: -2.0 * fit.slope / (delta_a * delta_a),
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BornReport {
    pub total: usize,
    /// Trajectories that never met the collapse criterion; excluded below.
    pub uncollapsed: usize,
    pub counts: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub expected: Vec<f64>,
    /// Binomial standard error of each frequency under the expected law.
    pub stderr: Vec<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl BornReport {
    pub fn collapsed_fraction(&self) -> f64 {
        (self.total - self.uncollapsed) as f64 / self.total as f64
    }

    /// Every frequency lies within `k` binomial standard errors.
    pub fn within_sigmas(&self, k: f64) -> bool {
        self.frequencies
            .iter()
            .zip(&self.expected)
            .zip(&self.stderr)
            .all(|((f, p), s)| (f - p).abs() <= k * s)
    }
}

/// Outcome frequencies against `probabilities` with a chi-square test.
pub fn born_statistics(outcomes: &[Option<usize>], probabilities: &[f64]) -> Result<BornReport> {
    let total_p: f64 = probabilities.iter().sum();
    if probabilities.is_empty() || probabilities.iter().any(|p| p.is_nan() || *p < 0.0) || (total_p - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter("outcome probabilities must be non-negative and sum to 1".into()));
    }
    let mut counts = vec![0usize; probabilities.len()];
    let mut uncollapsed = 0;
    for o in outcomes {
        match o {
            Some(i) if *i < counts.len() => counts[*i] += 1,
            Some(i) => return Err(Error::InvalidParameter(format!("outcome {i} has no probability"))),
            None => uncollapsed += 1,
        }
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::InsufficientData("no collapsed trajectories".into()));
    }
    let nf = n as f64;
    let mut chi2 = 0.0;
    let mut cells = 0usize;
    for (c, p) in counts.iter().zip(probabilities) {
        if *p > 0.0 {
            chi2 += (*c as f64 - nf * p).powi(2) / (nf * p);
            cells += 1;
        } else if *c > 0 {
            chi2 = f64::INFINITY;
        }
    }
    let dof = cells.saturating_sub(1);
    let p_value = if chi2.is_infinite() {
        0.0
    } else if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).expect("positive dof").sf(chi2)
    };
    Ok(BornReport {
        total: outcomes.len(),
        uncollapsed,
        frequencies: counts.iter().map(|c| *c as f64 / nf).collect(),
        counts,
        expected: probabilities.to_vec(),
        stderr: probabilities.iter().map(|p| (p * (1.0 - p) / nf).sqrt()).collect(),
        chi2,
        dof,
        p_value,
    })
}

/// Scalar read from a trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "observable", content = "index", rename_all = "snake_case")]
pub enum Observable {
    Generator(usize),
    Energy(usize),
    Time(usize),
    Position(usize),
    Momentum(usize),
}

impl Observable {
    pub fn read(&self, s: &Sample) -> Option<f64> {
        match *self {
            Observable::Generator(i) => s.generator_mean.get(i).copied(),
            Observable::Energy(i) => s.energy.get(i).copied(),
            Observable::Time(i) => s.time.get(i).copied(),
            Observable::Position(i) => s.position.get(i).copied(),
            Observable::Momentum(i) => s.momentum.get(i).copied(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Observable::Generator(i) => format!("<A_{i}>"),
            Observable::Energy(i) => format!("<E_{i}>"),
            Observable::Time(i) => format!("<t_{i}>"),
            Observable::Position(i) => format!("<x_{i}>"),
            Observable::Momentum(i) => format!("<p_{i}>"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub observable: String,
    pub trajectories: usize,
    /// Ensemble mean of `(O(end) - O(start)) / (s_end - s_start)`.
    pub mean_drift: f64,
    /// Ensemble mean of the predicted rate integrated along each trajectory.
    pub predicted_drift: f64,
    /// Standard error of the paired difference.
    pub stderr: f64,
    pub pass: bool,
}

/// Minimum ensemble size for a drift report.
pub const MIN_TRAJECTORIES: usize = 100;

/// Per-unit-`s` drift of `observable` compared with a predicted rate (zero
/// when `None`), integrated by the trapezoid rule over each trajectory's
/// samples. Passes iff `|mean - predicted| < 3 stderr + abs_tol`.
pub fn martingale_report(
    records: &[TrajectoryRecord],
    observable: Observable,
    predicted_rate: Option<&dyn Fn(&Sample) -> f64>,
    abs_tol: f64,
) -> Result<MartingaleReport> {
    let per: Vec<(f64, f64)> = records
        .iter()
        .map(|r| trajectory_drift(&r.samples, observable, predicted_rate))
        .collect::<Result<_>>()?;
    drift_summary(&per, observable, abs_tol)
}

/// Observed and predicted per-unit-`s` drift along one sample series.
pub fn trajectory_drift(
    samples: &[Sample],
    observable: Observable,
    predicted_rate: Option<&dyn Fn(&Sample) -> f64>,
) -> Result<(f64, f64)> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) if samples.len() >= 2 => (f, l),
        _ => return Err(Error::InsufficientData("trajectory has fewer than 2 samples".into())),
    };
    let read = |s: &Sample| {
        observable
            .read(s)
            .ok_or_else(|| Error::InvalidParameter(format!("{} not recorded", observable.label())))
    };
    let span = last.s - first.s;
    let observed = (read(last)? - read(first)?) / span;
    let predicted = match predicted_rate {
        None => 0.0,
        Some(f) => {
            samples
                .windows(2)
                .map(|w| 0.5 * (f(&w[0]) + f(&w[1])) * (w[1].s - w[0].s))
                .sum::<f64>()
                / span
        }
    };
    Ok((observed, predicted))
}

/// Combine per-trajectory `(observed, predicted)` drifts in index order.
pub fn drift_summary(per: &[(f64, f64)], observable: Observable, abs_tol: f64) -> Result<MartingaleReport> {
    let n = per.len();
    if n < MIN_TRAJECTORIES {
        return Err(Error::InsufficientData(format!(
            "drift report needs at least {MIN_TRAJECTORIES} trajectories, got {n}"
        )));
    }
    let nf = n as f64;
    let mean_obs = per.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_pred = per.iter().map(|p| p.1).sum::<f64>() / nf;
    let diffs: Vec<f64> = per.iter().map(|(o, p)| o - p).collect();
    let md = mean_obs - mean_pred;
    let var = diffs.iter().map(|d| (d - md).powi(2)).sum::<f64>() / (nf - 1.0);
    let stderr = (var / nf).sqrt();
    Ok(MartingaleReport {
        observable: observable.label(),
        trajectories: n,
        mean_drift: mean_obs,
        predicted_drift: mean_pred,
        stderr,
        pass: md.abs() < 3.0 * stderr + abs_tol,
    })
}
