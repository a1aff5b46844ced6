//! Declarative scenario files (TOML).

use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use tcsl_core::dynamics::{CoherencePair, NoiseKind, RunConfig};
use tcsl_core::oracles::GaussianParams;
use tcsl_core::operators::{hamiltonian_multi, OperatorKind};
use tcsl_core::{Basis, GridSpec, OperatorSpec, WaveFunction};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Invalid {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_x: usize,
    pub n_t: usize,
    pub dx: f64,
    pub dt: f64,
    #[serde(default)]
    pub centre_x: f64,
    #[serde(default)]
    pub centre_t: f64,
    #[serde(default)]
    pub centre_p: f64,
    #[serde(default)]
    pub centre_e: f64,
}

impl GridConfig {
    pub fn spec(&self) -> tcsl_core::Result<GridSpec> {
        Ok(tcsl_core::make_grid(self.n_x, self.n_t, self.dx, self.dt, self.centre_x, self.centre_t)?
            .with_momentum_centre(self.centre_p, self.centre_e))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub index: [usize; 2],
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParticleConfig {
    /// Gaussian packet given at `s = 0`, started at `s = -S/2`.
    Gaussian {
        sigma_x: f64,
        sigma_t: f64,
        x_bar: f64,
        t_bar: f64,
        p_bar: f64,
        e_bar: f64,
        mass: f64,
    },
    /// Superposition of lattice points of a single-particle lattice.
    Superposition { basis: Basis, components: Vec<Component> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianConfig {
    pub masses: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub s_total: f64,
    pub ds: f64,
    #[serde(default = "one")]
    pub sample_every: usize,
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub noise: NoiseKind,
    /// Pair trajectories `2k`, `2k+1` with opposite increments.
    #[serde(default)]
    pub antithetic: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BornRequest {
    pub generator: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayRequest {
    pub generator: usize,
    pub basis: Basis,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ObservableName {
    Generator,
    Energy,
    Time,
    Position,
    Momentum,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateTerm {
    pub observable: ObservableName,
    pub index: usize,
    pub coefficient: f64,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    /// Martingale: zero drift.
    #[default]
    Zero,
    /// `<E_i> / m_i` for the time of particle `i`.
    TimeFlow,
    /// Linear combination given by `rate`.
    Linear,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleRequest {
    pub observable: ObservableName,
    pub index: usize,
    #[serde(default)]
    pub predicted: Prediction,
    #[serde(default)]
    pub rate: Vec<RateTerm>,
    #[serde(default)]
    pub abs_tol: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub born: Option<BornRequest>,
    pub decay: Option<DecayRequest>,
    #[serde(default)]
    pub martingale: Vec<MartingaleRequest>,
    #[serde(default)]
    pub histogram: bool,
    /// Relative Klein-Gordon residual of each final state against the
    /// first generator's mean.
    #[serde(default)]
    pub kg_residual: bool,
    #[serde(default)]
    pub boost_thetas: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default = "one")]
    pub trajectories: usize,
    pub output: Option<String>,
    pub grid: GridConfig,
    pub particles: Vec<ParticleConfig>,
    pub hamiltonian: Option<HamiltonianConfig>,
    #[serde(default)]
    pub generators: Vec<OperatorSpec>,
    pub run: RunSection,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

/// A parsed scenario together with its source text and hash.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub path: String,
    pub source: String,
    pub hash: String,
    pub grid: GridSpec,
}

pub fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// 1-based line of the first `key =` assignment, or of `[section]`.
fn locate(source: &str, key: &str) -> usize {
    let plain = |l: &str| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))
    };
    let header = |l: &str| {
        let l = l.trim();
        l == format!("[{key}]") || l == format!("[[{key}]]")
    };
    source
        .lines()
        .position(|l| plain(l) || header(l))
        .map_or(1, |i| i + 1)
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&path.display().to_string(), &source)
    }

    pub fn parse(path: &str, source: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = toml::from_str(source).map_err(|e| {
            let line = e
                .span()
                .map_or(1, |s| source[..s.start.min(source.len())].lines().count().max(1));
            ConfigError::Invalid {
                path: path.into(),
                line,
                message: e.message().to_string(),
            }
        })?;
        let fail = |key: &str, message: String| ConfigError::Invalid {
            path: path.into(),
            line: locate(source, key),
            message,
        };
        let grid = config.grid.spec().map_err(|e| fail("grid", e.to_string()))?;
        let scenario = Self {
            hash: hash_text(source),
            path: path.into(),
            source: source.into(),
            grid,
            config,
        };
        scenario.validate().map_err(|(key, msg)| fail(key, msg))?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<(), (&'static str, String)> {
        let c = &self.config;
        if c.schema_version != SCHEMA_VERSION {
            return Err((
                "schema_version",
                format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", c.schema_version),
            ));
        }
        if c.trajectories == 0 {
            return Err(("trajectories", "trajectory count must be at least 1".into()));
        }
        if c.particles.is_empty() {
            return Err(("particles", "at least one particle is required".into()));
        }
        let n = c.particles.len();
        self.run_config().n_steps().map_err(|e| ("run", e.to_string()))?;
        if let Some(h) = &c.hamiltonian {
            if h.masses.len() != n {
                return Err(("masses", format!("{} masses for {n} particle(s)", h.masses.len())));
            }
            hamiltonian_multi(&h.masses).map_err(|e| ("masses", e.to_string()))?;
        }
        for g in &c.generators {
            if !(g.lambda.is_finite() && g.lambda >= 0.0) {
                return Err(("lambda", format!("collapse strength must be non-negative, got {}", g.lambda)));
            }
            g.diagonal(&self.grid, n).map_err(|e| ("generators", e.to_string()))?;
        }
        let half = 0.5 * c.run.s_total;
        for p in &c.particles {
            match p {
                ParticleConfig::Gaussian { .. } => {
                    let g = gaussian_params(p).expect("gaussian");
                    g.validate().map_err(|e| ("particles", e.to_string()))?;
                    for s in [-half, 0.0, half] {
                        g.check_fit(&self.grid, s).map_err(|e| ("particles", e.to_string()))?;
                    }
                }
                ParticleConfig::Superposition { components, .. } => {
                    if components.is_empty() {
                        return Err(("components", "superposition needs at least one component".into()));
                    }
                    for comp in components {
                        if comp.index[0] >= self.grid.n_x || comp.index[1] >= self.grid.n_t {
                            return Err(("components", format!("lattice index {:?} outside the grid", comp.index)));
                        }
                    }
                }
            }
        }
        let a = &c.analysis;
        if let Some(b) = &a.born {
            if b.generator >= c.generators.len() {
                return Err(("born", format!("generator {} does not exist", b.generator)));
            }
        }
        if let Some(d) = &a.decay {
            if d.generator >= c.generators.len() {
                return Err(("decay", format!("generator {} does not exist", d.generator)));
            }
            let shape = self.grid.shape(n);
            for idx in [&d.a, &d.b] {
                if idx.len() != shape.len() || idx.iter().zip(&shape).any(|(i, s)| i >= s) {
                    return Err(("decay", format!("lattice index {idx:?} outside shape {shape:?}")));
                }
            }
        }
        for m in &a.martingale {
            let bound = match m.observable {
                ObservableName::Generator => c.generators.len(),
                _ => n,
            };
            if m.index >= bound {
                return Err(("martingale", format!("{:?} index {} out of range", m.observable, m.index)));
            }
            if m.predicted == Prediction::TimeFlow {
                if m.observable != ObservableName::Time {
                    return Err(("predicted", "time_flow applies to the time observable".into()));
                }
                if c.hamiltonian.is_none() {
                    return Err(("predicted", "time_flow needs a Hamiltonian".into()));
                }
            }
        }
        if a.kg_residual && (n != 1 || c.generators.is_empty()) {
            return Err(("kg_residual", "the Klein-Gordon check needs one particle and a generator".into()));
        }
        Ok(())
    }

    pub fn n_particles(&self) -> usize {
        self.config.particles.len()
    }

    pub fn run_config(&self) -> RunConfig {
        let r = &self.config.run;
        let coherences = self
            .config
            .analysis
            .decay
            .iter()
            .map(|d| CoherencePair {
                basis: d.basis,
                a: d.a.clone(),
                b: d.b.clone(),
            })
            .collect();
        RunConfig {
            s_total: r.s_total,
            ds: r.ds,
            sample_every: r.sample_every,
            snapshot_every: r.snapshot_every,
            histogram: self.config.analysis.histogram,
            coherences,
        }
    }

    pub fn hamiltonian(&self) -> tcsl_core::Result<Option<OperatorSpec>> {
        self.config
            .hamiltonian
            .as_ref()
            .map(|h| hamiltonian_multi(&h.masses))
            .transpose()
    }

    /// The initial state at `s = -S/2`, in the momentum-energy basis.
    pub fn initial_state(&self) -> tcsl_core::Result<WaveFunction> {
        let s0 = -0.5 * self.config.run.s_total;
        let factors = self
            .config
            .particles
            .iter()
            .map(|p| match p {
                ParticleConfig::Gaussian { .. } => {
                    tcsl_core::oracles::gaussian_state(&self.grid, &[gaussian_params(p).expect("gaussian")], s0)
                }
                ParticleConfig::Superposition { basis, components } => {
                    let comps: Vec<(Vec<usize>, Complex64)> = components
                        .iter()
                        .map(|c| (c.index.to_vec(), Complex64::new(c.re, c.im)))
                        .collect();
                    WaveFunction::superposition(self.grid, 1, *basis, &comps)
                        .map(|w| w.in_basis(Basis::MomentumEnergy))
                }
            })
            .collect::<tcsl_core::Result<Vec<_>>>()?;
        WaveFunction::product(&factors)
    }

    pub fn mass(&self, particle: usize) -> Option<f64> {
        self.config
            .hamiltonian
            .as_ref()
            .and_then(|h| h.masses.get(particle).copied())
    }
}

pub fn gaussian_params(p: &ParticleConfig) -> Option<GaussianParams> {
    match *p {
        ParticleConfig::Gaussian {
            sigma_x,
            sigma_t,
            x_bar,
            t_bar,
            p_bar,
            e_bar,
            mass,
        } => Some(GaussianParams {
            sigma_x,
            sigma_t,
            x_bar,
            t_bar,
            p_bar,
            e_bar,
            mass,
        }),
        ParticleConfig::Superposition { .. } => None,
    }
}

/// Eigenvalues of a diagonal generator carrying weight in `psi`, their
/// probabilities, and the smallest gap between them.
pub fn spectrum(psi: &WaveFunction, op: &OperatorSpec) -> tcsl_core::Result<(Vec<f64>, Vec<f64>, f64)> {
    let diag = op.diagonal(psi.grid(), psi.n_particles())?;
    let state = psi.in_basis(op.basis());
    let cell = state.cell_volume();
    let mut levels: Vec<(f64, f64)> = Vec::new();
    for (a, d) in state.amplitudes().iter().zip(diag.iter()) {
        let w = a.norm_sqr() * cell;
        if w <= 1e-14 {
            continue;
        }
        let tol = 1e-9 * d.abs().max(1.0);
        match levels.iter_mut().find(|(v, _)| (v - d).abs() <= tol) {
            Some(level) => level.1 += w,
            None => levels.push((*d, w)),
        }
    }
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = levels.iter().map(|l| l.1).sum();
    let gap = levels
        .windows(2)
        .map(|w| w[1].0 - w[0].0)
        .fold(f64::INFINITY, f64::min);
    Ok((
        levels.iter().map(|l| l.0).collect(),
        levels.iter().map(|l| l.1 / total).collect(),
        gap,
    ))
}

/// Human-readable kind of an operator, for reports.
pub fn describe(op: &OperatorSpec) -> String {
    match &op.kind {
        OperatorKind::MassShell { .. } => "mass_shell".into(),
        OperatorKind::CollapseMass { particle } => format!("collapse_mass[{particle}]"),
        OperatorKind::Interval { i, j } => format!("interval[{i},{j}]"),
        OperatorKind::Energy { particle } => format!("energy[{particle}]"),
        OperatorKind::Time { particle } => format!("time[{particle}]"),
        OperatorKind::Position { particle } => format!("position[{particle}]"),
        OperatorKind::Momentum { particle } => format!("momentum[{particle}]"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
schema_version = 1
seed = 7
trajectories = 4

[grid]
n_x = 16
n_t = 16
dx = 0.8
dt = 0.8

[[particles]]
kind = "gaussian"
sigma_x = 1.0
sigma_t = 1.0
x_bar = 0.0
t_bar = 0.0
p_bar = 0.0
e_bar = 0.0
mass = 10.0

[run]
s_total = 1.0
ds = 0.1
"#;

    #[test]
    fn parses_minimal_config() {
        let s = Scenario::parse("base.toml", BASE).unwrap();
        assert_eq!(s.config.trajectories, 4);
        assert_eq!(s.run_config().n_steps().unwrap(), 10);
        assert_eq!(s.hash.len(), 64);
    }

    #[test]
    fn zero_trajectories_is_line_anchored() {
        let text = BASE.replace("trajectories = 4", "trajectories = 0");
        let err = Scenario::parse("c.toml", &text).unwrap_err().to_string();
        assert_eq!(err, "c.toml:4: trajectory count must be at least 1");
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let text = BASE.replace("dx = 0.8", "dx = ");
        let err = Scenario::parse("c.toml", &text).unwrap_err().to_string();
        assert!(err.starts_with("c.toml:9:"), "{err}");
    }

    #[test]
    fn step_must_divide_range() {
        let text = BASE.replace("ds = 0.1", "ds = 0.3");
        let err = Scenario::parse("c.toml", &text).unwrap_err().to_string();
        assert!(err.contains("does not divide"), "{err}");
    }
}
