//! Normalised Itô evolution with one or several collapse generators.
//!
//! One step of size `ds` applies
//!
//! ```text
//! dpsi = [ -i H ds - 1/2 sum_i lambda_i (A_i - <A_i>)^2 ds + sum_i (A_i - <A_i>) dB_i ] psi
//! ```
//!
//! followed by renormalisation. `H` is diagonal in momentum-energy and is
//! applied as the exact phase `exp(-i H ds)`. Generators are grouped by the
//! basis they are diagonal in; the momentum-energy group is applied first,
//! then the position-time group, each with expectations taken on the state
//! entering that group.

use ndarray::{ArrayD, IxDyn, Zip};
use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::analysis::SpacetimeHistogram;
use crate::error::{Error, Result};
use crate::grid::{weighted_moments, Basis, GridSpec, WaveFunction};
use crate::operators::OperatorSpec;

/// Step-control threshold on `ds * max_i(lambda_i * Var(A_i))`.
pub const STEP_CONTROL_LIMIT: f64 = 0.1;
/// Maximum number of successive ds-halvings before a trajectory fails.
pub const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `dB_i = sqrt(lambda_i ds) z` with `z` standard normal.
    #[default]
    Gaussian,
    /// `dB_i = +-sqrt(lambda_i ds)` with equal probability (weak scheme).
    Rademacher,
}

/// Where a trajectory draws its increments from.
///
/// Increments come from ChaCha8 keyed by `seed` on stream `2 * stream`;
/// Brownian-bridge refinements use stream `2 * stream + 1`. Normals use the
/// Box-Muller transform `sqrt(-2 ln u1) (cos, sin)(2 pi u2)` with
/// `u1 in (0, 1]` and `u2 in [0, 1)` built from the top 53 bits of a word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSource {
    pub seed: u64,
    pub stream: u64,
    pub negate: bool,
    pub kind: NoiseKind,
}

impl NoiseSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            negate: false,
            kind: NoiseKind::Gaussian,
        }
    }

    pub fn with_kind(mut self, kind: NoiseKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn negated(mut self) -> Self {
        self.negate = !self.negate;
        self
    }
}

pub(crate) struct Normals {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Normals {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn bit(&mut self) -> bool {
        self.rng.next_u64() >> 63 == 1
    }

    fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Lazily generated increments `dB` for a fixed step size.
pub struct NoiseStream {
    normals: Normals,
    bridge: Normals,
    source: NoiseSource,
    scales: Vec<f64>,
    lambdas: Vec<f64>,
}

impl NoiseStream {
    pub fn new(source: NoiseSource, ds: f64, lambdas: &[f64]) -> Self {
        Self {
            normals: Normals::new(source.seed, source.stream.wrapping_mul(2)),
            bridge: Normals::new(source.seed, source.stream.wrapping_mul(2).wrapping_add(1)),
            source,
            scales: lambdas.iter().map(|l| (l * ds).sqrt()).collect(),
            lambdas: lambdas.to_vec(),
        }
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        let sign = if self.source.negate { -1.0 } else { 1.0 };
        for (o, s) in out.iter_mut().zip(&self.scales) {
            let z = match self.source.kind {
                NoiseKind::Gaussian => self.normals.normal(),
                NoiseKind::Rademacher => {
                    if self.normals.bit() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            *o = sign * s * z;
        }
    }

    /// Split an increment over `ds` into two halves with the Brownian bridge.
    fn bridge_split(&mut self, db: &[f64], ds: f64) -> (Vec<f64>, Vec<f64>) {
        let first: Vec<f64> = db
            .iter()
            .zip(&self.lambdas)
            .map(|(d, l)| 0.5 * d + (l * ds / 4.0).sqrt() * self.bridge.normal())
            .collect();
        let second = db.iter().zip(&first).map(|(d, f)| d - f).collect();
        (first, second)
    }
}

/// A materialised increment sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisePath {
    pub source: NoiseSource,
    pub ds: f64,
    pub lambdas: Vec<f64>,
    pub increments: Vec<Vec<f64>>,
}

impl NoisePath {
    pub fn generate(source: NoiseSource, ds: f64, lambdas: &[f64], n_steps: usize) -> Self {
        let mut stream = NoiseStream::new(source, ds, lambdas);
        let increments = (0..n_steps)
            .map(|_| {
                let mut v = vec![0.0; lambdas.len()];
                stream.fill(&mut v);
                v
            })
            .collect();
        Self {
            source,
            ds,
            lambdas: lambdas.to_vec(),
            increments,
        }
    }

    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        out.source = out.source.negated();
        for step in &mut out.increments {
            for v in step.iter_mut() {
                *v = -*v;
            }
        }
        out
    }
}

/// State after one step plus the pre-renormalisation norm drift
/// `sum over groups of (|psi'|^2 - 1)`.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: WaveFunction,
    pub norm_drift: f64,
    /// Generator means the step was built on, in generator order.
    pub means: Vec<f64>,
}

struct Generator {
    diag: ArrayD<f64>,
    lambda: f64,
}

/// Precomputed diagonals for repeated stepping of one model.
pub struct CollapseSystem {
    grid: GridSpec,
    n_particles: usize,
    hamiltonian: Option<ArrayD<f64>>,
    me_group: Vec<Generator>,
    xt_group: Vec<Generator>,
    generators: Vec<OperatorSpec>,
    /// Maps generator index to (is position-time group, index in group).
    order: Vec<(bool, usize)>,
}

impl CollapseSystem {
    pub fn new(
        grid: GridSpec,
        n_particles: usize,
        hamiltonian: Option<&OperatorSpec>,
        generators: &[OperatorSpec],
    ) -> Result<Self> {
        let hamiltonian = match hamiltonian {
            Some(h) if h.basis() != Basis::MomentumEnergy => {
                return Err(Error::BasisMismatch {
                    expected: Basis::MomentumEnergy,
                    found: h.basis(),
                })
            }
            Some(h) => Some(h.diagonal(&grid, n_particles)?),
            None => None,
        };
        let (mut me_group, mut xt_group, mut order) = (Vec::new(), Vec::new(), Vec::new());
        for g in generators {
            if !(g.lambda.is_finite() && g.lambda >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "collapse strength must be non-negative, got {}",
                    g.lambda
                )));
            }
            let gen = Generator {
                diag: g.diagonal(&grid, n_particles)?,
                lambda: g.lambda,
            };
            match g.basis() {
                Basis::MomentumEnergy => {
                    order.push((false, me_group.len()));
                    me_group.push(gen);
                }
                Basis::PositionTime => {
                    order.push((true, xt_group.len()));
                    xt_group.push(gen);
                }
            }
        }
        Ok(Self {
            grid,
            n_particles,
            hamiltonian,
            me_group,
            xt_group,
            generators: generators.to_vec(),
            order,
        })
    }

    pub fn generators(&self) -> &[OperatorSpec] {
        &self.generators
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.lambda).collect()
    }

    fn check(&self, psi: &WaveFunction) -> Result<()> {
        if *psi.grid() != self.grid || psi.n_particles() != self.n_particles {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// One exponential Euler-Maruyama step; rejects the step when the control product
    /// `ds * lambda_i * Var(A_i)` exceeds [`STEP_CONTROL_LIMIT`].
    pub fn step(&self, psi: &WaveFunction, db: &[f64], ds: f64) -> Result<StepOutcome> {
        self.check(psi)?;
        if db.len() != self.generators.len() {
            return Err(Error::InvalidParameter(format!(
                "{} increments for {} generators",
                db.len(),
                self.generators.len()
            )));
        }
        let out_basis = psi.basis();
        let split = |group: bool| -> Vec<f64> {
            self.order
                .iter()
                .zip(db)
                .filter(|((g, _), _)| *g == group)
                .map(|(_, d)| *d)
                .collect()
        };
        let mut state = psi.in_basis(Basis::MomentumEnergy);
        if let Some(h) = &self.hamiltonian {
            Zip::from(state.amplitudes_mut())
                .and(h)
                .for_each(|a, &e| *a *= Complex64::from_polar(1.0, -e * ds));
        }
        let (mut drift, mut me_means, mut xt_means) = (0.0, Vec::new(), Vec::new());
        if !self.me_group.is_empty() {
            let (d, m) = apply_group(&mut state, &self.me_group, &split(false), ds)?;
            drift += d;
            me_means = m;
        }
        if !self.xt_group.is_empty() {
            let mut xt = state.in_basis(Basis::PositionTime);
            let (d, m) = apply_group(&mut xt, &self.xt_group, &split(true), ds)?;
            drift += d;
            xt_means = m;
            state = xt;
        }
        let means = self
            .order
            .iter()
            .map(|&(xt, i)| if xt { xt_means[i] } else { me_means[i] })
            .collect();
        Ok(StepOutcome {
            state: state.in_basis(out_basis),
            norm_drift: drift,
            means,
        })
    }
}

/// Multiply by `exp(sum_i [-lambda_i (a - <A_i>)^2 ds + (a - <A_i>) dB_i])`
/// and renormalise; returns `|psi'|^2 - 1` before renormalisation and the
/// means used.
///
/// This is the exact solution of the linear equation over the step with the
/// means frozen; it matches the Euler factor
/// `1 + sum_i [-lambda_i/2 (a - <A_i>)^2 ds + (a - <A_i>) dB_i]` to first
/// order but stays positive on lattice points far from the mean.
fn apply_group(psi: &mut WaveFunction, group: &[Generator], db: &[f64], ds: f64) -> Result<(f64, Vec<f64>)> {
    let means: Vec<f64> = group
        .iter()
        .map(|g| weighted_moments(psi.amplitudes(), &g.diag))
        .enumerate()
        .map(|(i, (mean, var))| {
            let product = ds * group[i].lambda * var;
            if product > STEP_CONTROL_LIMIT {
                Err(Error::StepRejected {
                    ds,
                    product,
                    suggested: ds * STEP_CONTROL_LIMIT / product,
                })
            } else {
                Ok(mean)
            }
        })
        .collect::<Result<_>>()?;
    let amps = psi.amplitudes_mut();
    let mut exponent = ArrayD::<f64>::zeros(amps.raw_dim());
    for ((g, mean), d) in group.iter().zip(&means).zip(db) {
        let l = g.lambda * ds;
        Zip::from(&mut exponent).and(&g.diag).for_each(|f, &a| {
            let c = a - mean;
            *f += -l * c * c + c * d;
        });
    }
    Zip::from(&mut *amps).and(&exponent).for_each(|a, &f| *a *= f.exp());
    Ok((psi.renormalise()? - 1.0, means))
}

/// Exact free step `exp(-i H ds)` for a momentum-energy-diagonal `H`.
pub fn step_deterministic(psi: &WaveFunction, h: &OperatorSpec, ds: f64) -> Result<WaveFunction> {
    let system = CollapseSystem::new(*psi.grid(), psi.n_particles(), Some(h), &[])?;
    Ok(system.step(psi, &[], ds)?.state)
}

/// One stochastic step for an ad-hoc model; see [`CollapseSystem::step`].
pub fn step_sde(
    psi: &WaveFunction,
    h: Option<&OperatorSpec>,
    generators: &[OperatorSpec],
    db: &[f64],
    ds: f64,
) -> Result<StepOutcome> {
    CollapseSystem::new(*psi.grid(), psi.n_particles(), h, generators)?.step(psi, db, ds)
}

/// Two lattice points whose density-matrix element `psi_a psi_b^* dV` is
/// recorded at every sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherencePair {
    pub basis: Basis,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Total parameter range; the run covers `[-S/2, S/2]`.
    pub s_total: f64,
    pub ds: f64,
    pub sample_every: usize,
    /// Keep a state snapshot every this many steps (0 disables).
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default)]
    pub histogram: bool,
    #[serde(default)]
    pub coherences: Vec<CoherencePair>,
}

impl RunConfig {
    pub fn new(s_total: f64, ds: f64, sample_every: usize) -> Self {
        Self {
            s_total,
            ds,
            sample_every,
            snapshot_every: 0,
            histogram: false,
            coherences: Vec::new(),
        }
    }

    /// Number of steps, checking that `ds` divides `S`.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.s_total.is_finite() && self.s_total > 0.0) {
            return Err(Error::InvalidParameter(format!("S must be positive, got {}", self.s_total)));
        }
        if !(self.ds.is_finite() && self.ds > 0.0) {
            return Err(Error::InvalidParameter(format!("ds must be positive, got {}", self.ds)));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidParameter("sample_every must be at least 1".into()));
        }
        let n = (self.s_total / self.ds).round();
        if n < 1.0 || (n * self.ds - self.s_total).abs() > 1e-9 * self.s_total {
            return Err(Error::InvalidParameter(format!(
                "ds = {} does not divide S = {}",
                self.ds, self.s_total
            )));
        }
        Ok(n as usize)
    }
}

/// Observables recorded at one value of `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub s: f64,
    pub generator_mean: Vec<f64>,
    pub generator_var: Vec<f64>,
    pub energy: Vec<f64>,
    pub time: Vec<f64>,
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    /// Accumulated pre-renormalisation drift since the previous sample.
    pub norm_drift: f64,
    /// `|norm - 1|` of the stored state.
    pub norm_error: f64,
    /// Largest probability within two cells of a lattice edge, over both bases.
    #[serde(default)]
    pub edge_probability: f64,
    /// Steps so far that needed ds-halving.
    #[serde(default)]
    pub refined_steps: usize,
    /// Sign changes of each generator mean so far, checked at the start of
    /// every step. Negative `<p^2 - E^2>` is allowed.
    #[serde(default)]
    pub sign_crossings: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coherences: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub s: f64,
    pub state: WaveFunction,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub trajectory: u64,
    pub source: NoiseSource,
    pub samples: Vec<Sample>,
    pub snapshots: Vec<Snapshot>,
    pub histogram: Option<SpacetimeHistogram>,
    /// Number of steps that needed ds-halving.
    pub refined_steps: usize,
    pub final_state: WaveFunction,
}

impl TrajectoryRecord {
    pub fn s_values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.s).collect()
    }
}

struct Counters {
    refined: usize,
    crossings: Vec<usize>,
    /// Sign of the last non-zero mean per generator; 0 before the first.
    last_sign: Vec<f64>,
}

impl Counters {
    fn record(&mut self, means: &[f64]) {
        for ((m, last), n) in means.iter().zip(&mut self.last_sign).zip(&mut self.crossings) {
            if *m != 0.0 {
                let sign = m.signum();
                if *last * sign < 0.0 {
                    *n += 1;
                }
                *last = sign;
            }
        }
    }
}

struct Probes {
    energy: Vec<ArrayD<f64>>,
    momentum: Vec<ArrayD<f64>>,
    time: Vec<ArrayD<f64>>,
    position: Vec<ArrayD<f64>>,
}

impl Probes {
    fn new(grid: &GridSpec, n: usize) -> Result<Self> {
        let build = |f: fn(usize) -> OperatorSpec| -> Result<Vec<ArrayD<f64>>> {
            (0..n).map(|i| f(i).diagonal(grid, n)).collect()
        };
        Ok(Self {
            energy: build(OperatorSpec::energy)?,
            momentum: build(OperatorSpec::momentum)?,
            time: build(OperatorSpec::time)?,
            position: build(OperatorSpec::position)?,
        })
    }
}

impl CollapseSystem {
    fn sample(&self, probes: &Probes, psi: &WaveFunction, s: f64, drift: f64, counters: &Counters, pairs: &[CoherencePair]) -> Sample {
        let me = psi.in_basis(Basis::MomentumEnergy);
        let xt = psi.in_basis(Basis::PositionTime);
        let mean = |p: &WaveFunction, d: &ArrayD<f64>| weighted_moments(p.amplitudes(), d).0;
        let (mut gm, mut gv) = (Vec::new(), Vec::new());
        for (xt_group, idx) in &self.order {
            let (state, g) = if *xt_group {
                (&xt, &self.xt_group[*idx])
            } else {
                (&me, &self.me_group[*idx])
            };
            let (m, v) = weighted_moments(state.amplitudes(), &g.diag);
            gm.push(m);
            gv.push(v);
        }
        let coherences = pairs
            .iter()
            .map(|c| {
                let state = if c.basis == Basis::MomentumEnergy { &me } else { &xt };
                let amps = state.amplitudes();
                let z = amps[IxDyn(&c.a)] * amps[IxDyn(&c.b)].conj()
                    * state.cell_volume();
                [z.re, z.im]
            })
            .collect();
        Sample {
            s,
            generator_mean: gm,
            generator_var: gv,
            energy: probes.energy.iter().map(|d| mean(&me, d)).collect(),
            momentum: probes.momentum.iter().map(|d| mean(&me, d)).collect(),
            time: probes.time.iter().map(|d| mean(&xt, d)).collect(),
            position: probes.position.iter().map(|d| mean(&xt, d)).collect(),
            norm_drift: drift,
            norm_error: (psi.norm_sq().sqrt() - 1.0).abs(),
            edge_probability: me.edge_probability().max(xt.edge_probability()),
            refined_steps: counters.refined,
            sign_crossings: counters.crossings.clone(),
            coherences,
        }
    }

    fn advance(
        &self,
        psi: &WaveFunction,
        db: &[f64],
        ds: f64,
        depth: usize,
        noise: &mut NoiseStream,
    ) -> Result<(StepOutcome, bool)> {
        match self.step(psi, db, ds) {
            Ok(out) => Ok((out, depth > 0)),
            Err(Error::StepRejected { .. }) if depth < MAX_HALVINGS => {
                let (first, second) = noise.bridge_split(db, ds);
                let (a, _) = self.advance(psi, &first, 0.5 * ds, depth + 1, noise)?;
                let (b, _) = self.advance(&a.state, &second, 0.5 * ds, depth + 1, noise)?;
                Ok((
                    StepOutcome {
                        state: b.state,
                        norm_drift: a.norm_drift + b.norm_drift,
                        means: a.means,
                    },
                    true,
                ))
            }
            Err(e) => Err(e),
        }
    }

    /// Integrate from `s = -S/2` to `S/2`, sampling observables every
    /// `sample_every` steps and at the final step.
    pub fn run(&self, psi0: &WaveFunction, config: &RunConfig, source: NoiseSource, trajectory: u64) -> Result<TrajectoryRecord> {
        self.check(psi0)?;
        let n_steps = config.n_steps()?;
        let probes = Probes::new(&self.grid, self.n_particles)?;
        let ds = config.ds;
        let s0 = -0.5 * config.s_total;
        let mut noise = NoiseStream::new(source, ds, &self.lambdas());
        let mut db = vec![0.0; self.generators.len()];
        let mut hist = if config.histogram {
            Some(SpacetimeHistogram::new(self.grid, self.n_particles, config.s_total))
        } else {
            None
        };
        let weight = |k: usize| if k == 0 || k == n_steps { 0.5 * ds } else { ds };
        let mut psi = psi0.in_basis(Basis::MomentumEnergy);
        let mut counters = Counters {
            refined: 0,
            crossings: vec![0; self.generators.len()],
            last_sign: vec![0.0; self.generators.len()],
        };
        let mut samples = vec![self.sample(&probes, &psi, s0, 0.0, &counters, &config.coherences)];
        let mut snapshots = Vec::new();
        if config.snapshot_every > 0 {
            snapshots.push(Snapshot { s: s0, state: psi.clone() });
        }
        if let Some(h) = hist.as_mut() {
            h.accumulate(&psi.in_basis(Basis::PositionTime), weight(0))?;
        }
        let mut drift_acc = 0.0;
        for k in 1..=n_steps {
            noise.fill(&mut db);
            let s = s0 + k as f64 * ds;
            let (out, was_refined) = self
                .advance(&psi, &db, ds, 0, &mut noise)
                .map_err(|e| match e {
                    Error::StepRejected { product, .. } => Error::TrajectoryFailed {
                        s: s - ds,
                        reason: format!(
                            "step control product {product:.3} after {MAX_HALVINGS} halvings"
                        ),
                    },
                    other => other,
                })?;
            counters.refined += was_refined as usize;
            counters.record(&out.means);
            psi = out.state;
            drift_acc += out.norm_drift;
            if let Some(h) = hist.as_mut() {
                h.accumulate(&psi.in_basis(Basis::PositionTime), weight(k))?;
            }
            if k % config.sample_every == 0 || k == n_steps {
                samples.push(self.sample(&probes, &psi, s, drift_acc, &counters, &config.coherences));
                drift_acc = 0.0;
            }
            if config.snapshot_every > 0 && (k % config.snapshot_every == 0 || k == n_steps) {
                snapshots.push(Snapshot { s, state: psi.clone() });
            }
        }
        Ok(TrajectoryRecord {
            trajectory,
            source,
            samples,
            snapshots,
            histogram: hist,
            refined_steps: counters.refined,
            final_state: psi,
        })
    }
}

/// Convenience wrapper: build the model and run one trajectory on stream
/// `trajectory` of `seed`.
pub fn run_trajectory(
    psi0: &WaveFunction,
    h: Option<&OperatorSpec>,
    generators: &[OperatorSpec],
    config: &RunConfig,
    seed: u64,
    trajectory: u64,
) -> Result<TrajectoryRecord> {
    let system = CollapseSystem::new(*psi0.grid(), psi0.n_particles(), h, generators)?;
    system.run(psi0, config, NoiseSource::new(seed, trajectory), trajectory)
}
