//! Trajectory orchestration and ensemble statistics.

use rayon::prelude::*;
use serde::Serialize;
use tcsl_core::analysis::{
    born_statistics, classify_outcome, drift_summary, fit_decay_rate, trajectory_drift, BornReport,
    DecayFit, MartingaleReport, Observable, SpacetimeHistogram,
};
use tcsl_core::dynamics::{CollapseSystem, NoiseSource, Sample, TrajectoryRecord};
use tcsl_core::oracles::kg_relative_residual;
use tcsl_core::operators::boost_state;
use tcsl_core::{OperatorSpec, WaveFunction};

use crate::config::{describe, spectrum, MartingaleRequest, ObservableName, Prediction, Scenario, SCHEMA_VERSION};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "TCSL_WORKERS";

/// Provenance embedded in every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct Meta {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(scenario: &Scenario, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash: scenario.hash.clone(),
            seed,
        }
    }
}

/// Noise source of trajectory `k`: its own stream, or the shared stream of
/// an antithetic pair with the sign flipped on odd members.
pub fn noise_source(scenario: &Scenario, seed: u64, k: u64) -> NoiseSource {
    let run = &scenario.config.run;
    let base = NoiseSource::new(seed, if run.antithetic { k / 2 } else { k }).with_kind(run.noise);
    if run.antithetic && k % 2 == 1 {
        base.negated()
    } else {
        base
    }
}

/// Everything needed to evolve trajectories of one scenario.
pub struct Prepared {
    pub system: CollapseSystem,
    pub initial: WaveFunction,
}

pub fn prepare(scenario: &Scenario) -> tcsl_core::Result<Prepared> {
    let h = scenario.hamiltonian()?;
    let system = CollapseSystem::new(
        scenario.grid,
        scenario.n_particles(),
        h.as_ref(),
        &scenario.config.generators,
    )?;
    Ok(Prepared {
        system,
        initial: scenario.initial_state()?,
    })
}

pub fn run_one(scenario: &Scenario, prepared: &Prepared, seed: u64, k: u64) -> tcsl_core::Result<TrajectoryRecord> {
    prepared
        .system
        .run(&prepared.initial, &scenario.run_config(), noise_source(scenario, seed, k), k)
}

pub fn observable(name: ObservableName, index: usize) -> Observable {
    match name {
        ObservableName::Generator => Observable::Generator(index),
        ObservableName::Energy => Observable::Energy(index),
        ObservableName::Time => Observable::Time(index),
        ObservableName::Position => Observable::Position(index),
        ObservableName::Momentum => Observable::Momentum(index),
    }
}

/// Predicted drift rate of a martingale request as a function of a sample.
/// Predicted drift rate of an observable as a function of one sample.
pub type RateFn = Box<dyn Fn(&Sample) -> f64 + Send + Sync>;

pub fn predicted_rate(scenario: &Scenario, req: &MartingaleRequest) -> Option<RateFn> {
    match req.predicted {
        Prediction::Zero => None,
        Prediction::TimeFlow => {
            let m = scenario.mass(req.index).expect("validated mass");
            let i = req.index;
            Some(Box::new(move |s: &Sample| s.energy[i] / m))
        }
        Prediction::Linear => {
            let terms: Vec<(Observable, f64)> = req
                .rate
                .iter()
                .map(|t| (observable(t.observable, t.index), t.coefficient))
                .collect();
            Some(Box::new(move |s: &Sample| {
                terms.iter().map(|(o, c)| c * o.read(s).unwrap_or(f64::NAN)).sum()
            }))
        }
    }
}

/// Reduced per-trajectory result used by the ensemble merge.
#[derive(Debug, Clone)]
pub struct TrajectorySummary {
    pub index: u64,
    pub outcome: Option<usize>,
    pub drifts: Vec<(f64, f64)>,
    pub s_values: Vec<f64>,
    pub coherence: Vec<[f64; 2]>,
    pub kg_relative: Option<f64>,
    pub histogram: Option<SpacetimeHistogram>,
    pub refined_steps: usize,
    pub sign_crossings: Vec<usize>,
    pub max_norm_error: f64,
    pub max_edge_probability: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub trajectory: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BornSection {
    pub generator: String,
    pub eigenvalues: Vec<f64>,
    pub gap: f64,
    #[serde(flatten)]
    pub report: BornReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecaySection {
    pub generator: String,
    pub lambda_configured: f64,
    pub delta_a: f64,
    pub s: Vec<f64>,
    /// Magnitude of the ensemble-averaged coherence.
    pub magnitude: Vec<f64>,
    pub fit: DecayFit,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KgSection {
    pub trajectories: usize,
    pub max_relative_residual: f64,
    pub mean_relative_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoostRow {
    pub theta: f64,
    pub particle: usize,
    pub mass_sq_before: f64,
    pub mass_sq_after: f64,
    pub momentum_after: f64,
    pub momentum_predicted: f64,
    pub energy_after: f64,
    pub energy_predicted: f64,
    pub position_after: f64,
    pub position_predicted: f64,
    pub time_after: f64,
    pub time_predicted: f64,
    pub norm_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleReport {
    pub meta: Meta,
    pub trajectories: usize,
    pub succeeded: usize,
    pub failures: Vec<Failure>,
    pub refined_steps: usize,
    /// Sign changes of each generator mean, summed over trajectories.
    pub sign_crossings: Vec<usize>,
    pub max_norm_error: f64,
    /// Wrap-around monitor; above [`tcsl_core::EDGE_THRESHOLD`] the lattice is too small.
    pub max_edge_probability: f64,
    pub born: Option<BornSection>,
    pub martingale: Vec<MartingaleReport>,
    pub decay: Option<DecaySection>,
    pub kg: Option<KgSection>,
    pub boost: Vec<BoostRow>,
    #[serde(skip)]
    pub histogram: Option<SpacetimeHistogram>,
}

/// Reduce one sample series; Klein-Gordon residual and histogram are
/// filled in by [`summarise`] when the full record is available.
pub fn summarise_samples(
    scenario: &Scenario,
    born: Option<&(Vec<f64>, Vec<f64>, f64)>,
    index: u64,
    samples: &[Sample],
) -> tcsl_core::Result<TrajectorySummary> {
    let a = &scenario.config.analysis;
    let last = samples
        .last()
        .ok_or_else(|| tcsl_core::Error::InsufficientData(format!("trajectory {index} has no samples")))?;
    let outcome = match (&a.born, born) {
        (Some(req), Some((eig, _, gap))) => classify_outcome(
            last.generator_mean[req.generator],
            last.generator_var[req.generator],
            eig,
            *gap,
        ),
        _ => None,
    };
    let drifts = a
        .martingale
        .iter()
        .map(|m| {
            let rate = predicted_rate(scenario, m);
            let f = rate.as_ref().map(|b| b.as_ref() as &dyn Fn(&Sample) -> f64);
            trajectory_drift(samples, observable(m.observable, m.index), f)
        })
        .collect::<tcsl_core::Result<Vec<_>>>()?;
    Ok(TrajectorySummary {
        index,
        outcome,
        drifts,
        s_values: samples.iter().map(|s| s.s).collect(),
        coherence: samples.iter().filter_map(|s| s.coherences.first().copied()).collect(),
        kg_relative: None,
        max_norm_error: samples.iter().map(|s| s.norm_error).fold(0.0, f64::max),
        max_edge_probability: samples.iter().map(|s| s.edge_probability).fold(0.0, f64::max),
        histogram: None,
        refined_steps: last.refined_steps,
        sign_crossings: last.sign_crossings.clone(),
    })
}

fn summarise(scenario: &Scenario, born: Option<&(Vec<f64>, Vec<f64>, f64)>, rec: TrajectoryRecord) -> tcsl_core::Result<TrajectorySummary> {
    let mut out = summarise_samples(scenario, born, rec.trajectory, &rec.samples)?;
    if scenario.config.analysis.kg_residual {
        let last = rec.samples.last().expect("checked above");
        out.kg_relative = Some(kg_relative_residual(&rec.final_state, -last.generator_mean[0])?);
    }
    out.histogram = rec.histogram;
    Ok(out)
}

/// Distinct eigenvalues, their initial weights and the smallest gap.
pub type Spectrum = (Vec<f64>, Vec<f64>, f64);

pub fn born_spectrum(scenario: &Scenario, initial: &WaveFunction) -> tcsl_core::Result<Option<Spectrum>> {
    scenario
        .config
        .analysis
        .born
        .as_ref()
        .map(|b| spectrum(initial, &scenario.config.generators[b.generator]))
        .transpose()
}

/// Resolve the worker count: explicit flag, then environment, then 1.
pub fn worker_count(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
        .unwrap_or(1)
        .max(1)
}

/// Run all trajectories on a pool of `workers` threads and merge the
/// results in trajectory order.
pub fn run_ensemble(scenario: &Scenario, seed: u64, workers: usize) -> anyhow::Result<EnsembleReport> {
    let c = &scenario.config;
    anyhow::ensure!(c.trajectories >= 2, "an ensemble needs at least 2 trajectories, got {}", c.trajectories);
    let prepared = prepare(scenario)?;
    let born_spec = born_spectrum(scenario, &prepared.initial)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let results: Vec<tcsl_core::Result<TrajectorySummary>> = pool.install(|| {
        (0..c.trajectories as u64)
            .into_par_iter()
            .map(|k| summarise(scenario, born_spec.as_ref(), run_one(scenario, &prepared, seed, k)?))
            .collect()
    });
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => failures.push(Failure {
                trajectory: k as u64,
                error: e.to_string(),
            }),
        }
    }
    merge(scenario, seed, &prepared.initial, born_spec, summaries, failures)
}

/// Combine summaries (already in trajectory order) into the ensemble report.
pub fn merge(
    scenario: &Scenario,
    seed: u64,
    initial: &WaveFunction,
    born_spec: Option<(Vec<f64>, Vec<f64>, f64)>,
    summaries: Vec<TrajectorySummary>,
    failures: Vec<Failure>,
) -> anyhow::Result<EnsembleReport> {
    let c = &scenario.config;
    let a = &c.analysis;
    let n_ok = summaries.len();
    let born = match (&a.born, born_spec) {
        (Some(req), Some((eigenvalues, probs, gap))) if n_ok > 0 => {
            let outcomes: Vec<Option<usize>> = summaries.iter().map(|s| s.outcome).collect();
            Some(BornSection {
                generator: describe(&c.generators[req.generator]),
                eigenvalues,
                gap,
                report: born_statistics(&outcomes, &probs)?,
            })
        }
        _ => None,
    };
    let mut martingale = Vec::new();
    for (i, m) in a.martingale.iter().enumerate() {
        let per: Vec<(f64, f64)> = summaries.iter().map(|s| s.drifts[i]).collect();
        martingale.push(drift_summary(&per, observable(m.observable, m.index), m.abs_tol)?);
    }
    let decay = match &a.decay {
        Some(d) if n_ok > 0 => Some(decay_section(scenario, d, &summaries)?),
        _ => None,
    };
    let kg = if a.kg_residual && n_ok > 0 {
        let r: Vec<f64> = summaries.iter().filter_map(|s| s.kg_relative).collect();
        Some(KgSection {
            trajectories: r.len(),
            max_relative_residual: r.iter().copied().fold(0.0, f64::max),
            mean_relative_residual: r.iter().sum::<f64>() / r.len() as f64,
        })
    } else {
        None
    };
    let mut histogram: Option<SpacetimeHistogram> = None;
    for s in &summaries {
        if let Some(h) = &s.histogram {
            match histogram.as_mut() {
                Some(acc) => acc.merge(h)?,
                None => histogram = Some(h.clone()),
            }
        }
    }
    if let Some(h) = histogram.as_mut() {
        h.scale(1.0 / n_ok as f64);
    }
    Ok(EnsembleReport {
        meta: Meta::new(scenario, seed),
        trajectories: c.trajectories,
        succeeded: n_ok,
        failures,
        refined_steps: summaries.iter().map(|s| s.refined_steps).sum(),
        sign_crossings: summaries.iter().fold(vec![0; scenario.config.generators.len()], |mut acc, s| {
            for (a, n) in acc.iter_mut().zip(&s.sign_crossings) {
                *a += n;
            }
            acc
        }),
        max_norm_error: summaries.iter().map(|s| s.max_norm_error).fold(0.0, f64::max),
        max_edge_probability: summaries.iter().map(|s| s.max_edge_probability).fold(0.0, f64::max),
        born,
        martingale,
        decay,
        kg,
        boost: boost_rows(initial, &a.boost_thetas)?,
        histogram,
    })
}

fn decay_section(
    scenario: &Scenario,
    d: &crate::config::DecayRequest,
    summaries: &[TrajectorySummary],
) -> anyhow::Result<DecaySection> {
    let gen = &scenario.config.generators[d.generator];
    anyhow::ensure!(
        gen.basis() == d.basis,
        "coherence pair must be given in the generator's basis ({})",
        gen.basis()
    );
    let n = scenario.n_particles();
    let diag = gen.diagonal(&scenario.grid, n)?;
    let delta_a = diag[ndarray::IxDyn(&d.a)] - diag[ndarray::IxDyn(&d.b)];
    let s = summaries[0].s_values.clone();
    let mut sum = vec![[0.0f64; 2]; s.len()];
    for t in summaries {
        for (acc, c) in sum.iter_mut().zip(&t.coherence) {
            acc[0] += c[0];
            acc[1] += c[1];
        }
    }
    let nf = summaries.len() as f64;
    let magnitude: Vec<f64> = sum.iter().map(|c| c[0].hypot(c[1]) / nf).collect();
    let fit = fit_decay_rate(&s, &magnitude, delta_a)?;
    Ok(DecaySection {
        generator: describe(gen),
        lambda_configured: gen.lambda,
        delta_a,
        relative_error: (fit.lambda - gen.lambda).abs() / gen.lambda,
        s,
        magnitude,
        fit,
    })
}

/// Boost the state by each rapidity and compare means with the coordinate map.
pub fn boost_rows(psi: &WaveFunction, thetas: &[f64]) -> tcsl_core::Result<Vec<BoostRow>> {
    let mut rows = Vec::new();
    for &theta in thetas {
        let boosted = boost_state(psi, theta)?;
        let map = tcsl_core::PoincareParams::boost(theta);
        for i in 0..psi.n_particles() {
            let mean = |w: &WaveFunction, op: OperatorSpec| w.expectation(&op);
            let (p, e) = (mean(psi, OperatorSpec::momentum(i))?, mean(psi, OperatorSpec::energy(i))?);
            let (x, t) = (mean(psi, OperatorSpec::position(i))?, mean(psi, OperatorSpec::time(i))?);
            let (pp, ep) = map.boost_momentum(p, e);
            let (xp, tp) = map.boost_event(x, t);
            let b = &boosted.state;
            rows.push(BoostRow {
                theta,
                particle: i,
                mass_sq_before: mean(psi, OperatorSpec::collapse_mass(i))?,
                mass_sq_after: mean(b, OperatorSpec::collapse_mass(i))?,
                momentum_after: mean(b, OperatorSpec::momentum(i))?,
                momentum_predicted: pp,
                energy_after: mean(b, OperatorSpec::energy(i))?,
                energy_predicted: ep,
                position_after: mean(b, OperatorSpec::position(i))?,
                position_predicted: xp,
                time_after: mean(b, OperatorSpec::time(i))?,
                time_predicted: tp,
                norm_defect: boosted.norm_defect,
            });
        }
    }
    Ok(rows)
}
