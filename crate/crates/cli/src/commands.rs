//! Subcommand bodies, independent of argument parsing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tcsl_core::analysis::{fit_decay_rate, DecayFit};
use tcsl_core::density::DensityMatrix;
use tcsl_core::dynamics::Snapshot;
use tcsl_core::master::{decay_solution, evolve, example_collapse, example_no_collapse, CollapseTerm, ExampleReport, MatrixOperator};

use crate::config::{hash_text, Scenario, SCHEMA_VERSION};
use crate::ensemble::{born_spectrum, merge, prepare, run_ensemble, run_one, summarise_samples, EnsembleReport, Meta};
use crate::output::{read_series, write_histogram_csv, write_json, write_series, write_snapshot, SeriesLine, SnapshotHeader};

pub fn output_dir(scenario: &Scenario, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| scenario.config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Debug, Serialize)]
pub struct SimulateSummary {
    pub trajectories: usize,
    pub samples: usize,
    pub snapshots: usize,
    pub series: PathBuf,
}

/// Run every trajectory and write the sample series, snapshots and the
/// trajectory-averaged histogram. Any trajectory failure aborts the run.
pub fn simulate(scenario: &Scenario, seed: u64, out: &Path, workers: usize) -> Result<SimulateSummary> {
    ensure_dir(out)?;
    let prepared = prepare(scenario)?;
    let meta = Meta::new(scenario, seed);
    let n = scenario.config.trajectories as u64;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let records = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|k| run_one(scenario, &prepared, seed, k).map_err(|e| anyhow::anyhow!("trajectory {k}: {e}")))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut lines = Vec::new();
    let mut n_snap = 0;
    let snap_dir = out.join("snapshots");
    let mut hist: Option<tcsl_core::analysis::SpacetimeHistogram> = None;
    for rec in &records {
        lines.extend(rec.samples.iter().map(|s| SeriesLine {
            trajectory: rec.trajectory,
            sample: s.clone(),
        }));
        if !rec.snapshots.is_empty() {
            ensure_dir(&snap_dir)?;
        }
        for (i, Snapshot { s, state }) in rec.snapshots.iter().enumerate() {
            let header = SnapshotHeader {
                meta: meta.clone(),
                trajectory: rec.trajectory,
                s: *s,
                basis: state.basis(),
                shape: state.amplitudes().shape().to_vec(),
                grid: *state.grid(),
            };
            write_snapshot(&snap_dir.join(format!("traj{:06}_{:05}.bin", rec.trajectory, i)), &header, state)?;
            n_snap += 1;
        }
        if let Some(h) = &rec.histogram {
            match hist.as_mut() {
                Some(acc) => acc.merge(h)?,
                None => hist = Some(h.clone()),
            }
        }
    }
    let series = out.join("trajectories.jsonl");
    write_series(&series, &meta, &lines)?;
    if let Some(mut h) = hist {
        h.scale(1.0 / records.len() as f64);
        for i in 0..h.n_particles {
            write_histogram_csv(&out.join(format!("histogram_p{i}.csv")), &meta, &h, i)?;
        }
    }
    Ok(SimulateSummary {
        trajectories: records.len(),
        samples: lines.len(),
        snapshots: n_snap,
        series,
    })
}

/// Run the ensemble and write `report.json` plus histogram CSVs.
pub fn ensemble(scenario: &Scenario, seed: u64, out: &Path, workers: usize) -> Result<EnsembleReport> {
    ensure_dir(out)?;
    let report = run_ensemble(scenario, seed, workers)?;
    write_json(&out.join("report.json"), &report)?;
    if let Some(h) = &report.histogram {
        for i in 0..h.n_particles {
            write_histogram_csv(&out.join(format!("histogram_p{i}.csv")), &report.meta, h, i)?;
        }
    }
    Ok(report)
}

/// Recompute ensemble statistics from a stored `trajectories.jsonl`.
pub fn analyze(scenario: &Scenario, out: &Path) -> Result<EnsembleReport> {
    let (meta, lines) = read_series(&out.join("trajectories.jsonl"))?;
    ensure!(
        meta.config_hash == scenario.hash,
        "stored outputs were produced by config hash {}, not {}",
        meta.config_hash,
        scenario.hash
    );
    let mut grouped: BTreeMap<u64, Vec<tcsl_core::dynamics::Sample>> = BTreeMap::new();
    for l in lines {
        grouped.entry(l.trajectory).or_default().push(l.sample);
    }
    let initial = scenario.initial_state()?;
    let born = born_spectrum(scenario, &initial)?;
    let summaries = grouped
        .iter()
        .map(|(k, s)| summarise_samples(scenario, born.as_ref(), *k, s))
        .collect::<tcsl_core::Result<Vec<_>>>()?;
    let report = merge(scenario, meta.seed, &initial, born, summaries, Vec::new())?;
    write_json(&out.join("analysis.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterGenerator {
    pub diagonal: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterSection {
    pub delta_s: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_rows")]
    pub rows: usize,
    pub labels: Option<Vec<String>>,
    /// Pure initial state as `[re, im]` pairs.
    pub initial: Vec<[f64; 2]>,
    pub hamiltonian: Option<Vec<f64>>,
    pub generators: Vec<MasterGenerator>,
}

fn default_steps() -> usize {
    1000
}

fn default_rows() -> usize {
    20
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub master: MasterSection,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairFit {
    pub i: usize,
    pub j: usize,
    pub delta_a: f64,
    pub lambda: f64,
    pub fit: DecayFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct MasterRow {
    pub s: f64,
    pub max_offdiag: f64,
    pub closed_form_gap: f64,
    pub trace: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MasterReport {
    pub meta: Meta,
    pub dimension: usize,
    pub labels: Vec<String>,
    pub table: Vec<MasterRow>,
    pub fits: Vec<PairFit>,
    /// Final matrix as `[re, im]` rows.
    pub final_elements: Vec<Vec<[f64; 2]>>,
}

pub fn master_from_config(path: &Path) -> Result<MasterReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: MasterConfig = toml::from_str(&text).map_err(|e| {
        let line = e.span().map_or(1, |s| text[..s.start.min(text.len())].lines().count().max(1));
        anyhow::anyhow!("{}:{line}: {}", path.display(), e.message())
    })?;
    ensure!(cfg.schema_version == SCHEMA_VERSION, "unsupported schema_version {}", cfg.schema_version);
    let meta = Meta {
        schema_version: SCHEMA_VERSION,
        config_hash: hash_text(&text),
        seed: cfg.seed,
    };
    run_master(&cfg.master, meta)
}

pub fn run_master(m: &MasterSection, meta: Meta) -> Result<MasterReport> {
    let n = m.initial.len();
    ensure!(n > 0, "initial state is empty");
    ensure!(m.steps > 0 && m.rows > 0, "steps and rows must be positive");
    ensure!(m.delta_s.is_finite() && m.delta_s >= 0.0, "delta_s must be non-negative");
    let labels = m.labels.clone().unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
    let amps: Vec<Complex64> = m.initial.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
    let rho0 = DensityMatrix::from_pure(labels.clone(), &amps)?;
    let h = m.hamiltonian.as_deref().map(MatrixOperator::diagonal);
    let terms: Vec<CollapseTerm> = m
        .generators
        .iter()
        .map(|g| {
            ensure!(g.diagonal.len() == n, "generator has {} entries for dimension {n}", g.diagonal.len());
            ensure!(g.lambda.is_finite() && g.lambda >= 0.0, "lambda must be non-negative");
            Ok(CollapseTerm::new(MatrixOperator::diagonal(&g.diagonal), g.lambda))
        })
        .collect::<Result<_>>()?;
    let per_row = m.steps.div_ceil(m.rows);
    let ds_row = m.delta_s / m.rows as f64;
    let mut rho = rho0.clone();
    let mut table = Vec::new();
    let mut series: Vec<DensityMatrix> = vec![rho0.clone()];
    let row = |s: f64, rho: &DensityMatrix| -> Result<MasterRow> {
        let closed = decay_solution(&rho0, h.as_ref(), &terms, s)?;
        let mut off = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off = off.max(rho.get(i, j).norm());
                }
            }
        }
        Ok(MasterRow {
            s,
            max_offdiag: off,
            closed_form_gap: rho.max_abs_diff(&closed)?,
            trace: rho.trace().re,
            min_eigenvalue: rho.min_eigenvalue(),
        })
    };
    table.push(row(0.0, &rho)?);
    if m.delta_s > 0.0 {
        for r in 1..=m.rows {
            rho = evolve(&rho, h.as_ref(), &terms, ds_row, per_row)?;
            table.push(row(r as f64 * ds_row, &rho)?);
            series.push(rho.clone());
        }
    }
    let mut fits = Vec::new();
    if terms.len() == 1 && m.delta_s > 0.0 && m.rows >= 9 {
        let a = &m.generators[0].diagonal;
        let s: Vec<f64> = table.iter().map(|r| r.s).collect();
        for i in 0..n {
            for j in i + 1..n {
                let mags: Vec<f64> = series.iter().map(|r| r.get(i, j).norm()).collect();
                if a[i] != a[j] && mags.iter().all(|v| *v > 1e-250) {
                    fits.push(PairFit {
                        i,
                        j,
                        delta_a: a[i] - a[j],
                        lambda: terms[0].lambda,
                        fit: fit_decay_rate(&s, &mags, a[i] - a[j])?,
                    });
                }
            }
        }
    }
    let final_elements = (0..n)
        .map(|i| (0..n).map(|j| [rho.get(i, j).re, rho.get(i, j).im]).collect())
        .collect();
    Ok(MasterReport {
        meta,
        dimension: n,
        labels,
        table,
        fits,
        final_elements,
    })
}

/// `KEY=VALUE` arguments of a built-in example.
pub fn parse_example_args(args: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for a in args {
        let (k, v) = a
            .split_once('=')
            .with_context(|| format!("expected KEY=VALUE, got {a:?}"))?;
        let v: f64 = v.parse().with_context(|| format!("{k}: not a number: {v:?}"))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

pub fn run_example(name: &str, args: &[String]) -> Result<ExampleReport> {
    let mut kv = parse_example_args(args)?;
    let mut take = |k: &str, default: f64| kv.remove(k).unwrap_or(default);
    let report = match name {
        "no-collapse" => {
            let (l, r, s, lambda) = (take("L", 0.0), take("R", 1.0), take("S", 1.0), take("lambda", 1.0));
            example_no_collapse(l, r, s, lambda)?
        }
        "collapse" => {
            let (l, c, r) = (take("L", 0.0), take("C", 1.0), take("R", 3.0));
            let (s, lambda) = (take("S", 1.0), take("lambda", 1.0));
            example_collapse(l, c, r, s, lambda)?
        }
        other => bail!("unknown example {other:?} (expected no-collapse or collapse)"),
    };
    if let Some(k) = kv.keys().next() {
        bail!("unknown parameter {k:?} for example {name}");
    }
    Ok(report)
}
