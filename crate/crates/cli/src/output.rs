//! On-disk formats: JSONL series, CSV lattice fields, JSON reports and a
//! binary snapshot format.
//!
//! Snapshot layout (little-endian):
//!
//! ```text
//! b"TCSLSNAP" | u32 format version | u32 header length | header JSON
//!            | prod(shape) x (f64 re, f64 im), row-major
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use ndarray::{ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use tcsl_core::analysis::SpacetimeHistogram;
use tcsl_core::dynamics::Sample;
use tcsl_core::{Basis, GridSpec, WaveFunction};

use crate::ensemble::Meta;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"TCSLSNAP";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    #[serde(flatten)]
    pub meta: Meta,
    pub trajectory: u64,
    pub s: f64,
    pub basis: Basis,
    pub shape: Vec<usize>,
    pub grid: GridSpec,
}

pub fn write_snapshot(path: &Path, header: &SnapshotHeader, psi: &WaveFunction) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    let json = serde_json::to_vec(header)?;
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&u32::try_from(json.len())?.to_le_bytes())?;
    w.write_all(&json)?;
    for a in psi.amplitudes().iter() {
        w.write_all(&a.re.to_le_bytes())?;
        w.write_all(&a.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, ArrayD<Complex64>)> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    ensure!(&magic == SNAPSHOT_MAGIC, "{} is not a snapshot file", path.display());
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    ensure!(version == SNAPSHOT_VERSION, "unsupported snapshot version {version}");
    r.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json)?;
    let header: SnapshotHeader = serde_json::from_slice(&json)?;
    let n: usize = header.shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 16];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        let re = f64::from_le_bytes(buf[..8].try_into().expect("8 bytes"));
        let im = f64::from_le_bytes(buf[8..].try_into().expect("8 bytes"));
        data.push(Complex64::new(re, im));
    }
    if r.read(&mut buf)? != 0 {
        bail!("trailing bytes after snapshot data");
    }
    let arr = ArrayD::from_shape_vec(IxDyn(&header.shape), data)?;
    Ok((header, arr))
}

/// One JSONL line of a trajectory series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesLine {
    pub trajectory: u64,
    #[serde(flatten)]
    pub sample: Sample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderLine {
    meta: Meta,
}

pub fn write_series(path: &Path, meta: &Meta, lines: &[SeriesLine]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer(&mut w, &HeaderLine { meta: meta.clone() })?;
    w.write_all(b"\n")?;
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series(path: &Path) -> Result<(Meta, Vec<SeriesLine>)> {
    let r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut lines = r.lines();
    let first = lines.next().context("empty series file")??;
    let header: HeaderLine = serde_json::from_str(&first).context("series header")?;
    let mut out = Vec::new();
    for (i, l) in lines.enumerate() {
        let l = l?;
        out.push(serde_json::from_str(&l).with_context(|| format!("{}:{}", path.display(), i + 2))?);
    }
    Ok((header.meta, out))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `x,t,density` rows for one particle, preceded by a `#` metadata line.
pub fn write_histogram_csv(path: &Path, meta: &Meta, hist: &SpacetimeHistogram, particle: usize) -> Result<()> {
    let mut file = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(
        file,
        "# schema_version={} config_hash={} seed={} particle={particle}",
        meta.schema_version, meta.config_hash, meta.seed
    )?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["x", "t", "density"])?;
    let plane = &hist.planes[particle];
    let g = &hist.grid;
    for j in 0..g.n_x {
        for k in 0..g.n_t {
            w.write_record(&[
                format!("{:.17e}", g.x(j)),
                format!("{:.17e}", g.t(k)),
                format!("{:.17e}", plane[[j, k]]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tcsl_core::make_grid;

    fn meta() -> Meta {
        Meta {
            schema_version: 1,
            config_hash: "abc".into(),
            seed: 3,
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let grid = make_grid(4, 8, 0.5, 0.25, 0.0, 0.0).unwrap();
        let psi = WaveFunction::from_fn(grid, 1, Basis::PositionTime, |c| Complex64::new(c[0], c[1] + 1.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let header = SnapshotHeader {
            meta: meta(),
            trajectory: 2,
            s: -0.5,
            basis: psi.basis(),
            shape: psi.amplitudes().shape().to_vec(),
            grid,
        };
        write_snapshot(&path, &header, &psi).unwrap();
        let (h, arr) = read_snapshot(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(&arr, psi.amplitudes());
    }
}
