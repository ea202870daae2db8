//! File formats: series and trajectory CSV, result and meta JSON, run
//! directories.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use selkov_core::integrator::TrajectoryRecord;
use selkov_core::measure::EmpiricalMeasure;
use selkov_core::lattice::TruncationConfig;
use serde::Serialize;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "SELKOV_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "selkov-runs";

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        let mut buf = ryu::Buffer::new();
        buf.format_finite(x).to_string()
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// One row of a plot series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub x: f64,
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub label: String,
}

impl SeriesRow {
    pub fn new(x: f64, value: f64, ci: (f64, f64), label: impl Into<String>) -> Self {
        Self { x, value, ci_lo: ci.0, ci_hi: ci.1, label: label.into() }
    }

    /// A row without an interval.
    pub fn point(x: f64, value: f64, label: impl Into<String>) -> Self {
        Self::new(x, value, (value, value), label)
    }
}

pub fn series_csv(rows: &[SeriesRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "value", "ci_lo", "ci_hi", "label"]).expect("in-memory write");
    for r in rows {
        w.write_record([fmt_f64(r.x), fmt_f64(r.value), fmt_f64(r.ci_lo), fmt_f64(r.ci_hi), r.label.clone()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Trajectory CSV rows `t,site,u,v,path_id` for every saved state.
pub fn trajectory_csv<'a>(paths: impl IntoIterator<Item = (u64, &'a TrajectoryRecord)>, trunc: &TruncationConfig) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "site", "u", "v", "path_id"]).expect("in-memory write");
    for (id, rec) in paths {
        for s in &rec.saves {
            for k in 0..s.state.sites() {
                w.write_record([
                    fmt_f64(s.t),
                    trunc.site(k).to_string(),
                    fmt_f64(s.state.u[k]),
                    fmt_f64(s.state.v[k]),
                    id.to_string(),
                ])
                .expect("in-memory write");
            }
        }
    }
    w.into_inner().expect("in-memory flush")
}

/// Atoms of a measure as trajectory rows at its time, one path per atom.
pub fn measure_csv(mu: &EmpiricalMeasure, trunc: &TruncationConfig) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "site", "u", "v", "path_id"]).expect("in-memory write");
    for (id, s) in mu.samples.iter().enumerate() {
        for k in 0..s.sites() {
            w.write_record([
                fmt_f64(mu.origin.tau),
                trunc.site(k).to_string(),
                fmt_f64(s.u[k]),
                fmt_f64(s.v[k]),
                id.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}

#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
}

/// Read a trajectory CSV and return the uniform measure formed by every
/// path's state at the latest time in the file, with the site window.
pub fn read_measure(path: &Path) -> Result<(EmpiricalMeasure, i64), ReadError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["t", "site", "u", "v", "path_id"] {
        return Err(ReadError::Format(format!("{}: expected header t,site,u,v,path_id", path.display())));
    }
    let mut rows: Vec<(f64, i64, f64, f64, u64)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64, ReadError> {
            rec[k].parse().map_err(|_| ReadError::Format(format!("bad number {:?}", &rec[k])))
        };
        let int = |k: usize| -> Result<i64, ReadError> {
            rec[k].parse().map_err(|_| ReadError::Format(format!("bad integer {:?}", &rec[k])))
        };
        rows.push((num(0)?, int(1)?, num(2)?, num(3)?, int(4)? as u64));
    }
    let t_last = rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max);
    rows.retain(|r| r.0 == t_last);
    let half = rows.iter().map(|r| r.1.abs()).max().unwrap_or(0);
    let sites = (2 * half + 1) as usize;
    let mut ids: Vec<u64> = rows.iter().map(|r| r.4).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut samples = vec![selkov_core::lattice::LatticeState { u: vec![0.0; sites], v: vec![0.0; sites] }; ids.len()];
    for (_, site, u, v, id) in rows {
        let p = ids.binary_search(&id).expect("collected id");
        let k = (site + half) as usize;
        samples[p].u[k] = u;
        samples[p].v[k] = v;
    }
    let mut mu = EmpiricalMeasure::uniform(samples, Default::default())
        .map_err(|e| ReadError::Format(e.to_string()))?;
    mu.origin.tau = t_last;
    Ok((mu, half))
}

/// Pretty JSON with sorted keys and shortest float representation.
pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("result documents serialize");
    out.push(b'\n');
    out
}

/// Output root: explicit flag, then the config, then the environment.
pub fn output_root(flag: Option<&Path>, config: Option<&str>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(c) = config {
        return PathBuf::from(c);
    }
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// `<root>/<run id>/<name>/`
pub fn run_dir(root: &Path, run_id: &str, name: &str) -> PathBuf {
    root.join(run_id).join(name)
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path)?;
    f.write_all(bytes)?;
    Ok(path)
}

/// Non-reproducible run metadata, kept apart from results.
#[derive(Debug, Serialize)]
pub struct Meta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub unix_time: u64,
    pub elapsed_seconds: f64,
    pub version: &'static str,
}

impl Meta {
    pub fn new(command: &str, config_hash: String, seed: u64, elapsed_seconds: f64) -> Self {
        let unix_time = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            command: command.into(),
            config_hash,
            seed,
            threads: rayon::current_num_threads(),
            unix_time,
            elapsed_seconds,
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 2.5e17, -0.0, 123456.789] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(0.1), "0.1");
    }

    #[test]
    fn series_header() {
        let bytes = series_csv(&[SeriesRow::point(1.0, 2.0, "a")]);
        assert_eq!(String::from_utf8(bytes).unwrap(), "x,value,ci_lo,ci_hi,label\n1.0,2.0,2.0,2.0,a\n");
    }
}
