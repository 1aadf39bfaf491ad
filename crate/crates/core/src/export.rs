//! CSV and JSON writers for paths, estimates and Monte Carlo reports.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so the
//! same run always produces the same bytes and every value parses back
//! exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::EstimationResult;
use crate::model::NoiseSpec;
use crate::montecarlo::{summary_rows, MonteCarloReport};
use crate::simulate::{SeriesView, SimulationPath};

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Parse(format!("{other:?}")),
            }
        } else {
            Error::Parse(e.to_string())
        }
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Writes `k,Y_k,Z_k` for `k = -d+1, ..., n`; `Z_k` is empty for `k <= 0`.
pub fn write_path_csv<W: Write>(path: &SimulationPath, out: W) -> Result<()> {
    write_series_csv(path.view(), out)
}

pub fn write_series_csv<W: Write>(view: SeriesView<'_>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "Y_k", "Z_k"])?;
    let d = view.d as isize;
    for k in (-d + 1)..=view.n() as isize {
        let z = if k >= 1 {
            view.z(k as usize).map(fmt_f64).unwrap_or_default()
        } else {
            String::new()
        };
        w.write_record([k.to_string(), fmt_f64(view.y(k)), z])?;
    }
    w.flush()?;
    Ok(())
}

pub fn path_csv_string(path: &SimulationPath) -> Result<String> {
    let mut buf = Vec::new();
    write_path_csv(path, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

/// A series read back from a path CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSeries {
    pub d: usize,
    /// `Y_{-d+1}, ..., Y_n`.
    pub y: Vec<f64>,
    /// `Z_1, ..., Z_n` when every observed row carried one.
    pub z: Option<Vec<f64>>,
}

impl ObservedSeries {
    pub fn view(&self) -> Result<SeriesView<'_>> {
        SeriesView::new(self.d, &self.y, self.z.as_deref())
    }
}

/// Parses a path CSV. The order `d` is the number of rows with `k <= 0`.
pub fn read_path_csv<R: Read>(input: R) -> Result<ObservedSeries> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "k" || &headers[1] != "Y_k" {
        return Err(Error::Parse("expected header k,Y_k[,Z_k]".into()));
    }
    let mut rows: Vec<(i64, f64, Option<f64>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("row {}: bad {what} {s:?}", line + 2)))
        };
        let k = rec
            .get(0)
            .and_then(|s| s.trim().parse::<i64>().ok())
            .ok_or_else(|| Error::Parse(format!("row {}: bad index", line + 2)))?;
        let y = parse(rec.get(1).unwrap_or(""), "Y_k")?;
        let z = match rec.get(2).map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(parse(s, "Z_k")?),
        };
        rows.push((k, y, z));
    }
    let d = rows.iter().take_while(|r| r.0 <= 0).count();
    if d == 0 {
        return Err(Error::Parse("no initial rows with k <= 0".into()));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.0 != i as i64 - d as i64 + 1 {
            return Err(Error::Parse(format!("index {} out of sequence", r.0)));
        }
    }
    let y = rows.iter().map(|r| r.1).collect();
    let observed = &rows[d..];
    let z = if !observed.is_empty() && observed.iter().all(|r| r.2.is_some()) {
        Some(observed.iter().map(|r| r.2.unwrap()).collect())
    } else if observed.iter().all(|r| r.2.is_none()) {
        None
    } else {
        return Err(Error::Parse("Z_k present on some rows only".into()));
    };
    Ok(ObservedSeries { d, y, z })
}

/// Sidecar JSON written next to a path CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetadata {
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
    pub n: usize,
    #[serde(rename = "K")]
    pub truncation_k: usize,
    pub truncation_bound: f64,
    pub recursion_residual: f64,
    pub config: serde_json::Value,
}

pub fn path_metadata(path: &SimulationPath, config: serde_json::Value) -> PathMetadata {
    PathMetadata {
        theta: path.theta.clone(),
        sigma2: path.noise.spec.sigma2,
        noise: path.noise.spec,
        seed: path.noise.seed,
        n: path.n,
        truncation_k: path.truncation_k,
        truncation_bound: path.truncation_bound,
        recursion_residual: path.recursion_residual(),
        config,
    }
}

fn numbered(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |i| format!("{prefix}_{i}"))
}

pub fn estimation_csv_header(d: usize) -> Vec<String> {
    let mut h: Vec<String> = ["n", "gram_singular", "gram_min_eig", "corrected_extended"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(numbered("theta_hat", d));
    h.extend(numbered("theta_corrected", d));
    h.extend(numbered("dev_star", d));
    h.extend(numbered("dev_theta", d));
    h
}

/// One flattened row; deviation columns are empty without targets.
pub fn estimation_csv_row(r: &EstimationResult) -> Vec<String> {
    let d = r.theta_hat.len();
    let mut row = vec![
        r.n.to_string(),
        r.gram_singular.to_string(),
        fmt_f64(r.gram_min_eig),
        r.corrected_extended.to_string(),
    ];
    row.extend(r.theta_hat.iter().copied().map(fmt_f64));
    row.extend(r.theta_corrected.iter().copied().map(fmt_f64));
    for dev in [&r.normalized_dev_star, &r.normalized_dev_theta] {
        match dev {
            Some(v) => row.extend(v.iter().copied().map(fmt_f64)),
            None => row.extend(std::iter::repeat_n(String::new(), d)),
        }
    }
    row
}

pub fn estimation_csv_string(r: &EstimationResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(estimation_csv_header(r.theta_hat.len()))?;
    w.write_record(estimation_csv_row(r))?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn samples_csv_string(report: &MonteCarloReport) -> Result<String> {
    let m = report.target_cov.nrows();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["replication".to_string()];
    header.extend(numbered("s", m));
    w.write_record(&header)?;
    let mut failed = report.failed_replications.iter().peekable();
    let mut r = 0usize;
    for sample in &report.samples {
        while failed.peek() == Some(&&r) {
            failed.next();
            r += 1;
        }
        let mut row = vec![r.to_string()];
        row.extend(sample.iter().copied().map(fmt_f64));
        w.write_record(&row)?;
        r += 1;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn summary_csv_string(report: &MonteCarloReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "value"])?;
    for (k, v) in summary_rows(report) {
        w.write_record([k, v])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// JSON with the echoed configuration placed under `config`.
pub fn json_with_config<T: Serialize>(value: &T, config: &serde_json::Value) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("effective_config".into(), config.clone());
    }
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

/// Writes `report.json`, `samples.csv` and `summary.csv` into `dir`.
pub fn write_mc_outputs(report: &MonteCarloReport, dir: &Path, config: &serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), json_with_config(report, config)?)?;
    fs::write(dir.join("samples.csv"), samples_csv_string(report)?)?;
    fs::write(dir.join("summary.csv"), summary_csv_string(report)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::simulate::{simulate_stationary, DEFAULT_TOL};

    fn path() -> SimulationPath {
        let spec = ModelSpec::gaussian(vec![1.0, 2.0, 3.0], 1.5).unwrap();
        simulate_stationary(&spec, 40, 6, DEFAULT_TOL).unwrap()
    }

    #[test]
    fn path_csv_round_trip_is_exact() {
        let p = path();
        let text = path_csv_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("k,Y_k,Z_k"));
        assert!(lines.next().unwrap().starts_with("-2,"));
        assert!(lines.next().unwrap().ends_with(','));
        let back = read_path_csv(text.as_bytes()).unwrap();
        assert_eq!(back.d, 3);
        assert_eq!(back.y, p.y);
        assert_eq!(back.z.as_deref(), Some(&p.noise.values[..40]));
        let residual = crate::simulate::recursion_residual(&p.theta, back.view().unwrap());
        assert_eq!(residual, p.recursion_residual());
    }

    #[test]
    fn reader_rejects_malformed_files() {
        assert!(read_path_csv("k,Y_k,Z_k\n1,2.0,0.1\n".as_bytes()).is_err());
        assert!(read_path_csv("k,Y_k,Z_k\n0,1.0,\n2,2.0,0.1\n".as_bytes()).is_err());
        assert!(read_path_csv("k,Y_k,Z_k\n0,1.0,\n1,x,0.1\n".as_bytes()).is_err());
        assert!(read_path_csv("a,b\n0,1\n".as_bytes()).is_err());
        let no_noise = read_path_csv("k,Y_k,Z_k\n0,1.0,\n1,2.0,\n".as_bytes()).unwrap();
        assert_eq!(no_noise.z, None);
    }

    #[test]
    fn metadata_fields() {
        let p = path();
        let meta = path_metadata(&p, serde_json::json!({"n": 40}));
        let json = serde_json::to_value(&meta).unwrap();
        assert_eq!(json["K"], p.truncation_k);
        assert_eq!(json["seed"], 6);
        assert_eq!(json["sigma2"], 1.5);
        assert_eq!(json["config"]["n"], 40);
    }

    #[test]
    fn estimation_row_matches_header() {
        let p = path();
        let r = crate::estimation::lse(p.view()).unwrap();
        let text = estimation_csv_string(&r).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
        assert!(lines[0].starts_with("n,gram_singular"));
    }
}
