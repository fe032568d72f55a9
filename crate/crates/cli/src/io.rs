use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use coagdrift_core::evolution::EvolutionState;
use coagdrift_core::profile::{SolveReport, Tolerances};
use coagdrift_core::{Grid, GridFunction, ModelParams};

use crate::CliError;

pub const OUT_DIR_ENV: &str = "COAGDRIFT_OUT_DIR";

pub const PROFILE_HEADER: [&str; 3] = ["z", "F", "tau"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub zmax: f64,
    pub nodes: usize,
    /// Nodes are uniform in `ln(1 + (1 - v) z)`.
    pub spacing: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    pub inner: f64,
    pub outer: f64,
    pub certification: Tolerances,
    pub fit_decades: f64,
}

/// The JSON document stored next to every profile CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub kind: String,
    pub v: f64,
    pub m0: f64,
    pub tau_inf: f64,
    pub alpha: f64,
    pub m0_bar: f64,
    pub tau_star: Option<f64>,
    pub grid: GridSpec,
    pub tolerances: SolverTolerances,
    pub certified: bool,
    pub exploratory: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<SolveReport>,
}

impl Metadata {
    pub fn params(&self) -> Result<ModelParams, CliError> {
        let p = if self.exploratory || self.kind == "exponential" {
            ModelParams::relaxed(self.v, self.m0)
        } else {
            ModelParams::new(self.v, self.m0)
        };
        p.map_err(CliError::from)
    }
}

/// A profile file with its sidecar.
#[derive(Debug, Clone)]
pub struct ProfileRecord {
    pub meta: Metadata,
    pub profile: GridFunction,
    pub tau: Vec<f64>,
}

pub fn default_meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn out_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let io_err = |e: std::io::Error| CliError::Io { path: path.to_path_buf(), source: e };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(io_err)?;
    let tmp = NamedTempFile::new_in(&dir).map_err(io_err)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn csv_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let rows: Vec<Vec<f64>> = rows.collect();
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header)?;
        for row in &rows {
            out.write_record(row.iter().map(|x| fmt(*x)))?;
        }
        out.flush()
    })
}

pub fn write_profile(
    csv: &Path,
    meta_path: &Path,
    meta: &Metadata,
    f: &GridFunction,
    tau: &[f64],
) -> Result<(), CliError> {
    let nodes = f.grid().nodes();
    csv_rows(csv, &PROFILE_HEADER, (0..nodes.len()).map(|j| vec![nodes[j], f.values()[j], tau[j]]))?;
    let json = serde_json::to_string_pretty(meta)?;
    write_atomic(meta_path, |w| writeln!(w, "{json}"))
}

pub fn read_metadata(path: &Path) -> Result<Metadata, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    serde_json::from_str(&text).map_err(|e| CliError::Malformed(format!("{}: {e}", path.display())))
}

pub fn read_profile(csv_path: &Path, meta_path: &Path) -> Result<ProfileRecord, CliError> {
    let meta = read_metadata(meta_path)?;
    let bad = |msg: String| CliError::Malformed(format!("{}: {msg}", csv_path.display()));
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != PROFILE_HEADER {
        return Err(bad(format!("header must be z,F,tau, found {}", header.iter().collect::<Vec<_>>().join(","))));
    }
    let (mut z, mut f, mut tau) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 3 {
            return Err(bad(format!("row {} has {} fields", line + 1, rec.len())));
        }
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("row {}: {e}", line + 1)));
        z.push(parse(&rec[0])?);
        f.push(parse(&rec[1])?);
        tau.push(parse(&rec[2])?);
    }
    if z.len() != meta.grid.nodes {
        return Err(bad(format!("{} rows but metadata declares {} nodes", z.len(), meta.grid.nodes)));
    }
    if z.first() != Some(&0.0) || z.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad("z column must start at 0 and increase strictly".into()));
    }
    let grid = Grid::from_nodes(z, meta.v).map_err(|e| bad(e.to_string()))?;
    let profile = GridFunction::new(Arc::new(grid), f, meta.tau_inf).map_err(|e| bad(e.to_string()))?;
    Ok(ProfileRecord { meta, profile, tau })
}

pub fn write_snapshot(path: &Path, state: &EvolutionState) -> Result<(), CliError> {
    csv_rows(path, &["x", "f"], state.values().iter().enumerate().map(|(i, &f)| vec![state.center(i), f]))
}

pub fn write_diagnostics(path: &Path, rows: &[[f64; 5]]) -> Result<(), CliError> {
    csv_rows(path, &["t", "m0", "m1", "u", "self_similar_error"], rows.iter().map(|r| r.to_vec()))
}

pub fn write_gnuplot(script: &Path, csv: &Path) -> Result<(), CliError> {
    let name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    write_atomic(script, |w| {
        writeln!(w, "set datafile separator ','")?;
        writeln!(w, "set logscale xy")?;
        writeln!(w, "set xlabel 'z'")?;
        writeln!(w, "set ylabel 'F(z)'")?;
        writeln!(w, "set key top right")?;
        writeln!(w, "plot '{name}' skip 1 using 1:($1 > 0 ? $2 : 1/0) with lines title 'F'")
    })
}
