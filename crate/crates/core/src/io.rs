//! Long-format CSV tables and the JSON sidecar written next to them.
//!
//! Every table has one value per row. Site lists are joined with `:`, so a
//! pair reads `15:17` and a correlation entry `13:13:18:18`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{RunMeta, Trajectory};
use crate::lattice::DisorderKind;
use crate::protocols::{BeamsplitterResult, EnsembleResult, SlopeScan};
use crate::spectral::SpectralResult;

pub const TRAJECTORY_HEADER: [&str; 4] = ["z", "observable", "sites", "value"];
pub const BANDS_HEADER: [&str; 4] = ["delta", "state", "energy", "ipr"];
pub const BEAMSPLITTER_HEADER: [&str; 6] = ["uz_int", "z_int", "input", "observable", "sites", "value"];
pub const DISORDER_HEADER: [&str; 7] = ["uz_int", "kind", "input", "observable", "sites", "mean", "std"];
pub const OPTIMIZE_HEADER: [&str; 2] = ["s", "transmission"];

pub fn join_sites(sites: &[usize]) -> String {
    sites.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(":")
}

pub fn parse_sites(text: &str) -> Result<Vec<usize>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(':')
        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad site list {text:?}"))))
        .collect()
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn kind_name(k: DisorderKind) -> &'static str {
    match k {
        DisorderKind::Coupling => "coupling",
        DisorderKind::Onsite => "onsite",
    }
}

fn writer<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

/// Rows: `N` per site, `N_total`, each requested g² entry (`g2_re`, `g2_im`),
/// and each quadrature record (`var`, `db`, plus `phase_opt` at the optimum).
pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = writer(w, &TRAJECTORY_HEADER)?;
    for s in &traj.samples {
        let z = num(s.z);
        for (i, n) in s.photon_numbers.iter().enumerate() {
            out.write_record([z.as_str(), "N", &i.to_string(), &num(*n)]).map_err(csv_err)?;
        }
        out.write_record([z.as_str(), "N_total", "", &num(s.total_photons)]).map_err(csv_err)?;
        for (idx, v) in traj.observers.g2.iter().zip(&s.g2) {
            let sites = join_sites(idx);
            out.write_record([z.as_str(), "g2_re", &sites, &num(v.re)]).map_err(csv_err)?;
            out.write_record([z.as_str(), "g2_im", &sites, &num(v.im)]).map_err(csv_err)?;
        }
        for q in &s.quadratures {
            let sites = join_sites(&q.sites);
            if q.optimal {
                out.write_record([z.as_str(), "var_opt", &sites, &num(q.variance)]).map_err(csv_err)?;
                out.write_record([z.as_str(), "db_opt", &sites, &num(crate::observables::db(q.variance))]).map_err(csv_err)?;
                if q.defined {
                    out.write_record([z.as_str(), "phase_opt", &sites, &num(q.phase)]).map_err(csv_err)?;
                }
            } else {
                let name = format!("var@{}", num(q.phase));
                out.write_record([z.as_str(), &name, &sites, &num(q.variance)]).map_err(csv_err)?;
                let name = format!("db@{}", num(q.phase));
                out.write_record([z.as_str(), &name, &sites, &num(crate::observables::db(q.variance))]).map_err(csv_err)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_bands<W: Write>(w: W, sweep: &[(f64, SpectralResult)]) -> Result<()> {
    let mut out = writer(w, &BANDS_HEADER)?;
    for (delta, r) in sweep {
        for (k, (e, p)) in r.energies.iter().zip(&r.ipr).enumerate() {
            out.write_record([num(*delta), k.to_string(), num(*e), num(*p)]).map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_beamsplitter<W: Write>(w: W, result: &BeamsplitterResult) -> Result<()> {
    let mut out = writer(w, &BEAMSPLITTER_HEADER)?;
    for p in &result.points {
        for r in &p.records {
            out.write_record([num(p.uz_int), num(p.z_int), p.input.clone(), r.observable.clone(), join_sites(&r.sites), num(r.value)])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_disorder<W: Write>(w: W, results: &[EnsembleResult]) -> Result<()> {
    let mut out = writer(w, &DISORDER_HEADER)?;
    for e in results {
        for s in &e.stats {
            out.write_record([
                num(s.uz_int),
                kind_name(e.kind).to_string(),
                s.input.clone(),
                s.observable.clone(),
                join_sites(&s.sites),
                num(s.mean),
                num(s.std),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_optimize<W: Write>(w: W, scan: &SlopeScan) -> Result<()> {
    let mut out = writer(w, &OPTIMIZE_HEADER)?;
    for (s, t) in &scan.curve {
        out.write_record([num(*s), num(*t)]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads any of the tables back as header plus string rows.
pub fn read_table<R: std::io::Read>(r: R) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let rows = rd
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(csv_err))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

/// JSON written beside every CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub dz: f64,
    pub warnings: Vec<String>,
    pub runtime_s: f64,
    /// Per-run metadata, in output order.
    pub runs: Vec<RunMeta>,
    /// Experiment-specific summary.
    pub summary: serde_json::Value,
}

impl Sidecar {
    pub fn new(experiment: &str, cfg: &crate::protocols::ExperimentConfig) -> Result<Self> {
        Ok(Sidecar {
            tool: "dwlight".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            experiment: experiment.into(),
            config: serde_json::to_value(cfg)?,
            config_hash: cfg.hash(),
            seed: None,
            dz: cfg.run.dz,
            warnings: Vec::new(),
            runtime_s: 0.0,
            runs: Vec::new(),
            summary: serde_json::Value::Null,
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(std::fs::File::open(path)?)?)
    }
}

/// Create `path` and hand a buffered writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(std::io::BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    f(std::io::BufWriter::new(std::fs::File::create(path)?))
}
