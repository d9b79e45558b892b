//! File outputs of a run: `records.csv`, `summary.json` and `densities.csv`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::kde::density_curve;
use super::{prepare, CellSummary, ExperimentOutput, ReplicationRecord, SimulationConfig};
use crate::error::{Error, Result};

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DENSITIES_FILE: &str = "densities.csv";

pub fn write_records<W: Write>(out: W, records: &[ReplicationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record([
            "rep", "epsilon", "alpha", "alpha_bh", "fdp_bbh", "ntd_bbh", "r_bbh", "fdp_bh",
            "ntd_bh", "r_bh",
        ])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ReplicationRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|rec| rec.map_err(Error::from))
        .collect()
}

/// One point of a density curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub epsilon: f64,
    pub alpha: f64,
    pub procedure: &'static str,
    pub metric: &'static str,
    pub x: f64,
    pub density: f64,
}

/// Density curves of FDP and NTD for both procedures in every cell.
/// Outcomes without spread (a point mass) produce no curve.
pub fn density_points(records: &[ReplicationRecord], points: usize) -> Result<Vec<DensityPoint>> {
    type Column = (&'static str, &'static str, fn(&ReplicationRecord) -> f64);
    const COLUMNS: [Column; 4] = [
        ("bbh", "fdp", |r| r.fdp_bbh),
        ("bbh", "ntd", |r| r.ntd_bbh as f64),
        ("bh", "fdp", |r| r.fdp_bh),
        ("bh", "ntd", |r| r.ntd_bh as f64),
    ];
    let mut out = Vec::new();
    for (epsilon, alpha, recs) in super::cells_of(records) {
        for (procedure, metric, f) in COLUMNS {
            let samples: Vec<f64> = recs.iter().map(|r| f(r)).collect();
            match density_curve(&samples, points) {
                Ok((grid, dens)) => {
                    out.extend(grid.into_iter().zip(dens).map(|(x, density)| DensityPoint {
                        epsilon,
                        alpha,
                        procedure,
                        metric,
                        x,
                        density,
                    }))
                }
                Err(Error::PointMass(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

pub fn write_densities<W: Write>(out: W, points: &[DensityPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if points.is_empty() {
        w.write_record(["epsilon", "alpha", "procedure", "metric", "x", "density"])?;
    }
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(mut out: W, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Writes every output of a finished run into `dir`; returns the paths.
pub fn write_outputs(
    dir: &Path,
    output: &ExperimentOutput,
    density_grid: usize,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = vec![dir.join(RECORDS_FILE), dir.join(SUMMARY_FILE)];
    write_records(fs::File::create(&paths[0])?, &output.records)?;
    write_summary(fs::File::create(&paths[1])?, &output.summary)?;
    if density_grid > 0 {
        let path = dir.join(DENSITIES_FILE);
        write_densities(
            fs::File::create(&path)?,
            &density_points(&output.records, density_grid)?,
        )?;
        paths.push(path);
    }
    Ok(paths)
}

/// Runs the experiment and writes its outputs. If a replication fails, the
/// records of the replications before it are still written to
/// `records.csv` before the error is returned.
pub fn run_to_dir(cfg: &SimulationConfig, dir: &Path) -> Result<(ExperimentOutput, Vec<PathBuf>)> {
    let prepared = prepare(cfg)?;
    let (per_rep, err) = prepared.replicate_all();
    let output = prepared.assemble(per_rep);
    if let Some(e) = err {
        fs::create_dir_all(dir)?;
        write_records(fs::File::create(dir.join(RECORDS_FILE))?, &output.records)?;
        return Err(e);
    }
    let paths = write_outputs(dir, &output, cfg.density_points)?;
    Ok((output, paths))
}

/// Summary cells recomputed from a records file.
pub fn cells_from_file(path: &Path) -> Result<Vec<CellSummary>> {
    Ok(super::summarize_lenient(&read_records(path)?).cells)
}
