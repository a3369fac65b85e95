//! Grid runs over attack share, aggregator, topology and seed.
//!
//! Every finished cell is cached as `cells/<hash>.json` under the sweep
//! directory, keyed by a SHA-256 of the cell's resolved configuration, so an
//! interrupted sweep picks up where it stopped.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voyager_core::config::{AggregatorKind, ScenarioConfig};
use voyager_core::sim::{run_scenario, Role, RunOutput};
use voyager_core::topology::TopologyKind;

use crate::CliError;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: &str =
    "attack,topology,aggregator,pnr,seed,mean_f1,std_f1,total_bytes,sim_ops,dist_ops,cell_hash,status";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub attack: String,
    pub topology: String,
    pub aggregator: String,
    pub pnr: u32,
    pub seed: u64,
    pub mean_f1: Option<f64>,
    pub std_f1: Option<f64>,
    pub total_bytes: Option<u64>,
    pub sim_ops: Option<u64>,
    pub dist_ops: Option<u64>,
    pub cell_hash: String,
    pub status: String,
}

pub struct SweepGrid {
    pub pnr: Vec<u32>,
    pub aggregators: Vec<AggregatorKind>,
    pub topologies: Vec<TopologyKind>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    /// Cell configurations in grid order: pnr, aggregator, topology, seed.
    pub fn cells(&self, base: &ScenarioConfig) -> Result<Vec<ScenarioConfig>, CliError> {
        for (name, empty) in [
            ("pnr", self.pnr.is_empty()),
            ("aggregators", self.aggregators.is_empty()),
            ("topologies", self.topologies.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(CliError::Schema(format!("sweep list `{name}` is empty")));
            }
        }
        let mut cells = Vec::new();
        for &pnr in &self.pnr {
            for &aggregator in &self.aggregators {
                for &topology in &self.topologies {
                    for &seed in &self.seeds {
                        let mut cfg = base.clone();
                        cfg.attack.pnr_percent = pnr;
                        cfg.aggregator = aggregator;
                        cfg.topology = topology;
                        cfg.seed = seed;
                        cfg.output_dir = None;
                        cfg.validate().map_err(|e| {
                            CliError::Schema(format!(
                                "cell pnr={pnr} {aggregator} {topology} seed={seed}: {e}"
                            ))
                        })?;
                        cells.push(cfg);
                    }
                }
            }
        }
        Ok(cells)
    }
}

pub fn cell_hash(cfg: &ScenarioConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

fn benign_stats(out: &RunOutput) -> (f64, f64) {
    let last = out.rounds.last().expect("at least one round");
    let f1: Vec<f64> = last
        .nodes
        .iter()
        .filter(|n| n.role == Role::Benign)
        .map(|n| n.f1)
        .collect();
    let mean = f1.iter().sum::<f64>() / f1.len() as f64;
    let var = f1.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / f1.len() as f64;
    (mean, var.sqrt())
}

pub fn run_cell(cfg: &ScenarioConfig) -> SweepRow {
    let mut row = SweepRow {
        attack: cfg.attack.kind.to_string(),
        topology: cfg.topology.to_string(),
        aggregator: cfg.aggregator.to_string(),
        pnr: cfg.attack.pnr_percent,
        seed: cfg.seed,
        mean_f1: None,
        std_f1: None,
        total_bytes: None,
        sim_ops: None,
        dist_ops: None,
        cell_hash: cell_hash(cfg),
        status: "ok".into(),
    };
    match run_scenario(cfg) {
        Ok(out) => {
            let (mean, std) = benign_stats(&out);
            row.mean_f1 = Some(mean);
            row.std_f1 = Some(std);
            row.total_bytes = Some(out.total_bytes());
            row.sim_ops = Some(out.traffic.total_sim_ops());
            row.dist_ops = Some(out.traffic.total_dist_ops());
        }
        Err(e) => {
            log::error!("cell {} failed: {e}", row.cell_hash);
            row.status = format!("error: {e}");
        }
    }
    row
}

fn cached(cells_dir: &Path, hash: &str) -> Option<SweepRow> {
    let text = fs::read_to_string(cells_dir.join(format!("{hash}.json"))).ok()?;
    serde_json::from_str(&text).ok()
}

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub skipped: usize,
    pub csv: PathBuf,
}

/// Runs every cell not yet cached in `out_dir` on `workers` threads and
/// writes `sweep.csv` in grid order.
pub fn sweep(
    base: &ScenarioConfig,
    grid: &SweepGrid,
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<SweepResult, CliError> {
    let cells = grid.cells(base)?;
    let cells_dir = out_dir.join("cells");
    fs::create_dir_all(&cells_dir).with_context(|| format!("creating {}", cells_dir.display()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    let results: Vec<(SweepRow, bool)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cfg| {
                let hash = cell_hash(cfg);
                if let Some(row) = cached(&cells_dir, &hash) {
                    return Ok((row, true));
                }
                let row = run_cell(cfg);
                if row.status == "ok" {
                    let path = cells_dir.join(format!("{hash}.json"));
                    let json = serde_json::to_string_pretty(&row)?;
                    fs::write(&path, json)
                        .with_context(|| format!("writing {}", path.display()))?;
                }
                Ok((row, false))
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    let skipped = results.iter().filter(|(_, hit)| *hit).count();
    let rows: Vec<SweepRow> = results.into_iter().map(|(r, _)| r).collect();
    let csv_path = out_dir.join(SWEEP_FILE);
    write_rows(&rows, &csv_path)?;
    Ok(SweepResult {
        rows,
        skipped,
        csv: csv_path,
    })
}

pub fn write_rows(rows: &[SweepRow], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(SWEEP_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>, CliError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Schema(format!("cannot read {}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| CliError::Schema(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != SWEEP_HEADER {
        return Err(CliError::Schema(format!(
            "{}: unexpected header `{header}`",
            path.display()
        )));
    }
    r.deserialize()
        .collect::<Result<Vec<SweepRow>, _>>()
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use voyager_core::attacks::AttackKind;

    fn base() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::new(0, AggregatorKind::Krum, TopologyKind::Ring);
        cfg.attack.kind = AttackKind::ModelPoison;
        cfg
    }

    #[test]
    fn grid_size_and_order() {
        let grid = SweepGrid {
            pnr: vec![0, 10, 30, 60],
            aggregators: vec![AggregatorKind::Krum, AggregatorKind::Voyager],
            topologies: vec![TopologyKind::Ring],
            seeds: vec![1, 2, 3],
        };
        let cells = grid.cells(&base()).unwrap();
        assert_eq!(cells.len(), 24);
        assert_eq!((cells[0].attack.pnr_percent, cells[0].seed), (0, 1));
        assert_eq!(cells[3].aggregator, AggregatorKind::Voyager);
        assert_eq!(cells[23].attack.pnr_percent, 60);
    }

    #[test]
    fn empty_lists_are_rejected() {
        let grid = SweepGrid {
            pnr: vec![],
            aggregators: vec![AggregatorKind::Krum],
            topologies: vec![TopologyKind::Ring],
            seeds: vec![1],
        };
        assert_eq!(grid.cells(&base()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn hash_tracks_config() {
        let a = base();
        let mut b = base();
        assert_eq!(cell_hash(&a), cell_hash(&b));
        b.seed = 1;
        assert_ne!(cell_hash(&a), cell_hash(&b));
        assert_eq!(cell_hash(&a).len(), 64);
    }
}
