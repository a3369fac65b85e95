//! Run artifacts: three CSV logs and a JSON manifest.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunOutput, SeedManifest};
use crate::config::ScenarioConfig;

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const TRAFFIC_FILE: &str = "traffic.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const ROUNDS_HEADER: &str = "round,node,role,f1,degree";
pub const TRAFFIC_HEADER: &str = "round,node,bytes_sent,bytes_received,sim_ops,dist_ops";
pub const EVENTS_HEADER: &str = "round,node,event,peer,score";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ScenarioConfig,
    pub seeds: SeedManifest,
    pub attackers: Vec<usize>,
    pub rounds_completed: usize,
    pub final_mean_benign_f1: Option<f64>,
    pub total_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Manifest {
    pub fn from_run(out: &RunOutput, error: Option<&str>) -> Self {
        let f1 = out.final_mean_benign_f1();
        Self {
            config: out.config.clone(),
            seeds: out.seeds.clone(),
            attackers: out.attackers.clone(),
            rounds_completed: out.rounds.len(),
            final_mean_benign_f1: f1.is_finite().then_some(f1),
            total_bytes: out.total_bytes(),
            error: error.map(str::to_string),
        }
    }
}

pub fn write_rounds_csv<W: Write>(out: &RunOutput, mut w: W) -> io::Result<()> {
    writeln!(w, "{ROUNDS_HEADER}")?;
    for r in &out.rounds {
        for n in &r.nodes {
            writeln!(w, "{},{},{},{},{}", r.round, n.node, n.role, n.f1, n.degree)?;
        }
    }
    Ok(())
}

pub fn write_traffic_csv<W: Write>(out: &RunOutput, mut w: W) -> io::Result<()> {
    writeln!(w, "{TRAFFIC_HEADER}")?;
    for (r, row) in out.traffic.rounds().iter().enumerate() {
        for (node, t) in row.iter().enumerate() {
            writeln!(
                w,
                "{},{node},{},{},{},{}",
                r + 1,
                t.bytes_sent,
                t.bytes_received,
                t.sim_ops,
                t.dist_ops
            )?;
        }
    }
    Ok(())
}

pub fn write_events_csv<W: Write>(out: &RunOutput, mut w: W) -> io::Result<()> {
    writeln!(w, "{EVENTS_HEADER}")?;
    for e in out.events() {
        let peer = e.peer.map(|p| p.to_string()).unwrap_or_default();
        let score = e.score.map(|s| s.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{peer},{score}", e.round, e.node, e.kind)?;
    }
    Ok(())
}

fn create(dir: &Path, name: &str) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes the three CSV logs and the manifest into `dir`, creating it.
pub fn write_outputs(out: &RunOutput, dir: &Path, error: Option<&str>) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_rounds_csv(out, create(dir, ROUNDS_FILE)?)?;
    write_traffic_csv(out, create(dir, TRAFFIC_FILE)?)?;
    write_events_csv(out, create(dir, EVENTS_FILE)?)?;
    let mut w = create(dir, MANIFEST_FILE)?;
    serde_json::to_writer_pretty(&mut w, &Manifest::from_run(out, error))?;
    writeln!(w)?;
    w.flush()
}

/// Initial and final edge lists plus the mutation log.
pub fn write_graph_files(out: &RunOutput, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    out.initial_graph
        .write_edge_list(create(dir, "edges_initial.txt")?)?;
    out.graph.write_edge_list(create(dir, "edges_final.txt")?)?;
    out.graph.write_mutation_csv(create(dir, "mutations.csv")?)
}

pub fn read_manifest(path: &Path) -> io::Result<Manifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
