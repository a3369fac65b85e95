use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;
use voyager_core::topology::{build_topology, RiskProfile, TopologyKind};

use crate::CliError;

pub struct RiskArgs {
    pub topology: TopologyKind,
    pub nodes: usize,
    pub alpha: f64,
    pub random_p: f64,
    pub seed: u64,
}

pub fn profile(args: &RiskArgs) -> Result<RiskProfile, CliError> {
    let g = build_topology(args.topology, args.nodes, args.seed, args.random_p)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    RiskProfile::from_graph(&g, args.alpha).map_err(|e| CliError::Schema(e.to_string()))
}

pub fn render_table(args: &RiskArgs, p: &RiskProfile) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "topology={} nodes={} alpha={} edges_per_node={:.4} draws={}",
        args.topology, p.n_nodes, p.alpha, p.edges_per_node_bar, p.draws
    );
    let _ = writeln!(s, "{:>3}  {:>12}", "k", "P(k)");
    for (k, prob) in p.pmf.probabilities().iter().enumerate() {
        let _ = writeln!(s, "{k:>3}  {prob:>12.6}");
    }
    let _ = writeln!(
        s,
        "expected_malicious_neighbors={:.4}",
        p.expected_malicious
    );
    let _ = writeln!(
        s,
        "kappa_n={}{}",
        p.threshold.kappa,
        if p.threshold.saturated {
            " (clamped)"
        } else {
            ""
        }
    );
    let _ = writeln!(s, "{:>4}  {:>6}  {:>8}", "node", "degree", "risk");
    for (i, (d, r)) in p.degrees.iter().zip(&p.per_node_risk).enumerate() {
        let _ = writeln!(s, "{i:>4}  {d:>6}  {r:>8.4}");
    }
    s
}

/// Writes `risk_summary.csv`, `risk_pmf.csv` and `risk_nodes.csv` into `dir`.
pub fn write_csv(args: &RiskArgs, p: &RiskProfile, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = csv::Writer::from_path(dir.join("risk_summary.csv"))?;
    w.write_record(["key", "value"])?;
    for (k, v) in [
        ("topology", args.topology.to_string()),
        ("nodes", p.n_nodes.to_string()),
        ("alpha", p.alpha.to_string()),
        ("edges_per_node", p.edges_per_node_bar.to_string()),
        ("draws", p.draws.to_string()),
        ("expected_malicious", p.expected_malicious.to_string()),
        ("kappa_n", p.threshold.kappa.to_string()),
        ("kappa_n_saturated", p.threshold.saturated.to_string()),
    ] {
        w.write_record([k, v.as_str()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("risk_pmf.csv"))?;
    w.write_record(["k", "probability"])?;
    for (k, prob) in p.pmf.probabilities().iter().enumerate() {
        w.write_record([k.to_string(), prob.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("risk_nodes.csv"))?;
    w.write_record(["node", "degree", "risk"])?;
    for (i, (d, r)) in p.degrees.iter().zip(&p.per_node_risk).enumerate() {
        w.write_record([i.to_string(), d.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
