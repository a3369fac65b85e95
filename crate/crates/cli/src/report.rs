//! Pivot tables over a sweep CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;

use crate::sweep::SweepRow;
use crate::CliError;

const VOYAGER: &str = "voyager";

#[derive(Debug, Default)]
struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    fn value(&self) -> f64 {
        self.sum / self.count as f64
    }
}

type GroupKey = (String, String);

#[derive(Debug, Clone, PartialEq)]
pub struct Highlight {
    pub attack: String,
    pub topology: String,
    pub pnr: u32,
    pub voyager_f1: f64,
    pub best_baseline: String,
    pub best_baseline_f1: f64,
}

impl Highlight {
    pub fn voyager_wins(&self) -> bool {
        self.voyager_f1 >= self.best_baseline_f1
    }
}

#[derive(Debug, Default)]
pub struct Report {
    /// (attack, topology) -> aggregator -> pnr -> mean F1 over seeds.
    f1: BTreeMap<GroupKey, BTreeMap<String, BTreeMap<u32, Mean>>>,
    /// (aggregator, topology) -> mean total bytes per run.
    traffic: BTreeMap<(String, String), Mean>,
    pub highlights: Vec<Highlight>,
}

impl Report {
    pub fn build(rows: &[SweepRow]) -> Result<Self, CliError> {
        if rows.is_empty() {
            return Err(CliError::Schema("sweep CSV has no rows".into()));
        }
        let mut report = Report::default();
        for r in rows {
            if let Some(f1) = r.mean_f1 {
                report
                    .f1
                    .entry((r.attack.clone(), r.topology.clone()))
                    .or_default()
                    .entry(r.aggregator.clone())
                    .or_default()
                    .entry(r.pnr)
                    .or_default()
                    .push(f1);
            }
            if let Some(bytes) = r.total_bytes {
                report
                    .traffic
                    .entry((r.aggregator.clone(), r.topology.clone()))
                    .or_default()
                    .push(bytes as f64);
            }
        }
        for ((attack, topology), by_agg) in &report.f1 {
            let Some(voyager) = by_agg.get(VOYAGER) else {
                continue;
            };
            for (&pnr, v) in voyager {
                let best = by_agg
                    .iter()
                    .filter(|(agg, _)| agg.as_str() != VOYAGER)
                    .filter_map(|(agg, cells)| cells.get(&pnr).map(|m| (agg, m.value())))
                    .fold(None::<(&String, f64)>, |best, (agg, f)| match best {
                        Some((_, b)) if b >= f => best,
                        _ => Some((agg, f)),
                    });
                if let Some((agg, f)) = best {
                    report.highlights.push(Highlight {
                        attack: attack.clone(),
                        topology: topology.clone(),
                        pnr,
                        voyager_f1: v.value(),
                        best_baseline: agg.clone(),
                        best_baseline_f1: f,
                    });
                }
            }
        }
        Ok(report)
    }

    fn wins(&self, attack: &str, topology: &str, pnr: u32) -> bool {
        self.highlights.iter().any(|h| {
            h.attack == attack && h.topology == topology && h.pnr == pnr && h.voyager_wins()
        })
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for ((attack, topology), by_agg) in &self.f1 {
            let pnrs: BTreeSet<u32> = by_agg.values().flat_map(|c| c.keys().copied()).collect();
            let _ = writeln!(s, "mean benign F1  attack={attack} topology={topology}");
            let _ = write!(s, "{:<14}", "aggregator");
            for p in &pnrs {
                let _ = write!(s, "{:>10}", format!("pnr={p}"));
            }
            s.push('\n');
            for (agg, cells) in by_agg {
                let _ = write!(s, "{agg:<14}");
                for p in &pnrs {
                    let cell = match cells.get(p) {
                        Some(m) => {
                            let mark = if agg == VOYAGER && self.wins(attack, topology, *p) {
                                "*"
                            } else {
                                " "
                            };
                            format!("{:.4}{mark}", m.value())
                        }
                        None => "-".into(),
                    };
                    let _ = write!(s, "{cell:>10}");
                }
                s.push('\n');
            }
            s.push('\n');
        }
        if !self.highlights.is_empty() {
            let _ = writeln!(s, "* voyager at or above the best baseline");
            s.push('\n');
        }
        let _ = writeln!(s, "mean total bytes per run");
        let _ = writeln!(
            s,
            "{:<14}{:<10}{:>14}{:>7}",
            "aggregator", "topology", "bytes", "runs"
        );
        for ((agg, topology), m) in &self.traffic {
            let _ = writeln!(
                s,
                "{agg:<14}{topology:<10}{:>14.0}{:>7}",
                m.value(),
                m.count
            );
        }
        s
    }

    /// Writes `report_f1.csv`, `report_traffic.csv` and `report_highlights.csv`.
    pub fn write_csv(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut w = csv::Writer::from_path(dir.join("report_f1.csv"))?;
        w.write_record([
            "attack",
            "topology",
            "aggregator",
            "pnr",
            "mean_f1",
            "cells",
        ])?;
        for ((attack, topology), by_agg) in &self.f1 {
            for (agg, cells) in by_agg {
                for (pnr, m) in cells {
                    w.write_record([
                        attack.as_str(),
                        topology,
                        agg,
                        &pnr.to_string(),
                        &m.value().to_string(),
                        &m.count.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("report_traffic.csv"))?;
        w.write_record(["aggregator", "topology", "mean_total_bytes", "runs"])?;
        for ((agg, topology), m) in &self.traffic {
            w.write_record([
                agg.as_str(),
                topology,
                &m.value().to_string(),
                &m.count.to_string(),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("report_highlights.csv"))?;
        w.write_record([
            "attack",
            "topology",
            "pnr",
            "voyager_f1",
            "best_baseline",
            "best_baseline_f1",
            "voyager_at_least_best",
        ])?;
        for h in &self.highlights {
            w.write_record([
                h.attack.as_str(),
                &h.topology,
                &h.pnr.to_string(),
                &h.voyager_f1.to_string(),
                &h.best_baseline,
                &h.best_baseline_f1.to_string(),
                &h.voyager_wins().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(aggregator: &str, pnr: u32, seed: u64, f1: f64) -> SweepRow {
        SweepRow {
            attack: "model_poison".into(),
            topology: "ring".into(),
            aggregator: aggregator.into(),
            pnr,
            seed,
            mean_f1: Some(f1),
            std_f1: Some(0.0),
            total_bytes: Some(100),
            sim_ops: Some(0),
            dist_ops: Some(0),
            cell_hash: String::new(),
            status: "ok".into(),
        }
    }

    #[test]
    fn empty_input() {
        assert_eq!(Report::build(&[]).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn single_cell() {
        let r = Report::build(&[row("krum", 0, 1, 0.9)]).unwrap();
        let text = r.render();
        assert!(text.contains("0.9000"));
        assert!(r.highlights.is_empty());
    }

    #[test]
    fn seeds_are_averaged_and_winners_marked() {
        let rows = vec![
            row("krum", 60, 1, 0.5),
            row("krum", 60, 2, 0.7),
            row("voyager", 60, 1, 0.9),
            row("voyager", 60, 2, 0.9),
            row("fedavg", 60, 1, 0.2),
        ];
        let r = Report::build(&rows).unwrap();
        assert_eq!(r.highlights.len(), 1);
        let h = &r.highlights[0];
        assert_eq!(h.best_baseline, "krum");
        assert!((h.best_baseline_f1 - 0.6).abs() < 1e-12);
        assert!(h.voyager_wins());
        assert!(r.render().contains("0.9000*"));
    }

    #[test]
    fn rendering_is_order_independent() {
        let mut rows = vec![
            row("krum", 0, 1, 0.5),
            row("voyager", 30, 1, 0.9),
            row("median", 0, 1, 0.4),
        ];
        let a = Report::build(&rows).unwrap().render();
        rows.reverse();
        assert_eq!(a, Report::build(&rows).unwrap().render());
    }
}
