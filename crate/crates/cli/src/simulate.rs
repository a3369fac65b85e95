use std::path::{Path, PathBuf};

use anyhow::Context;
use voyager_core::config::ScenarioConfig;
use voyager_core::sim::{run_scenario, write_graph_files, write_outputs, RunOutput, SimError};

use crate::{config_stem, load_config, output_root, CliError};

pub struct SimulateArgs<'a> {
    pub config: &'a Path,
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
    pub dump_graph: bool,
}

#[derive(Debug)]
pub struct SimulateSummary {
    pub out_dir: PathBuf,
    pub final_mean_benign_f1: f64,
    pub total_bytes: u64,
}

impl SimulateSummary {
    pub fn line(&self) -> String {
        format!(
            "mean_benign_f1={:.4} total_bytes={} out={}",
            self.final_mean_benign_f1,
            self.total_bytes,
            self.out_dir.display()
        )
    }
}

/// `--out`, then the config's `output_dir`, then `<root>/<config stem>`.
pub fn resolve_out_dir(args: &SimulateArgs, cfg: &ScenarioConfig) -> PathBuf {
    args.out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| output_root().join(config_stem(args.config)))
}

fn write(out: &RunOutput, dir: &Path, dump_graph: bool, error: Option<&str>) -> anyhow::Result<()> {
    write_outputs(out, dir, error)
        .with_context(|| format!("writing outputs to {}", dir.display()))?;
    if dump_graph {
        write_graph_files(out, dir).context("writing graph files")?;
    }
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<SimulateSummary, CliError> {
    let cfg = load_config(args.config, args.seed)?;
    let out_dir = resolve_out_dir(args, &cfg);
    match run_scenario(&cfg) {
        Ok(out) => {
            write(&out, &out_dir, args.dump_graph, None)?;
            Ok(SimulateSummary {
                out_dir,
                final_mean_benign_f1: out.final_mean_benign_f1(),
                total_bytes: out.total_bytes(),
            })
        }
        Err(SimError::Config(e)) => Err(e.into()),
        Err(e) => {
            if let Some(partial) = e.partial() {
                write(partial, &out_dir, args.dump_graph, Some(&e.to_string()))?;
            }
            Err(CliError::Runtime(
                anyhow::Error::new(e).context("simulation failed"),
            ))
        }
    }
}
