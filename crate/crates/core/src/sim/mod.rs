//! Synchronous round loop.
//!
//! Each round runs six phases in order: local training, model poisoning,
//! sharing with current neighbors, the Voyager defense phase, aggregation
//! and evaluation. Training, aggregation and evaluation run in parallel
//! across nodes and are merged in node-id order; graph mutation is
//! sequential in ascending node id.

mod ledger;
mod output;

pub use ledger::{account_message, NodeTraffic, TrafficLedger};
pub use output::{
    read_manifest, write_events_csv, write_graph_files, write_outputs, write_rounds_csv,
    write_traffic_csv, Manifest, EVENTS_FILE, EVENTS_HEADER, MANIFEST_FILE, ROUNDS_FILE,
    ROUNDS_HEADER, TRAFFIC_FILE, TRAFFIC_HEADER,
};

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{
    coordinate_median, fed_avg, fltrust_local_anchor, krum_with_fallback, trimmed_mean,
    AggregationError, AggregationInput,
};
use crate::attacks::{flip_labels, salt_poison, select_malicious, AttackKind};
use crate::config::{AggregatorKind, ConfigError, ScenarioConfig};
use crate::learning::{
    evaluate, generate_task, local_train, partition_iid, DataShard, LearningError, Mlp,
    SyntheticTask,
};
use crate::model::{layerwise_cosine, LayeredParams, ModelError};
use crate::seed::{self, stream};
use crate::topology::{build_topology, TopologyError, TopologyGraph};
use crate::voyager::{
    deploy_connections, detect_anomaly, explore_neighbors, f_estimate_for_degree, EventKind,
    ReputationStore, VoyagerEvent,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("protocol violation in round {round}: node {from} sent to non-neighbor {to}")]
    ProtocolViolation {
        round: usize,
        from: usize,
        to: usize,
    },
    #[error("node ids must cover 0..{expected} exactly once")]
    NodeSet { expected: usize },
    #[error("node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<SimError>,
    },
    #[error("run aborted in round {round}: {source}")]
    Aborted {
        round: usize,
        #[source]
        source: Box<SimError>,
        partial: Box<RunOutput>,
    },
}

impl SimError {
    /// Outputs gathered before an abort.
    pub fn partial(&self) -> Option<&RunOutput> {
        match self {
            SimError::Aborted { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Benign,
    Malicious,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Benign => "benign",
            Role::Malicious => "malicious",
        })
    }
}

/// One participant.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: usize,
    pub role: Role,
    /// Training data as the node sees it; labels are already flipped for
    /// label-flipping attackers.
    pub shard: DataShard,
    pub model: LayeredParams,
    pub reputation: ReputationStore,
    /// Root of the node's training and salting streams.
    pub seed: u64,
}

/// Seeds derived from the master seed, recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub master: u64,
    pub task: u64,
    pub partition: u64,
    pub init: u64,
    pub topology: u64,
    pub attackers: u64,
}

impl SeedManifest {
    pub fn derive(cfg: &ScenarioConfig) -> Self {
        let m = cfg.seed;
        Self {
            master: m,
            task: seed::derive(m, &[stream::TASK]),
            partition: seed::derive(m, &[stream::PARTITION]),
            init: seed::derive(m, &[stream::INIT]),
            topology: seed::derive(m, &[stream::TOPOLOGY]),
            attackers: cfg
                .attack
                .seed
                .unwrap_or_else(|| seed::derive(m, &[stream::ATTACKERS])),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRound {
    pub node: usize,
    pub role: Role,
    pub f1: f64,
    pub accuracy: f64,
    /// Degree at aggregation time.
    pub degree: usize,
    /// Candidate picked by Krum (`-1` for the node's own model).
    pub selected: Option<i64>,
    pub triggered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    /// 1-based round number.
    pub round: usize,
    pub nodes: Vec<NodeRound>,
    pub events: Vec<VoyagerEvent>,
    /// Models as sent in the share phase, salted ones included.
    pub shared_models: Vec<LayeredParams>,
    /// Locally trained models before poisoning and aggregation.
    pub trained_models: Vec<LayeredParams>,
    pub aggregated_models: Vec<LayeredParams>,
}

impl RoundLog {
    /// Mean macro-F1 over benign nodes.
    pub fn mean_benign_f1(&self) -> f64 {
        let benign: Vec<f64> = self
            .nodes
            .iter()
            .filter(|n| n.role == Role::Benign)
            .map(|n| n.f1)
            .collect();
        if benign.is_empty() {
            return f64::NAN;
        }
        benign.iter().sum::<f64>() / benign.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub seeds: SeedManifest,
    pub attackers: Vec<usize>,
    pub initial_graph: TopologyGraph,
    pub graph: TopologyGraph,
    pub rounds: Vec<RoundLog>,
    pub traffic: TrafficLedger,
    pub final_models: Vec<LayeredParams>,
}

impl RunOutput {
    pub fn final_mean_benign_f1(&self) -> f64 {
        self.rounds
            .last()
            .map_or(f64::NAN, RoundLog::mean_benign_f1)
    }

    pub fn total_bytes(&self) -> u64 {
        self.traffic.total_bytes()
    }

    pub fn events(&self) -> impl Iterator<Item = &VoyagerEvent> {
        self.rounds.iter().flat_map(|r| r.events.iter())
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    seeds: SeedManifest,
    graph: TopologyGraph,
    nodes: Vec<NodeState>,
    alpha: f64,
    initial_edges_per_node: f64,
}

/// Validates `cfg` and runs it to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    Simulation::new(cfg.clone())?.run()
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        let nodes = Self::build_nodes(&cfg)?;
        Self::with_nodes(cfg, nodes)
    }

    /// Creates the participants: data shards, roles and a shared initial model.
    pub fn build_nodes(cfg: &ScenarioConfig) -> Result<Vec<NodeState>, SimError> {
        cfg.validate()?;
        let seeds = SeedManifest::derive(cfg);
        let n = cfg.n_nodes;
        let task = SyntheticTask::new(cfg.task.clone(), seeds.task)?;
        let shards = partition_iid(&generate_task(&task), n, seeds.partition)?;
        let attackers = if cfg.attack.kind == AttackKind::None {
            BTreeSet::new()
        } else {
            select_malicious(
                n,
                cfg.attack.pnr_percent,
                seeds.attackers,
                cfg.attack.protected_node,
            )
        };
        let mlp = Mlp::new(
            cfg.task.feature_dim,
            &cfg.train.hidden_layers,
            cfg.task.num_classes,
        );
        let init = mlp.init(seeds.init);
        Ok(shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| {
                let malicious = attackers.contains(&id);
                let shard = if malicious && cfg.attack.kind == AttackKind::LabelFlip {
                    flip_labels(&shard, seed::derive(cfg.seed, &[stream::FLIP, id as u64]))
                } else {
                    shard
                };
                NodeState {
                    id,
                    role: if malicious {
                        Role::Malicious
                    } else {
                        Role::Benign
                    },
                    shard,
                    model: init.clone(),
                    reputation: ReputationStore::new(cfg.voyager.default_reputation),
                    seed: seed::derive(cfg.seed, &[stream::TRAIN, id as u64]),
                }
            })
            .collect())
    }

    /// Builds a simulation from explicit participants in any order.
    pub fn with_nodes(cfg: ScenarioConfig, mut nodes: Vec<NodeState>) -> Result<Self, SimError> {
        cfg.validate()?;
        nodes.sort_by_key(|n| n.id);
        if nodes.len() != cfg.n_nodes || nodes.iter().enumerate().any(|(i, n)| n.id != i) {
            return Err(SimError::NodeSet {
                expected: cfg.n_nodes,
            });
        }
        let seeds = SeedManifest::derive(&cfg);
        let graph = build_topology(cfg.topology, cfg.n_nodes, seeds.topology, cfg.random_p)?;
        Ok(Self {
            alpha: cfg.assumed_alpha(),
            initial_edges_per_node: graph.edges_per_node(),
            cfg,
            seeds,
            graph,
            nodes,
        })
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn graph(&self) -> &TopologyGraph {
        &self.graph
    }

    pub fn attackers(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.role == Role::Malicious)
            .map(|n| n.id)
            .collect()
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let mut out = RunOutput {
            config: self.cfg.clone(),
            seeds: self.seeds.clone(),
            attackers: self.attackers(),
            initial_graph: self.graph.clone(),
            graph: self.graph.clone(),
            rounds: Vec::with_capacity(self.cfg.rounds),
            traffic: TrafficLedger::new(self.cfg.n_nodes),
            final_models: Vec::new(),
        };
        for round in 1..=self.cfg.rounds {
            out.traffic.begin_round();
            match self.round(round, &mut out.traffic) {
                Ok(log) => {
                    log::info!(
                        "round {round}: mean benign F1 {:.4}, bytes {}",
                        log.mean_benign_f1(),
                        out.traffic.round_bytes(round - 1).0
                    );
                    out.rounds.push(log);
                }
                Err(e) => {
                    out.graph = self.graph.clone();
                    out.final_models = self.nodes.iter().map(|n| n.model.clone()).collect();
                    return Err(SimError::Aborted {
                        round,
                        source: Box::new(e),
                        partial: Box::new(out),
                    });
                }
            }
        }
        out.graph = self.graph;
        out.final_models = self.nodes.into_iter().map(|n| n.model).collect();
        Ok(out)
    }

    fn round(&mut self, round: usize, ledger: &mut TrafficLedger) -> Result<RoundLog, SimError> {
        let n = self.cfg.n_nodes;
        let r = round as u64;

        // Phase 1: local training.
        let trained = self
            .nodes
            .par_iter()
            .map(|node| {
                local_train(
                    &node.model,
                    &node.shard,
                    &self.cfg.train,
                    seed::derive(node.seed, &[0, r]),
                )
                .map_err(|e| SimError::Node {
                    node: node.id,
                    source: Box::new(e.into()),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;

        // Phase 2: poisoning of outgoing models.
        let outgoing: Vec<LayeredParams> = self
            .nodes
            .iter()
            .zip(&trained)
            .map(|(node, m)| {
                if node.role == Role::Malicious && self.cfg.attack.kind == AttackKind::ModelPoison {
                    salt_poison(
                        m,
                        self.cfg.attack.salt_fraction,
                        seed::derive(node.seed, &[1, r]),
                    )
                    .model
                } else {
                    m.clone()
                }
            })
            .collect();

        // Phase 3: share with current neighbors.
        let mut received: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, model) in outgoing.iter().enumerate() {
            for j in self.graph.neighbor_list(i) {
                account_message(ledger, &self.graph, i, j, model)?;
                received[j].push(i);
            }
        }

        // Phase 4: defense.
        let mut events = Vec::new();
        let mut triggered = vec![false; n];
        if self.cfg.aggregator == AggregatorKind::Voyager {
            let new_edges = self.defend(
                round,
                &trained,
                &outgoing,
                &received,
                ledger,
                &mut events,
                &mut triggered,
            )?;
            for &(a, b) in &new_edges {
                for (x, y) in [(a, b), (b, a)] {
                    account_message(ledger, &self.graph, x, y, &outgoing[x])?;
                    received[y].push(x);
                    let s = layerwise_cosine(&trained[y], &outgoing[x])?.score.value();
                    self.nodes[y].reputation.set(x, s);
                    ledger.add_sim_ops(y, 1);
                }
            }
            received.iter_mut().for_each(|r| r.sort_unstable());
        }

        // Phase 5: aggregation.
        let aggregated = (0..n)
            .into_par_iter()
            .map(|i| {
                let peers: Vec<(usize, &LayeredParams)> =
                    received[i].iter().map(|&j| (j, &outgoing[j])).collect();
                self.aggregate(&trained[i], peers, triggered[i])
                    .map_err(|e| SimError::Node {
                        node: i,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;

        // Phase 6: evaluation.
        let metrics = self
            .nodes
            .par_iter()
            .zip(&aggregated)
            .map(|(node, agg)| evaluate(&agg.model, &node.shard.val, node.shard.num_classes))
            .collect::<Result<Vec<_>, _>>()?;

        let mut records = Vec::with_capacity(n);
        let mut aggregated_models = Vec::with_capacity(n);
        for ((node, agg), m) in self.nodes.iter_mut().zip(aggregated).zip(metrics) {
            ledger.add_sim_ops(node.id, agg.sim_ops);
            ledger.add_dist_ops(node.id, agg.dist_ops);
            records.push(NodeRound {
                node: node.id,
                role: node.role,
                f1: m.macro_f1,
                accuracy: m.accuracy,
                degree: self.graph.degree(node.id),
                selected: agg.selected,
                triggered: triggered[node.id],
            });
            node.model = agg.model.clone();
            aggregated_models.push(agg.model);
        }
        Ok(RoundLog {
            round,
            nodes: records,
            events,
            shared_models: outgoing,
            trained_models: trained,
            aggregated_models,
        })
    }

    /// Detect, explore and deploy for every node in ascending id order.
    /// Returns the edges added this round in mutation order.
    #[allow(clippy::too_many_arguments)]
    fn defend(
        &mut self,
        round: usize,
        trained: &[LayeredParams],
        outgoing: &[LayeredParams],
        received: &[Vec<usize>],
        ledger: &mut TrafficLedger,
        events: &mut Vec<VoyagerEvent>,
        triggered: &mut [bool],
    ) -> Result<Vec<(usize, usize)>, SimError> {
        let n = self.cfg.n_nodes;
        let vcfg = self.cfg.voyager.clone();
        let kappa_r = vcfg.kappa_r();
        let mut new_edges = Vec::new();
        let event = |node, kind, peer, score| VoyagerEvent {
            round,
            node,
            kind,
            peer,
            score,
        };
        for i in 0..n {
            if self.nodes[i].role == Role::Malicious && !vcfg.attackers_run_defense {
                continue;
            }
            let peers: Vec<(usize, &LayeredParams)> =
                received[i].iter().map(|&j| (j, &outgoing[j])).collect();
            let report = detect_anomaly(
                &trained[i],
                &peers,
                vcfg.kappa_s,
                vcfg.literal_comparator,
                i,
                round,
            )?;
            ledger.add_sim_ops(i, peers.len() as u64);
            for (j, cos) in &report.similarities {
                self.nodes[i].reputation.set(*j, cos.score.value());
            }
            let Some(trigger) = report.trigger else {
                continue;
            };
            triggered[i] = true;
            for &(peer, score) in &trigger.offending {
                events.push(event(i, EventKind::Trigger, Some(peer), Some(score)));
            }
            let degree = self.graph.degree(i);
            let kappa_n =
                vcfg.target_neighbors(n, self.alpha, self.initial_edges_per_node, degree)?;
            let reputation = &self.nodes[i].reputation;
            let mut exploration = explore_neighbors(&self.graph, i, reputation, kappa_n, kappa_r);
            let size = exploration.neighbors.len();
            if size + 1 < f_estimate_for_degree(n, self.alpha, size) + 3 && kappa_n < n - 1 {
                log::debug!(
                    "node {i} round {round}: {size} neighbors too few for Krum, widening to {}",
                    kappa_n + 1
                );
                exploration = explore_neighbors(&self.graph, i, reputation, kappa_n + 1, kappa_r);
            }
            for &(peer, kind, rep) in &exploration.decisions {
                events.push(event(i, kind, Some(peer), Some(rep)));
            }
            for peer in deploy_connections(&mut self.graph, i, &exploration.neighbors, round)? {
                let rep = self.nodes[i].reputation.get(peer);
                events.push(event(i, EventKind::Deploy, Some(peer), Some(rep)));
                new_edges.push((i, peer));
            }
        }
        Ok(new_edges)
    }

    fn aggregate(
        &self,
        own: &LayeredParams,
        peers: Vec<(usize, &LayeredParams)>,
        triggered: bool,
    ) -> Result<Aggregated, SimError> {
        let n = self.cfg.n_nodes;
        let n_peers = peers.len() as u64;
        let f = f_estimate_for_degree(n, self.alpha, peers.len());
        let input = AggregationInput::new(own, peers, f);
        let plain = |model| Aggregated {
            model,
            selected: None,
            sim_ops: 0,
            dist_ops: 0,
        };
        Ok(match self.cfg.aggregator {
            AggregatorKind::Fedavg => plain(fed_avg(&input)?),
            AggregatorKind::TrimmedMean => {
                plain(trimmed_mean(&input, self.cfg.aggregation.trim_fraction)?)
            }
            AggregatorKind::Median => plain(coordinate_median(&input)?),
            AggregatorKind::Fltrust => Aggregated {
                sim_ops: n_peers,
                ..plain(fltrust_local_anchor(&input)?)
            },
            AggregatorKind::Krum | AggregatorKind::Voyager => {
                if triggered && input.candidate_count() < f + 3 {
                    log::warn!(
                        "expanded neighborhood of {} candidates cannot tolerate f={f}; lowering f",
                        input.candidate_count()
                    );
                }
                let sel = krum_with_fallback(&input)?;
                Aggregated {
                    model: sel.model,
                    selected: Some(sel.selected.as_i64()),
                    sim_ops: 0,
                    dist_ops: sel.distance_computations as u64,
                }
            }
        })
    }
}

struct Aggregated {
    model: LayeredParams,
    selected: Option<i64>,
    sim_ops: u64,
    dist_ops: u64,
}
