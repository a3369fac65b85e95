//! Reactive moving-target defense in three stages.
//!
//! 1. The anomaly detector compares the node's own model with every model it
//!    received, using layer-wise cosine similarity.
//! 2. If a peer looks anomalous, the topology explorer grows the neighbor
//!    list breadth-first through neighbors of neighbors, admitting only
//!    candidates whose reputation clears `kappa_r`, until it holds `kappa_n`
//!    nodes.
//! 3. The connection deployer adds the new edges; the node then aggregates
//!    over the enlarged neighborhood with Krum.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregation::{krum, AggregationError, AggregationInput, KrumSelection};
use crate::model::{layerwise_cosine, LayeredParams, LayerwiseCosine, ModelError};
use crate::topology::{connection_threshold, TopologyError, TopologyGraph};

/// How the target neighbor count is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaNPolicy {
    /// `ceil(4 ē α N / (N - 1) + 2)` from the initial topology.
    Formula,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoyagerConfig {
    /// Similarity below which a received model is anomalous.
    pub kappa_s: f64,
    /// Minimum reputation for admission; follows `kappa_s` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_r: Option<f64>,
    pub kappa_n: KappaNPolicy,
    /// Reputation of peers that were never observed.
    pub default_reputation: f64,
    /// Trigger on `similarity >= kappa_s` instead of `<`.
    pub literal_comparator: bool,
    /// Let malicious participants run detection and expansion too.
    pub attackers_run_defense: bool,
}

impl Default for VoyagerConfig {
    fn default() -> Self {
        Self {
            kappa_s: 0.5,
            kappa_r: None,
            kappa_n: KappaNPolicy::Formula,
            default_reputation: 1.0,
            literal_comparator: false,
            attackers_run_defense: false,
        }
    }
}

impl VoyagerConfig {
    pub fn kappa_r(&self) -> f64 {
        self.kappa_r.unwrap_or(self.kappa_s)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(-1.0..=1.0).contains(&self.kappa_s) {
            return Err(format!(
                "voyager.kappa_s must be in [-1, 1], got {}",
                self.kappa_s
            ));
        }
        if self.kappa_r().is_nan() || self.kappa_r() > 1.0 {
            return Err(format!(
                "voyager.kappa_r must be <= 1, got {}",
                self.kappa_r()
            ));
        }
        if !(-1.0..=1.0).contains(&self.default_reputation) {
            return Err(format!(
                "voyager.default_reputation must be in [-1, 1], got {}",
                self.default_reputation
            ));
        }
        Ok(())
    }

    /// Target neighbor count for a node of `current_degree`.
    pub fn target_neighbors(
        &self,
        n: usize,
        alpha: f64,
        initial_edges_per_node: f64,
        current_degree: usize,
    ) -> Result<usize, TopologyError> {
        match self.kappa_n {
            KappaNPolicy::Formula => {
                Ok(connection_threshold(n, alpha, initial_edges_per_node, current_degree)?.kappa)
            }
            KappaNPolicy::Fixed(k) => Ok(k.min(n - 1)),
        }
    }
}

/// Last observed similarity per peer, as seen by one node.
#[derive(Debug, Clone, PartialEq)]
pub struct ReputationStore {
    default: f64,
    scores: BTreeMap<usize, f64>,
}

impl ReputationStore {
    pub fn new(default: f64) -> Self {
        Self {
            default,
            scores: BTreeMap::new(),
        }
    }

    pub fn get(&self, peer: usize) -> f64 {
        self.scores.get(&peer).copied().unwrap_or(self.default)
    }

    pub fn is_known(&self, peer: usize) -> bool {
        self.scores.contains_key(&peer)
    }

    pub fn set(&mut self, peer: usize, score: f64) {
        self.scores.insert(peer, score.clamp(-1.0, 1.0));
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.scores.iter().map(|(k, v)| (*k, *v))
    }
}

/// Overwrites each exchanged peer's reputation with its current similarity
/// to `own`. Returns the number of similarity computations.
pub fn update_reputation(
    store: &mut ReputationStore,
    own: &LayeredParams,
    exchanged: &[(usize, &LayeredParams)],
) -> Result<usize, ModelError> {
    for (peer, model) in exchanged {
        let cos = layerwise_cosine(own, model)?;
        store.set(*peer, cos.score.value());
    }
    Ok(exchanged.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerMessage {
    pub origin: usize,
    pub round: usize,
    /// Flagged peers with their similarity scores, ascending by id.
    pub offending: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyReport {
    /// Similarity of every received model, in input order.
    pub similarities: Vec<(usize, LayerwiseCosine)>,
    pub trigger: Option<TriggerMessage>,
}

/// Scores every received model against `own` and flags peers whose
/// similarity falls below `kappa_s` (or reaches it, with `literal_comparator`).
pub fn detect_anomaly(
    own: &LayeredParams,
    received: &[(usize, &LayeredParams)],
    kappa_s: f64,
    literal_comparator: bool,
    origin: usize,
    round: usize,
) -> Result<AnomalyReport, ModelError> {
    let mut similarities = Vec::with_capacity(received.len());
    let mut offending = Vec::new();
    for (peer, model) in received {
        let cos = layerwise_cosine(own, model)?;
        if !cos.degenerate_layers.is_empty() {
            log::warn!(
                "node {origin} round {round}: zero-norm layers {:?} against peer {peer}",
                cos.degenerate_layers
            );
        }
        log::trace!(
            "node {origin} round {round}: peer {peer} mean={:.4} raw_sum={:.4}",
            cos.score.value(),
            cos.raw_sum
        );
        let s = cos.score.value();
        let flagged = if literal_comparator {
            s >= kappa_s
        } else {
            s < kappa_s
        };
        if flagged {
            offending.push((*peer, s));
        }
        similarities.push((*peer, cos));
    }
    offending.sort_by_key(|(id, _)| *id);
    let trigger = (!offending.is_empty()).then_some(TriggerMessage {
        origin,
        round,
        offending,
    });
    Ok(AnomalyReport {
        similarities,
        trigger,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Trigger,
    Admit,
    RejectReputation,
    RejectFull,
    Deploy,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Trigger => "trigger",
            EventKind::Admit => "admit",
            EventKind::RejectReputation => "reject_reputation",
            EventKind::RejectFull => "reject_full",
            EventKind::Deploy => "deploy",
        })
    }
}

/// One row of the defense event log.
#[derive(Debug, Clone, PartialEq)]
pub struct VoyagerEvent {
    pub round: usize,
    pub node: usize,
    pub kind: EventKind,
    pub peer: Option<usize>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exploration {
    /// Existing neighbors (ascending) followed by admitted nodes in admission order.
    pub neighbors: Vec<usize>,
    /// `(peer, kind, reputation)` decisions in the order they were made.
    pub decisions: Vec<(usize, EventKind, f64)>,
}

impl Exploration {
    pub fn admitted(&self) -> impl Iterator<Item = usize> + '_ {
        self.decisions
            .iter()
            .filter(|(_, k, _)| *k == EventKind::Admit)
            .map(|(p, _, _)| *p)
    }
}

/// Breadth-first neighbor exploration gated by reputation.
///
/// Starts from the current neighbors in ascending id order and walks each
/// member's neighbors (ascending), appending every node that is not yet
/// listed, is not `self_id` and has reputation `>= kappa_r`, until the list
/// holds `kappa_n` nodes. Admitted nodes are expanded in turn. The first
/// candidate met once the list is full is logged as `RejectFull`.
pub fn explore_neighbors(
    g: &TopologyGraph,
    self_id: usize,
    reputations: &ReputationStore,
    kappa_n: usize,
    kappa_r: f64,
) -> Exploration {
    let mut list = g.neighbor_list(self_id);
    let mut members: BTreeSet<usize> = list.iter().copied().collect();
    let mut rejected: BTreeSet<usize> = BTreeSet::new();
    let mut decisions = Vec::new();
    let mut cursor = 0;
    'walk: while cursor < list.len() {
        let j = list[cursor];
        cursor += 1;
        for k in g.neighbors(j) {
            if k == self_id || members.contains(&k) || rejected.contains(&k) {
                continue;
            }
            let rep = reputations.get(k);
            if list.len() >= kappa_n {
                decisions.push((k, EventKind::RejectFull, rep));
                break 'walk;
            }
            if rep >= kappa_r {
                list.push(k);
                members.insert(k);
                decisions.push((k, EventKind::Admit, rep));
            } else {
                rejected.insert(k);
                decisions.push((k, EventKind::RejectReputation, rep));
            }
        }
    }
    if decisions.iter().all(|(_, k, _)| *k != EventKind::Admit) && list.len() < kappa_n {
        log::debug!(
            "node {self_id}: no admissible candidates, neighbor list stays at {}",
            list.len()
        );
    }
    Exploration {
        neighbors: list,
        decisions,
    }
}

/// Connects `self_id` to every member of `target` it is not yet adjacent to.
/// Returns the newly connected peers in `target` order.
pub fn deploy_connections(
    g: &mut TopologyGraph,
    self_id: usize,
    target: &[usize],
    round: usize,
) -> Result<Vec<usize>, TopologyError> {
    let mut added = Vec::new();
    for &peer in target {
        if !g.has_edge(self_id, peer) && g.add_edge(self_id, peer, round)? {
            added.push(peer);
        }
    }
    Ok(added)
}

/// Byzantine estimate at a node's current degree:
/// `round(degree * alpha * n / (n - 1))`.
pub fn f_estimate_for_degree(n: usize, alpha: f64, degree: usize) -> usize {
    if n < 2 {
        return 0;
    }
    (degree as f64 * alpha * n as f64 / (n as f64 - 1.0)).round() as usize
}

/// Krum over the own model and the final neighborhood.
pub fn voyager_aggregate(
    own: &LayeredParams,
    neighbor_models: Vec<(usize, &LayeredParams)>,
    f_estimate: usize,
) -> Result<KrumSelection, AggregationError> {
    krum(&AggregationInput::new(own, neighbor_models, f_estimate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::CandidateId;
    use crate::topology::{build_topology, TopologyKind};

    fn m(vals: &[f64]) -> LayeredParams {
        LayeredParams::from_vectors(&[vals]).unwrap()
    }

    fn ring(n: usize) -> TopologyGraph {
        build_topology(TopologyKind::Ring, n, 0, 0.0).unwrap()
    }

    #[test]
    fn identical_peers_do_not_trigger() {
        let own = m(&[1.0, 2.0]);
        let report = detect_anomaly(&own, &[(1, &own), (2, &own)], 0.5, false, 0, 1).unwrap();
        assert!(report.trigger.is_none());
        assert_eq!(report.similarities.len(), 2);
    }

    #[test]
    fn dissimilar_peer_is_flagged() {
        let own = m(&[1.0, 0.0]);
        let bad = m(&[-1.0, 0.2]);
        let ok = m(&[0.9, 0.1]);
        let t = detect_anomaly(&own, &[(5, &bad), (2, &ok)], 0.5, false, 0, 3)
            .unwrap()
            .trigger
            .unwrap();
        assert_eq!(t.origin, 0);
        assert_eq!(t.round, 3);
        assert_eq!(t.offending.len(), 1);
        assert_eq!(t.offending[0].0, 5);
        assert!(t.offending[0].1 < 0.0);
    }

    #[test]
    fn lowest_threshold_never_triggers() {
        let own = m(&[1.0, 0.0]);
        let opposite = m(&[-1.0, 0.0]);
        let r = detect_anomaly(&own, &[(1, &opposite)], -1.0, false, 0, 0).unwrap();
        assert!(r.trigger.is_none());
    }

    #[test]
    fn literal_comparator_flags_similar_models() {
        let own = m(&[1.0, 0.0]);
        let r = detect_anomaly(&own, &[(1, &own)], 0.5, true, 0, 0).unwrap();
        assert_eq!(r.trigger.unwrap().offending, vec![(1, 1.0)]);
    }

    #[test]
    fn exploration_on_ring() {
        let g = ring(10);
        let reps = ReputationStore::new(1.0);
        let e = explore_neighbors(&g, 0, &reps, 4, 0.5);
        assert_eq!(e.neighbors, vec![1, 9, 2, 8]);
        assert_eq!(e.admitted().collect::<Vec<_>>(), vec![2, 8]);
    }

    #[test]
    fn exploration_is_recursive() {
        let g = ring(10);
        let reps = ReputationStore::new(1.0);
        let e = explore_neighbors(&g, 0, &reps, 7, 0.5);
        assert_eq!(e.neighbors, vec![1, 9, 2, 8, 3, 7, 4]);
        let all = explore_neighbors(&g, 0, &reps, 20, 0.5);
        assert_eq!(all.neighbors.len(), 9);
    }

    #[test]
    fn size_gate_closed() {
        let g = ring(10);
        let reps = ReputationStore::new(1.0);
        for k in [0, 1, 2] {
            let e = explore_neighbors(&g, 0, &reps, k, 0.5);
            assert_eq!(e.neighbors, vec![1, 9]);
            assert!(e.admitted().next().is_none());
        }
    }

    #[test]
    fn reputation_gate() {
        let g = ring(10);
        let mut reps = ReputationStore::new(1.0);
        reps.set(2, 0.2);
        let e = explore_neighbors(&g, 0, &reps, 4, 0.5);
        assert!(!e.neighbors.contains(&2));
        assert_eq!(e.neighbors, vec![1, 9, 8, 7]);
        assert!(e.decisions.contains(&(2, EventKind::RejectReputation, 0.2)));
        // The rejected node also blocks the path through it.
        reps.set(8, 0.1);
        let e = explore_neighbors(&g, 0, &reps, 4, 0.5);
        assert_eq!(e.neighbors, vec![1, 9]);
    }

    #[test]
    fn full_list_records_rejection() {
        let g = ring(10);
        let reps = ReputationStore::new(1.0);
        let e = explore_neighbors(&g, 0, &reps, 3, 0.5);
        assert_eq!(e.neighbors, vec![1, 9, 2]);
        assert_eq!(e.decisions.last().unwrap().1, EventKind::RejectFull);
    }

    #[test]
    fn reputation_updates() {
        let own = m(&[1.0, 2.0]);
        let mut store = ReputationStore::new(1.0);
        assert_eq!(store.get(3), 1.0);
        assert!(!store.is_known(3));
        let other = m(&[-2.0, 1.0]);
        let n = update_reputation(&mut store, &own, &[(1, &own), (2, &other)]).unwrap();
        assert_eq!(n, 2);
        assert!((store.get(1) - 1.0).abs() < 1e-12);
        assert!(store.get(2).abs() < 1e-12);
        assert_eq!(store.get(3), 1.0);
        update_reputation(&mut store, &own, &[(2, &own)]).unwrap();
        assert!((store.get(2) - 1.0).abs() < 1e-12);
        assert!((store.get(1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deployment() {
        let mut g = ring(10);
        assert!(deploy_connections(&mut g, 0, &[1, 9], 1)
            .unwrap()
            .is_empty());
        assert!(g.mutation_log().is_empty());
        let added = deploy_connections(&mut g, 0, &[1, 9, 2, 8], 2).unwrap();
        assert_eq!(added, vec![2, 8]);
        assert_eq!(g.mutation_log().len(), 2);
        assert_eq!(g.degree(0), 4);
    }

    #[test]
    fn kappa_n_policy() {
        let cfg = VoyagerConfig::default();
        assert_eq!(cfg.target_neighbors(10, 0.3, 1.0, 2).unwrap(), 4);
        assert_eq!(cfg.target_neighbors(10, 0.0, 1.0, 2).unwrap(), 2);
        let fixed = VoyagerConfig {
            kappa_n: KappaNPolicy::Fixed(12),
            ..VoyagerConfig::default()
        };
        assert_eq!(fixed.target_neighbors(10, 0.3, 1.0, 2).unwrap(), 9);
        assert_eq!(cfg.kappa_r(), 0.5);
    }

    #[test]
    fn f_estimates() {
        assert_eq!(f_estimate_for_degree(10, 0.3, 2), 1);
        assert_eq!(f_estimate_for_degree(10, 0.3, 4), 1);
        assert_eq!(f_estimate_for_degree(10, 0.6, 5), 3);
        assert_eq!(f_estimate_for_degree(10, 0.0, 9), 0);
    }

    #[test]
    fn krum_skips_outlying_neighbor() {
        let own = m(&[0.0, 0.0]);
        let honest = [m(&[0.1, 0.0]), m(&[0.0, 0.1]), m(&[-0.1, 0.05])];
        let poisoned = m(&[5.0, 5.0]);
        let peers = vec![
            (1, &honest[0]),
            (2, &honest[1]),
            (3, &poisoned),
            (4, &honest[2]),
        ];
        let sel = voyager_aggregate(&own, peers, 1).unwrap();
        assert_ne!(sel.selected, CandidateId::Peer(3));
    }
}
