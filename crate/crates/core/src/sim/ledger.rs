use serde::Serialize;

use super::SimError;
use crate::model::{serialized_size_bytes, LayeredParams};
use crate::topology::TopologyGraph;

/// Per-node counters for one round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NodeTraffic {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Cosine similarity computations, a CPU proxy.
    pub sim_ops: u64,
    /// Pairwise model distance computations, a CPU proxy.
    pub dist_ops: u64,
}

/// Traffic and operation counters indexed by round, then node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrafficLedger {
    n_nodes: usize,
    rounds: Vec<Vec<NodeTraffic>>,
}

impl TrafficLedger {
    pub fn new(n_nodes: usize) -> Self {
        Self {
            n_nodes,
            rounds: Vec::new(),
        }
    }

    /// Opens a fresh row of counters and returns its round index.
    pub fn begin_round(&mut self) -> usize {
        self.rounds.push(vec![NodeTraffic::default(); self.n_nodes]);
        self.rounds.len() - 1
    }

    pub fn rounds(&self) -> &[Vec<NodeTraffic>] {
        &self.rounds
    }

    fn current(&mut self) -> &mut Vec<NodeTraffic> {
        if self.rounds.is_empty() {
            self.begin_round();
        }
        self.rounds.last_mut().expect("round opened")
    }

    pub fn add_sim_ops(&mut self, node: usize, ops: u64) {
        self.current()[node].sim_ops += ops;
    }

    pub fn add_dist_ops(&mut self, node: usize, ops: u64) {
        self.current()[node].dist_ops += ops;
    }

    pub fn round_bytes(&self, round: usize) -> (u64, u64) {
        self.rounds[round]
            .iter()
            .fold((0, 0), |(s, r), t| (s + t.bytes_sent, r + t.bytes_received))
    }

    /// Total bytes sent over the run; equal to the total received.
    pub fn total_bytes(&self) -> u64 {
        (0..self.rounds.len()).map(|r| self.round_bytes(r).0).sum()
    }

    pub fn total_sim_ops(&self) -> u64 {
        self.rounds.iter().flatten().map(|t| t.sim_ops).sum()
    }

    pub fn total_dist_ops(&self) -> u64 {
        self.rounds.iter().flatten().map(|t| t.dist_ops).sum()
    }
}

/// Records one model transfer from `from` to `to` in the current round.
/// The two nodes must be adjacent in `g`.
pub fn account_message(
    ledger: &mut TrafficLedger,
    g: &TopologyGraph,
    from: usize,
    to: usize,
    model: &LayeredParams,
) -> Result<(), SimError> {
    if !g.has_edge(from, to) {
        return Err(SimError::ProtocolViolation {
            round: ledger.rounds.len(),
            from,
            to,
        });
    }
    let bytes = serialized_size_bytes(model);
    let row = ledger.current();
    row[from].bytes_sent += bytes;
    row[to].bytes_received += bytes;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_topology, TopologyKind};

    fn model_56_bytes() -> LayeredParams {
        // 10 params at 4 bytes plus a 16-byte layer header.
        LayeredParams::from_vectors(&[&[0.5; 10]]).unwrap()
    }

    #[test]
    fn single_exchange() {
        let g = build_topology(TopologyKind::Ring, 4, 0, 0.0).unwrap();
        let m = model_56_bytes();
        assert_eq!(serialized_size_bytes(&m), 56);
        let mut l = TrafficLedger::new(4);
        l.begin_round();
        account_message(&mut l, &g, 0, 1, &m).unwrap();
        assert_eq!(l.rounds()[0][0].bytes_sent, 56);
        assert_eq!(l.rounds()[0][1].bytes_received, 56);
        assert_eq!(l.round_bytes(0), (56, 56));
    }

    #[test]
    fn ring_share_phase() {
        let g = build_topology(TopologyKind::Ring, 10, 0, 0.0).unwrap();
        let m = model_56_bytes();
        let mut l = TrafficLedger::new(10);
        l.begin_round();
        for i in 0..10 {
            for j in g.neighbors(i) {
                account_message(&mut l, &g, i, j, &m).unwrap();
            }
        }
        assert_eq!(l.total_bytes(), 10 * 2 * 56);
        let (s, r) = l.round_bytes(0);
        assert_eq!(s, r);
    }

    #[test]
    fn non_adjacent_send_is_rejected() {
        let g = build_topology(TopologyKind::Ring, 10, 0, 0.0).unwrap();
        let mut l = TrafficLedger::new(10);
        l.begin_round();
        assert!(matches!(
            account_message(&mut l, &g, 0, 5, &model_56_bytes()),
            Err(SimError::ProtocolViolation { from: 0, to: 5, .. })
        ));
        assert_eq!(l.total_bytes(), 0);
    }
}
