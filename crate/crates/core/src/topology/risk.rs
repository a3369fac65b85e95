use super::{TopologyError, TopologyGraph};

/// Exact binomial coefficient as `f64`.
///
/// Uses 128-bit integer arithmetic while it fits and falls back to a
/// log-space product for very large arguments.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        match acc.checked_mul(n as u128 - k as u128 + i) {
            Some(v) => acc = v / i,
            None => {
                let ln: f64 = (1..=k)
                    .map(|i| ((n - k + i) as f64).ln() - (i as f64).ln())
                    .sum();
                return ln.exp();
            }
        }
    }
    acc as f64
}

/// Attacker count `round(alpha * n)`.
pub fn malicious_count(n: usize, alpha: f64) -> Result<usize, TopologyError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(TopologyError::InvalidAlpha {
            alpha,
            n,
            malicious: 0,
        });
    }
    let malicious = (alpha * n as f64).round() as usize;
    if n == 0 || malicious > n - 1 {
        return Err(TopologyError::InvalidAlpha {
            alpha,
            n,
            malicious,
        });
    }
    Ok(malicious)
}

fn check_edges_per_node(n: usize, ebar: f64) -> Result<(), TopologyError> {
    if !(ebar >= 0.0 && ebar.is_finite()) || 2.0 * ebar > (n as f64 - 1.0) + 1e-9 {
        return Err(TopologyError::InvalidEdgesPerNode(ebar));
    }
    Ok(())
}

/// Probability mass over the number of malicious neighbors, indexed by `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    probabilities: Vec<f64>,
}

impl Pmf {
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn get(&self, k: usize) -> f64 {
        self.probabilities.get(k).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }
}

/// Hypergeometric distribution of malicious neighbors for a benign node
/// that picks `degree` peers from the other `n - 1` nodes, `round(alpha*n)`
/// of which are malicious.
pub fn malicious_connection_pmf(n: usize, alpha: f64, degree: usize) -> Result<Pmf, TopologyError> {
    let malicious = malicious_count(n, alpha)?;
    let peers = n - 1;
    if degree > peers {
        return Err(TopologyError::InvalidDegree { degree, peers });
    }
    let benign = peers - malicious;
    let total = binomial(peers, degree);
    let probabilities = (0..=degree)
        .map(|k| {
            if k > malicious || degree - k > benign {
                0.0
            } else {
                binomial(malicious, k) * binomial(benign, degree - k) / total
            }
        })
        .collect();
    Ok(Pmf { probabilities })
}

/// Mean number of malicious neighbors, `2 ē α N / (N - 1)`.
pub fn expected_malicious(n: usize, alpha: f64, ebar: f64) -> Result<f64, TopologyError> {
    malicious_count(n, alpha)?;
    check_edges_per_node(n, ebar)?;
    Ok(2.0 * ebar * alpha * n as f64 / (n as f64 - 1.0))
}

/// Per-node risk: expected malicious neighbors divided by the node's degree.
pub fn node_risk(n: usize, alpha: f64, ebar: f64, degree: usize) -> Result<f64, TopologyError> {
    if degree == 0 {
        return Err(TopologyError::IsolatedNode);
    }
    Ok(expected_malicious(n, alpha, ebar)? / degree as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectionThreshold {
    /// Target neighbor count.
    pub kappa: usize,
    /// `4 ē α N / (N - 1) + 2` before rounding.
    pub raw: f64,
    /// The ceiling exceeded `n - 1` and was clamped.
    pub saturated: bool,
}

/// Neighbor count that keeps the expected malicious share within Krum's
/// tolerance `(κ - 2) / (2κ)`: `ceil(4 ē α N / (N - 1) + 2)`, clamped to `n - 1`.
///
/// With `alpha == 0` no expansion is needed and `current_degree` is returned.
pub fn connection_threshold(
    n: usize,
    alpha: f64,
    ebar: f64,
    current_degree: usize,
) -> Result<ConnectionThreshold, TopologyError> {
    let expected = expected_malicious(n, alpha, ebar)?;
    if alpha == 0.0 {
        return Ok(ConnectionThreshold {
            kappa: current_degree,
            raw: current_degree as f64,
            saturated: false,
        });
    }
    let raw = 2.0 * expected + 2.0;
    // Guard against 3.0000000000000004 rounding up to 4.
    let ceil = (raw - 1e-6).ceil().max(0.0) as usize;
    let saturated = ceil > n - 1;
    if saturated {
        log::warn!(
            "connection threshold {ceil} exceeds {} peers; clamped",
            n - 1
        );
    }
    Ok(ConnectionThreshold {
        kappa: ceil.min(n - 1),
        raw,
        saturated,
    })
}

/// Risk summary of a concrete graph.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskProfile {
    pub n_nodes: usize,
    pub alpha: f64,
    /// `|E| / N`.
    pub edges_per_node_bar: f64,
    /// Neighbor draws used for the pmf: `round(2 ē)`.
    pub draws: usize,
    pub pmf: Pmf,
    pub expected_malicious: f64,
    pub degrees: Vec<usize>,
    pub per_node_risk: Vec<f64>,
    pub threshold: ConnectionThreshold,
}

impl RiskProfile {
    pub fn from_graph(g: &TopologyGraph, alpha: f64) -> Result<Self, TopologyError> {
        let n = g.n_nodes();
        let ebar = g.edges_per_node();
        let draws = ((2.0 * ebar).round() as usize).min(n.saturating_sub(1));
        let degrees = g.degrees();
        let per_node_risk = degrees
            .iter()
            .map(|&d| node_risk(n, alpha, ebar, d))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            n_nodes: n,
            alpha,
            edges_per_node_bar: ebar,
            draws,
            pmf: malicious_connection_pmf(n, alpha, draws)?,
            expected_malicious: expected_malicious(n, alpha, ebar)?,
            degrees,
            per_node_risk,
            threshold: connection_threshold(n, alpha, ebar, draws)?,
        })
    }
}
