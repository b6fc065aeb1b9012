//! The ground-truth mixture of two weighted graphs, plus validation of the
//! structural conditions under which it is recoverable and random instance
//! generation for tests and experiments.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Dense vertex index in `[0, n)`.
pub type VertexId = usize;

/// The pair of transmission probabilities for one edge: `p` in the first
/// component graph, `q` in the second. A weight of zero means the edge is
/// absent from that component; `(0, 0)` pairs are never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeightPair {
    pub p: f64,
    pub q: f64,
}

impl EdgeWeightPair {
    /// Weight of the edge under component label 1 (`p`) or 2 (`q`).
    pub fn for_label(&self, label: u8) -> f64 {
        if label == 1 {
            self.p
        } else {
            self.q
        }
    }
}

/// A mixture of two graphs on a shared vertex set. Undirected models store
/// each unordered pair once under the key `(min, max)`; directed models key
/// ordered pairs `(from, to)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    n: usize,
    alpha: f64,
    directed: bool,
    edges: BTreeMap<(VertexId, VertexId), EdgeWeightPair>,
}

/// Structural validation result. Condition 1 asks for a connected union graph
/// with at least three edges; Condition 2 asks for strict separation
/// (`delta > 0`) on every edge shared by both components.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub connected: bool,
    pub edge_count: usize,
    /// Minimum `|p - q|` over edges present in both components; infinite when
    /// no edge is shared.
    pub delta: f64,
    /// Minimum strictly positive weight across both components.
    pub p_min: f64,
    pub condition1_ok: bool,
    pub condition2_ok: bool,
    /// Shared edges with `|p - q| = 0` (the Condition 2 violations).
    pub offending_items: Vec<(VertexId, VertexId)>,
    /// Vertices not reachable from vertex 0 in the union graph.
    pub unreachable: Vec<VertexId>,
}

/// Topology used by [`MixtureModel::random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    Line,
    Star,
    Cycle,
    Tree,
    /// Independent edges with the given inclusion probability, resampled
    /// until the union graph is connected with at least three edges.
    ErdosRenyi(f64),
}

/// Retry budget for rejection sampling in [`MixtureModel::random`].
const GENERATION_RETRIES: usize = 10_000;

impl MixtureModel {
    pub fn new(n: usize, alpha: f64, directed: bool) -> Result<Self> {
        if n < 2 {
            return Err(Error::Invalid(format!("need at least 2 vertices, got {n}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must lie in (0,1), got {alpha}")));
        }
        Ok(MixtureModel { n, alpha, directed, edges: BTreeMap::new() })
    }

    fn key(&self, u: VertexId, v: VertexId) -> (VertexId, VertexId) {
        if self.directed || u < v {
            (u, v)
        } else {
            (v, u)
        }
    }

    /// Insert or replace an edge. `(p, q) = (0, 0)` removes the pair.
    pub fn set_edge(&mut self, u: VertexId, v: VertexId, p: f64, q: f64) -> Result<()> {
        if u == v || u >= self.n || v >= self.n {
            return Err(Error::Invalid(format!("bad edge ({u},{v}) for n={}", self.n)));
        }
        for w in [p, q] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Invalid(format!("weight {w} outside [0,1]")));
            }
        }
        let key = self.key(u, v);
        if p == 0.0 && q == 0.0 {
            self.edges.remove(&key);
        } else {
            self.edges.insert(key, EdgeWeightPair { p, q });
        }
        Ok(())
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&(VertexId, VertexId), &EdgeWeightPair)> {
        self.edges.iter()
    }

    /// Weight pair of the (directed: ordered) edge `u -> v`, if present.
    pub fn weight(&self, u: VertexId, v: VertexId) -> Option<EdgeWeightPair> {
        self.edges.get(&self.key(u, v)).copied()
    }

    pub fn has_edge(&self, u: VertexId, v: VertexId) -> bool {
        self.edges.contains_key(&self.key(u, v))
    }

    /// Vertices that `u` can attempt to infect, in ascending order.
    pub fn out_neighbors(&self, u: VertexId) -> Vec<VertexId> {
        let mut out = Vec::new();
        for &(a, b) in self.edges.keys() {
            if a == u {
                out.push(b);
            } else if b == u && !self.directed {
                out.push(a);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn out_degree(&self, u: VertexId) -> usize {
        self.out_neighbors(u).len()
    }

    /// Number of ordered infection attempts possible in one cascade; each is
    /// one Bernoulli variable for the exact oracle.
    pub fn attempt_edge_count(&self) -> usize {
        if self.directed {
            self.edges.len()
        } else {
            2 * self.edges.len()
        }
    }

    /// Separation `delta` (min `|p - q|` over edges shared by both
    /// components, infinite when none is shared) and minimum positive weight.
    pub fn separation_stats(&self) -> Result<(f64, f64)> {
        if self.edges.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let mut delta = f64::INFINITY;
        let mut p_min = f64::INFINITY;
        for w in self.edges.values() {
            if w.p > 0.0 && w.q > 0.0 {
                delta = delta.min((w.p - w.q).abs());
            }
            for x in [w.p, w.q] {
                if x > 0.0 {
                    p_min = p_min.min(x);
                }
            }
        }
        Ok((delta, p_min))
    }

    /// Check the two recoverability conditions: connected union graph with at
    /// least three edges, and strict separation on all shared edges.
    pub fn validate_conditions(&self) -> ConditionReport {
        let edge_count = self.edges.len();
        // Connectivity of the union graph, ignoring edge direction.
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in self.edges.keys() {
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        let unreachable: Vec<_> = (0..self.n).filter(|&v| !seen[v]).collect();
        let connected = unreachable.is_empty();

        let (delta, p_min) = self.separation_stats().unwrap_or((f64::INFINITY, f64::INFINITY));
        let offending_items: Vec<_> = self
            .edges
            .iter()
            .filter(|(_, w)| w.p > 0.0 && w.q > 0.0 && w.p == w.q)
            .map(|(&k, _)| k)
            .collect();
        ConditionReport {
            connected,
            edge_count,
            delta,
            p_min,
            condition1_ok: connected && edge_count >= 3,
            condition2_ok: delta > 0.0,
            offending_items,
            unreachable,
        }
    }

    /// Generate a random undirected mixture on the given topology. Weights
    /// are drawn uniformly from `weight_range` and rejection-sampled until
    /// every edge satisfies `|p - q| >= min_delta`. Deterministic per seed.
    pub fn random(
        n: usize,
        topology: Topology,
        weight_range: (f64, f64),
        min_delta: f64,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        let (lo, hi) = weight_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Invalid(format!("bad weight range [{lo},{hi}]")));
        }
        if min_delta >= hi - lo {
            return Err(Error::GenerationFailed(0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut budget = GENERATION_RETRIES;

        let pairs = loop {
            let pairs = Self::topology_edges(n, topology, &mut rng)?;
            // Structural retry loop only matters for Erdos-Renyi; the fixed
            // topologies either always satisfy Condition 1 or never do.
            let ok = {
                let mut probe = MixtureModel::new(n, alpha, false)?;
                for &(u, v) in &pairs {
                    probe.set_edge(u, v, 0.5, 0.5)?;
                }
                let r = probe.validate_conditions();
                r.connected && r.edge_count >= 3
            };
            if ok {
                break pairs;
            }
            budget = budget.checked_sub(1).ok_or(Error::GenerationFailed(GENERATION_RETRIES))?;
            if !matches!(topology, Topology::ErdosRenyi(_)) {
                return Err(Error::GenerationFailed(GENERATION_RETRIES));
            }
        };

        let mut model = MixtureModel::new(n, alpha, false)?;
        for (u, v) in pairs {
            loop {
                let p = rng.gen_range(lo..=hi);
                let q = rng.gen_range(lo..=hi);
                if (p - q).abs() >= min_delta {
                    model.set_edge(u, v, p, q)?;
                    break;
                }
                budget =
                    budget.checked_sub(1).ok_or(Error::GenerationFailed(GENERATION_RETRIES))?;
            }
        }
        debug_assert!(model.validate_conditions().condition1_ok);
        Ok(model)
    }

    fn topology_edges(
        n: usize,
        topology: Topology,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<(VertexId, VertexId)>> {
        let pairs = match topology {
            Topology::Line => (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
            Topology::Star => (1..n).map(|i| (0, i)).collect(),
            Topology::Cycle => (0..n).map(|i| (i, (i + 1) % n)).collect(),
            Topology::Tree => {
                let mut pairs = Vec::with_capacity(n.saturating_sub(1));
                for v in 1..n {
                    pairs.push((rng.gen_range(0..v), v));
                }
                pairs
            }
            Topology::ErdosRenyi(p_edge) => {
                let mut pairs = Vec::new();
                for u in 0..n {
                    for v in (u + 1)..n {
                        if rng.gen::<f64>() < p_edge {
                            pairs.push((u, v));
                        }
                    }
                }
                pairs
            }
        };
        if pairs.len() < 3 {
            match topology {
                Topology::ErdosRenyi(_) => {} // handled by the structural retry loop
                _ => return Err(Error::GenerationFailed(GENERATION_RETRIES)),
            }
        }
        Ok(pairs)
    }

    /// Canonical JSON serialization; round-trips bit-exactly (serde_json
    /// prints the shortest decimal that re-parses to the same f64).
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            n: self.n,
            alpha: self.alpha,
            directed: self.directed,
            edges: self.edges.iter().map(|(&(u, v), w)| (u, v, w.p, w.q)).collect(),
        };
        serde_json::to_string(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let mut model = MixtureModel::new(file.n, file.alpha, file.directed)?;
        for (u, v, p, q) in file.edges {
            if model.has_edge(u, v) {
                return Err(Error::Parse(format!("duplicate edge ({u},{v})")));
            }
            if p == 0.0 && q == 0.0 {
                return Err(Error::Parse(format!("edge ({u},{v}) has zero weight pair")));
            }
            model.set_edge(u, v, p, q).map_err(|e| Error::Parse(e.to_string()))?;
        }
        Ok(model)
    }

    /// Hex SHA-256 of the canonical JSON form; identifies the model inside
    /// corpus files.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// On-disk JSON layout of a model file.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    n: usize,
    alpha: f64,
    directed: bool,
    edges: Vec<(VertexId, VertexId, f64, f64)>,
}
