//! Recovery of both components' edge weights from a moment table.
//!
//! Every primitive here solves a small closed-form system on conditional
//! moments: a first moment pins `alpha*p + (1-alpha)*q` per edge, and second
//! (star) or third (line) moments pin the separation `|p - q|` up to sign.
//! Relative signs of adjacent edges follow from the sign of the centered
//! second moment, leaving exactly one global sign — the inherent freedom of
//! swapping the two components.

mod alpha;
mod balanced;
mod directed;
mod star_line;

pub use alpha::estimate_alpha;
pub use balanced::{learn_two_nodes, recover_balanced, recover_general};
pub use directed::{check_path, check_triangle, recover_directed, Pairing};
pub use star_line::{
    learn_line, learn_line_general, learn_star, learn_star_general, recover_triangle,
    LineContext,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::model::{MixtureModel, VertexId};
use crate::moments::MomentTable;
use crate::query::EventQuery;
use crate::{Error, Result};

/// Which primitive produced a recovered edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Star,
    Line,
    Triangle,
    /// Detected as having equal weights in both components.
    Nondistinct,
    /// Weight copied from an already-learned edge without a fresh solve.
    Inherited,
    /// Degenerate on every available route; weights are NaN.
    NondistinctFailed,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Star => "star",
            Method::Line => "line",
            Method::Triangle => "triangle",
            Method::Nondistinct => "nondistinct",
            Method::Inherited => "inherited",
            Method::NondistinctFailed => "nondistinct-failed",
        };
        f.write_str(s)
    }
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        Ok(match s {
            "star" => Method::Star,
            "line" => Method::Line,
            "triangle" => Method::Triangle,
            "nondistinct" => Method::Nondistinct,
            "inherited" => Method::Inherited,
            "nondistinct-failed" => Method::NondistinctFailed,
            other => return Err(Error::Parse(format!("unknown method '{other}'"))),
        })
    }
}

/// One recovered edge. `p_hat`/`q_hat` are clamped into `[0,1]`; `raw_diff`
/// keeps the pre-clamp `|p_hat - q_hat|` for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveredEdge {
    pub pair: (VertexId, VertexId),
    pub p_hat: f64,
    pub q_hat: f64,
    /// `sgn(p_hat - q_hat)` under the global label convention; +1 for the
    /// anchor edge.
    pub sign: i8,
    pub method: Method,
    pub raw_diff: f64,
}

impl RecoveredEdge {
    /// Build from a first moment `x` and a signed half-separation `s * d`
    /// (`d = |p - q| / 2` in the balanced case).
    pub(crate) fn balanced(
        pair: (VertexId, VertexId),
        x: f64,
        d: f64,
        sign: i8,
        method: Method,
    ) -> RecoveredEdge {
        let p = x + sign as f64 * d;
        let q = x - sign as f64 * d;
        RecoveredEdge {
            pair,
            p_hat: p.clamp(0.0, 1.0),
            q_hat: q.clamp(0.0, 1.0),
            sign,
            method,
            raw_diff: (p - q).abs(),
        }
    }

    pub(crate) fn from_pq(
        pair: (VertexId, VertexId),
        p: f64,
        q: f64,
        method: Method,
    ) -> RecoveredEdge {
        RecoveredEdge {
            pair,
            p_hat: p.clamp(0.0, 1.0),
            q_hat: q.clamp(0.0, 1.0),
            sign: if p >= q { 1 } else { -1 },
            method,
            raw_diff: (p - q).abs(),
        }
    }

    pub(crate) fn failed(pair: (VertexId, VertexId)) -> RecoveredEdge {
        RecoveredEdge {
            pair,
            p_hat: f64::NAN,
            q_hat: f64::NAN,
            sign: 1,
            method: Method::NondistinctFailed,
            raw_diff: f64::NAN,
        }
    }
}

/// The full recovery result: per-edge weight pairs under one global label
/// convention, plus provenance of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredMixture {
    /// Keyed by normalized pair: unordered `(min,max)` for undirected runs,
    /// ordered `(from,to)` for directed runs.
    pub edges: BTreeMap<(VertexId, VertexId), RecoveredEdge>,
    pub alpha_used: f64,
    /// The edge whose sign was fixed to +1.
    pub anchor: Option<(VertexId, VertexId)>,
    /// Vertices in the order they entered the learned set.
    pub learned_order: Vec<VertexId>,
    pub warnings: Vec<String>,
}

impl RecoveredMixture {
    pub(crate) fn new(alpha: f64) -> RecoveredMixture {
        RecoveredMixture {
            edges: BTreeMap::new(),
            alpha_used: alpha,
            anchor: None,
            learned_order: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Insert edges, keeping the first value learned for each pair.
    pub(crate) fn absorb(&mut self, new_edges: &[RecoveredEdge], directed: bool) {
        for e in new_edges {
            let key = normalize_pair(e.pair, directed);
            self.edges.entry(key).or_insert(RecoveredEdge { pair: key, ..*e });
        }
    }
}

pub(crate) fn normalize_pair(
    (u, v): (VertexId, VertexId),
    directed: bool,
) -> (VertexId, VertexId) {
    if directed || u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Undirected edge set with adjacency helpers, shared by the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pub n: usize,
    pub directed: bool,
    pub pairs: BTreeSet<(VertexId, VertexId)>,
}

impl EdgeSet {
    pub fn new(n: usize, directed: bool) -> EdgeSet {
        EdgeSet { n, directed, pairs: BTreeSet::new() }
    }

    pub fn insert(&mut self, u: VertexId, v: VertexId) {
        self.pairs.insert(normalize_pair((u, v), self.directed));
    }

    pub fn remove(&mut self, u: VertexId, v: VertexId) {
        self.pairs.remove(&normalize_pair((u, v), self.directed));
    }

    pub fn contains(&self, u: VertexId, v: VertexId) -> bool {
        self.pairs.contains(&normalize_pair((u, v), self.directed))
    }

    /// Out-neighbors (directed) or all neighbors (undirected), ascending.
    pub fn neighbors(&self, u: VertexId) -> Vec<VertexId> {
        (0..self.n).filter(|&v| v != u && self.contains(u, v)).collect()
    }

    pub fn degree(&self, u: VertexId) -> usize {
        self.neighbors(u).len()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Vertices incident to at least one edge.
    pub fn covered_vertices(&self) -> BTreeSet<VertexId> {
        self.pairs.iter().flat_map(|&(u, v)| [u, v]).collect()
    }

    /// Is the union graph connected over all `n` vertices? (Directed edges
    /// count as undirected for this check.)
    pub fn connected_over_all(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.pairs {
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
        seen.iter().all(|&s| s)
    }
}

/// Detect the edge set by thresholding first moments: every true edge has
/// `X >= p_min / 2`, every non-edge has `X = 0`.
pub fn learn_edges(table: &MomentTable, threshold: f64, directed: bool) -> Result<EdgeSet> {
    let n = table.n;
    let mut edges = EdgeSet::new(n, directed);
    let mut absent = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if directed {
                for (a, b) in [(u, v), (v, u)] {
                    match table.get(EventQuery::X(a, b)) {
                        Some(x) if x >= threshold => edges.insert(a, b),
                        Some(_) => {}
                        None => absent.push(format!("X {a} {b}")),
                    }
                }
            } else {
                match table.x_sym(u, v) {
                    Some(x) if x >= threshold => edges.insert(u, v),
                    Some(_) => {}
                    None => absent.push(format!("X {u} {v}")),
                }
            }
        }
    }
    if !absent.is_empty() {
        return Err(Error::MissingMoments(absent.join(", ")));
    }
    Ok(edges)
}

/// Star second-moment lookup that ignores the helper order.
pub(crate) fn y_star(table: &MomentTable, u: VertexId, a: VertexId, b: VertexId) -> Result<f64> {
    table
        .get(EventQuery::YStar(u, a, b))
        .or_else(|| table.get(EventQuery::YStar(u, b, a)))
        .ok_or_else(|| Error::MissingMoments(EventQuery::YStar(u, a, b).to_string()))
}

/// Centered star second moment `Y_star(u,a,b) - X(u,a) X(u,b)`, which equals
/// `alpha (1-alpha) (p_ua - q_ua)(p_ub - q_ub)`.
pub(crate) fn centered_y(
    table: &MomentTable,
    u: VertexId,
    a: VertexId,
    b: VertexId,
) -> Result<f64> {
    let y = y_star(table, u, a, b)?;
    let xa = table.require(EventQuery::X(u, a))?;
    let xb = table.require(EventQuery::X(u, b))?;
    Ok(y - xa * xb)
}

/// Test whether edge `(i,j)` has equal weight in both components: all
/// centered second moments pairing it with a co-neighbor must vanish. Both
/// endpoints are checked; returns the common weight if so, `None` if any
/// check is decisively nonzero or no check is available.
pub fn detect_nondistinct(
    table: &MomentTable,
    i: VertexId,
    j: VertexId,
    edges: &EdgeSet,
) -> Result<Option<f64>> {
    let tol = table.zero_tolerance();
    let x = table
        .x_sym(i, j)
        .ok_or_else(|| Error::MissingMoments(EventQuery::X(i, j).to_string()))?;
    if x <= tol {
        return Ok(None);
    }
    let mut checks = 0usize;
    for (s, t) in [(i, j), (j, i)] {
        for k in edges.neighbors(s) {
            if k == t {
                continue;
            }
            // Only moments actually present count; the query plan guarantees
            // them at every vertex of degree >= 2.
            if let Ok(v) = centered_y(table, s, k, t) {
                checks += 1;
                if v.abs() > tol {
                    return Ok(None);
                }
            }
        }
    }
    if checks == 0 {
        return Ok(None);
    }
    Ok(Some(x))
}

/// Maximum absolute weight error of a recovery against the ground truth,
/// minimized over the global component swap. Missing or extra edges and NaN
/// weights yield infinity.
pub fn max_error_up_to_swap(truth: &MixtureModel, recovered: &RecoveredMixture) -> f64 {
    let mut err_direct = 0.0f64;
    let mut err_swapped = 0.0f64;
    let mut true_pairs = BTreeSet::new();
    for (&(u, v), w) in truth.edges() {
        true_pairs.insert((u, v));
        match recovered.edges.get(&(u, v)) {
            Some(e) if e.p_hat.is_finite() && e.q_hat.is_finite() => {
                err_direct = err_direct.max((e.p_hat - w.p).abs()).max((e.q_hat - w.q).abs());
                err_swapped =
                    err_swapped.max((e.p_hat - w.q).abs()).max((e.q_hat - w.p).abs());
            }
            _ => return f64::INFINITY,
        }
    }
    if recovered.edges.keys().any(|k| !true_pairs.contains(k)) {
        return f64::INFINITY;
    }
    err_direct.min(err_swapped)
}
