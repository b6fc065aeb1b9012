//! Count-based conditional-moment estimation over a cascade corpus, plus
//! oracle-exact tables with the same interface, so recovery code never knows
//! whether its inputs are empirical or exact.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::CascadeCorpus;
use crate::model::{MixtureModel, VertexId};
use crate::oracle;
use crate::query::EventQuery;
use crate::{Error, Result};

/// How a table's values were obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Empirical { m: usize, seed: u64 },
    Exact,
}

/// One estimated (or exact) conditional probability. Empirical entries carry
/// the raw counts; exact entries leave them unset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub num: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub den: Option<u64>,
}

/// The collection of conditional moments recovery runs on.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub n: usize,
    /// How often each vertex was the source (empirical tables only).
    pub source_counts: BTreeMap<VertexId, u64>,
    pub values: BTreeMap<EventQuery, MomentEntry>,
    /// Queries whose conditioning event never occurred in the corpus.
    pub missing: Vec<EventQuery>,
    pub provenance: Provenance,
}

impl MomentTable {
    /// Value of a query, if present.
    pub fn get(&self, q: EventQuery) -> Option<f64> {
        self.values.get(&q).map(|e| e.value)
    }

    /// Value of a query, as a hard requirement.
    pub fn require(&self, q: EventQuery) -> Result<f64> {
        self.get(q).ok_or_else(|| Error::MissingMoments(q.to_string()))
    }

    /// First moment `X(u,a)`, averaging both directions when the reverse
    /// estimate exists (undirected models: both estimate `(p+q)/2`).
    pub fn x_sym(&self, u: VertexId, a: VertexId) -> Option<f64> {
        match (self.get(EventQuery::X(u, a)), self.get(EventQuery::X(a, u))) {
            (Some(x), Some(y)) => Some((x + y) / 2.0),
            (Some(x), None) | (None, Some(x)) => Some(x),
            (None, None) => None,
        }
    }

    /// Rough standard error for one empirical entry (binomial); 0 for exact
    /// tables. Used to scale noise tolerances.
    pub fn sigma(&self, q: EventQuery) -> f64 {
        match self.values.get(&q) {
            Some(MomentEntry { value, den: Some(den), .. }) if *den > 0 => {
                (value.max(1e-12) * (1.0 - value).max(1e-12) / *den as f64).sqrt()
            }
            _ => 0.0,
        }
    }

    /// Serialize to the moments file format: a JSON object keyed by the
    /// canonical query strings, plus the metadata recovery needs.
    pub fn to_json(&self) -> String {
        let file = TableFile {
            n: self.n,
            source_counts: self.source_counts.clone(),
            provenance: self.provenance.clone(),
            missing: self.missing.iter().map(|q| q.to_string()).collect(),
            moments: self.values.iter().map(|(q, e)| (q.to_string(), *e)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("table serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<MomentTable> {
        let file: TableFile = serde_json::from_str(text)?;
        let mut values = BTreeMap::new();
        for (key, entry) in file.moments {
            let q = EventQuery::parse(&key)?;
            q.validate(file.n)?;
            values.insert(q, entry);
        }
        let mut missing = Vec::new();
        for key in file.missing {
            let q = EventQuery::parse(&key)?;
            q.validate(file.n)?;
            missing.push(q);
        }
        Ok(MomentTable {
            n: file.n,
            source_counts: file.source_counts,
            values,
            missing,
            provenance: file.provenance,
        })
    }

    /// A tolerance suitable for "is this moment combination zero" decisions:
    /// tiny for exact tables, 3-sigma-based for empirical ones.
    pub fn zero_tolerance(&self) -> f64 {
        match &self.provenance {
            Provenance::Exact => 1e-9,
            Provenance::Empirical { m, .. } => {
                // Conditional counts are about m/n per source; 0.25/m is the
                // worst-case binomial variance of one entry.
                let m_cond = (*m as f64 / self.n as f64).max(1.0);
                3.0 * (0.25 / m_cond).sqrt()
            }
        }
    }
}

/// On-disk layout of a moments file.
#[derive(Serialize, Deserialize)]
struct TableFile {
    n: usize,
    #[serde(default)]
    source_counts: BTreeMap<VertexId, u64>,
    provenance: Provenance,
    #[serde(default)]
    missing: Vec<String>,
    moments: BTreeMap<String, MomentEntry>,
}

/// Count `queries` over the corpus in one pass. Counting shards the corpus
/// and merges integer counters, so the result is independent of parallelism.
pub fn build_table(corpus: &CascadeCorpus, queries: &[EventQuery]) -> Result<MomentTable> {
    if queries.is_empty() {
        return Err(Error::Invalid("no queries given".into()));
    }
    let queries: Vec<EventQuery> = {
        let mut qs = queries.to_vec();
        qs.sort_unstable();
        qs.dedup();
        qs
    };
    for q in &queries {
        q.validate(corpus.n)?;
    }
    // Per-source index so each cascade only tests its own source's queries.
    let mut by_source: BTreeMap<VertexId, Vec<usize>> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        by_source.entry(q.conditioning_source()).or_default().push(i);
    }
    let empty: Vec<usize> = Vec::new();

    #[derive(Clone)]
    struct Counters {
        num: Vec<u64>,
        source: Vec<u64>,
    }
    let fresh = || Counters { num: vec![0; queries.len()], source: vec![0; 0] };
    let n = corpus.n;
    let merged = corpus
        .cascades
        .par_chunks(4096)
        .map(|chunk| {
            let mut c = fresh();
            c.source = vec![0; n];
            for cascade in chunk {
                c.source[cascade.source] += 1;
                let idxs = by_source.get(&cascade.source).unwrap_or(&empty);
                if idxs.is_empty() {
                    continue;
                }
                let present: HashSet<(VertexId, VertexId)> =
                    cascade.events.iter().map(|e| (e.infector, e.infectee)).collect();
                for &i in idxs {
                    if queries[i].events().iter().all(|ev| present.contains(ev)) {
                        c.num[i] += 1;
                    }
                }
            }
            c
        })
        .reduce(
            || {
                let mut c = fresh();
                c.source = vec![0; n];
                c
            },
            |mut a, b| {
                for (x, y) in a.num.iter_mut().zip(&b.num) {
                    *x += y;
                }
                for (x, y) in a.source.iter_mut().zip(&b.source) {
                    *x += y;
                }
                a
            },
        );

    let source_counts: BTreeMap<VertexId, u64> =
        merged.source.iter().enumerate().map(|(v, &c)| (v, c)).collect();
    let mut values = BTreeMap::new();
    let mut missing = Vec::new();
    for (i, &q) in queries.iter().enumerate() {
        let den = merged.source[q.conditioning_source()];
        if den == 0 {
            missing.push(q);
        } else {
            values.insert(
                q,
                MomentEntry {
                    value: merged.num[i] as f64 / den as f64,
                    num: Some(merged.num[i]),
                    den: Some(den),
                },
            );
        }
    }
    Ok(MomentTable {
        n: corpus.n,
        source_counts,
        values,
        missing,
        provenance: Provenance::Empirical { m: corpus.count(), seed: corpus.seed },
    })
}

/// Estimate a single query; errors when the conditioning vertex never
/// appears as a source.
pub fn estimate(corpus: &CascadeCorpus, q: EventQuery) -> Result<(f64, (u64, u64))> {
    let table = build_table(corpus, &[q])?;
    match table.values.get(&q) {
        Some(e) => Ok((e.value, (e.num.unwrap(), e.den.unwrap()))),
        None => Err(Error::NoConditioningSamples(q.conditioning_source())),
    }
}

/// Exact moment table from the enumeration oracle.
pub fn exact_table(model: &MixtureModel, queries: &[EventQuery]) -> Result<MomentTable> {
    let queries: Vec<EventQuery> = {
        let mut qs = queries.to_vec();
        qs.sort_unstable();
        qs.dedup();
        qs
    };
    let values = oracle::exact_moments(model, &queries)?;
    Ok(MomentTable {
        n: model.n_vertices(),
        source_counts: BTreeMap::new(),
        values: values
            .into_iter()
            .map(|(q, v)| (q, MomentEntry { value: v, num: None, den: None }))
            .collect(),
        missing: Vec::new(),
        provenance: Provenance::Exact,
    })
}

/// Recovery mode, which determines the moments the solvers will ask for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    Balanced,
    GeneralAlpha,
    Directed,
}

/// First-moment queries for every ordered vertex pair; the input to edge
/// detection before the edge set is known.
pub fn all_x_queries(n: usize) -> Vec<EventQuery> {
    let mut out = Vec::with_capacity(n * (n - 1));
    for u in 0..n {
        for a in 0..n {
            if u != a {
                out.push(EventQuery::X(u, a));
            }
        }
    }
    out
}

/// The queries recovery will consume for a known edge set. Undirected edges
/// are given as unordered pairs; directed mode interprets pairs as ordered.
pub fn required_queries(
    n: usize,
    edges: &BTreeSet<(VertexId, VertexId)>,
    mode: QueryMode,
) -> Vec<EventQuery> {
    let mut out: BTreeSet<EventQuery> = BTreeSet::new();
    let has_edge = |u: VertexId, v: VertexId| -> bool {
        if mode == QueryMode::Directed {
            edges.contains(&(u, v))
        } else {
            edges.contains(&(u.min(v), u.max(v)))
        }
    };
    // Out-neighbors under the mode's orientation convention.
    let nbrs = |u: VertexId| -> Vec<VertexId> {
        (0..n).filter(|&v| v != u && has_edge(u, v)).collect()
    };

    for u in 0..n {
        let ns = nbrs(u);
        for &a in &ns {
            out.insert(EventQuery::X(u, a));
        }
        // Pairwise second moments at every vertex of degree >= 2: the star
        // solver, sign propagation and non-distinct detection all read them.
        for i in 0..ns.len() {
            for j in (i + 1)..ns.len() {
                out.insert(EventQuery::YStar(u, ns[i], ns[j]));
            }
        }
        if mode == QueryMode::GeneralAlpha {
            // Third star moments, used to estimate the mixing weight.
            for i in 0..ns.len() {
                for j in (i + 1)..ns.len() {
                    for k in (j + 1)..ns.len() {
                        out.insert(EventQuery::ZStar(u, ns[i], ns[j], ns[k]));
                    }
                }
            }
        }
        // Line moments for degree-2 vertices, in both orientations: the main
        // loop may approach the line from either side.
        if mode != QueryMode::Directed && ns.len() == 2 {
            for (a, b) in [(ns[0], ns[1]), (ns[1], ns[0])] {
                for c in nbrs(b) {
                    if c != u && !has_edge(u, c) {
                        out.insert(EventQuery::X(b, c));
                        out.insert(EventQuery::YLine(u, b, c));
                        out.insert(EventQuery::ZLine(u, a, b, c));
                    }
                }
            }
        }
    }

    if mode == QueryMode::Directed {
        // Neighborhood-pairing checks: for each edge a -> u and out-neighbor
        // b of u, the chain moment a -> u -> b, with the triangle variant
        // when the shortcut edge a -> b exists.
        for &(a, u) in edges {
            for b in nbrs(u) {
                if b == a {
                    continue;
                }
                if has_edge(a, b) {
                    out.insert(EventQuery::TrianglePath(a, u, b));
                } else {
                    out.insert(EventQuery::Path(a, u, b));
                }
            }
        }
    }
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::{run_corpus, Cascade, InfectionEvent};
    use crate::model::{MixtureModel, Topology};

    fn worked_star() -> MixtureModel {
        let mut m = MixtureModel::new(4, 0.5, false).unwrap();
        m.set_edge(0, 1, 0.8, 0.2).unwrap();
        m.set_edge(0, 2, 0.7, 0.3).unwrap();
        m.set_edge(0, 3, 0.6, 0.4).unwrap();
        m
    }

    fn hand_corpus() -> CascadeCorpus {
        // Four cascades: vertex 0 is the source twice and infects 1 once.
        let ev = |t, i, j| InfectionEvent { time: t, infector: i, infectee: j };
        let cascades = vec![
            Cascade { source: 0, events: vec![ev(1, 0, 1)], label: None },
            Cascade { source: 0, events: vec![], label: None },
            Cascade { source: 1, events: vec![ev(1, 1, 0)], label: None },
            Cascade { source: 1, events: vec![], label: None },
        ];
        CascadeCorpus { model_digest: "test".into(), n: 2, seed: 0, cascades }
    }

    #[test]
    fn counting_on_a_hand_built_corpus() {
        let corpus = hand_corpus();
        let (value, (num, den)) = estimate(&corpus, EventQuery::X(0, 1)).unwrap();
        assert_eq!(value, 0.5);
        assert_eq!((num, den), (1, 2));
    }

    #[test]
    fn zero_denominator_is_an_error() {
        let mut corpus = hand_corpus();
        corpus.n = 3; // vertex 2 exists but never appears as source
        let err = estimate(&corpus, EventQuery::X(2, 0)).unwrap_err();
        assert!(matches!(err, Error::NoConditioningSamples(2)));
        // build_table flags rather than fails.
        let table = build_table(&corpus, &[EventQuery::X(2, 0)]).unwrap();
        assert_eq!(table.missing, vec![EventQuery::X(2, 0)]);
    }

    #[test]
    fn build_table_matches_per_query_estimate() {
        let m = worked_star();
        let corpus = run_corpus(&m, 20_000, 5, 0).unwrap();
        let queries =
            vec![EventQuery::X(0, 1), EventQuery::YStar(0, 1, 2), EventQuery::X(2, 0)];
        let table = build_table(&corpus, &queries).unwrap();
        for &q in &queries {
            let (value, (num, den)) = estimate(&corpus, q).unwrap();
            let e = table.values[&q];
            assert_eq!(e.value, value);
            assert_eq!((e.num.unwrap(), e.den.unwrap()), (num, den));
        }
    }

    #[test]
    fn empirical_first_moment_approaches_oracle() {
        let m = worked_star();
        let corpus = run_corpus(&m, 1_000_000, 17, 0).unwrap();
        let (value, _) = estimate(&corpus, EventQuery::X(0, 1)).unwrap();
        assert!((value - 0.5).abs() <= 0.003, "X = {value}");
    }

    #[test]
    fn edge_versus_nonedge_first_moments() {
        let m = MixtureModel::random(5, Topology::Tree, (0.4, 0.9), 0.2, 0.5, 3).unwrap();
        let corpus = run_corpus(&m, 100_000, 23, 0).unwrap();
        let table = build_table(&corpus, &all_x_queries(5)).unwrap();
        for u in 0..5 {
            for a in 0..5 {
                if u == a {
                    continue;
                }
                let x = table.get(EventQuery::X(u, a)).unwrap();
                if m.has_edge(u, a) {
                    assert!(x >= 0.4 / 2.0 - 0.02, "edge ({u},{a}) X={x}");
                } else {
                    assert!(x <= 0.02, "non-edge ({u},{a}) X={x}");
                }
            }
        }
    }

    #[test]
    fn exact_table_has_no_counts() {
        let m = worked_star();
        let table = exact_table(&m, &[EventQuery::X(0, 1)]).unwrap();
        assert_eq!(table.provenance, Provenance::Exact);
        let e = table.values[&EventQuery::X(0, 1)];
        assert_eq!((e.num, e.den), (None, None));
        assert!((e.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn required_queries_for_star_and_line() {
        // Star: center 0, leaves 1..3.
        let edges: BTreeSet<_> = [(0, 1), (0, 2), (0, 3)].into();
        let qs = required_queries(4, &edges, QueryMode::Balanced);
        for q in [
            EventQuery::X(0, 1),
            EventQuery::X(0, 2),
            EventQuery::X(0, 3),
            EventQuery::YStar(0, 1, 2),
            EventQuery::YStar(0, 1, 3),
            EventQuery::YStar(0, 2, 3),
        ] {
            assert!(qs.contains(&q), "missing {q}");
        }
        // Line 1-0-2-3 rooted at 0.
        let edges: BTreeSet<_> = [(0, 1), (0, 2), (2, 3)].into();
        let qs = required_queries(4, &edges, QueryMode::Balanced);
        for q in [
            EventQuery::X(0, 1),
            EventQuery::X(0, 2),
            EventQuery::X(2, 3),
            EventQuery::YStar(0, 1, 2),
            EventQuery::YLine(0, 2, 3),
            EventQuery::ZLine(0, 1, 2, 3),
        ] {
            assert!(qs.contains(&q), "missing {q}");
        }
    }

    #[test]
    fn required_queries_for_triangle() {
        let edges: BTreeSet<_> = [(0, 1), (0, 2), (1, 2)].into();
        let qs = required_queries(3, &edges, QueryMode::Balanced);
        // The nine star quantities: six X (both directions) and three Y.
        assert_eq!(qs.iter().filter(|q| matches!(q, EventQuery::X(..))).count(), 6);
        assert_eq!(qs.iter().filter(|q| matches!(q, EventQuery::YStar(..))).count(), 3);
    }

    #[test]
    fn hoeffding_style_concentration() {
        // With M = (2N / eps^2) ln(12 N^2 / delta), the max query error stays
        // below eps in at least 1 - delta of seeds.
        let m = worked_star();
        let n = 4.0f64;
        let (eps, delta) = (0.1, 0.1);
        let big_m = ((2.0 * n / (eps * eps)) * (12.0 * n * n / delta).ln()).ceil() as usize;
        let queries = required_queries(
            4,
            &[(0usize, 1usize), (0, 2), (0, 3)].into(),
            QueryMode::Balanced,
        );
        let exact = exact_table(&m, &queries).unwrap();
        let mut bad = 0;
        for seed in 0..50 {
            let corpus = run_corpus(&m, big_m, 1000 + seed, 0).unwrap();
            let table = build_table(&corpus, &queries).unwrap();
            let worst = queries
                .iter()
                .map(|&q| (table.get(q).unwrap() - exact.get(q).unwrap()).abs())
                .fold(0.0f64, f64::max);
            if worst > eps {
                bad += 1;
            }
        }
        assert!(bad <= 5, "{bad} of 50 seeds exceeded eps");
    }
}
