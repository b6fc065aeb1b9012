//! Discrete-time SIR cascade simulation over a mixture model, and the JSONL
//! corpus format for batches of observed cascades.
//!
//! Each cascade first draws the hidden component label (Bernoulli `alpha`)
//! and a uniform source, then spreads in rounds: every currently infected
//! vertex attempts each susceptible neighbor once with the labeled edge
//! weight, records every successful attempt as a timed event, and recovers.
//! Several infectors may hit the same vertex in the same round; all of those
//! events are recorded even though the vertex transitions only once.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{MixtureModel, VertexId};
use crate::{Error, Result};

/// One successful infection attempt. `time >= 1`; the infector was infected
/// at `time - 1` (or is the source, at time 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InfectionEvent {
    pub time: u32,
    pub infector: VertexId,
    pub infectee: VertexId,
}

/// The observable record of one cascade. The hidden component label is kept
/// out of the observable serialization; it is carried here only for debug
/// tooling behind an explicit side channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cascade {
    pub source: VertexId,
    /// Sorted by `(time, infector, infectee)`.
    pub events: Vec<InfectionEvent>,
    /// Hidden graph label (1 or 2); never read by estimation or recovery.
    pub label: Option<u8>,
}

impl Cascade {
    /// True when the record contains the event `infector -> infectee`.
    pub fn has_event(&self, infector: VertexId, infectee: VertexId) -> bool {
        self.events.iter().any(|e| e.infector == infector && e.infectee == infectee)
    }
}

/// A seeded batch of cascades from one model.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeCorpus {
    pub model_digest: String,
    pub n: usize,
    pub seed: u64,
    pub cascades: Vec<Cascade>,
}

impl CascadeCorpus {
    pub fn count(&self) -> usize {
        self.cascades.len()
    }
}

/// Vertex state during simulation.
#[derive(Clone, Copy, PartialEq)]
enum State {
    Susceptible,
    Infected,
    Removed,
}

/// Run one cascade, drawing the label, the source, and every infection
/// attempt from `rng` in a fixed order (label, source, then attempts sorted
/// by round, infector, infectee).
pub fn run_cascade(model: &MixtureModel, rng: &mut impl Rng) -> Cascade {
    let label: u8 = if rng.gen::<f64>() < model.alpha() { 1 } else { 2 };
    let source = rng.gen_range(0..model.n_vertices());

    let mut state = vec![State::Susceptible; model.n_vertices()];
    state[source] = State::Infected;
    let mut frontier = vec![source];
    let mut events = Vec::new();
    let mut time: u32 = 1;

    while !frontier.is_empty() {
        let mut newly: Vec<VertexId> = Vec::new();
        for &u in &frontier {
            for v in model.out_neighbors(u) {
                if state[v] != State::Susceptible {
                    continue;
                }
                let w = model.weight(u, v).map_or(0.0, |e| e.for_label(label));
                if rng.gen::<f64>() < w {
                    events.push(InfectionEvent { time, infector: u, infectee: v });
                    newly.push(v);
                }
            }
        }
        for &u in &frontier {
            state[u] = State::Removed;
        }
        newly.sort_unstable();
        newly.dedup();
        for &v in &newly {
            state[v] = State::Infected;
        }
        frontier = newly;
        time += 1;
    }
    events.sort_unstable();
    Cascade { source, events, label: Some(label) }
}

/// RNG for cascade `index` of a corpus: a per-cascade counter-based
/// substream, so generation order and worker count never affect the output.
pub fn cascade_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Stream 0 is the default; offset by one so cascade 0 does not share the
    // seed's default stream with unrelated consumers of the same seed.
    rng.set_stream(index + 1);
    rng
}

/// Generate `count` independent cascades. The result depends only on
/// `(model, count, seed)`, never on `workers` (0 = rayon default).
pub fn run_corpus(
    model: &MixtureModel,
    count: usize,
    seed: u64,
    workers: usize,
) -> Result<CascadeCorpus> {
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    let gen = |i: usize| {
        let mut rng = cascade_rng(seed, i as u64);
        run_cascade(model, &mut rng)
    };
    let cascades: Vec<Cascade> = if workers == 1 {
        (0..count).map(gen).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Invalid(e.to_string()))?;
        pool.install(|| (0..count).into_par_iter().map(gen).collect())
    };
    Ok(CascadeCorpus { model_digest: model.digest(), n: model.n_vertices(), seed, cascades })
}

/// JSONL header line of a corpus file.
#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    seed: u64,
    model_digest: String,
}

/// JSONL body line: one cascade.
#[derive(Serialize, Deserialize)]
struct CorpusLine {
    src: VertexId,
    ev: Vec<(u32, VertexId, VertexId)>,
}

/// Serialize the observable corpus (header line + one line per cascade).
/// Deterministic byte-for-byte for a given corpus.
pub fn write_corpus_jsonl(corpus: &CascadeCorpus) -> String {
    let mut out = String::new();
    let header = CorpusHeader {
        n: corpus.n,
        m: corpus.count(),
        seed: corpus.seed,
        model_digest: corpus.model_digest.clone(),
    };
    out.push_str(&serde_json::to_string(&header).expect("header serialization"));
    out.push('\n');
    for c in &corpus.cascades {
        let line = CorpusLine {
            src: c.source,
            ev: c.events.iter().map(|e| (e.time, e.infector, e.infectee)).collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("cascade serialization"));
        out.push('\n');
    }
    out
}

/// Hidden-label side channel (`--with-labels`): one `{"idx":i,"label":b}`
/// line per cascade. Recovery never reads this file.
pub fn write_labels_jsonl(corpus: &CascadeCorpus) -> String {
    let mut out = String::new();
    for (i, c) in corpus.cascades.iter().enumerate() {
        out.push_str(&format!("{{\"idx\":{},\"label\":{}}}\n", i, c.label.unwrap_or(0)));
    }
    out
}

/// Parse a corpus file. Validates the header, per-line JSON, vertex ranges,
/// and basic event sanity (`time >= 1`).
pub fn parse_corpus_jsonl(text: &str) -> Result<CascadeCorpus> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines.next().ok_or_else(|| Error::Parse("empty corpus file".into()))?;
    let header: CorpusHeader = serde_json::from_str(header_line)?;
    if header.n == 0 {
        return Err(Error::Parse("corpus header has n = 0".into()));
    }
    let mut cascades = Vec::new();
    for line in lines {
        let parsed: CorpusLine = serde_json::from_str(line)?;
        if parsed.src >= header.n {
            return Err(Error::Parse(format!("source {} out of range", parsed.src)));
        }
        let mut events = Vec::with_capacity(parsed.ev.len());
        for (time, infector, infectee) in parsed.ev {
            if time == 0 || infector >= header.n || infectee >= header.n {
                return Err(Error::Parse(format!(
                    "bad event ({time},{infector},{infectee})"
                )));
            }
            events.push(InfectionEvent { time, infector, infectee });
        }
        events.sort_unstable();
        cascades.push(Cascade { source: parsed.src, events, label: None });
    }
    if cascades.len() != header.m {
        return Err(Error::Parse(format!(
            "header claims {} cascades, file has {}",
            header.m,
            cascades.len()
        )));
    }
    Ok(CascadeCorpus { model_digest: header.model_digest, n: header.n, seed: header.seed, cascades })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Topology;
    use std::collections::HashMap;

    fn two_node(p: f64, q: f64) -> MixtureModel {
        let mut m = MixtureModel::new(2, 0.5, false).unwrap();
        m.set_edge(0, 1, p, q).unwrap();
        m
    }

    #[test]
    fn certain_edge_always_fires() {
        let m = two_node(1.0, 1.0);
        for i in 0..50 {
            let mut rng = cascade_rng(3, i);
            let c = run_cascade(&m, &mut rng);
            assert_eq!(c.events.len(), 1);
            let e = c.events[0];
            assert_eq!(e.time, 1);
            assert_eq!(e.infector, c.source);
            assert_eq!(e.infectee, 1 - c.source);
        }
    }

    #[test]
    fn saturated_star_infects_everyone_in_one_step() {
        let mut m = MixtureModel::new(4, 0.5, false).unwrap();
        for v in 1..4 {
            m.set_edge(0, v, 1.0, 1.0).unwrap();
        }
        // Source at the center: all three leaves infected at t=1, nothing after.
        for i in 0..200 {
            let mut rng = cascade_rng(9, i);
            let c = run_cascade(&m, &mut rng);
            if c.source == 0 {
                assert_eq!(c.events.len(), 3);
                assert!(c.events.iter().all(|e| e.time == 1 && e.infector == 0));
            }
        }
    }

    #[test]
    fn cascade_structure_invariants() {
        let m = MixtureModel::random(8, Topology::ErdosRenyi(0.4), (0.2, 0.9), 0.1, 0.5, 5)
            .unwrap();
        for i in 0..500 {
            let mut rng = cascade_rng(11, i);
            let c = run_cascade(&m, &mut rng);
            // No vertex infected twice; infection times consistent.
            let mut infected_at: HashMap<VertexId, u32> = HashMap::new();
            infected_at.insert(c.source, 0);
            for e in &c.events {
                let prev = infected_at.entry(e.infectee).or_insert(e.time);
                assert_eq!(*prev, e.time, "vertex {} infected at two times", e.infectee);
                assert!(e.time as usize <= m.n_vertices() - 1);
                // The infector must have been infected exactly one step earlier.
                assert_eq!(infected_at.get(&e.infector), Some(&(e.time - 1)));
            }
        }
    }

    #[test]
    fn corpus_is_worker_count_independent() {
        let m = MixtureModel::random(6, Topology::Tree, (0.2, 0.8), 0.2, 0.5, 1).unwrap();
        let a = run_corpus(&m, 500, 7, 1).unwrap();
        let b = run_corpus(&m, 500, 7, 8).unwrap();
        assert_eq!(write_corpus_jsonl(&a), write_corpus_jsonl(&b));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let m = two_node(0.5, 0.5);
        assert!(matches!(run_corpus(&m, 0, 1, 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn corpus_jsonl_round_trip() {
        let m = MixtureModel::random(5, Topology::Cycle, (0.2, 0.8), 0.2, 0.5, 2).unwrap();
        let corpus = run_corpus(&m, 100, 13, 1).unwrap();
        let text = write_corpus_jsonl(&corpus);
        let back = parse_corpus_jsonl(&text).unwrap();
        assert_eq!(back.n, corpus.n);
        assert_eq!(back.seed, corpus.seed);
        assert_eq!(back.model_digest, corpus.model_digest);
        assert_eq!(back.count(), corpus.count());
        for (a, b) in corpus.cascades.iter().zip(&back.cascades) {
            assert_eq!(a.source, b.source);
            assert_eq!(a.events, b.events);
            assert_eq!(b.label, None); // labels never survive the observable file
        }
    }

    #[test]
    fn source_frequencies_are_uniform() {
        let m = MixtureModel::random(5, Topology::Cycle, (0.2, 0.8), 0.2, 0.5, 2).unwrap();
        let corpus = run_corpus(&m, 100_000, 21, 0).unwrap();
        let mut counts = vec![0usize; 5];
        for c in &corpus.cascades {
            counts[c.source] += 1;
        }
        let expect = corpus.count() as f64 / 5.0;
        let sigma = (corpus.count() as f64 * 0.2 * 0.8).sqrt();
        for &c in &counts {
            assert!((c as f64 - expect).abs() <= 4.0 * sigma);
        }
    }

    #[test]
    fn balanced_two_node_transmission_rate() {
        // (p + q) / 2 = 0.5 regardless of the hidden label mix.
        let m = two_node(0.3, 0.7);
        let corpus = run_corpus(&m, 1_000_000, 99, 0).unwrap();
        let (mut num, mut den) = (0u64, 0u64);
        for c in &corpus.cascades {
            if c.source == 0 {
                den += 1;
                if c.has_event(0, 1) {
                    num += 1;
                }
            }
        }
        let rate = num as f64 / den as f64;
        assert!((rate - 0.5).abs() < 0.002, "rate {rate}");
    }
}
