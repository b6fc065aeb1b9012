//! Exact enumeration of the observable-cascade distribution for small
//! models. This is the "infinite samples" regime in finite form: every
//! moment recovery consumes can be computed here with no sampling error,
//! independently of the closed-form identities under test.
//!
//! Each ordered edge can attempt infection at most once per cascade, so the
//! process is a finite product measure: enumerate the hidden label, the
//! source, and the outcome of every attempt that actually occurs, replaying
//! the deterministic cascade induced by each assignment. Branching happens
//! only on attempts that are really made, which prunes the nominal
//! `2^attempts` space substantially.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::cascade::InfectionEvent;
use crate::model::{MixtureModel, VertexId};
use crate::query::EventQuery;
use crate::{Error, Result};

/// Enumeration budget: at most this many attempt Bernoulli variables.
pub const ORACLE_BUDGET: usize = 22;

/// Canonical observable record: source plus events sorted by
/// `(time, infector, infectee)`.
pub type CanonicalRecord = (VertexId, Vec<InfectionEvent>);

/// The full exact distribution over observable records.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    pub n: usize,
    pub support: BTreeMap<CanonicalRecord, f64>,
}

impl OutcomeDistribution {
    pub fn total_mass(&self) -> f64 {
        self.support.values().sum()
    }
}

fn check_budget(model: &MixtureModel) -> Result<()> {
    let attempts = model.attempt_edge_count();
    if attempts > ORACLE_BUDGET {
        return Err(Error::ModelTooLarge(attempts, ORACLE_BUDGET));
    }
    Ok(())
}

/// Walk every outcome of every cascade from the given label and source,
/// invoking `f(events, probability)` at each completed cascade. The
/// probabilities passed to `f` sum to 1 over the walk.
fn enumerate_block(
    model: &MixtureModel,
    label: u8,
    source: VertexId,
    f: &mut impl FnMut(&[InfectionEvent], f64),
) {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Susceptible,
        Infected,
        Removed,
    }

    fn step(
        model: &MixtureModel,
        label: u8,
        state: &mut Vec<State>,
        frontier: Vec<VertexId>,
        time: u32,
        prob: f64,
        events: &mut Vec<InfectionEvent>,
        f: &mut impl FnMut(&[InfectionEvent], f64),
    ) {
        if frontier.is_empty() {
            f(events, prob);
            return;
        }
        // All attempts of this round: infected u -> susceptible neighbor v.
        let mut attempts: Vec<(VertexId, VertexId, f64)> = Vec::new();
        for &u in &frontier {
            for v in model.out_neighbors(u) {
                if state[v] == State::Susceptible {
                    let w = model.weight(u, v).map_or(0.0, |e| e.for_label(label));
                    attempts.push((u, v, w));
                }
            }
        }
        for &u in &frontier {
            state[u] = State::Removed;
        }
        let k = attempts.len();
        let saved_events = events.len();
        for mask in 0u32..(1u32 << k) {
            let mut branch_prob = prob;
            let mut newly: Vec<VertexId> = Vec::new();
            for (i, &(u, v, w)) in attempts.iter().enumerate() {
                let success = mask & (1 << i) != 0;
                branch_prob *= if success { w } else { 1.0 - w };
                if branch_prob == 0.0 {
                    break;
                }
                if success {
                    events.push(InfectionEvent { time, infector: u, infectee: v });
                    newly.push(v);
                }
            }
            if branch_prob > 0.0 {
                newly.sort_unstable();
                newly.dedup();
                for &v in &newly {
                    state[v] = State::Infected;
                }
                step(model, label, state, newly.clone(), time + 1, branch_prob, events, f);
                for &v in &newly {
                    state[v] = State::Susceptible;
                }
            }
            events.truncate(saved_events);
        }
        // Restore: the caller owns the frontier's pre-removal state.
        for &u in &frontier {
            state[u] = State::Infected;
        }
    }

    let mut state = vec![State::Susceptible; model.n_vertices()];
    state[source] = State::Infected;
    let mut events = Vec::new();
    step(model, label, &mut state, vec![source], 1, 1.0, &mut events, f);
}

/// Exhaustively enumerate the observable distribution.
pub fn enumerate_distribution(model: &MixtureModel) -> Result<OutcomeDistribution> {
    check_budget(model)?;
    let n = model.n_vertices();
    let blocks: Vec<(u8, VertexId)> =
        (0..n).flat_map(|s| [(1u8, s), (2u8, s)]).collect();
    let partials: Vec<BTreeMap<CanonicalRecord, f64>> = blocks
        .par_iter()
        .map(|&(label, source)| {
            let label_weight = if label == 1 { model.alpha() } else { 1.0 - model.alpha() };
            let base = label_weight / n as f64;
            let mut map = BTreeMap::new();
            enumerate_block(model, label, source, &mut |events, prob| {
                let mut ev = events.to_vec();
                ev.sort_unstable();
                *map.entry((source, ev)).or_insert(0.0) += base * prob;
            });
            map
        })
        .collect();
    let mut support: BTreeMap<CanonicalRecord, f64> = BTreeMap::new();
    for partial in partials {
        for (k, v) in partial {
            *support.entry(k).or_insert(0.0) += v;
        }
    }
    Ok(OutcomeDistribution { n, support })
}

/// Exact values for a batch of queries in one enumeration pass.
///
/// Each result is the probability that all of the query's events appear in a
/// cascade, conditioned on the cascade's source being the query's
/// conditioning vertex (which has probability `1/n`).
pub fn exact_moments(
    model: &MixtureModel,
    queries: &[EventQuery],
) -> Result<BTreeMap<EventQuery, f64>> {
    check_budget(model)?;
    let n = model.n_vertices();
    for q in queries {
        q.validate(n)?;
    }
    // Group queries by conditioning source so each (label, source) block
    // only scans its own queries.
    let mut by_source: BTreeMap<VertexId, Vec<(EventQuery, Vec<(VertexId, VertexId)>)>> =
        BTreeMap::new();
    for &q in queries {
        by_source.entry(q.conditioning_source()).or_default().push((q, q.events()));
    }
    let blocks: Vec<(u8, VertexId)> = by_source
        .keys()
        .flat_map(|&s| [(1u8, s), (2u8, s)])
        .collect();
    let partials: Vec<Vec<(EventQuery, f64)>> = blocks
        .par_iter()
        .map(|&(label, source)| {
            let label_weight = if label == 1 { model.alpha() } else { 1.0 - model.alpha() };
            let group = &by_source[&source];
            let mut acc = vec![0.0f64; group.len()];
            enumerate_block(model, label, source, &mut |events, prob| {
                for (i, (_, needed)) in group.iter().enumerate() {
                    let all = needed.iter().all(|&(inf, tee)| {
                        events.iter().any(|e| e.infector == inf && e.infectee == tee)
                    });
                    if all {
                        acc[i] += label_weight * prob;
                    }
                }
            });
            group.iter().zip(acc).map(|(&(q, _), a)| (q, a)).collect()
        })
        .collect();
    let mut out: BTreeMap<EventQuery, f64> = BTreeMap::new();
    for partial in partials {
        for (q, v) in partial {
            *out.entry(q).or_insert(0.0) += v;
        }
    }
    Ok(out)
}

/// Exact value of a single query.
pub fn exact_moment(model: &MixtureModel, q: EventQuery) -> Result<f64> {
    Ok(*exact_moments(model, &[q])?.get(&q).expect("query present"))
}

/// Total-variation comparison of two distributions over the same vertex set.
pub fn distributions_equal(
    d1: &OutcomeDistribution,
    d2: &OutcomeDistribution,
    tol: f64,
) -> Result<(bool, f64)> {
    if d1.n != d2.n {
        return Err(Error::Invalid(format!("vertex counts differ: {} vs {}", d1.n, d2.n)));
    }
    let mut tv = 0.0;
    for (k, &p) in &d1.support {
        tv += (p - d2.support.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, &p) in &d2.support {
        if !d1.support.contains_key(k) {
            tv += p;
        }
    }
    let tv = tv / 2.0;
    Ok((tv <= tol, tv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_edge(beta: f64) -> MixtureModel {
        let mut m = MixtureModel::new(2, 0.5, false).unwrap();
        m.set_edge(0, 1, beta, 1.0 - beta).unwrap();
        m
    }

    /// Star with center 0 and the worked weights used throughout the tests.
    fn worked_star(alpha: f64) -> MixtureModel {
        let mut m = MixtureModel::new(4, alpha, false).unwrap();
        m.set_edge(0, 1, 0.8, 0.2).unwrap();
        m.set_edge(0, 2, 0.7, 0.3).unwrap();
        m.set_edge(0, 3, 0.6, 0.4).unwrap();
        m
    }

    /// Line 1-0-2-3 rooted at the degree-2 vertex 0: edges (1,0)=(0.8,0.2),
    /// (0,2)=(0.7,0.3), (2,3)=(0.6,0.4).
    fn worked_line() -> MixtureModel {
        let mut m = MixtureModel::new(4, 0.5, false).unwrap();
        m.set_edge(0, 1, 0.8, 0.2).unwrap();
        m.set_edge(0, 2, 0.7, 0.3).unwrap();
        m.set_edge(2, 3, 0.6, 0.4).unwrap();
        m
    }

    #[test]
    fn one_edge_distribution_has_four_quarter_atoms() {
        let d = enumerate_distribution(&one_edge(0.3)).unwrap();
        assert_eq!(d.support.len(), 4);
        for &p in d.support.values() {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert!((d.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_edge_models_are_indistinguishable() {
        for (b1, b2) in [(0.1, 0.3), (0.1, 0.7), (0.3, 0.7)] {
            let d1 = enumerate_distribution(&one_edge(b1)).unwrap();
            let d2 = enumerate_distribution(&one_edge(b2)).unwrap();
            let (eq, tv) = distributions_equal(&d1, &d2, 1e-12).unwrap();
            assert!(eq, "beta {b1} vs {b2}: tv {tv}");
        }
        // Not an involution pair: different (p+q)/2, so distinguishable.
        let mut m = MixtureModel::new(2, 0.5, false).unwrap();
        m.set_edge(0, 1, 0.4, 0.7).unwrap();
        let d1 = enumerate_distribution(&one_edge(0.3)).unwrap();
        let d3 = enumerate_distribution(&m).unwrap();
        let (eq, tv) = distributions_equal(&d1, &d3, 1e-12).unwrap();
        assert!(!eq && tv > 0.0);
    }

    #[test]
    fn edgeless_model_has_source_only_atoms() {
        let m = MixtureModel::new(5, 0.5, false).unwrap();
        let d = enumerate_distribution(&m).unwrap();
        assert_eq!(d.support.len(), 5);
        for ((_, events), &p) in &d.support {
            assert!(events.is_empty());
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn distribution_against_itself() {
        let d = enumerate_distribution(&worked_star(0.5)).unwrap();
        let (eq, tv) = distributions_equal(&d, &d, 0.0).unwrap();
        assert!(eq);
        assert_eq!(tv, 0.0);
    }

    #[test]
    fn budget_is_enforced() {
        // Complete graph on 6 vertices: 15 edges, 30 attempt variables.
        let mut m = MixtureModel::new(6, 0.5, false).unwrap();
        for u in 0..6 {
            for v in (u + 1)..6 {
                m.set_edge(u, v, 0.6, 0.4).unwrap();
            }
        }
        assert!(matches!(
            enumerate_distribution(&m),
            Err(Error::ModelTooLarge(30, ORACLE_BUDGET))
        ));
    }

    #[test]
    fn worked_star_first_and_second_moments() {
        let m = worked_star(0.5);
        assert!((exact_moment(&m, EventQuery::X(0, 1)).unwrap() - 0.5).abs() < 1e-12);
        // (0.8*0.7 + 0.2*0.3) / 2 = 0.31
        assert!((exact_moment(&m, EventQuery::YStar(0, 1, 2)).unwrap() - 0.31).abs() < 1e-12);
    }

    #[test]
    fn worked_line_moments() {
        let m = worked_line();
        // Y| = (0.42 + 0.12) / 2, Z| = (0.336 + 0.024) / 2.
        assert!((exact_moment(&m, EventQuery::YLine(0, 2, 3)).unwrap() - 0.27).abs() < 1e-12);
        assert!(
            (exact_moment(&m, EventQuery::ZLine(0, 1, 2, 3)).unwrap() - 0.18).abs() < 1e-12
        );
        assert!((exact_moment(&m, EventQuery::YStar(0, 1, 2)).unwrap() - 0.31).abs() < 1e-12);
    }

    #[test]
    fn unbalanced_star_moments() {
        let m = worked_star(0.25);
        assert!((exact_moment(&m, EventQuery::X(0, 1)).unwrap() - 0.35).abs() < 1e-12);
        assert!((exact_moment(&m, EventQuery::YStar(0, 1, 2)).unwrap() - 0.185).abs() < 1e-12);
        // Z = 0.25*0.336 + 0.75*0.024 = 0.102
        assert!(
            (exact_moment(&m, EventQuery::ZStar(0, 1, 2, 3)).unwrap() - 0.102).abs() < 1e-12
        );
    }

    #[test]
    fn path_and_triangle_moments() {
        // Path 0-1-2 with no (0,2) edge: P(0 -> 1 -> 2 | src 0) has the
        // product form (0.8*0.7 + 0.2*0.3)/2 = 0.31.
        let mut m = MixtureModel::new(3, 0.5, false).unwrap();
        m.set_edge(0, 1, 0.8, 0.2).unwrap();
        m.set_edge(1, 2, 0.7, 0.3).unwrap();
        assert!((exact_moment(&m, EventQuery::Path(0, 1, 2)).unwrap() - 0.31).abs() < 1e-12);

        // Triangle: the direct (0,2) edge can pre-infect vertex 2 at t=1,
        // blocking the 1 -> 2 event: (0.8*(1-0.6)*0.7 + 0.2*(1-0.4)*0.3)/2.
        m.set_edge(0, 2, 0.6, 0.4).unwrap();
        assert!(
            (exact_moment(&m, EventQuery::TrianglePath(0, 1, 2)).unwrap() - 0.13).abs() < 1e-12
        );
    }

    #[test]
    fn distribution_mass_sums_to_one() {
        for seed in 0..5 {
            let m = crate::model::MixtureModel::random(
                6,
                crate::model::Topology::Tree,
                (0.2, 0.9),
                0.1,
                0.5,
                seed,
            )
            .unwrap();
            let d = enumerate_distribution(&m).unwrap();
            assert!((d.total_mass() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn moments_match_distribution_marginals() {
        let m = worked_line();
        let d = enumerate_distribution(&m).unwrap();
        let q = EventQuery::YLine(0, 2, 3);
        let mut acc = 0.0;
        for ((source, events), &p) in &d.support {
            if *source == 0
                && q.events().iter().all(|&(inf, tee)| {
                    events.iter().any(|e| e.infector == inf && e.infectee == tee)
                })
            {
                acc += p;
            }
        }
        let direct = exact_moment(&m, q).unwrap();
        assert!((acc * 4.0 - direct).abs() < 1e-12);
    }
}
