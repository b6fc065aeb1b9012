//! Directed recovery: a star solve at every vertex (out-degree >= 3), then
//! chain moments stitch the per-vertex component labelings together.
//!
//! Each local solve labels its own two weight sets arbitrarily. For an edge
//! a -> u the chain moment through a common target b distinguishes the
//! aligned pairing from the swapped one: without a shortcut edge,
//! `P(a -> u -> b | src a) = (p_au p_ub + q_au q_ub) / 2`; a shortcut a -> b
//! adds a `(1 - w_ab)` blocking factor.

use std::collections::BTreeMap;

use crate::model::VertexId;
use crate::moments::MomentTable;
use crate::query::EventQuery;
use crate::recovery::star_line::star_solve;
use crate::recovery::{learn_edges, RecoveredEdge, RecoveredMixture};
use crate::{Error, Result};

/// Candidate pairing for a chain check along a -> u -> b: the (p, q) weights
/// of the upstream edge (a,u) under the convention being tested, the
/// downstream edge (u,b) in the local labeling under test, and the shortcut
/// edge (a,b) when it exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pairing {
    pub au: (f64, f64),
    pub ub: (f64, f64),
    pub ab: Option<(f64, f64)>,
}

fn check_chain(
    table: &MomentTable,
    query: EventQuery,
    a: VertexId,
    u: VertexId,
    b: VertexId,
    pairing: Pairing,
) -> Result<bool> {
    let observed = table.require(query)?;
    let (p_au, q_au) = pairing.au;
    let (p_ub, q_ub) = pairing.ub;
    // Blocking factor from the shortcut edge, per component.
    let (block_p, block_q) = match pairing.ab {
        Some((p_ab, q_ab)) => (1.0 - p_ab, 1.0 - q_ab),
        None => (1.0, 1.0),
    };
    let aligned = (p_au * block_p * p_ub + q_au * block_q * q_ub) / 2.0;
    let swapped = (p_au * block_p * q_ub + q_au * block_q * p_ub) / 2.0;
    let noise = (3.0 * table.sigma(query)).max(table.zero_tolerance());
    if (aligned - swapped).abs() <= noise {
        return Err(Error::PairingAmbiguous(a, u, b));
    }
    Ok((observed - aligned).abs() < (observed - swapped).abs())
}

/// Does the observed chain moment a -> u -> b (no shortcut edge a -> b)
/// favor the candidate pairing over its swap?
pub fn check_path(
    table: &MomentTable,
    a: VertexId,
    u: VertexId,
    b: VertexId,
    pairing: Pairing,
) -> Result<bool> {
    check_chain(table, EventQuery::Path(a, u, b), a, u, b, pairing)
}

/// Chain check in the presence of the shortcut edge a -> b, which can infect
/// b first and block the u -> b event.
pub fn check_triangle(
    table: &MomentTable,
    a: VertexId,
    u: VertexId,
    b: VertexId,
    pairing: Pairing,
) -> Result<bool> {
    check_chain(table, EventQuery::TrianglePath(a, u, b), a, u, b, pairing)
}

/// Local star solution at one vertex: (p, q) per out-edge under an arbitrary
/// local labeling.
type LocalStar = BTreeMap<VertexId, (f64, f64)>;

fn oriented(weights: (f64, f64), swap: bool) -> (f64, f64) {
    if swap {
        (weights.1, weights.0)
    } else {
        weights
    }
}

/// Recover a balanced directed mixture where every vertex has out-degree
/// >= 3. The result is globally consistent up to one component swap; parts
/// that no unambiguous chain check reaches are labeled independently, with a
/// warning.
pub fn recover_directed(table: &MomentTable, edge_threshold: f64) -> Result<RecoveredMixture> {
    let n = table.n;
    let edges = learn_edges(table, edge_threshold, true)?;
    if edges.len() < 3 || !edges.connected_over_all() {
        return Err(Error::Condition1Violated(format!(
            "detected {} directed edges, connected: {}",
            edges.len(),
            edges.connected_over_all()
        )));
    }
    let mut mix = RecoveredMixture::new(0.5);

    let mut local: Vec<LocalStar> = Vec::with_capacity(n);
    for u in 0..n {
        let ns = edges.neighbors(u);
        if ns.len() < 3 {
            return Err(Error::Invalid(format!(
                "vertex {u} has out-degree {}, directed recovery needs 3",
                ns.len()
            )));
        }
        let mut star = LocalStar::new();
        for (pair, leg) in star_solve(table, u, &ns, 0.5, None)? {
            let e = leg?;
            star.insert(pair.1, (e.p_hat, e.q_hat));
        }
        local.push(star);
    }

    // Stitch labelings: swap[u] says whether u's local labels are flipped
    // relative to the global convention. Chain checks align a visited vertex
    // a with an out-neighbor u through any third target b.
    let mut swap: Vec<Option<bool>> = vec![None; n];
    swap[0] = Some(false);
    mix.learned_order.push(0);
    loop {
        let mut progressed = false;
        for a in 0..n {
            let Some(swap_a) = swap[a] else { continue };
            for u in edges.neighbors(a) {
                if swap[u].is_some() {
                    continue;
                }
                let au = oriented(local[a][&u], swap_a);
                let mut aligned = None;
                for b in edges.neighbors(u) {
                    if b == a {
                        continue;
                    }
                    let pairing = Pairing {
                        au,
                        ub: local[u][&b],
                        ab: edges.contains(a, b).then(|| oriented(local[a][&b], swap_a)),
                    };
                    let check = if edges.contains(a, b) {
                        check_triangle(table, a, u, b, pairing)
                    } else {
                        check_path(table, a, u, b, pairing)
                    };
                    match check {
                        Ok(flag) => {
                            aligned = Some(flag);
                            break;
                        }
                        Err(Error::PairingAmbiguous(..)) => continue,
                        Err(e) => return Err(e),
                    }
                }
                if let Some(flag) = aligned {
                    swap[u] = Some(!flag);
                    mix.learned_order.push(u);
                    progressed = true;
                }
            }
        }
        if !progressed {
            match (0..n).find(|&u| swap[u].is_none()) {
                Some(u) => {
                    mix.warnings.push(format!(
                        "pairing ambiguous or unreachable at vertex {u}; component labeled independently"
                    ));
                    swap[u] = Some(false);
                    mix.learned_order.push(u);
                }
                None => break,
            }
        }
    }

    for u in 0..n {
        let flip = swap[u].unwrap();
        for (&v, &w) in &local[u] {
            let (p, q) = oriented(w, flip);
            mix.absorb(
                &[RecoveredEdge::from_pq((u, v), p, q, crate::recovery::Method::Star)],
                true,
            );
        }
    }
    let first = edges.neighbors(0)[0];
    mix.anchor = Some((0, first));
    Ok(mix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MixtureModel;
    use crate::moments::QueryMode;
    use crate::recovery::max_error_up_to_swap;
    use crate::recovery::testutil::full_table;

    /// 5 vertices, each with out-edges to the next three (mod 5): out-degree
    /// 3 everywhere, with triangles (u -> u+1 -> u+2 shortcut u -> u+2).
    fn circulant(seed: u64) -> MixtureModel {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = MixtureModel::new(5, 0.5, true).unwrap();
        for u in 0..5usize {
            for d in 1..=3usize {
                let v = (u + d) % 5;
                let p = rng.gen_range(0.5..0.9);
                let q = rng.gen_range(0.1..p - 0.3);
                m.set_edge(u, v, p, q).unwrap();
            }
        }
        m
    }

    #[test]
    fn worked_path_and_triangle_values() {
        // Path: (0.8*0.7 + 0.2*0.3)/2 = 0.31, swapped 0.19.
        let mut m = MixtureModel::new(5, 0.5, true).unwrap();
        m.set_edge(0, 1, 0.8, 0.2).unwrap();
        m.set_edge(1, 2, 0.7, 0.3).unwrap();
        m.set_edge(0, 3, 0.9, 0.5).unwrap(); // padding so the oracle has mass elsewhere
        let table = crate::moments::exact_table(
            &m,
            &[EventQuery::Path(0, 1, 2), EventQuery::X(0, 1)],
        )
        .unwrap();
        let obs = table.get(EventQuery::Path(0, 1, 2)).unwrap();
        assert!((obs - 0.31).abs() < 1e-12);
        let pairing = Pairing { au: (0.8, 0.2), ub: (0.7, 0.3), ab: None };
        assert!(check_path(&table, 0, 1, 2, pairing).unwrap());
        let swapped = Pairing { au: (0.8, 0.2), ub: (0.3, 0.7), ab: None };
        assert!(!check_path(&table, 0, 1, 2, swapped).unwrap());

        // Triangle with shortcut (0.6, 0.4): (0.8*0.4*0.7 + 0.2*0.6*0.3)/2 = 0.13.
        let mut t = MixtureModel::new(5, 0.5, true).unwrap();
        t.set_edge(0, 1, 0.8, 0.2).unwrap();
        t.set_edge(1, 2, 0.7, 0.3).unwrap();
        t.set_edge(0, 2, 0.6, 0.4).unwrap();
        let table = crate::moments::exact_table(&t, &[EventQuery::TrianglePath(0, 1, 2)]).unwrap();
        let obs = table.get(EventQuery::TrianglePath(0, 1, 2)).unwrap();
        assert!((obs - 0.13).abs() < 1e-12);
        let pairing =
            Pairing { au: (0.8, 0.2), ub: (0.7, 0.3), ab: Some((0.6, 0.4)) };
        assert!(check_triangle(&table, 0, 1, 2, pairing).unwrap());
    }

    #[test]
    fn symmetric_neighborhood_is_ambiguous() {
        // p and q of the downstream edge coincide -> the two pairings
        // predict the same moment.
        let mut m = MixtureModel::new(5, 0.5, true).unwrap();
        m.set_edge(0, 1, 0.8, 0.2).unwrap();
        m.set_edge(1, 2, 0.5, 0.5).unwrap();
        let table = crate::moments::exact_table(&m, &[EventQuery::Path(0, 1, 2)]).unwrap();
        let pairing = Pairing { au: (0.8, 0.2), ub: (0.5, 0.5), ab: None };
        let err = check_path(&table, 0, 1, 2, pairing).unwrap_err();
        assert!(matches!(err, Error::PairingAmbiguous(0, 1, 2)));
    }

    #[test]
    fn directed_round_trip_up_to_global_swap() {
        for seed in [3u64, 7, 21] {
            let m = circulant(seed);
            let table = full_table(&m, QueryMode::Directed);
            let mix = recover_directed(&table, 0.05).unwrap();
            let err = max_error_up_to_swap(&m, &mix);
            assert!(err <= 1e-9, "seed {seed}: err {err}");
            assert!(mix.warnings.is_empty(), "seed {seed}: {:?}", mix.warnings);
        }
    }

    #[test]
    fn low_out_degree_is_rejected() {
        let mut m = MixtureModel::new(4, 0.5, true).unwrap();
        m.set_edge(0, 1, 0.8, 0.2).unwrap();
        m.set_edge(0, 2, 0.7, 0.3).unwrap();
        m.set_edge(0, 3, 0.6, 0.4).unwrap();
        m.set_edge(1, 0, 0.5, 0.2).unwrap();
        let table = full_table(&m, QueryMode::Directed);
        let err = recover_directed(&table, 0.05).unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
    }
}
