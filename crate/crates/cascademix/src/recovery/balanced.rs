//! The main balanced-mixture recovery: edge detection, a two-node
//! initialization, then a frontier loop that learns each new vertex's
//! neighborhood with the star or line primitive, keeping signs globally
//! consistent through anchor edges.

use std::collections::BTreeSet;

use crate::model::VertexId;
use crate::moments::MomentTable;
use crate::query::EventQuery;
use crate::recovery::star_line::{learn_line_general, line_solve, star_solve, LegResult, LineContext};
use crate::recovery::{
    detect_nondistinct, learn_edges, normalize_pair, recover_triangle, EdgeSet, Method,
    RecoveredEdge, RecoveredMixture,
};
use crate::{Error, Result};

/// A line context rooted at `r` (degree 2 in the separated edge set) whose
/// moments are actually present in the table. `sep` drives the structure,
/// `full` supplies the "no shortcut edge (r,c)" requirement, which must hold
/// in the complete edge set, not just the separated part.
fn usable_line_context(
    table: &MomentTable,
    sep: &EdgeSet,
    full: &EdgeSet,
    r: VertexId,
    a: VertexId,
    b: VertexId,
) -> Option<LineContext> {
    for c in sep.neighbors(b) {
        if c == r || c == a || full.contains(r, c) {
            continue;
        }
        let have = table.get(EventQuery::ZLine(r, a, b, c)).is_some()
            && table.get(EventQuery::YLine(r, b, c)).is_some();
        if have {
            return Some(LineContext::new(a, r, b, c));
        }
    }
    None
}

/// Fold the legs of a local solve into the result. Degenerate legs retry
/// non-distinct detection; still-unresolved edges become NaN placeholders so
/// the run can continue.
fn absorb_legs(
    mix: &mut RecoveredMixture,
    table: &MomentTable,
    full: &EdgeSet,
    legs: Vec<LegResult>,
) -> Result<()> {
    for (pair, leg) in legs {
        match leg {
            Ok(edge) => mix.absorb(&[edge], false),
            Err(err) => {
                let key = normalize_pair(pair, false);
                if mix.edges.contains_key(&key) {
                    continue;
                }
                match detect_nondistinct(table, pair.0, pair.1, full)? {
                    Some(w) => mix.absorb(
                        &[RecoveredEdge::from_pq(pair, w, w, Method::Nondistinct)],
                        false,
                    ),
                    None => {
                        mix.warnings.push(format!("edge ({},{}): {err}", pair.0, pair.1));
                        mix.absorb(&[RecoveredEdge::failed(pair)], false);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Line solve dispatch: the balanced closed form when `alpha = 1/2`, the
/// quadratic general form otherwise. The general solver is all-or-nothing,
/// so its failure is spread over all three legs.
fn dispatch_line(
    table: &MomentTable,
    ctx: &mut LineContext,
    alpha: f64,
    anchor: Option<((VertexId, VertexId), i8)>,
) -> Result<Vec<LegResult>> {
    if (alpha - 0.5).abs() < 1e-12 {
        return line_solve(table, ctx, anchor);
    }
    let pairs = [(ctx.a, ctx.u), (ctx.u, ctx.b), (ctx.b, ctx.c)];
    match learn_line_general(table, ctx, alpha, anchor) {
        Ok(edges) => Ok(pairs.iter().copied().zip(edges.into_iter().map(Ok)).collect()),
        Err(Error::DegenerateSeparation(a, b, c)) => Ok(pairs
            .iter()
            .map(|&p| (p, Err(Error::DegenerateSeparation(a, b, c))))
            .collect()),
        Err(e) => Err(e),
    }
}

/// Sign anchor for a solve at a new vertex: a neighboring edge already in
/// the result with a trustworthy (separated, finite) sign.
fn anchor_sign(mix: &RecoveredMixture, pair: (VertexId, VertexId), tol: f64) -> Option<i8> {
    let e = mix.edges.get(&normalize_pair(pair, false))?;
    if e.p_hat.is_finite() && e.raw_diff > tol {
        Some(e.sign)
    } else {
        None
    }
}

/// Learn an initial connected pair of vertices together with all their
/// incident edges, per the degree case analysis: a degree->=3 vertex leads
/// with the star primitive, otherwise the graph is a path or cycle and a
/// line solve covers two adjacent degree-2 vertices at once.
pub fn learn_two_nodes(
    table: &MomentTable,
    sep: &EdgeSet,
    full: &EdgeSet,
) -> Result<(Vec<VertexId>, RecoveredMixture)> {
    learn_two_nodes_at(table, sep, full, 0.5)
}

fn learn_two_nodes_at(
    table: &MomentTable,
    sep: &EdgeSet,
    full: &EdgeSet,
    alpha: f64,
) -> Result<(Vec<VertexId>, RecoveredMixture)> {
    let tol = table.zero_tolerance();
    let mut mix = RecoveredMixture::new(alpha);
    let covered = sep.covered_vertices();
    let u = covered
        .iter()
        .copied()
        .max_by_key(|&v| sep.degree(v))
        .ok_or_else(|| Error::Condition1Violated("no separated edges".into()))?;
    // max_by_key takes the last maximum; prefer the smallest vertex.
    let top_deg = sep.degree(u);
    let u = covered.iter().copied().find(|&v| sep.degree(v) == top_deg).unwrap();

    if top_deg >= 3 {
        let ns = sep.neighbors(u);
        let legs = star_solve(table, u, &ns, alpha, None)?;
        absorb_legs(&mut mix, table, full, legs)?;
        mix.anchor = Some(normalize_pair((u, ns[0]), false));
        let v = ns[0];
        match sep.degree(v) {
            d if d >= 3 => {
                let anchor = anchor_sign(&mix, (u, v), tol).map(|s| (u, s));
                let legs = star_solve(table, v, &sep.neighbors(v), alpha, anchor)?;
                absorb_legs(&mut mix, table, full, legs)?;
            }
            2 => {
                let t = sep.neighbors(v).into_iter().find(|&x| x != u).unwrap();
                // Path t - v - u - w with w another neighbor of the star
                // center; v's degree-2 status rules out a (v,w) edge.
                let mut ctx = None;
                for w in sep.neighbors(u) {
                    if w != v && w != t && !full.contains(v, w) {
                        let have = table.get(EventQuery::ZLine(v, t, u, w)).is_some();
                        if have {
                            ctx = Some(LineContext::new(t, v, u, w));
                            break;
                        }
                    }
                }
                let mut ctx = ctx.ok_or_else(|| {
                    Error::Invalid(format!("no line context for degree-2 vertex {v}"))
                })?;
                let anchor = anchor_sign(&mix, (v, u), tol).map(|s| ((v, u), s));
                let legs = dispatch_line(table, &mut ctx, alpha, anchor)?;
                absorb_legs(&mut mix, table, full, legs)?;
            }
            _ => {} // degree 1: the star already learned v's only edge
        }
        return Ok((vec![u, v], mix));
    }

    // Path or cycle: find a 4-vertex line a - r - b - c; learning it covers
    // the adjacent degree-2 vertices r and b completely.
    for r in covered.iter().copied() {
        if sep.degree(r) != 2 {
            continue;
        }
        let ns = sep.neighbors(r);
        for (a, b) in [(ns[0], ns[1]), (ns[1], ns[0])] {
            if let Some(mut ctx) = usable_line_context(table, sep, full, r, a, b) {
                let legs = dispatch_line(table, &mut ctx, alpha, None)?;
                absorb_legs(&mut mix, table, full, legs)?;
                mix.anchor = Some(normalize_pair((a, r), false));
                return Ok((vec![r, b], mix));
            }
        }
    }
    Err(Error::Condition1Violated("no star vertex and no usable line context".into()))
}

/// Full balanced recovery: detect edges, split off non-distinct ones, then
/// run the frontier loop over the separated subgraph.
pub fn recover_balanced(table: &MomentTable, edge_threshold: f64) -> Result<RecoveredMixture> {
    recover_mixture(table, edge_threshold, 0.5)
}

/// The same pipeline for a known, possibly unbalanced mixing weight: the
/// star and line solves switch to their general-alpha forms.
pub fn recover_general(
    table: &MomentTable,
    edge_threshold: f64,
    alpha: f64,
) -> Result<RecoveredMixture> {
    recover_mixture(table, edge_threshold, alpha)
}

fn recover_mixture(table: &MomentTable, edge_threshold: f64, alpha: f64) -> Result<RecoveredMixture> {
    let full = learn_edges(table, edge_threshold, false)?;
    if full.len() < 3 || !full.connected_over_all() {
        return Err(Error::Condition1Violated(format!(
            "detected {} edges, connected: {}",
            full.len(),
            full.connected_over_all()
        )));
    }
    let balanced = (alpha - 0.5).abs() < 1e-12;
    if table.n == 3 {
        if !balanced {
            return Err(Error::Invalid(
                "three-vertex recovery is only available for the balanced mixture".into(),
            ));
        }
        return recover_triangle(table);
    }
    let tol = table.zero_tolerance();

    // Non-distinct edges are learned directly and removed from the
    // structural graph; the primitives only work on separated edges.
    let mut mix = RecoveredMixture::new(alpha);
    let mut sep = full.clone();
    for &(i, j) in &full.pairs {
        if let Some(w) = detect_nondistinct(table, i, j, &full)? {
            mix.absorb(&[RecoveredEdge::from_pq((i, j), w, w, Method::Nondistinct)], false);
            sep.remove(i, j);
        }
    }
    if sep.is_empty() {
        mix.warnings.push("all edges are non-distinct".into());
        return Ok(mix);
    }
    let sep_connected = {
        // Connectivity over the vertices the separated subgraph covers.
        let covered = sep.covered_vertices();
        let mut seen: BTreeSet<VertexId> = BTreeSet::new();
        let start = *covered.iter().next().unwrap();
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(x) = stack.pop() {
            for y in sep.neighbors(x) {
                if seen.insert(y) {
                    stack.push(y);
                }
            }
        }
        seen == covered
    };
    if sep.len() < 3 || !sep_connected {
        mix.warnings.push(format!(
            "separated subgraph too small or disconnected ({} edges); partial result",
            sep.len()
        ));
        for &(i, j) in &sep.pairs {
            mix.absorb(&[RecoveredEdge::failed((i, j))], false);
        }
        return Ok(mix);
    }

    let (start_pair, init) = learn_two_nodes_at(table, &sep, &full, alpha)?;
    mix.anchor = init.anchor;
    mix.warnings.extend(init.warnings.iter().cloned());
    for e in init.edges.values() {
        mix.absorb(&[*e], false);
    }
    let mut s: BTreeSet<VertexId> = start_pair.iter().copied().collect();
    mix.learned_order = start_pair;

    let target: BTreeSet<VertexId> = sep.covered_vertices();
    while s.len() < target.len() {
        // Find an actionable frontier pair (u in S, v outside).
        enum Action {
            Star(VertexId),
            Line(VertexId, LineContext),
            Done(VertexId),
        }
        let mut action = None;
        'search: for &u in &s {
            for v in sep.neighbors(u) {
                if s.contains(&v) {
                    continue;
                }
                match sep.degree(v) {
                    d if d >= 3 => {
                        action = Some((u, Action::Star(v)));
                        break 'search;
                    }
                    2 => {
                        let t = sep.neighbors(v).into_iter().find(|&x| x != u).unwrap();
                        if s.contains(&t) {
                            // Both incident edges are already learned.
                            action = Some((u, Action::Done(v)));
                            break 'search;
                        }
                        // Preferred orientation: t - v - u - w with w a
                        // learned neighbor of u; fallback roots the line at v
                        // through t instead.
                        let mut found = None;
                        for w in sep.neighbors(u) {
                            if w != v
                                && w != t
                                && !full.contains(v, w)
                                && table.get(EventQuery::ZLine(v, t, u, w)).is_some()
                            {
                                found = Some(LineContext::new(t, v, u, w));
                                break;
                            }
                        }
                        if found.is_none() {
                            found = usable_line_context(table, &sep, &full, v, u, t);
                        }
                        if let Some(ctx) = found {
                            action = Some((u, Action::Line(v, ctx)));
                            break 'search;
                        }
                    }
                    _ => {
                        action = Some((u, Action::Done(v)));
                        break 'search;
                    }
                }
            }
        }
        let Some((u, action)) = action else {
            let unresolved: Vec<_> = target.difference(&s).collect();
            mix.warnings.push(format!(
                "frontier stalled; vertices {unresolved:?} left unresolved"
            ));
            for &(i, j) in &sep.pairs {
                if !mix.edges.contains_key(&(i, j)) {
                    mix.absorb(&[RecoveredEdge::failed((i, j))], false);
                }
            }
            break;
        };
        let v = match action {
            Action::Star(v) => {
                let anchor = anchor_sign(&mix, (v, u), tol).map(|sg| (u, sg));
                let legs = star_solve(table, v, &sep.neighbors(v), alpha, anchor)?;
                absorb_legs(&mut mix, table, &full, legs)?;
                v
            }
            Action::Line(v, mut ctx) => {
                // Anchor on whichever of the three context edges is already
                // learned with a usable sign.
                let anchor = [(ctx.a, ctx.u), (ctx.u, ctx.b), (ctx.b, ctx.c)]
                    .into_iter()
                    .find_map(|pair| anchor_sign(&mix, pair, tol).map(|sg| (pair, sg)));
                let legs = dispatch_line(table, &mut ctx, alpha, anchor)?;
                absorb_legs(&mut mix, table, &full, legs)?;
                v
            }
            Action::Done(v) => v,
        };
        s.insert(v);
        mix.learned_order.push(v);
        // Every vertex of the learned set has all incident separated edges
        // accounted for (possibly as explicit failures).
        debug_assert!(s.iter().all(|&x| {
            sep.neighbors(x)
                .iter()
                .all(|&y| mix.edges.contains_key(&normalize_pair((x, y), false)))
        }));
    }
    Ok(mix)
}
