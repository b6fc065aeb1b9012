//! Closed-form solvers for the three local structures: a star vertex (degree
//! >= 3), a degree-2 vertex on a 4-vertex line, and the complete graph on
//! three vertices.
//!
//! All of them combine first moments `X` with centered second moments
//! `v(e1,e2) = Y_(e1,e2) - X_e1 X_e2 = alpha(1-alpha)(p_e1-q_e1)(p_e2-q_e2)`:
//! the product structure lets one separation be isolated as
//! `sqrt(v(a,b) v(a,c) / v(b,c))`, and the sign of each `v` pins the relative
//! sign of the two separations involved.

use crate::model::VertexId;
use crate::moments::MomentTable;
use crate::query::EventQuery;
use crate::recovery::{centered_y, detect_nondistinct, Method, RecoveredEdge, RecoveredMixture};
use crate::{Error, Result};

/// Per-target outcome of a local solve: the edge pair plus either the
/// recovered edge or the error for that leg.
pub(crate) type LegResult = ((VertexId, VertexId), Result<RecoveredEdge>);

/// `sqrt(num1 * num2 / den)` with the noise policy: a denominator within
/// `tol` of zero is degenerate, a radicand below `-tol` is degenerate, and a
/// radicand in `[-tol, 0)` clamps to zero.
fn half_separation(
    num1: f64,
    num2: f64,
    den: f64,
    tol: f64,
    witness: (VertexId, VertexId, VertexId),
) -> Result<f64> {
    if den.abs() <= tol {
        return Err(Error::DegenerateSeparation(witness.0, witness.1, witness.2));
    }
    let radicand = num1 * num2 / den;
    if radicand < -tol {
        return Err(Error::DegenerateSeparation(witness.0, witness.1, witness.2));
    }
    Ok(radicand.max(0.0).sqrt())
}

fn sgn(x: f64) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

/// Propagate relative signs across `k` items linked by weighted pairs:
/// `s_i * s_j = sgn(weight(i,j))` whenever `|weight| > tol`. `start` fixes
/// one item's sign; items unreachable through strong links default to +1
/// (their separations are zero anyway).
fn propagate_signs(
    k: usize,
    link: impl Fn(usize, usize) -> f64,
    tol: f64,
    start: (usize, i8),
) -> Vec<i8> {
    let mut signs: Vec<Option<i8>> = vec![None; k];
    signs[start.0] = Some(start.1);
    let mut queue = vec![start.0];
    while let Some(i) = queue.pop() {
        let si = signs[i].unwrap();
        for j in 0..k {
            if signs[j].is_none() {
                let w = link(i, j);
                if w.abs() > tol {
                    signs[j] = Some(si * sgn(w));
                    queue.push(j);
                }
            }
        }
    }
    signs.into_iter().map(|s| s.unwrap_or(1)).collect()
}

/// Star solve at `u` for a general mixing weight. Returns one leg per
/// neighbor; `anchor` optionally fixes the sign of one incident edge.
pub(crate) fn star_solve(
    table: &MomentTable,
    u: VertexId,
    neighbors: &[VertexId],
    alpha: f64,
    anchor: Option<(VertexId, i8)>,
) -> Result<Vec<LegResult>> {
    let k = neighbors.len();
    if k < 3 {
        return Err(Error::Invalid(format!("vertex {u} has degree {k}, star needs 3")));
    }
    let tol = table.zero_tolerance();
    let mut x = Vec::with_capacity(k);
    for &a in neighbors {
        x.push(table.require(EventQuery::X(u, a))?);
    }
    let mut v = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let c = centered_y(table, u, neighbors[i], neighbors[j])?;
            v[i][j] = c;
            v[j][i] = c;
        }
    }

    let start = match anchor.and_then(|(a, s)| neighbors.iter().position(|&n| n == a).map(|i| (i, s)))
    {
        Some(pair) => pair,
        None => (0, 1),
    };
    let signs = propagate_signs(k, |i, j| v[i][j], tol, start);

    let p_scale = ((1.0 - alpha) / alpha).sqrt();
    let q_scale = (alpha / (1.0 - alpha)).sqrt();
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let pair = (u, neighbors[i]);
        // Helpers: the pair (j, l) with the largest denominator |v(j,l)|.
        let mut best: Option<(usize, usize)> = None;
        for j in 0..k {
            for l in (j + 1)..k {
                if j != i && l != i {
                    let better = match best {
                        Some((bj, bl)) => v[j][l].abs() > v[bj][bl].abs(),
                        None => true,
                    };
                    if better {
                        best = Some((j, l));
                    }
                }
            }
        }
        let (j, l) = best.expect("degree >= 3 guarantees a helper pair");
        let leg = half_separation(
            v[i][j],
            v[i][l],
            v[j][l],
            tol,
            (u, neighbors[j], neighbors[l]),
        )
        .map(|root| {
            let s = signs[i] as f64;
            let p = x[i] + s * p_scale * root;
            let q = x[i] - s * q_scale * root;
            RecoveredEdge::from_pq(pair, p, q, Method::Star)
        });
        out.push((pair, leg));
    }
    Ok(out)
}

/// Learn all edges at a star vertex in the balanced mixture. Fails on the
/// first degenerate leg; callers wanting partial output use the leg-level
/// interface.
pub fn learn_star(
    table: &MomentTable,
    u: VertexId,
    neighbors: &[VertexId],
    anchor: Option<(VertexId, i8)>,
) -> Result<Vec<RecoveredEdge>> {
    learn_star_general(table, u, neighbors, 0.5, anchor)
}

/// Star solve for a known mixing weight `alpha`.
pub fn learn_star_general(
    table: &MomentTable,
    u: VertexId,
    neighbors: &[VertexId],
    alpha: f64,
    anchor: Option<(VertexId, i8)>,
) -> Result<Vec<RecoveredEdge>> {
    star_solve(table, u, neighbors, alpha, anchor)?
        .into_iter()
        .map(|(_, leg)| leg)
        .collect()
}

/// A degree-2 vertex `u` on the path `a - u - b - c`, with no `(u,c)` edge.
/// The solver fills the diagnostic fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineContext {
    pub a: VertexId,
    pub u: VertexId,
    pub b: VertexId,
    pub c: VertexId,
    /// The surrogate second moment coupling `(b,c)` with `(a,u)`.
    pub r_line: Option<f64>,
    /// General-alpha quadratic coefficient.
    pub c_ub: Option<f64>,
    /// `(1 - 2 alpha)^2`.
    pub theta: Option<f64>,
    /// Sign convention of `1 - 2 alpha`.
    pub s_alpha: Option<i8>,
}

impl LineContext {
    pub fn new(a: VertexId, u: VertexId, b: VertexId, c: VertexId) -> LineContext {
        LineContext { a, u, b, c, r_line: None, c_ub: None, theta: None, s_alpha: None }
    }
}

/// The moment inputs of a line solve.
struct LineMoments {
    x_au: f64,
    x_ub: f64,
    x_bc: f64,
    /// Centered `Y(u; a, b)`.
    v_au_ub: f64,
    /// Centered chain moment `Y| - X_ub X_bc`.
    v_ub_bc: f64,
    /// Raw chain moments, needed by the surrogate.
    y_au_ub: f64,
    y_ub_bc: f64,
    z: f64,
}

fn line_moments(table: &MomentTable, ctx: &LineContext) -> Result<LineMoments> {
    let (a, u, b, c) = (ctx.a, ctx.u, ctx.b, ctx.c);
    let x_au = table.require(EventQuery::X(u, a))?;
    let x_ub = table.require(EventQuery::X(u, b))?;
    let x_bc = table.require(EventQuery::X(b, c))?;
    let y_au_ub = crate::recovery::y_star(table, u, a, b)?;
    let y_ub_bc = table.require(EventQuery::YLine(u, b, c))?;
    let z = table.require(EventQuery::ZLine(u, a, b, c))?;
    Ok(LineMoments {
        x_au,
        x_ub,
        x_bc,
        v_au_ub: y_au_ub - x_au * x_ub,
        v_ub_bc: y_ub_bc - x_ub * x_bc,
        y_au_ub,
        y_ub_bc,
        z,
    })
}

/// Pick the branch sign from an optional anchored edge: index 0/1/2 for
/// `(a,u)/(u,b)/(b,c)`.
fn line_anchor_index(
    ctx: &LineContext,
    anchor: Option<((VertexId, VertexId), i8)>,
) -> Option<(usize, i8)> {
    let ((x, y), s) = anchor?;
    let norm = |p: (VertexId, VertexId)| (p.0.min(p.1), p.0.max(p.1));
    let key = norm((x, y));
    [(ctx.a, ctx.u), (ctx.u, ctx.b), (ctx.b, ctx.c)]
        .iter()
        .position(|&e| norm(e) == key)
        .map(|i| (i, s))
}

/// Balanced line solve, leg-level interface. Legs are ordered
/// `(a,u), (u,b), (b,c)`.
pub(crate) fn line_solve(
    table: &MomentTable,
    ctx: &mut LineContext,
    anchor: Option<((VertexId, VertexId), i8)>,
) -> Result<Vec<LegResult>> {
    let tol = table.zero_tolerance();
    let m = line_moments(table, ctx)?;
    if m.x_ub <= tol {
        return Err(Error::VanishingMiddleEdge(ctx.u, ctx.b));
    }
    // Surrogate for the missing (b,c)x(a,u) second moment: equals
    // (p_au - q_au)(p_bc - q_bc)/4 in the balanced mixture.
    let r = m.x_au * m.x_bc + (m.z - m.x_au * m.y_ub_bc - m.x_bc * m.y_au_ub) / m.x_ub;
    ctx.r_line = Some(r);

    // Cyclic triple: v01 couples legs 0-1, v12 couples 1-2, r couples 2-0.
    let (v01, v12, v20) = (m.v_au_ub, m.v_ub_bc, r);
    let link = |i: usize, j: usize| match (i.min(j), i.max(j)) {
        (0, 1) => v01,
        (1, 2) => v12,
        (0, 2) => v20,
        _ => 0.0,
    };
    let start = line_anchor_index(ctx, anchor).unwrap_or((0, 1));
    let signs = propagate_signs(3, link, tol, start);

    let pairs = [(ctx.a, ctx.u), (ctx.u, ctx.b), (ctx.b, ctx.c)];
    let xs = [m.x_au, m.x_ub, m.x_bc];
    // For each leg: product of the two couplings touching it over the third.
    let plan = [
        (v01, v20, v12, (ctx.u, ctx.b, ctx.c)),
        (v01, v12, v20, (ctx.b, ctx.c, ctx.a)),
        (v12, v20, v01, (ctx.a, ctx.u, ctx.b)),
    ];
    let mut out = Vec::with_capacity(3);
    for i in 0..3 {
        let (n1, n2, den, witness) = plan[i];
        let leg = half_separation(n1, n2, den, tol, witness)
            .map(|d| RecoveredEdge::balanced(pairs[i], xs[i], d, signs[i], Method::Line));
        out.push((pairs[i], leg));
    }
    Ok(out)
}

/// Learn the three edges of a balanced line. Fails on the first degenerate
/// leg.
pub fn learn_line(
    table: &MomentTable,
    ctx: &mut LineContext,
    anchor: Option<((VertexId, VertexId), i8)>,
) -> Result<Vec<RecoveredEdge>> {
    line_solve(table, ctx, anchor)?.into_iter().map(|(_, leg)| leg).collect()
}

/// Line solve for a known mixing weight `alpha`. The middle edge solves a
/// quadratic; the outer edges then follow from the centered second moments.
pub fn learn_line_general(
    table: &MomentTable,
    ctx: &mut LineContext,
    alpha: f64,
    anchor: Option<((VertexId, VertexId), i8)>,
) -> Result<Vec<RecoveredEdge>> {
    let tol = table.zero_tolerance();
    let m = line_moments(table, ctx)?;
    if m.x_ub <= tol {
        return Err(Error::VanishingMiddleEdge(ctx.u, ctx.b));
    }
    // Third-moment combination; proportional to the product of the two outer
    // separations, so it vanishes exactly in the degenerate cases.
    let d3 = m.z + m.x_au * m.x_ub * m.x_bc - m.x_au * m.y_ub_bc - m.x_bc * m.y_au_ub;
    if d3.abs() <= tol {
        return Err(Error::DegenerateSeparation(ctx.a, ctx.u, ctx.b));
    }
    let c_ub = m.v_au_ub * m.v_ub_bc / d3;
    ctx.c_ub = Some(c_ub);
    ctx.theta = Some((1.0 - 2.0 * alpha) * (1.0 - 2.0 * alpha));
    ctx.s_alpha = Some(if alpha <= 0.5 { 1 } else { -1 });

    let aa = alpha * (1.0 - alpha);
    let solve = |s: f64| -> Result<[(f64, f64); 3]> {
        let t_p = (1.0 - 2.0 * alpha) / (2.0 * alpha) * c_ub;
        let t_q = (1.0 - 2.0 * alpha) / (2.0 * (1.0 - alpha)) * c_ub;
        let rad_p = t_p * t_p + (1.0 - alpha) / alpha * c_ub * m.x_ub;
        let rad_q = t_q * t_q + alpha / (1.0 - alpha) * c_ub * m.x_ub;
        for rad in [rad_p, rad_q] {
            if rad < -tol {
                return Err(Error::DegenerateSeparation(ctx.a, ctx.u, ctx.b));
            }
        }
        let p_ub = m.x_ub + t_p + s * rad_p.max(0.0).sqrt();
        let q_ub = m.x_ub - t_q - s * rad_q.max(0.0).sqrt();
        let sep_ub = p_ub - q_ub;
        if sep_ub.abs() <= tol {
            return Err(Error::DegenerateSeparation(ctx.a, ctx.u, ctx.b));
        }
        let sep_au = m.v_au_ub / (aa * sep_ub);
        let sep_bc = m.v_ub_bc / (aa * sep_ub);
        Ok([
            (m.x_au + (1.0 - alpha) * sep_au, m.x_au - alpha * sep_au),
            (p_ub, q_ub),
            (m.x_bc + (1.0 - alpha) * sep_bc, m.x_bc - alpha * sep_bc),
        ])
    };

    // Branch choice: an anchor on any of the three edges decides the sign;
    // otherwise prefer +1, falling back to -1 when only that branch yields
    // weights inside [0,1].
    let in_range = |sol: &[(f64, f64); 3]| {
        sol.iter().all(|&(p, q)| {
            (-tol..=1.0 + tol).contains(&p) && (-tol..=1.0 + tol).contains(&q)
        })
    };
    let pick = |sol_plus: Result<[(f64, f64); 3]>, sol_minus: Result<[(f64, f64); 3]>| {
        match line_anchor_index(ctx, anchor) {
            Some((idx, want)) => {
                for sol in [&sol_plus, &sol_minus] {
                    if let Ok(s) = sol {
                        if sgn(s[idx].0 - s[idx].1) == want {
                            return Ok(*s);
                        }
                    }
                }
                sol_plus
            }
            None => match (&sol_plus, &sol_minus) {
                (Ok(p), _) if in_range(p) => sol_plus,
                (_, Ok(m)) if in_range(m) => sol_minus,
                _ => sol_plus,
            },
        }
    };
    let sol = pick(solve(1.0), solve(-1.0))?;
    let pairs = [(ctx.a, ctx.u), (ctx.u, ctx.b), (ctx.b, ctx.c)];
    Ok((0..3)
        .map(|i| RecoveredEdge::from_pq(pairs[i], sol[i].0, sol[i].1, Method::Line))
        .collect())
}

/// Recover the complete graph on three vertices. Degenerate edges fall back
/// to non-distinct detection; edges unresolvable either way are reported as
/// failed rather than aborting.
pub fn recover_triangle(table: &MomentTable) -> Result<RecoveredMixture> {
    if table.n != 3 {
        return Err(Error::Invalid(format!("triangle recovery needs n=3, got {}", table.n)));
    }
    let tol = table.zero_tolerance();
    // Centered second moment at each vertex, coupling its two incident edges.
    let mut v = [0.0; 3];
    for i in 0..3 {
        let others: Vec<VertexId> = (0..3).filter(|&x| x != i).collect();
        v[i] = centered_y(table, i, others[0], others[1])?;
    }
    // Edge k is the one opposite vertex k (edge (i,j) with i,j != k).
    let edge_pairs = [(1, 2), (0, 2), (0, 1)];
    // Edge k couples to edge l through the shared vertex, which is the third
    // index: edges (1,2) and (0,2) share vertex 2, coupling v[2].
    let link = |i: usize, j: usize| v[3 - i - j];

    let mut mix = RecoveredMixture::new(0.5);
    let solvable: Vec<bool> = (0..3)
        .map(|k| {
            let (i, j) = edge_pairs[k];
            // Numerators are the couplings at the edge's own endpoints.
            v[i].abs() > tol || v[j].abs() > tol
        })
        .collect();
    let start = (0..3).find(|&k| solvable[k]).unwrap_or(0);
    let signs = propagate_signs(3, link, tol, (start, 1));

    let mut edge_set = crate::recovery::EdgeSet::new(3, false);
    for &(i, j) in &edge_pairs {
        edge_set.insert(i, j);
    }
    for k in 0..3 {
        let (i, j) = edge_pairs[k];
        let x = table
            .x_sym(i, j)
            .ok_or_else(|| Error::MissingMoments(EventQuery::X(i, j).to_string()))?;
        let leg = half_separation(v[i], v[j], v[k], tol, (k, i, j)).map(|d| {
            RecoveredEdge::balanced((i, j), x, d, signs[k], Method::Triangle)
        });
        match leg {
            Ok(e) => mix.absorb(&[e], false),
            Err(err) => match detect_nondistinct(table, i, j, &edge_set)? {
                Some(w) => {
                    mix.absorb(&[RecoveredEdge::from_pq((i, j), w, w, Method::Nondistinct)], false)
                }
                None => {
                    mix.warnings.push(format!("edge ({i},{j}): {err}"));
                    mix.absorb(&[RecoveredEdge::failed((i, j))], false);
                }
            },
        }
    }
    mix.anchor = Some(edge_pairs[start]);
    mix.learned_order = vec![0, 1, 2];
    Ok(mix)
}
