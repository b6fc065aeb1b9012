//! Estimation of the mixing weight from third moments at a star vertex.
//!
//! At a vertex `u` with three separated incident edges, the third conditional
//! moment satisfies `Z_star = alpha p_a p_b p_c + (1-alpha) q_a q_b q_c`,
//! where the per-edge weights themselves are functions of the trial `alpha`
//! through the general star solve. Root finding on the difference between the
//! predicted and observed `Z_star` pins `alpha` up to the inherent reflection
//! `alpha <-> 1 - alpha`; the result is canonicalized to `alpha <= 1/2`.

use crate::model::VertexId;
use crate::moments::MomentTable;
use crate::query::EventQuery;
use crate::recovery::{centered_y, EdgeSet};
use crate::{Error, Result};

const GRID: usize = 4000;
const ALPHA_LO: f64 = 1e-4;
const ALPHA_HI: f64 = 1.0 - 1e-4;

/// A triple of neighbors of `u` with a `Z_star` entry and all three pairwise
/// centered second moments decisively nonzero.
fn usable_triple(
    table: &MomentTable,
    u: VertexId,
    neighbors: &[VertexId],
) -> Option<(VertexId, VertexId, VertexId, f64)> {
    let tol = table.zero_tolerance();
    let k = neighbors.len();
    let mut best: Option<(VertexId, VertexId, VertexId, f64, f64)> = None;
    for i in 0..k {
        for j in (i + 1)..k {
            for l in (j + 1)..k {
                let (a, b, c) = (neighbors[i], neighbors[j], neighbors[l]);
                let Some(z) = table.get(EventQuery::ZStar(u, a, b, c)) else {
                    continue;
                };
                let vs = [
                    centered_y(table, u, a, b).ok()?,
                    centered_y(table, u, a, c).ok()?,
                    centered_y(table, u, b, c).ok()?,
                ];
                let strength = vs.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
                if strength <= tol {
                    continue;
                }
                // Prefer the best-conditioned triple.
                let better = best.map_or(true, |(.., s)| strength > s);
                if better {
                    best = Some((a, b, c, z, strength));
                }
            }
        }
    }
    best.map(|(a, b, c, z, _)| (a, b, c, z))
}

/// Estimate the mixing weight from the star at `u`. Needs degree >= 3 with
/// all pairwise separations nonzero; returns the canonical root in (0, 1/2].
pub fn estimate_alpha(table: &MomentTable, u: VertexId) -> Result<f64> {
    let tol = table.zero_tolerance();
    let edges = EdgeSet {
        n: table.n,
        directed: false,
        pairs: (0..table.n)
            .flat_map(|a| ((a + 1)..table.n).map(move |b| (a, b)))
            .filter(|&(a, b)| table.x_sym(a, b).unwrap_or(0.0) > tol)
            .collect(),
    };
    let neighbors = edges.neighbors(u);
    if neighbors.len() < 3 {
        return Err(Error::Invalid(format!(
            "vertex {u} has degree {}, alpha estimation needs a star",
            neighbors.len()
        )));
    }
    let (a, b, c, z_obs) =
        usable_triple(table, u, &neighbors).ok_or(Error::AlphaUnidentifiable(u))?;

    // The quantities r_i = sqrt(v_ij v_ik / v_jk) do not depend on the trial
    // alpha: the separation scale factors cancel in the ratio. Only the
    // sqrt((1-alpha)/alpha) scalings of the trial weights vary.
    let x = [
        table.require(EventQuery::X(u, a))?,
        table.require(EventQuery::X(u, b))?,
        table.require(EventQuery::X(u, c))?,
    ];
    let v_ab = centered_y(table, u, a, b)?;
    let v_ac = centered_y(table, u, a, c)?;
    let v_bc = centered_y(table, u, b, c)?;
    let r = [
        (v_ab * v_ac / v_bc).abs().sqrt(),
        (v_ab * v_bc / v_ac).abs().sqrt(),
        (v_ac * v_bc / v_ab).abs().sqrt(),
    ];
    let sgn = |w: f64| if w >= 0.0 { 1.0 } else { -1.0 };

    // Trial weights are deliberately left unclamped: clamping deforms the
    // objective and manufactures spurious crossings.
    let weights = |alpha: f64, sign: f64| -> [(f64, f64); 3] {
        let p_scale = ((1.0 - alpha) / alpha).sqrt();
        let q_scale = (alpha / (1.0 - alpha)).sqrt();
        let signs = [sign, sign * sgn(v_ab), sign * sgn(v_ac)];
        [0, 1, 2].map(|i| {
            (x[i] + signs[i] * p_scale * r[i], x[i] - signs[i] * q_scale * r[i])
        })
    };
    let g = |alpha: f64, sign: f64| -> f64 {
        let w = weights(alpha, sign);
        alpha * w[0].0 * w[1].0 * w[2].0 + (1.0 - alpha) * w[0].1 * w[1].1 * w[2].1 - z_obs
    };

    // Scan both start signs: the reflection (alpha, sign) -> (1-alpha, -sign)
    // maps each solution onto its component swap, and canonicalization folds
    // the pair together.
    let mut roots: Vec<f64> = Vec::new();
    for sign in [1.0, -1.0] {
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..=GRID {
            let alpha = ALPHA_LO + (ALPHA_HI - ALPHA_LO) * i as f64 / GRID as f64;
            let val = g(alpha, sign);
            if let Some((pa, pv)) = prev {
                if pv == 0.0 {
                    roots.push(pa);
                } else if pv * val < 0.0 {
                    // Bisect the bracket down to machine-level width.
                    let (mut lo, mut hi, mut flo) = (pa, alpha, pv);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        let fm = g(mid, sign);
                        if fm == 0.0 {
                            lo = mid;
                            hi = mid;
                            break;
                        }
                        if flo * fm < 0.0 {
                            hi = mid;
                        } else {
                            lo = mid;
                            flo = fm;
                        }
                    }
                    let root = 0.5 * (lo + hi);
                    // Validity: the implied weights must land in [0,1] up to
                    // noise.
                    let slack = tol.max(1e-6);
                    let ok = weights(root, sign).iter().all(|&(p, q)| {
                        (-slack..=1.0 + slack).contains(&p)
                            && (-slack..=1.0 + slack).contains(&q)
                    });
                    if ok {
                        roots.push(root);
                    }
                }
            }
            prev = Some((alpha, val));
        }
    }
    let mut canonical: Vec<f64> = roots.into_iter().map(|r| r.min(1.0 - r)).collect();
    canonical.sort_by(f64::total_cmp);
    canonical.dedup_by(|x, y| (*x - *y).abs() < 1e-6);
    match canonical.first() {
        Some(&alpha) => Ok(alpha),
        None => Err(Error::AlphaUnidentifiable(u)),
    }
}
