//! Conditional-moment queries: which infection events must appear in a
//! cascade, conditioned on its source. The same query type is answered
//! exactly by the oracle and empirically by the corpus estimators.

use std::fmt;

use crate::model::VertexId;
use crate::{Error, Result};

/// A conditional probability of the form
/// `P(all listed infector -> infectee events occur | source = conditioning vertex)`.
///
/// * `X(u,a)` — first moment: `u` infects `a` directly.
/// * `YStar(u,a,b)` — `u` infects both `a` and `b` (star second moment).
/// * `YLine(u,b,c)` — `u` infects `b`, then `b` infects `c`.
/// * `ZLine(u,a,b,c)` — `u` infects `a` and `b`, and `b` infects `c`.
/// * `ZStar(u,a,b,c)` — `u` infects `a`, `b` and `c` (third star moment).
/// * `Path(a,u,b)` — chain `a -> u -> b` from source `a`, with `(a,b)` not an edge.
/// * `TrianglePath(a,u,b)` — same chain when `(a,b)` is an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventQuery {
    X(VertexId, VertexId),
    YStar(VertexId, VertexId, VertexId),
    YLine(VertexId, VertexId, VertexId),
    ZLine(VertexId, VertexId, VertexId, VertexId),
    ZStar(VertexId, VertexId, VertexId, VertexId),
    Path(VertexId, VertexId, VertexId),
    TrianglePath(VertexId, VertexId, VertexId),
}

impl EventQuery {
    /// The source vertex the probability is conditioned on.
    pub fn conditioning_source(&self) -> VertexId {
        match *self {
            EventQuery::X(u, _)
            | EventQuery::YStar(u, _, _)
            | EventQuery::YLine(u, _, _)
            | EventQuery::ZLine(u, _, _, _)
            | EventQuery::ZStar(u, _, _, _) => u,
            EventQuery::Path(a, _, _) | EventQuery::TrianglePath(a, _, _) => a,
        }
    }

    /// The infector -> infectee events that must all be present.
    pub fn events(&self) -> Vec<(VertexId, VertexId)> {
        match *self {
            EventQuery::X(u, a) => vec![(u, a)],
            EventQuery::YStar(u, a, b) => vec![(u, a), (u, b)],
            EventQuery::YLine(u, b, c) => vec![(u, b), (b, c)],
            EventQuery::ZLine(u, a, b, c) => vec![(u, a), (u, b), (b, c)],
            EventQuery::ZStar(u, a, b, c) => vec![(u, a), (u, b), (u, c)],
            EventQuery::Path(a, u, b) | EventQuery::TrianglePath(a, u, b) => {
                vec![(a, u), (u, b)]
            }
        }
    }

    fn vertices(&self) -> Vec<VertexId> {
        match *self {
            EventQuery::X(u, a) => vec![u, a],
            EventQuery::YStar(u, a, b) | EventQuery::YLine(u, a, b) => vec![u, a, b],
            EventQuery::ZLine(u, a, b, c) | EventQuery::ZStar(u, a, b, c) => vec![u, a, b, c],
            EventQuery::Path(a, u, b) | EventQuery::TrianglePath(a, u, b) => vec![a, u, b],
        }
    }

    /// All vertices distinct and below `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let vs = self.vertices();
        for &v in &vs {
            if v >= n {
                return Err(Error::Invalid(format!("vertex {v} out of range for n={n}")));
            }
        }
        for i in 0..vs.len() {
            for j in (i + 1)..vs.len() {
                if vs[i] == vs[j] {
                    return Err(Error::Invalid(format!("repeated vertex in query {self}")));
                }
            }
        }
        Ok(())
    }

    /// Parse the canonical string form produced by [`fmt::Display`],
    /// e.g. `"Y_star 0 1 2"`.
    pub fn parse(text: &str) -> Result<EventQuery> {
        let mut parts = text.split_whitespace();
        let kind = parts.next().ok_or_else(|| Error::Parse("empty query".into()))?;
        let args: Vec<VertexId> = parts
            .map(|t| t.parse::<VertexId>().map_err(|_| Error::Parse(format!("bad vertex '{t}'"))))
            .collect::<Result<_>>()?;
        let want = |k: usize| -> Result<()> {
            if args.len() == k {
                Ok(())
            } else {
                Err(Error::Parse(format!("query {kind} expects {k} vertices, got {}", args.len())))
            }
        };
        let q = match kind {
            "X" => {
                want(2)?;
                EventQuery::X(args[0], args[1])
            }
            "Y_star" => {
                want(3)?;
                EventQuery::YStar(args[0], args[1], args[2])
            }
            "Y_line" => {
                want(3)?;
                EventQuery::YLine(args[0], args[1], args[2])
            }
            "Z_line" => {
                want(4)?;
                EventQuery::ZLine(args[0], args[1], args[2], args[3])
            }
            "Z_star" => {
                want(4)?;
                EventQuery::ZStar(args[0], args[1], args[2], args[3])
            }
            "Path" => {
                want(3)?;
                EventQuery::Path(args[0], args[1], args[2])
            }
            "Triangle" => {
                want(3)?;
                EventQuery::TrianglePath(args[0], args[1], args[2])
            }
            other => return Err(Error::Parse(format!("unknown query kind '{other}'"))),
        };
        let vs = q.vertices();
        for i in 0..vs.len() {
            for j in (i + 1)..vs.len() {
                if vs[i] == vs[j] {
                    return Err(Error::Parse(format!("repeated vertex in query '{text}'")));
                }
            }
        }
        Ok(q)
    }
}

impl fmt::Display for EventQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            EventQuery::X(u, a) => write!(f, "X {u} {a}"),
            EventQuery::YStar(u, a, b) => write!(f, "Y_star {u} {a} {b}"),
            EventQuery::YLine(u, b, c) => write!(f, "Y_line {u} {b} {c}"),
            EventQuery::ZLine(u, a, b, c) => write!(f, "Z_line {u} {a} {b} {c}"),
            EventQuery::ZStar(u, a, b, c) => write!(f, "Z_star {u} {a} {b} {c}"),
            EventQuery::Path(a, u, b) => write!(f, "Path {a} {u} {b}"),
            EventQuery::TrianglePath(a, u, b) => write!(f, "Triangle {a} {u} {b}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_parse_round_trip() {
        let qs = [
            EventQuery::X(0, 1),
            EventQuery::YStar(0, 1, 2),
            EventQuery::YLine(0, 1, 2),
            EventQuery::ZLine(0, 1, 2, 3),
            EventQuery::ZStar(0, 1, 2, 3),
            EventQuery::Path(0, 1, 2),
            EventQuery::TrianglePath(0, 1, 2),
        ];
        for q in qs {
            assert_eq!(EventQuery::parse(&q.to_string()).unwrap(), q);
        }
    }

    #[test]
    fn parse_rejects_malformed() {
        assert!(EventQuery::parse("").is_err());
        assert!(EventQuery::parse("X 0").is_err());
        assert!(EventQuery::parse("X 0 0").is_err());
        assert!(EventQuery::parse("W 0 1").is_err());
        assert!(EventQuery::parse("X 0 zebra").is_err());
    }

    #[test]
    fn conditioning_and_events() {
        let q = EventQuery::Path(3, 1, 2);
        assert_eq!(q.conditioning_source(), 3);
        assert_eq!(q.events(), vec![(3, 1), (1, 2)]);
        let q = EventQuery::ZLine(0, 1, 2, 3);
        assert_eq!(q.conditioning_source(), 0);
        assert_eq!(q.events(), vec![(0, 1), (0, 2), (2, 3)]);
    }

    #[test]
    fn validate_checks_range_and_distinctness() {
        assert!(EventQuery::X(0, 1).validate(2).is_ok());
        assert!(EventQuery::X(0, 2).validate(2).is_err());
        assert!(EventQuery::YStar(0, 1, 1).validate(3).is_err());
    }
}
