//! Learning a mixture of two weighted graphs from epidemic cascades.
//!
//! An epidemic spreads on one of two hidden graphs `G1`/`G2` over the same
//! vertex set: before each cascade a coin with bias `alpha` picks which graph
//! is active, a uniformly random source is infected, and the infection then
//! propagates in discrete rounds (SIR dynamics: each infected vertex gets one
//! chance to transmit along each incident edge, then recovers). The observer
//! sees only timed infector -> infectee events, never the coin.
//!
//! This crate provides:
//!
//! * [`model`] — the two-graph mixture type, validation of the recoverability
//!   conditions, and random instance generation;
//! * [`cascade`] — a deterministic, parallel cascade simulator and the JSONL
//!   corpus format;
//! * [`oracle`] — exact enumeration of the cascade distribution for small
//!   models, used to compute population moments with no sampling error;
//! * [`moments`] — first/second/third order conditional moment estimators
//!   over a cascade corpus;
//! * [`recovery`] — closed-form recovery of all edge weights of both graphs
//!   from the moments (star, line and triangle primitives; balanced, general
//!   mixing weight, and directed variants);
//! * [`experiment`] — a reproducible error-vs-sample-size experiment harness
//!   backing the `cascademix` command-line tool.

pub mod cascade;
pub mod experiment;
pub mod model;
pub mod moments;
pub mod oracle;
pub mod query;
pub mod recovery;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// The model has no edges.
    #[error("empty graph: model has no edges")]
    EmptyGraph,

    /// Rejection sampling failed to produce a valid random model.
    #[error("generation failed: no valid model within {0} attempts")]
    GenerationFailed(usize),

    /// A corpus must contain at least one cascade.
    #[error("empty corpus: requested cascade count is zero")]
    EmptyCorpus,

    /// Exact enumeration is only feasible for small models.
    #[error("model too large for oracle: {0} attempt edges exceeds budget of {1}")]
    ModelTooLarge(usize, usize),

    /// No cascade in the corpus started at the conditioning vertex.
    #[error("no conditioning samples: vertex {0} never appeared as source")]
    NoConditioningSamples(usize),

    /// A moment required by recovery is absent from the table.
    #[error("missing moment entries: {0}")]
    MissingMoments(String),

    /// A second-moment denominator vanished, so the closed form is undefined.
    #[error("degenerate separation at ({0},{1},{2})")]
    DegenerateSeparation(usize, usize, usize),

    /// The middle edge of a line has (estimated) weight zero in both graphs.
    #[error("vanishing middle edge ({0},{1})")]
    VanishingMiddleEdge(usize, usize),

    /// The mixing weight cannot be identified from the supplied vertex.
    #[error("alpha unidentifiable at this vertex ({0})")]
    AlphaUnidentifiable(usize),

    /// A directed neighborhood pairing check could not separate the two labelings.
    #[error("pairing ambiguous at ({0},{1},{2})")]
    PairingAmbiguous(usize, usize, usize),

    /// The mixture does not satisfy the structural recoverability condition
    /// (connected, at least three edges).
    #[error("Condition 1 violated: {0}")]
    Condition1Violated(String),

    /// Malformed input file or query string.
    #[error("parse error: {0}")]
    Parse(String),

    /// Invalid argument or model state.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
