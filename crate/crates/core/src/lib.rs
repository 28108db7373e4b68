//! Exact finite-grid calculus for bi-parameter dyadic harmonic analysis.
//!
//! The crate works on functions that are constant on the cells of a
//! `2^L x 2^L` dyadic grid of the unit square. On that substrate it provides
//!
//! * Haar analysis/synthesis, martingale differences, blocks and slice
//!   pairings ([`dyadic`]);
//! * bi-parameter `A_p` weights, Bloom weights, `L^p` and weak-`L^p` norms,
//!   little `bmo`, product `BMO` and sequence `BMO` ([`weights`]);
//! * the nine bi-parameter paraproducts, one-parameter paraproducts and
//!   exact product decompositions with explicit boundary corrections
//!   ([`paraproduct`]);
//! * dyadic shifts and paraproducts as linear operators, auxiliary square
//!   and maximal functions, matrix assembly and certified operator norms
//!   ([`operator`]);
//! * nested and iterated commutators together with exact decomposition
//!   verifiers ([`commutator`]);
//! * non-degenerate kernels, partner rectangles, medians and the weak-type
//!   lower-bound functional ([`lowerbound`]);
//! * seeded, reproducible experiment drivers ([`experiment`]).
//!
//! All arithmetic is in `f64`; identities are asserted at absolute
//! tolerances scaled by input magnitude.

pub mod commutator;
pub mod dyadic;
pub mod experiment;
pub mod lowerbound;
pub mod operator;
pub mod paraproduct;
pub mod rng;
pub mod weights;

use thiserror::Error as ThisError;

/// Errors shared across the crate.
#[derive(Debug, ThisError)]
pub enum Error {
    #[error("depth mismatch: {0} vs {1}")]
    DepthMismatch(u32, u32),
    #[error("interval at level {level} is not active at depth {depth}")]
    InactiveInterval { level: u32, depth: u32 },
    #[error("block offset {offset} from level {anchor_level} leaves the depth-{depth} grid")]
    BlockOutOfRange { anchor_level: u32, offset: u32, depth: u32 },
    #[error("weight must be strictly positive and finite (cell {cell} = {value})")]
    NonpositiveWeight { cell: usize, value: f64 },
    #[error("exact product-BMO enumeration requires depth <= 2, got {0}")]
    ExactBmoTooDeep(u32),
    #[error("power-law exponent {exponent} outside the admissible range (-1, {upper})")]
    PowerExponent { exponent: f64, upper: f64 },
    #[error("shift coefficient {value} at anchor level {anchor_level} violates the normalisation bound {bound}")]
    ShiftNormalisation { anchor_level: u32, value: f64, bound: f64 },
    #[error("paraproduct coefficient sequence has BMO norm {norm} > 1")]
    ParaproductNormalisation { norm: f64 },
    #[error("shift geometry invalid: {0}")]
    ShiftGeometry(String),
    #[error("operators must act on distinct axes")]
    SameAxis,
    #[error("operator axis unknown; build nested commutators from shift/paraproduct specs")]
    UnknownAxis,
    #[error("matrix assembly capped at 16384 cells, grids of depth {0} exceed it")]
    AssemblyTooLarge(u32),
    #[error("power iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    PowerIterationDiverged { residual: f64, iterations: u64 },
    #[error("kernel is singular at the requested configuration")]
    SingularKernel,
    #[error("no translate of the rectangle fits inside the unit square; shrink the rectangle")]
    NoPartnerFits,
    #[error("no admissible rectangle for the lower-bound functional at depth {0}")]
    NoAdmissibleRectangle(u32),
    #[error("{what} identity residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    IdentityResidual { what: String, residual: f64, tolerance: f64 },
    #[error("decomposition case expects {expected}")]
    CaseMismatch { expected: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use dyadic::{
    analyze, haar, partial_pairing, project, synthesize, Axis, DyadicInterval, DyadicRectangle,
    ExtendedIndex, GridFunction, HaarKind, HaarSpectrum, LineFunction, Projection,
};
