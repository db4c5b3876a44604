//! Sparse domination machinery for pseudodifferential operators on a
//! discretized periodic box.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: periodic grids, spectral transforms, Littlewood–Paley bands.
//! * [`dyadic`]: cell-aligned cubes, the `3^n` shifted dyadic lattices,
//!   dilations and the three-lattice cover.
//! * [`sparse`]: sparse families and their constructions (Lerner–Nazarov
//!   oscillation decomposition, stopping times, Calderón–Zygmund selection,
//!   the sparse-form recursion).
//! * [`operators`]: symbols, `a(x,D)`, the dispersive propagator and the
//!   maximal operators.
//! * [`weights`]: Muckenhoupt, reverse Hölder and `A_∞` characteristics.
//! * [`forms`]: sparse operators, sparse forms and weighted Besov norms.
//! * [`verify`]: the experiment runner behind the `verify` binary.
//!
//! Every supremum over cubes runs over the cubes of all `3^n` shifted
//! lattices. Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled.

// `!(x > 0.0)` is deliberate throughout: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dyadic;
pub mod forms;
pub mod grid;
pub mod operators;
pub mod par;
pub mod sparse;
pub mod verify;
pub mod weights;

pub use num_complex::Complex64;

/// Errors raised by the library. Messages name the offending value.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("band index {index} out of range 0..={top}")]
    BandOutOfRange { index: usize, top: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("undefined regime: {0}")]
    Undefined(String),
    #[error("family mixes lattices {0} and {1}")]
    MixedLattices(usize, usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("hypothesis violated at {cube}: false subcubes cover {covered} of {total} cells")]
    Hypothesis {
        cube: String,
        covered: u64,
        total: u64,
    },
    #[error("recursion did not terminate: {0}")]
    NonTermination(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
