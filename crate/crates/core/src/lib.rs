//! Numerical laboratory for Schrödinger operators `L = -Δ + V` on a truncated box.
//!
//! The crate discretizes `L` with Dirichlet walls and second-order central
//! differences, exposes the spectral functional calculus `f(L)`, and builds on
//! top of it the operator zoo commonly attached to `L`: the heat and
//! generalized Poisson semigroups and their maximal operators, Littlewood-Paley
//! square functions, Laplace-transform-type multipliers, Riesz transforms and
//! negative powers.  Around the operators it provides the critical-radius
//! field `ρ(x)` of the potential, ball ensembles and BMO-type norm estimation,
//! the weighted T1 oscillation criteria, and an empirical verifier that fits
//! the smallest constant in each of the kernel estimates the theory relies on.
//!
//! Everything is deterministic: randomized ensembles and probe sets flow from
//! a single seed through counter-based generators, and all reductions run in
//! fixed index order.

pub mod bmo;
pub mod config;
pub mod grid;
pub mod operators;
pub mod potential;
pub mod quad;
pub mod report;
pub mod spectral;
pub mod t1;
pub mod verify;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("potential must be nonnegative (sample {index} is {value})")]
    NegativePotential { index: usize, value: f64 },
    #[error("reverse Hölder exponent q = {q} violates the standing assumption q > n/2 = {half_n}")]
    ReverseHolderExponent { q: f64, half_n: f64 },
    #[error("separable potential needs exactly {expected} axis factors of length {len}, got {got}")]
    SeparableShape { expected: usize, len: usize, got: usize },
    #[error("dense cap exceeded: {unknowns} unknowns > cap {cap}")]
    DenseCapExceeded { unknowns: usize, cap: usize },
    #[error("grid too coarse: m = {m} < 8")]
    GridTooCoarse { m: usize },
    #[error("dimension {n} is not supported")]
    UnsupportedDimension { n: usize },
    #[error("rho below resolution at x = {point:?}: no admissible radius above {r_min}")]
    RhoBelowResolution { point: Vec<f64>, r_min: f64 },
    #[error("point {point:?} lies outside the box")]
    PointOutsideBox { point: Vec<f64> },
    #[error("eigensolver failed on axis {axis}")]
    EigensolveFailed { axis: usize },
    #[error("spectral cutoff residual {residual:e} exceeds tolerance; required energy cutoff {required_lambda:e}")]
    CutoffResidual { residual: f64, required_lambda: f64 },
    #[error("quadrature tolerance unmet: achieved {achieved:e}, requested {requested:e}")]
    QuadratureTolerance { achieved: f64, requested: f64 },
    #[error("multiplier symbol inconsistency: |m(λ)| = {value} exceeds sup-norm bound {bound}")]
    MultiplierBound { value: f64, bound: f64 },
    #[error("on-diagonal sample of a singular kernel")]
    OnDiagonalSample,
    #[error("ball below resolution: {cells} cells < 8")]
    BallBelowResolution { cells: usize },
    #[error("box too small: no margin-ok ball representable")]
    BoxTooSmall,
    #[error("empty sub-critical ensemble")]
    EmptySubcritical,
    #[error("alpha = {alpha} rejected: only constants beyond alpha = 1")]
    AlphaOutOfRange { alpha: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
