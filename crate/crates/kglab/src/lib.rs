//! Numerical laboratory for the soliton `Q(x) = (3/2) sech^2(x/2)` of the
//! one-dimensional quadratic Klein-Gordon equation
//!
//! ```text
//! (d_tt - d_xx + 1) phi = phi^2 .
//! ```
//!
//! The crate provides, at desk scale:
//!
//! * [`grid`] — symmetric 1D grids, 8th-order finite differences, trapezoid
//!   quadrature with endpoint corrections, and the smoothing inverse
//!   `X_eps = (1 - eps d_xx)^{-2}`;
//! * [`spectral`] — the closed-form eigenfunctions `Y0, Y1, Y2`, the threshold
//!   resonance `Y3`, the linearized operator `L = -d_xx - 2Q + 1`, spectral
//!   projections, the nonlinear-resonance constant
//!   `Gamma = (243/32) pi / sinh(sqrt(2) pi)`, and the virial weight family;
//! * [`darboux`] — the first-order factors `D_l = d_x + (l/2) tanh(x/2)`, their
//!   right inverses, the composite transformation `D1 D2 D3` conjugating `L` to
//!   the flat operator `-d_xx + 1`, and its regularization `S_eps`;
//! * [`dynamics`] — RK4 time evolution of the full and linearized systems, mode
//!   decomposition, and the bisection shooter that tracks the center-stable
//!   manifold against the exponential instability;
//! * [`diagnostics`] — virial functionals, exact identity replay along recorded
//!   traces, local energies, and the composite decay monitor;
//! * [`lab`] — reproducible experiment drivers behind the `kglab` binary
//!   (`eigencheck | fgr | darboux | evolve | shoot | trace-check`).
//!
//! Runnable walkthroughs for each capability live under `examples/`.

pub mod config;
pub mod darboux;
pub mod diagnostics;
pub mod dynamics;
pub mod grid;
pub mod lab;
pub mod report;
pub mod spectral;
pub mod trace;

/// Errors produced by the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("blow-up detected at t = {t}")]
    BlowUp { t: f64 },
    #[error("shooting bracket failure: {0}")]
    BracketFailure(String),
    #[error("identity violation: {0}")]
    IdentityViolation(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
