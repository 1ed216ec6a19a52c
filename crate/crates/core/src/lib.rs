//! Matrix-free operator-splitting solvers for monotone inclusions with an
//! adjoint mismatch.
//!
//! The library solves inclusions of the form
//!
//! ```text
//! find x such that  0 ∈ Ax + Cx + αK(Lx − c) + K B L x,
//! ```
//!
//! where `A` is maximally ρ-monotone (given through its resolvent), `C` is
//! β-cocoercive, `B` is monotone and ζ-Lipschitz, `L` is a bounded linear
//! operator and `K` is a surrogate for the adjoint `L*` (the *mismatch*).
//! Two iterations are provided: a mismatched forward-backward-half-forward
//! scheme and a mismatched forward-Douglas-Rachford-forward scheme, together
//! with the step-size theory that makes them converge, error bounds for the
//! solution perturbation induced by the mismatch, convergence diagnostics,
//! and a small self-contained computed-tomography demonstration.
//!
//! Module map:
//! - [`linops`]: matrix-free linear maps, mismatch families, spectral
//!   estimation (operator norms, smallest eigenvalue of the symmetrized
//!   composition).
//! - [`operators`]: the monotone blocks, the composite mismatched map `D_M`,
//!   sampling-based contract checks and the solution-gap bound.
//! - [`proxlib`]: closed-form proximal operators and gradients (box+ridge,
//!   Huber in an orthonormal transform, generalized Anscombe fidelity, Haar).
//! - [`stepsize`]: admissible step sizes for both schemes and the ledger of
//!   derived constants.
//! - [`solvers`]: the two iterations with stopping logic and trace capture.
//! - [`diagnostics`]: quasi-Fejér monitoring, rate estimation, bound checks,
//!   image-quality metrics.
//! - [`tomo`]: desk-scale tomography instance factory (phantom, mismatched
//!   projector pair, Gauss-Poisson data synthesis).
//! - [`synthetic`]: small dense quadratic instances with controllable
//!   mismatch, used for validation and by the CLI.

pub mod diagnostics;
pub mod linops;
pub mod operators;
pub mod proxlib;
pub mod solvers;
pub mod stepsize;
pub mod synthetic;
pub mod tomo;

pub use linops::{LinearMap, MismatchFamily, MismatchSchedule, SpectralEstimates};
pub use operators::{CocoerciveBlock, LipschitzBlock, ProblemSpec, ResolventBlock};
pub use solvers::{Algorithm, IterateTrace, SolverConfig};
pub use stepsize::ConstantsLedger;
