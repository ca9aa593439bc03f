//! Reflected stochastic heat equations on `[0, 1]` confined between two walls.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: the uniform grid with Neumann structure, the operator
//!   `A = d²/dx² − α`, the heat kernel `G_t = e^{−αt} P_t` and Hölder norms.
//! * [`obstacle`]: the deterministic two-wall obstacle problem and its local
//!   times, plus the implicit reflection step shared by every integrator.
//! * [`dynamics`]: penalized, projected, skeleton, deterministic and
//!   stochastic integrators, white-noise sampling and local-time energies.
//! * [`rate`]: control recovery, the rate functionals `I` and `S`, the
//!   quasipotential `J` by minimum-action optimisation with adjoint
//!   gradients, and the path-surgery helpers.
//! * [`measure`]: Monte Carlo sampling of the invariant measure and the
//!   finite-ε large-deviation diagnostics.
//! * [`optim`]: the L-BFGS minimiser used by [`rate`].
//! * [`io`]: CSV and binary snapshot formats.

pub mod dynamics;
pub mod error;
pub mod io;
pub mod lattice;
pub mod measure;
pub mod obstacle;
pub mod optim;
pub mod rate;

pub use error::{Error, Result};
