//! Linear, semi-coupled finite-element scheme for the two-dimensional
//! chemotaxis–Navier–Stokes system.
//!
//! The unknowns are the zero-mean cell density `n = η − α₀`, the chemical
//! concentration `c`, its gradient `σ = ∇c`, the fluid velocity `u` (MINI
//! element) and the pressure `π` (P1, zero mean). Each time step solves four
//! independent linear systems built from level `m − 1` data only.
//!
//! Module map:
//!
//! * [`mesh`]: structured triangulations of rectangles.
//! * [`quadrature`]: symmetric triangle rules up to degree 8.
//! * [`spaces`]: degree-of-freedom layouts and basis functions.
//! * [`assembly`]: bilinear/trilinear forms and right-hand sides.
//! * [`sparse`]: CSR storage and direct solves.
//! * [`scheme`]: the time integrator and projection initialization.
//! * [`manufactured`]: exact solution, forcing and error norms for the
//!   convergence study.
//! * [`io`]: run configuration, CSV/VTK output and the CLI driver.

pub mod assembly;
pub mod error;
pub mod io;
pub mod manufactured;
pub mod mesh;
pub mod quadrature;
pub mod scheme;
pub mod spaces;
pub mod sparse;

pub use error::{Error, Result};
