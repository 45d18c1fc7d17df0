//! Numerical laboratory for a finite-level atom coupled to a truncated bosonic
//! reservoir under time-periodic decoupling control.
//!
//! The crate is organised bottom-up:
//!
//! * [`fock`]: truncated multimode Fock space, ladder/field/number operators and
//!   the executable operator identities and norm bounds.
//! * [`model`]: composite Hamiltonians on `C^N ⊗ Fock` and the explicit constants
//!   of the decoherence bound.
//! * [`control`]: periodic control schedules, the control propagator, the
//!   decoupling residual and the pulse designers.
//! * [`propagate`]: time-ordered propagators on the composite space and the
//!   diagnostics built on them.
//! * [`experiments`]: bound verification, sweeps and scaling fits.
//!
//! Composite operators always use the `system ⊗ Fock` Kronecker ordering: the
//! system index is slow, the Fock index is fast (`idx = s * fock_dim + k`).

pub mod control;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod linalg;
pub mod model;
pub mod propagate;
pub mod quadrature;
pub mod report;

pub use control::{ControlRecipe, ControlSchedule, DecouplingReport, Segment};
pub use error::{Error, Result};
pub use experiments::{BoundReport, Scenario, SweepAxis, SweepResult};
pub use fock::{FockBasis, FockOperator, Mode, ModeSet};
pub use linalg::{CMat, C64};
pub use model::{ModelConstants, SystemSpec};
pub use propagate::{Dynamics, PropagatorPair};
pub use report::{Check, CheckReport, Status};
