//! Numerical toolkit for deciding whether a dissipative dynamical system is a
//! gradient (or gradient-like) system.
//!
//! * [`field`]: vector fields, Jacobians, second-order reduction.
//! * [`forms`]: the one-form of a field and its homotopy decomposition into
//!   an exact (potential) part and an antiexact (residual) part.
//! * [`integrability`]: closedness, Frobenius condition, circulation.
//! * [`gradientize`]: changes of variables `x = D(y) y` that make the
//!   transformed one-form closed.
//! * [`dynamics`]: trajectories, Lyapunov descent, Euler-Maruyama ensembles
//!   and the small-noise potential estimate.
//! * [`zoo`]: the concrete systems used throughout the tests.

pub mod dynamics;
pub mod error;
pub mod field;
pub mod forms;
pub mod gradientize;
pub mod integrability;
pub mod linalg;
pub mod quadrature;
pub mod sampling;
pub mod zoo;

pub use error::{DynamicsError, FieldError, FormError, GradientizeError, IntegrabilityError, ZooError};
pub use field::{JacobianScheme, Jet, SecondOrderSystem, VectorField};
pub use forms::{Decomposition, OneForm};
pub use gradientize::{ConstantSolveReport, GeneralSolveReport, GradientizeVerdict, MatrixFamily};
pub use integrability::{ClosednessReport, Loop, Verdict};
pub use quadrature::{AdaptiveQuadrature, QuadratureRule, QuadratureSpec, RayQuadrature};
pub use sampling::SamplePlan;
pub use zoo::{SystemSpec, ZooSystem};
