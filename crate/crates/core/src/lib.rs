//! Dimension estimators for self-affine Moran sets.
//!
//! A Moran set is the limit of nested images J_u = Ψ_u(J) where the maps
//! Ψ_{k,i}(x) = T_{k,i} x + w_{k,i} may change from level to level. The
//! modules build up from matrices ([`linalg`]) and the singular value
//! function ([`svf`]) through the symbolic tree ([`symbolic`]) to the
//! dimension estimators ([`dims`]) and point-cloud tools ([`attractor`]).

pub mod attractor;
pub mod dims;
pub mod error;
pub mod fixtures;
pub mod linalg;
pub mod svf;
pub mod symbolic;
pub mod system;

pub use error::{AttractorError, DimsError, LinalgError, SpecError, SvfError, SymbolicError};
pub use linalg::{mat_mul, op_norm, singular_values, Matrix, SingularValues};
pub use svf::{log_phi, phi, LogPhi};
pub use system::{alpha_bounds, parse_spec, validate, Finding, SystemSpec};
