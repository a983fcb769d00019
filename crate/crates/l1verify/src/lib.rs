//! Numerical verification of sufficient conditions for strict strong local
//! optimality of bang–singular–inactivated–bang extremals in L1-type
//! optimal control problems
//!
//! ```text
//!   minimise ∫ |u ψ(x)| dt,   ẋ = f0(x) + u f1(x),   u ∈ [−1, 1].
//! ```
//!
//! Pipeline: [`modeling`] → [`extremal`] → [`conditions`] → [`secvar`] →
//! [`hamflow`]; [`vehicle`] provides closed-form ground truth.

pub mod conditions;
pub mod error;
pub mod extremal;
pub mod hamflow;
pub mod linalg;
pub mod modeling;
pub mod ode;
pub mod par;
pub mod secvar;
pub mod serde_f64;
pub mod vehicle;

pub use error::{Error, Result};
