//! Hamiltonian-flow construction around the reference extremal.
//!
//! [`overmax`] builds the over-maximized Hamiltonians H0 and K near the
//! singular surface, [`switch`] the switching-time functions of the
//! perturbed flow, [`composite`] the piecewise flow emanating from Λ1, and
//! [`monitor`] the invertibility and Clarke-regularity checks.

pub mod composite;
pub mod monitor;
pub mod overmax;
pub mod switch;

pub use composite::{CompositeFlow, CompositeTrajectory, LinearizedComposite, SeamTimes, BRANCH_NAMES};
pub use monitor::{check_injectivity, clarke_values, ClarkeValues, InvertibilityMonitor, Lambda1, Lambda1Check, MonitorSample};
pub use overmax::{H0Ham, H0PlusPhiMinusHam, KHam, OverMax, OverMaxOptions, OvermaxReport};
pub use switch::SwitchTimes;
