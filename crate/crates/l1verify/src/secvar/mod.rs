//! Extended second variation at the reference and its coerciveness.
//!
//! [`pullback`] integrates the reference flow with its first and second
//! differentials, [`alpha`] builds the generating functions α and θ at q̂1,
//! [`goh`] assembles the LQ data after the Goh transformation and
//! [`coercive`] runs the Hamiltonian-flow tests.

pub mod alpha;
pub mod coercive;
pub mod goh;
pub mod pullback;

pub use alpha::AlphaTheta;
pub use coercive::{
    coercivity_witness, decide, test_coercive_v, CoercivenessResult, CoercivityWitness, LqSweep, PenaltyStatus,
    SecvarOptions, VTest,
};
pub use goh::{first_variation, FirstVariationDirection, GohLQ, QuadraticValue, Variation, WProfile};
pub use pullback::PullbackFrame;
