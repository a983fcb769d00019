//! Problem modelling: the expression DSL, smooth maps, the controlled system
//! and the Lie/Poisson calculus on the state space and its cotangent bundle.

pub mod cotangent;
pub mod expr;
pub mod lie;
pub mod lifts;
pub mod random;
pub mod system;
pub mod tape;

pub use cotangent::{CotFn, Hamiltonian};
pub use expr::{parse_expression, print_expression, Expr, ParseError, Symbols};
pub use lifts::SystemLifts;
pub use random::random_polynomial_problem;
pub use system::{ControlledSystem, ProblemFile, SmoothMap};
