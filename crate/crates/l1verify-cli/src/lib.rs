//! Pipeline, report and command line of the `l1verify` tool.
//!
//! Exit codes: 0 VERIFIED, 1 FAILED, 2 INCONCLUSIVE, 3 input error.

pub mod cli;
pub mod options;
pub mod pipeline;
pub mod probe;
pub mod report;

pub use options::VerifyOptions;
pub use pipeline::{verify, InputError, Outcome, Traces};
pub use report::{Status, Verdict, VerificationReport};
