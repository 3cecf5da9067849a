//! Sequential distributed hypothesis testing over a zero-rate link with
//! stop-feedback.
//!
//! - [`prob`]: finite-alphabet pmfs, empirical types, divergences.
//! - [`exponent`]: the optimal type-II exponent via iterative proportional
//!   fitting, plus a brute-force 2x2 oracle.
//! - [`protocol`]: sensor encoder, decision center and the stop-feedback loop.
//! - [`harness`]: exact and Monte Carlo error evaluation, exponent fits and
//!   checks of the stopped-divergence identities.
//! - [`cli`]: configuration file format and the command-line subcommands.

pub mod cli;
pub mod exponent;
pub mod harness;
pub mod prob;
pub mod protocol;

pub use exponent::{solve_exponent, ExponentError, ExponentResult, SolverOptions};
pub use prob::{Distribution, EmpiricalType, JointPmf, Pmf, ProbError};
pub use protocol::{
    EncoderKind, Hypothesis, PolicyKind, Protocol, ProtocolConfig, ProtocolError, SourceModel, Trace, Verdict,
};
