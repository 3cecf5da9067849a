//! Error-probability evaluation and verification.
//!
//! - [`exact`]: exact `(alpha, beta, E[T])` by enumerating empirical types.
//! - [`monte_carlo`]: seeded, thread-count independent simulation.
//! - [`fit`]: least-squares slope of `-ln beta_N` against `N`.
//! - [`verify`]: exact prefix-tree checks of the stopped-divergence identity
//!   and the stopped data-processing bound.

pub mod exact;
pub mod fit;
pub mod monte_carlo;
pub mod verify;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exponent::ExponentError;
use crate::prob::ProbError;
use crate::protocol::{ProtocolConfig, ProtocolError};

pub use exact::{exact_errors, exact_errors_with, ExactOptions};
pub use fit::{fit_exponent, EtaSchedule, ExponentFit, FitPoint};
pub use monte_carlo::{monte_carlo_errors, trial_seed};
pub use verify::{verify_lemma1, verify_wald_identity, Lemma1Report, WaldReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("enumeration too large: {0}")]
    TooLarge(String),
    #[error("horizon {horizon} exceeds the enumeration cap {cap}")]
    HorizonTooLarge { horizon: usize, cap: usize },
    #[error("invalid harness input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(transparent)]
    Exponent(#[from] ExponentError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    #[serde(alias = "mc")]
    MonteCarlo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::MonteCarlo => "mc",
        }
    }
}

/// Type-I/type-II error probabilities and expected stopping times for one
/// protocol configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub n: usize,
    pub k: usize,
    pub eta: f64,
    /// `P(reject | H0)`.
    pub alpha: f64,
    /// `P(accept | H1)`.
    pub beta: f64,
    /// `ln alpha`, kept separately because `alpha` underflows at large `N`.
    pub ln_alpha: f64,
    /// `ln beta`, kept separately because `beta` underflows at large `N`.
    pub ln_beta: f64,
    /// Expected number of requests under each hypothesis.
    pub e_t_h0: f64,
    pub e_t_h1: f64,
    pub method: Method,
    /// Zero for exact reports.
    pub trials: usize,
    /// 95% Wilson half-widths; zero for exact reports.
    pub ci_alpha: f64,
    pub ci_beta: f64,
}

/// Probabilities in CSV output use 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

impl ErrorReport {
    pub const CSV_HEADER: &'static str = "N,n,k,eta,alpha,beta,neg_ln_beta_per_N,e_t_h0,e_t_h1,method,trials,ci";

    pub(crate) fn new(config: &ProtocolConfig, method: Method) -> Self {
        Self {
            n: config.n,
            k: config.k,
            eta: config.eta,
            alpha: 0.0,
            beta: 0.0,
            ln_alpha: f64::NEG_INFINITY,
            ln_beta: f64::NEG_INFINITY,
            e_t_h0: 0.0,
            e_t_h1: 0.0,
            method,
            trials: 0,
            ci_alpha: 0.0,
            ci_beta: 0.0,
        }
    }

    pub fn samples(&self) -> usize {
        self.n * self.k
    }

    /// `-ln(beta) / (n k)`.
    pub fn neg_ln_beta_per_sample(&self) -> f64 {
        -self.ln_beta / self.samples() as f64
    }

    /// `-ln(beta) / (E_Q[T] k)`, the normalization by expected samples used.
    pub fn neg_ln_beta_per_expected_sample(&self) -> f64 {
        -self.ln_beta / (self.e_t_h1 * self.k as f64)
    }

    /// The `ci` column: the larger of the two half-widths.
    pub fn ci(&self) -> f64 {
        self.ci_alpha.max(self.ci_beta)
    }

    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.samples(),
            self.n,
            self.k,
            fmt_real(self.eta),
            fmt_real(self.alpha),
            fmt_real(self.beta),
            fmt_real(self.neg_ln_beta_per_sample()),
            fmt_real(self.e_t_h0),
            fmt_real(self.e_t_h1),
            self.method.as_str(),
            self.trials,
            fmt_real(self.ci()),
        )
        .expect("writing to a String");
        s
    }
}

/// Streaming log-sum-exp accumulator; deterministic for a fixed input order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    pub(crate) fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.scaled = self.scaled * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.scaled += (v - self.max).exp();
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}
