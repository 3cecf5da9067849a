//! Empirical error exponents.
//!
//! For each total sample count `N = n k` on a grid (fixed `k`, varying `n`),
//! `-ln beta_N` is computed exactly and a least-squares line is fitted. The
//! slope cancels the polynomial type-count prefactor that biases a single
//! `-ln beta_N / N` reading.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::exact::{exact_errors_with, ExactOptions};
use super::{fmt_real, HarnessError, Result};
use crate::prob::JointPmf;
use crate::protocol::ProtocolConfig;

/// How `eta` is chosen at each grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSchedule {
    Fixed(f64),
    /// [`ProtocolConfig::default_eta`] at each `(n, k)`.
    Default,
}

impl EtaSchedule {
    pub fn eta(self, n: usize, k: usize) -> f64 {
        match self {
            EtaSchedule::Fixed(eta) => eta,
            EtaSchedule::Default => ProtocolConfig::default_eta(n, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub samples: usize,
    pub n: usize,
    pub k: usize,
    pub eta: f64,
    pub alpha: f64,
    pub ln_beta: f64,
    pub e_t_h1: f64,
}

impl FitPoint {
    pub fn neg_ln_beta(&self) -> f64 {
        -self.ln_beta
    }

    pub fn neg_ln_beta_per_sample(&self) -> f64 {
        -self.ln_beta / self.samples as f64
    }

    /// Normalized by the expected sample count under `Q` instead of `N`.
    pub fn neg_ln_beta_per_expected_sample(&self) -> f64 {
        -self.ln_beta / (self.e_t_h1 * self.k as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    /// Sorted by `samples`.
    pub points: Vec<FitPoint>,
    /// Nats per sample.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl ExponentFit {
    pub const CSV_HEADER: &'static str = "N,n,k,eta,alpha,neg_ln_beta,neg_ln_beta_per_N,neg_ln_beta_per_ET";

    pub fn csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for pt in &self.points {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                pt.samples,
                pt.n,
                pt.k,
                fmt_real(pt.eta),
                fmt_real(pt.alpha),
                fmt_real(pt.neg_ln_beta()),
                fmt_real(pt.neg_ln_beta_per_sample()),
                fmt_real(pt.neg_ln_beta_per_expected_sample()),
            )
            .expect("writing to a String");
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "slope={},intercept={},r_squared={},points={}",
            fmt_real(self.slope),
            fmt_real(self.intercept),
            fmt_real(self.r_squared),
            self.points.len()
        )
    }
}

/// Ordinary least squares `y = slope x + intercept`; returns `(slope, intercept, r^2)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r_squared)
}

fn config_at(template: &ProtocolConfig, samples: usize, schedule: EtaSchedule) -> Result<ProtocolConfig> {
    let k = template.k;
    if samples == 0 || samples % k != 0 {
        return Err(HarnessError::Invalid(format!(
            "grid value N = {samples} is not a positive multiple of k = {k}"
        )));
    }
    let n = samples / k;
    Ok(ProtocolConfig::new(
        k,
        n,
        Some(schedule.eta(n, k)),
        template.encoder,
        template.policy,
        template.epsilon,
    )?)
}

/// Fits the slope of `-ln beta_N` against `N` over `n_grid`, with `k` taken
/// from `template`.
pub fn fit_exponent(
    template: &ProtocolConfig,
    schedule: EtaSchedule,
    p: &JointPmf,
    q: &JointPmf,
    n_grid: &[usize],
    opts: &ExactOptions,
) -> Result<ExponentFit> {
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.len() < 4 {
        return Err(HarnessError::Invalid(format!(
            "need at least 4 distinct grid values, got {}",
            grid.len()
        )));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &samples in &grid {
        let cfg = config_at(template, samples, schedule)?;
        let rep = exact_errors_with(&cfg, p, q, opts)?;
        points.push(FitPoint {
            samples,
            n: cfg.n,
            k: cfg.k,
            eta: cfg.eta,
            alpha: rep.alpha,
            ln_beta: rep.ln_beta,
            e_t_h1: rep.e_t_h1,
        });
    }
    if let Some(pt) = points.iter().find(|pt| !pt.ln_beta.is_finite()) {
        return Err(HarnessError::Invalid(format!(
            "beta is exactly zero at N = {}; no finite exponent to fit",
            pt.samples
        )));
    }
    let xs: Vec<f64> = points.iter().map(|pt| pt.samples as f64).collect();
    let ys: Vec<f64> = points.iter().map(FitPoint::neg_ln_beta).collect();
    let (slope, intercept, r_squared) = least_squares(&xs, &ys);
    Ok(ExponentFit {
        points,
        slope,
        intercept,
        r_squared,
    })
}

/// Smallest candidate `N` from which exact `alpha <= epsilon` holds at that
/// and every larger candidate, together with the per-candidate alphas.
pub fn type_one_threshold(
    template: &ProtocolConfig,
    schedule: EtaSchedule,
    p: &JointPmf,
    candidates: &[usize],
    opts: &ExactOptions,
) -> Result<(Option<usize>, Vec<(usize, f64)>)> {
    let mut grid = candidates.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut alphas = Vec::with_capacity(grid.len());
    for &samples in &grid {
        let cfg = config_at(template, samples, schedule)?;
        alphas.push((samples, exact_errors_with(&cfg, p, p, opts)?.alpha));
    }
    let threshold = alphas
        .iter()
        .rposition(|&(_, a)| a > template.epsilon)
        .map_or(alphas.first().map(|&(n, _)| n), |i| alphas.get(i + 1).map(|&(n, _)| n));
    Ok((threshold, alphas))
}
