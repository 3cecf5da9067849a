//! Optimal type-II exponent under zero-rate compression.
//!
//! The exponent is the I-projection value
//!
//! ```text
//! theta* = min { D(R || Q) : R_X = P_X, R_Y = P_Y }
//! ```
//!
//! computed by iterative proportional fitting: starting from `Q`, rows are
//! rescaled to match `P_X`, then columns to match `P_Y`, until the marginal
//! residual drops below the tolerance. Every iterate has the scaled-product
//! form `a(x) b(y) Q(x, y)`, which is the form of the minimizer when `Q > 0`.
//!
//! [`grid_oracle_exponent`] is an independent brute-force scan of the 2x2
//! transport polytope used to certify the solver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{kl_cells, kl_divergence, Distribution, JointPmf, ProbError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExponentError {
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(
        "Q has a zero cell (min Q = {min}); the exponent formula requires min_(x,y) Q(x,y) > 0"
    )]
    NotStrictlyPositive { min: f64 },
    #[error("P is {p:?} but Q is {q:?}")]
    AlphabetMismatch { p: (usize, usize), q: (usize, usize) },
    #[error("no convergence after {} iterations (residual {})", .0.iterations, .0.marginal_residual)]
    MaxIterationsExceeded(Box<ExponentResult>),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("grid oracle needs a 2x2 alphabet, got {0}x{1}")]
    UnsupportedAlphabetSize(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Max-norm target for the gap between iterate marginals and `(P_X, P_Y)`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 100_000,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), ExponentError> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(ExponentError::InvalidOptions(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(ExponentError::InvalidOptions("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentResult {
    /// Nats per sample.
    pub theta_star: f64,
    pub minimizer: JointPmf,
    pub iterations: usize,
    pub marginal_residual: f64,
    /// `theta_star` minus the dual objective at the current scalings. The
    /// dual value is a lower bound on the true minimum.
    pub duality_gap_bound: f64,
    pub converged: bool,
}

/// One full row+column sweep of the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpfStep {
    pub iteration: usize,
    /// `D(iterate || Q)`.
    pub divergence_from_q: f64,
    /// `D(P || iterate)`; `P` is feasible, so this is non-increasing.
    pub divergence_to_target: f64,
    pub marginal_residual: f64,
}

fn check_inputs(p: &JointPmf, q: &JointPmf) -> Result<(), ExponentError> {
    if !p.same_alphabets(q) {
        return Err(ExponentError::AlphabetMismatch {
            p: p.shape(),
            q: q.shape(),
        });
    }
    if !q.is_strictly_positive() {
        return Err(ExponentError::NotStrictlyPositive { min: q.min_cell() });
    }
    Ok(())
}

/// Minimizes `D(R || Q)` over joints `R` with the marginals of `p`.
pub fn solve_exponent(p: &JointPmf, q: &JointPmf, opts: &SolverOptions) -> Result<ExponentResult, ExponentError> {
    run_ipf(p, q, opts, None)
}

/// Same as [`solve_exponent`], also returning the per-sweep diagnostics.
pub fn solve_exponent_traced(
    p: &JointPmf,
    q: &JointPmf,
    opts: &SolverOptions,
) -> Result<(ExponentResult, Vec<IpfStep>), ExponentError> {
    let mut steps = Vec::new();
    let res = run_ipf(p, q, opts, Some(&mut steps))?;
    Ok((res, steps))
}

/// The optimal exponent for a type-I budget `epsilon`. The value does not
/// depend on `epsilon`; it is only range-checked.
pub fn optimal_exponent(
    p: &JointPmf,
    q: &JointPmf,
    epsilon: f64,
    opts: &SolverOptions,
) -> Result<ExponentResult, ExponentError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(ExponentError::InvalidEpsilon(epsilon));
    }
    solve_exponent(p, q, opts)
}

fn run_ipf(
    p: &JointPmf,
    q: &JointPmf,
    opts: &SolverOptions,
    mut trace: Option<&mut Vec<IpfStep>>,
) -> Result<ExponentResult, ExponentError> {
    opts.validate()?;
    check_inputs(p, q)?;
    let (nx, ny) = p.shape();
    let px = p.marginal_x();
    let py = p.marginal_y();
    let (px, py) = (px.probs(), py.probs());

    let mut m = q.probs().to_vec();
    let mut log_a = vec![0.0; nx];
    let mut log_b = vec![0.0; ny];
    let mut row_sums = vec![0.0; nx];
    let mut col_sums = vec![0.0; ny];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;

        for x in 0..nx {
            let row = &mut m[x * ny..(x + 1) * ny];
            if px[x] == 0.0 {
                row.iter_mut().for_each(|v| *v = 0.0);
                log_a[x] = f64::NEG_INFINITY;
                continue;
            }
            let s: f64 = row.iter().sum();
            let f = px[x] / s;
            row.iter_mut().for_each(|v| *v *= f);
            log_a[x] += f.ln();
        }

        for y in 0..ny {
            if py[y] == 0.0 {
                (0..nx).for_each(|x| m[x * ny + y] = 0.0);
                log_b[y] = f64::NEG_INFINITY;
                continue;
            }
            let s: f64 = (0..nx).map(|x| m[x * ny + y]).sum();
            let f = py[y] / s;
            (0..nx).for_each(|x| m[x * ny + y] *= f);
            log_b[y] += f.ln();
        }

        for (x, r) in row_sums.iter_mut().enumerate() {
            *r = m[x * ny..(x + 1) * ny].iter().sum();
        }
        for (y, c) in col_sums.iter_mut().enumerate() {
            *c = (0..nx).map(|x| m[x * ny + y]).sum();
        }
        residual = row_sums
            .iter()
            .zip(px)
            .chain(col_sums.iter().zip(py))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        if let Some(steps) = trace.as_deref_mut() {
            steps.push(IpfStep {
                iteration: iterations,
                divergence_from_q: kl_cells(&m, q.probs())?,
                divergence_to_target: kl_cells(p.probs(), &m)?,
                marginal_residual: residual,
            });
        }
        if residual <= opts.tolerance {
            break;
        }
    }

    let z: f64 = m.iter().sum();
    let minimizer = JointPmf::with_alphabets(p.alphabet_x().clone(), p.alphabet_y().clone(), m)?;
    let theta_star = kl_divergence(&minimizer, q)?;
    let dual = dual_value(px, py, &log_a, &log_b, z);
    let result = ExponentResult {
        theta_star,
        minimizer,
        iterations,
        marginal_residual: residual,
        duality_gap_bound: (theta_star - dual).abs(),
        converged: residual <= opts.tolerance,
    };
    if result.converged {
        Ok(result)
    } else {
        Err(ExponentError::MaxIterationsExceeded(Box::new(result)))
    }
}

// sum P_X u + sum P_Y v - ln sum Q e^(u+v), with 0 * -inf = 0.
fn dual_value(px: &[f64], py: &[f64], log_a: &[f64], log_b: &[f64], z: f64) -> f64 {
    let dot = |w: &[f64], l: &[f64]| -> f64 {
        w.iter()
            .zip(l)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, l)| w * l)
            .sum()
    };
    dot(px, log_a) + dot(py, log_b) - z.ln()
}

/// Feasible range of the `(0, 0)` cell for a 2x2 coupling with first-row mass
/// `r` and first-column mass `c`.
fn coupling_range(r: f64, c: f64) -> (f64, f64) {
    ((r + c - 1.0).max(0.0), r.min(c))
}

#[inline]
fn coupling_cells(t: f64, r: f64, c: f64) -> [f64; 4] {
    [
        t.max(0.0),
        (r - t).max(0.0),
        (c - t).max(0.0),
        (1.0 - r - c + t).max(0.0),
    ]
}

fn check_2x2(p: &JointPmf, q: &JointPmf) -> Result<(), ExponentError> {
    check_inputs(p, q)?;
    if p.shape() != (2, 2) {
        return Err(ExponentError::UnsupportedAlphabetSize(p.nx(), p.ny()));
    }
    Ok(())
}

/// Brute-force minimum of `D(R || Q)` over the 2x2 couplings of `P`'s
/// marginals, scanning `R(0,0)` at resolution `grid_step`.
pub fn grid_oracle_exponent(p: &JointPmf, q: &JointPmf, grid_step: f64) -> Result<f64, ExponentError> {
    check_2x2(p, q)?;
    if !(grid_step > 0.0) {
        return Err(ExponentError::InvalidOptions(format!("grid_step must be positive, got {grid_step}")));
    }
    let r = p.marginal_x().probs()[0];
    let c = p.marginal_y().probs()[0];
    let (lo, hi) = coupling_range(r, c);
    let qc = q.probs();
    let eval = |t: f64| kl_cells(&coupling_cells(t, r, c), qc);
    let steps = ((hi - lo) / grid_step).floor() as usize;
    let mut best = eval(hi)?;
    for i in 0..=steps {
        best = best.min(eval((lo + i as f64 * grid_step).min(hi))?);
    }
    Ok(best)
}

/// Centralized Chernoff-Stein exponent `D(P || Q)`, reported alongside the
/// zero-rate exponent for comparison.
pub fn chernoff_stein_baseline<D: Distribution + ?Sized>(p: &D, q: &D) -> Result<f64, ExponentError> {
    Ok(kl_divergence(p, q)?)
}

/// Exact I-projection of a strictly positive 2x2 `q` onto couplings with
/// first-row mass `r` and first-column mass `c`. Solves the cross-ratio
/// stationarity condition by bisection.
fn projection_2x2(q: &[f64], r: f64, c: f64) -> f64 {
    let (lo, hi) = coupling_range(r, c);
    let eval = |t: f64| kl_cells(&coupling_cells(t, r, c), q).unwrap_or(f64::INFINITY);
    if hi - lo <= 0.0 {
        return eval(lo);
    }
    let log_cross = (q[0] * q[3] / (q[1] * q[2])).ln();
    let slope = |t: f64| t.ln() + (1.0 - r - c + t).ln() - (r - t).ln() - (c - t).ln() - log_cross;
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if slope(mid) > 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    eval(0.5 * (a + b)).min(eval(lo)).min(eval(hi))
}

/// Minimum of `D(R || Q)` over 2x2 joints whose marginals lie within `eta`
/// (max-norm) of `P`'s marginals: the exponent of a marginal-typicality test
/// with margin `eta`. Grid search over the marginal box followed by two
/// refinement passes; the inner coupling minimum is solved exactly.
pub fn relaxed_exponent_2x2(p: &JointPmf, q: &JointPmf, eta: f64, grid_step: f64) -> Result<f64, ExponentError> {
    check_2x2(p, q)?;
    if !(grid_step > 0.0) || !(eta >= 0.0) {
        return Err(ExponentError::InvalidOptions("eta must be >= 0 and grid_step > 0".into()));
    }
    let r0 = p.marginal_x().probs()[0];
    let c0 = p.marginal_y().probs()[0];
    let qc = q.probs();
    let box_r = ((r0 - eta).max(0.0), (r0 + eta).min(1.0));
    let box_c = ((c0 - eta).max(0.0), (c0 + eta).min(1.0));

    let scan = |rr: (f64, f64), cr: (f64, f64), step: f64| -> (f64, f64, f64) {
        let nr = ((rr.1 - rr.0) / step).ceil().max(0.0) as usize;
        let nc = ((cr.1 - cr.0) / step).ceil().max(0.0) as usize;
        let mut best = (f64::INFINITY, rr.0, cr.0);
        for i in 0..=nr {
            let r = (rr.0 + i as f64 * step).min(rr.1);
            for j in 0..=nc {
                let c = (cr.0 + j as f64 * step).min(cr.1);
                let v = projection_2x2(qc, r, c);
                if v < best.0 {
                    best = (v, r, c);
                }
            }
        }
        best
    };

    let mut step = grid_step.max((box_r.1 - box_r.0).max(box_c.1 - box_c.0) / 400.0);
    let mut best = scan(box_r, box_c, step);
    for _ in 0..3 {
        let rr = ((best.1 - step).max(box_r.0), (best.1 + step).min(box_r.1));
        let cr = ((best.2 - step).max(box_c.0), (best.2 + step).min(box_c.1));
        step /= 20.0;
        let refined = scan(rr, cr, step);
        if refined.0 < best.0 {
            best = refined;
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::Pmf;
    use approx::assert_abs_diff_eq;

    fn joint(rows: &[[f64; 2]; 2]) -> JointPmf {
        JointPmf::from_rows(&[rows[0].to_vec(), rows[1].to_vec()]).unwrap()
    }

    const D_09_HALF: f64 = 0.368_064_207_168_497_07;

    #[test]
    fn uniform_q_with_uniform_marginals_is_zero() {
        let p = joint(&[[0.4, 0.1], [0.1, 0.4]]);
        let q = JointPmf::uniform(2, 2).unwrap();
        let res = solve_exponent(&p, &q, &SolverOptions::default()).unwrap();
        assert!(res.theta_star <= 1e-12);
        for &v in res.minimizer.probs() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn product_q_closed_form() {
        let p = joint(&[[0.85, 0.05], [0.05, 0.05]]);
        let q = JointPmf::uniform(2, 2).unwrap();
        let res = solve_exponent(&p, &q, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(res.theta_star, 2.0 * D_09_HALF, epsilon = 1e-9);
        let expected = [0.81, 0.09, 0.09, 0.01];
        for (v, e) in res.minimizer.probs().iter().zip(expected) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-9);
        }
        assert!(res.marginal_residual <= 1e-10);
        assert!(res.duality_gap_bound <= 1e-9);
    }

    #[test]
    fn matches_frozen_interior_instance() {
        // Golden-section minimum at 40 digits: t* = 0.34410882339705485.
        let p = joint(&[[0.5, 0.2], [0.1, 0.2]]);
        let q = joint(&[[0.1, 0.3], [0.4, 0.2]]);
        let res = solve_exponent(&p, &q, &SolverOptions::default()).unwrap();
        assert_abs_diff_eq!(res.theta_star, 0.305_059_655_518_917_12, epsilon = 1e-9);
        assert_abs_diff_eq!(res.minimizer.get(0, 0), 0.344_108_823_397_054_85, epsilon = 1e-8);
        let grid = grid_oracle_exponent(&p, &q, 1e-5).unwrap();
        assert!((res.theta_star - grid).abs() <= 1e-3);
        assert!(res.theta_star <= grid + 1e-12);
    }

    #[test]
    fn rejects_zero_cell_q() {
        let p = joint(&[[0.4, 0.1], [0.1, 0.4]]);
        let q = joint(&[[0.5, 0.0], [0.25, 0.25]]);
        let err = solve_exponent(&p, &q, &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, ExponentError::NotStrictlyPositive { .. }));
        assert!(err.to_string().contains("Q(x,y) > 0"));
    }

    #[test]
    fn reports_unconverged_iterate() {
        let p = joint(&[[0.5, 0.2], [0.1, 0.2]]);
        let q = joint(&[[0.1, 0.3], [0.4, 0.2]]);
        let opts = SolverOptions {
            tolerance: 1e-14,
            max_iterations: 1,
        };
        match solve_exponent(&p, &q, &opts) {
            Err(ExponentError::MaxIterationsExceeded(best)) => {
                assert!(!best.converged);
                assert_eq!(best.iterations, 1);
                assert!(best.marginal_residual > 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(SolverOptions { tolerance: 0.0, max_iterations: 5 }.validate().is_err());
        assert!(SolverOptions { tolerance: 1e-3, max_iterations: 0 }.validate().is_err());
    }

    #[test]
    fn degenerate_marginal_zeroes_row() {
        let p = joint(&[[0.6, 0.4], [0.0, 0.0]]);
        let q = joint(&[[0.1, 0.3], [0.4, 0.2]]);
        let res = solve_exponent(&p, &q, &SolverOptions::default()).unwrap();
        assert_eq!(res.minimizer.get(1, 0), 0.0);
        assert_eq!(res.minimizer.get(1, 1), 0.0);
        let grid = grid_oracle_exponent(&p, &q, 1e-5).unwrap();
        assert_abs_diff_eq!(res.theta_star, grid, epsilon = 1e-12);
    }

    #[test]
    fn epsilon_is_range_checked_only() {
        let p = joint(&[[0.5, 0.2], [0.1, 0.2]]);
        let q = joint(&[[0.1, 0.3], [0.4, 0.2]]);
        let opts = SolverOptions::default();
        let a = optimal_exponent(&p, &q, 0.01, &opts).unwrap().theta_star;
        let b = optimal_exponent(&p, &q, 0.99, &opts).unwrap().theta_star;
        assert_eq!(a, b);
        assert!(matches!(optimal_exponent(&p, &q, 1.0, &opts), Err(ExponentError::InvalidEpsilon(_))));
        assert!(matches!(optimal_exponent(&p, &q, 0.0, &opts), Err(ExponentError::InvalidEpsilon(_))));
    }

    #[test]
    fn grid_oracle_examples() {
        let u = JointPmf::uniform(2, 2).unwrap();
        assert_abs_diff_eq!(grid_oracle_exponent(&u, &u, 1e-3).unwrap(), 0.0, epsilon = 1e-15);
        let p = joint(&[[0.85, 0.05], [0.05, 0.05]]);
        let v = grid_oracle_exponent(&p, &u, 1e-5).unwrap();
        assert!((v - 2.0 * D_09_HALF).abs() <= 1e-4);

        // p0 = 1: the polytope is the single point [[q0, 1-q0], [0, 0]].
        let p = joint(&[[0.3, 0.7], [0.0, 0.0]]);
        let q = joint(&[[0.1, 0.3], [0.4, 0.2]]);
        let exact = 0.3 * (0.3f64 / 0.1).ln() + 0.7 * (0.7f64 / 0.3).ln();
        assert_eq!(grid_oracle_exponent(&p, &q, 1e-2).unwrap(), exact);

        let big = JointPmf::uniform(3, 2).unwrap();
        assert!(matches!(
            grid_oracle_exponent(&big, &big, 1e-3),
            Err(ExponentError::UnsupportedAlphabetSize(3, 2))
        ));
    }

    #[test]
    fn baseline_examples() {
        let p = Pmf::new(vec![0.9, 0.1]).unwrap();
        let h = Pmf::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(chernoff_stein_baseline(&h, &h).unwrap(), 0.0);
        assert_abs_diff_eq!(chernoff_stein_baseline(&p, &h).unwrap(), D_09_HALF, epsilon = 1e-15);
        let point = Pmf::new(vec![1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(
            chernoff_stein_baseline(&point, &h).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn relaxed_exponent_product_case() {
        // Box corner (0.88, 0.88) with independent coupling: 2 D((.88,.12)||(.5,.5)).
        let p = joint(&[[0.85, 0.05], [0.05, 0.05]]);
        let u = JointPmf::uniform(2, 2).unwrap();
        let v = relaxed_exponent_2x2(&p, &u, 0.02, 1e-4).unwrap();
        assert_abs_diff_eq!(v, 0.652_444_378_574_471_35, epsilon = 1e-9);
        assert!(relaxed_exponent_2x2(&p, &u, 0.5, 1e-3).unwrap() <= 1e-12);
        let at_zero = relaxed_exponent_2x2(&p, &u, 0.0, 1e-3).unwrap();
        assert_abs_diff_eq!(at_zero, 2.0 * D_09_HALF, epsilon = 1e-9);
    }
}
