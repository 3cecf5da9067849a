//! Exact error probabilities by the method of types.
//!
//! The decision is a function of empirical types only, so `alpha` and `beta`
//! are sums of multinomial type-class probabilities over accepting types.
//! Three evaluators share the protocol's own typicality predicates:
//!
//! - joint-type enumeration: every joint type of total `N`, any alphabet;
//!   `O(N^{|X||Y|-1})` types, guarded by a cell budget.
//! - 2x2 fixed horizon: joint types grouped by their marginal pair. Given
//!   the x-count `r`, the first-column count is a sum of two independent
//!   binomials, so the accepted mass per `r` is a window sum evaluated from
//!   log-domain tail tables. `O(N^2)` and underflow-free at `N` in the
//!   thousands.
//! - 2x2 early decision: a forward recursion over cumulative marginal counts
//!   `(r, c)` step by step, which also yields `E[T]`.

use rayon::prelude::*;

use super::{ErrorReport, HarnessError, LogSum, Method, Result};
use crate::prob::{ln_one_minus_exp, log_add_exp, Distribution, JointPmf, LnFactorial};
use crate::protocol::{PolicyKind, Protocol, ProtocolConfig, Verdict};

/// Largest `N` handled by the early-decision recursion.
pub const EARLY_DECIDE_MAX_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactOptions {
    /// Maximum number of joint types the generic enumerator may visit.
    pub cell_budget: u64,
    /// Use joint-type enumeration even where a faster evaluator exists.
    pub force_joint_enumeration: bool,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            cell_budget: 20_000_000,
            force_joint_enumeration: false,
        }
    }
}

/// Exact `(alpha, beta, E[T])` with default options.
pub fn exact_errors(config: &ProtocolConfig, p: &JointPmf, q: &JointPmf) -> Result<ErrorReport> {
    exact_errors_with(config, p, q, &ExactOptions::default())
}

pub fn exact_errors_with(
    config: &ProtocolConfig,
    p: &JointPmf,
    q: &JointPmf,
    opts: &ExactOptions,
) -> Result<ErrorReport> {
    if !p.same_alphabets(q) {
        return Err(HarnessError::Invalid(format!(
            "P is {:?} but Q is {:?}",
            p.shape(),
            q.shape()
        )));
    }
    let proto = Protocol::new(*config, p)?;
    let samples = config.horizon_samples();
    let is_2x2 = p.shape() == (2, 2);

    let (under_p, under_q) = match config.policy {
        PolicyKind::FixedHorizon => {
            if is_2x2 && !opts.force_joint_enumeration {
                (
                    fixed_2x2(&proto, p, samples),
                    fixed_2x2(&proto, q, samples),
                )
            } else {
                joint_types(&proto, p, q, samples, opts.cell_budget)?
            }
        }
        PolicyKind::EarlyDecide => {
            if !is_2x2 || samples > EARLY_DECIDE_MAX_SAMPLES {
                return Err(HarnessError::TooLarge(format!(
                    "exact early-decision evaluation supports 2x2 alphabets with N <= {EARLY_DECIDE_MAX_SAMPLES} \
                     (got {}x{}, N = {samples}); use Monte Carlo",
                    p.nx(),
                    p.ny()
                )));
            }
            (early_decide_2x2(&proto, p), early_decide_2x2(&proto, q))
        }
    };

    let mut report = ErrorReport::new(config, Method::Exact);
    report.ln_beta = under_q.ln_accept.min(0.0);
    report.beta = report.ln_beta.exp();
    report.ln_alpha = under_p.ln_reject.min(0.0);
    report.alpha = report.ln_alpha.exp();
    report.e_t_h0 = under_p.expected_t;
    report.e_t_h1 = under_q.expected_t;
    Ok(report)
}

/// Outcome masses under one measure.
#[derive(Debug, Clone, Copy)]
struct Masses {
    ln_accept: f64,
    ln_reject: f64,
    expected_t: f64,
}

/// Number of compositions of `total` into `cells` nonnegative parts, as f64.
fn type_count(total: usize, cells: usize) -> f64 {
    let lf = LnFactorial::new(total + cells);
    lf.ln_binomial(total + cells - 1, cells - 1).exp()
}

fn ln_multinomial_or_neg_inf(lf: &LnFactorial, counts: &[u64], probs: &[f64]) -> f64 {
    lf.ln_multinomial(counts, probs).unwrap_or(f64::NEG_INFINITY)
}

/// Outcome masses under `p` and `q` by enumerating every joint type.
fn joint_types(proto: &Protocol, p: &JointPmf, q: &JointPmf, samples: usize, budget: u64) -> Result<(Masses, Masses)> {
    let (nx, ny) = p.shape();
    let cells = nx * ny;
    let count = type_count(samples, cells);
    if count > budget as f64 {
        return Err(HarnessError::TooLarge(format!(
            "{count:.3e} joint types of total {samples} over {cells} cells exceed the budget of {budget}; \
             use Monte Carlo or a smaller N"
        )));
    }
    let lf = LnFactorial::new(samples);
    let total = samples as u64;
    let n_steps = proto.config().n;
    let mut counts = vec![0u64; cells];
    let mut row = vec![0u64; nx];
    let mut col = vec![0u64; ny];
    let mut acc_p = LogSum::new();
    let mut acc_q = LogSum::new();
    let mut rej_p = LogSum::new();
    let mut rej_q = LogSum::new();

    let mut visit = |counts: &[u64]| {
        row.iter_mut().for_each(|v| *v = 0);
        col.iter_mut().for_each(|v| *v = 0);
        for (i, &c) in counts.iter().enumerate() {
            row[i / ny] += c;
            col[i % ny] += c;
        }
        let x_ok = proto.x_typical(&row, total);
        let lp = ln_multinomial_or_neg_inf(&lf, counts, p.probs());
        let lq = ln_multinomial_or_neg_inf(&lf, counts, q.probs());
        if proto.verdict_from_types(n_steps, x_ok, &col) == Verdict::Null {
            acc_p.add(lp);
            acc_q.add(lq);
        } else {
            rej_p.add(lp);
            rej_q.add(lq);
        }
    };
    for_each_composition(&mut counts, 0, total, &mut visit);
    let t = n_steps as f64;
    Ok((
        Masses {
            ln_accept: acc_p.value(),
            ln_reject: rej_p.value(),
            expected_t: t,
        },
        Masses {
            ln_accept: acc_q.value(),
            ln_reject: rej_q.value(),
            expected_t: t,
        },
    ))
}

fn for_each_composition<F: FnMut(&[u64])>(counts: &mut [u64], idx: usize, remaining: u64, visit: &mut F) {
    if idx + 1 == counts.len() {
        counts[idx] = remaining;
        visit(counts);
        return;
    }
    for c in 0..=remaining {
        counts[idx] = c;
        for_each_composition(counts, idx + 1, remaining - c, visit);
    }
    counts[idx] = 0;
}

/// `ln Binomial(n, p)(i)` with the degenerate `p in {0, 1}` cases exact.
#[inline]
fn ln_binomial_pmf(lf: &LnFactorial, n: usize, p: f64, i: usize) -> f64 {
    if p <= 0.0 {
        return if i == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p >= 1.0 {
        return if i == n { 0.0 } else { f64::NEG_INFINITY };
    }
    lf.ln_binomial(n, i) + i as f64 * p.ln() + (n - i) as f64 * (-p).ln_1p()
}

/// Log-domain lower and upper tails of a binomial, for window sums.
struct BinomialTails {
    n: usize,
    mode: usize,
    /// `ln P(B <= j)`.
    lower: Vec<f64>,
    /// `ln P(B >= j)`.
    upper: Vec<f64>,
}

impl BinomialTails {
    fn new(lf: &LnFactorial, n: usize, p: f64) -> Self {
        let pmf: Vec<f64> = (0..=n).map(|j| ln_binomial_pmf(lf, n, p, j)).collect();
        let mut lower = Vec::with_capacity(n + 1);
        let mut acc = f64::NEG_INFINITY;
        for &v in &pmf {
            acc = log_add_exp(acc, v);
            lower.push(acc.min(0.0));
        }
        let mut upper = vec![0.0; n + 1];
        let mut acc = f64::NEG_INFINITY;
        for j in (0..=n).rev() {
            acc = log_add_exp(acc, pmf[j]);
            upper[j] = acc.min(0.0);
        }
        let mode = pmf
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
            .0;
        Self { n, mode, lower, upper }
    }

    /// `ln P(lo <= B <= hi)` for `lo <= hi` within `[0, n]`.
    fn ln_window(&self, lo: usize, hi: usize) -> f64 {
        if lo == 0 {
            return self.lower[hi];
        }
        if hi == self.n {
            return self.upper[lo];
        }
        if hi <= self.mode {
            let top = self.lower[hi];
            top + ln_one_minus_exp((self.lower[lo - 1] - top).min(0.0))
        } else if lo >= self.mode {
            let top = self.upper[lo];
            top + ln_one_minus_exp((self.upper[hi + 1] - top).min(0.0))
        } else {
            // The window contains the mode, so neither excluded tail is close to 1.
            (-(self.lower[lo - 1].exp() + self.upper[hi + 1].exp())).ln_1p()
        }
    }
}

/// Outcome masses of a 2x2 fixed-horizon test after `samples` draws from `m`.
fn fixed_2x2(proto: &Protocol, m: &JointPmf, samples: usize) -> Masses {
    let total = samples as u64;
    let eta = proto.config().eta;
    let expected_t = proto.config().n as f64;
    let y_ok: Vec<bool> = (0..=total)
        .map(|c| proto.y_within(&[c, total - c], total, eta))
        .collect();
    let (Some(y_lo), Some(y_hi)) = (y_ok.iter().position(|&b| b), y_ok.iter().rposition(|&b| b)) else {
        return Masses {
            ln_accept: f64::NEG_INFINITY,
            ln_reject: 0.0,
            expected_t,
        };
    };
    debug_assert!(y_ok[y_lo..=y_hi].iter().all(|&b| b), "binary y-acceptance set is an interval");

    let lf = LnFactorial::new(samples);
    let m_row0 = m.get(0, 0) + m.get(0, 1);
    let m_row1 = m.get(1, 0) + m.get(1, 1);
    let col0_given_row0 = if m_row0 > 0.0 { (m.get(0, 0) / m_row0).min(1.0) } else { 0.0 };
    let col0_given_row1 = if m_row1 > 0.0 { (m.get(1, 0) / m_row1).min(1.0) } else { 0.0 };

    // Per-row terms are independent; collect in order and reduce sequentially
    // so the result does not depend on the thread count.
    let terms: Vec<(f64, f64)> = (0..=samples)
        .into_par_iter()
        .map(|r| {
            let ln_row = ln_binomial_pmf(&lf, samples, m_row0, r);
            if ln_row == f64::NEG_INFINITY {
                return (ln_row, ln_row);
            }
            if !proto.x_typical(&[r as u64, total - r as u64], total) {
                return (f64::NEG_INFINITY, ln_row);
            }
            // Column-0 count is A + B with A ~ Bin(r, .) and B ~ Bin(N - r, .).
            let rest = samples - r;
            let tails = BinomialTails::new(&lf, rest, col0_given_row1);
            let mut acc = LogSum::new();
            let mut rej = LogSum::new();
            for i in 0..=r {
                let ln_a = ln_binomial_pmf(&lf, r, col0_given_row0, i);
                if ln_a == f64::NEG_INFINITY {
                    continue;
                }
                if i < y_lo {
                    rej.add(ln_a + tails.lower[(y_lo - i - 1).min(rest)]);
                }
                let above = (y_hi + 1).saturating_sub(i);
                if above <= rest {
                    rej.add(ln_a + tails.upper[above]);
                }
                let lo = y_lo.saturating_sub(i);
                if i > y_hi || lo > rest {
                    continue;
                }
                acc.add(ln_a + tails.ln_window(lo, (y_hi - i).min(rest)));
            }
            (ln_row + acc.value(), ln_row + rej.value())
        })
        .collect();
    let mut acc = LogSum::new();
    let mut rej = LogSum::new();
    for &(a, r) in &terms {
        acc.add(a);
        rej.add(r);
    }
    Masses {
        ln_accept: acc.value().min(0.0),
        ln_reject: rej.value().min(0.0),
        expected_t,
    }
}

/// Forward recursion for the early-decision policy on a 2x2 alphabet.
fn early_decide_2x2(proto: &Protocol, m: &JointPmf) -> Masses {
    let cfg = proto.config();
    let (k, n) = (cfg.k, cfg.n);
    let lf = LnFactorial::new(k);
    let probs = m.probs();

    // Probability that k fresh pairs add `dr` to the row-0 count and `dc` to
    // the column-0 count.
    let side = k + 1;
    let mut step = vec![0.0; side * side];
    for n00 in 0..=k {
        for n01 in 0..=k - n00 {
            for n10 in 0..=k - n00 - n01 {
                let n11 = k - n00 - n01 - n10;
                let counts = [n00 as u64, n01 as u64, n10 as u64, n11 as u64];
                let lp = ln_multinomial_or_neg_inf(&lf, &counts, probs);
                step[(n00 + n01) * side + (n00 + n10)] += lp.exp();
            }
        }
    }

    let mut width = 1;
    let mut mass = vec![1.0];
    let mut accept = 0.0;
    let mut reject = 0.0;
    let mut expected_t = 0.0;
    for t in 1..=n {
        let new_width = width + k;
        let mut next = vec![0.0; new_width * new_width];
        for r in 0..width {
            for c in 0..width {
                let w = mass[r * width + c];
                if w == 0.0 {
                    continue;
                }
                for dr in 0..=k {
                    for dc in 0..=k {
                        let s = step[dr * side + dc];
                        if s != 0.0 {
                            next[(r + dr) * new_width + (c + dc)] += w * s;
                        }
                    }
                }
            }
        }
        let total = (t * k) as u64;
        let mut stopped = 0.0;
        for r in 0..new_width {
            for c in 0..new_width {
                let w = next[r * new_width + c];
                if w == 0.0 {
                    continue;
                }
                let (r64, c64) = (r as u64, c as u64);
                let x_ok = proto.x_typical(&[r64, total - r64], total);
                match proto.verdict_from_types(t, x_ok, &[c64, total - c64]) {
                    Verdict::Continue => continue,
                    Verdict::Null => accept += w,
                    Verdict::Alternative => reject += w,
                }
                stopped += w;
                next[r * new_width + c] = 0.0;
            }
        }
        expected_t += t as f64 * stopped;
        mass = next;
        width = new_width;
    }
    Masses {
        ln_accept: accept.min(1.0).ln(),
        ln_reject: reject.min(1.0).ln(),
        expected_t,
    }
}
