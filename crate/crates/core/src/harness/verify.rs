//! Exact prefix-tree checks of two facts about stopped product measures:
//!
//! - stopped divergence: `E_P[sum_{i<=T} ln P_i(Z_i)/Q_i(Z_i)] = sum_i P(T >= i) D(P_i||Q_i)`,
//!   which is `E[T] D(P||Q)` for identical steps;
//! - stopped data-processing bound:
//!   `-E[P^T(A^T) ln Q^T(A^T)] <= E[T] D(P||Q) + ln 2` (nats), plus the
//!   looser literal `+1` in nats and the equivalent statement in bits.
//!
//! Stopping rules see the prefix `z^t` for `t >= 1` and are forced to stop at
//! the horizon. Enumeration is exhaustive, so the horizon is capped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fmt_real, HarnessError, Result};
use crate::prob::{kl_cells, Distribution};

/// Maximum number of length-`h` prefixes for the stopped-divergence check.
pub const WALD_MAX_PREFIXES: usize = 1 << 16;
/// Maximum number of length-`h` sequences for the data-processing check.
pub const LEMMA1_MAX_PREFIXES: usize = 1 << 12;
pub const WALD_TOLERANCE: f64 = 1e-9;
/// Absolute slack on the inequality checks, for rounding only.
pub const INEQUALITY_SLACK: f64 = 1e-12;

pub trait StoppingRule {
    /// Whether to stop after observing `prefix` (length `>= 1`).
    fn should_stop(&self, prefix: &[usize]) -> bool;
}

impl<F: Fn(&[usize]) -> bool> StoppingRule for F {
    fn should_stop(&self, prefix: &[usize]) -> bool {
        self(prefix)
    }
}

/// `T = t0` (or the horizon, whichever is smaller).
#[derive(Debug, Clone, Copy)]
pub struct FixedTime(pub usize);

impl StoppingRule for FixedTime {
    fn should_stop(&self, prefix: &[usize]) -> bool {
        prefix.len() >= self.0
    }
}

/// Stop at the first occurrence of a symbol.
#[derive(Debug, Clone, Copy)]
pub struct FirstOccurrence(pub usize);

impl StoppingRule for FirstOccurrence {
    fn should_stop(&self, prefix: &[usize]) -> bool {
        prefix.last() == Some(&self.0)
    }
}

fn prefix_index(prefix: &[usize], alphabet: usize) -> usize {
    prefix.iter().fold(0, |acc, &z| acc * alphabet + z)
}

/// A predicate on prefixes stored as one bit table per length `1..=horizon`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixTable {
    alphabet: usize,
    tables: Vec<Vec<bool>>,
}

impl PrefixTable {
    pub fn from_fn(alphabet: usize, horizon: usize, mut f: impl FnMut(&[usize]) -> bool) -> Self {
        let mut tables = Vec::with_capacity(horizon);
        let mut prefix = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let size = alphabet.pow(t as u32);
            let mut table = Vec::with_capacity(size);
            for idx in 0..size {
                prefix.clear();
                let mut rest = idx;
                for _ in 0..t {
                    prefix.push(rest % alphabet);
                    rest /= alphabet;
                }
                prefix.reverse();
                table.push(f(&prefix));
            }
            tables.push(table);
        }
        Self { alphabet, tables }
    }

    /// Each entry independently true with probability `density`.
    pub fn random<R: Rng>(alphabet: usize, horizon: usize, density: f64, rng: &mut R) -> Self {
        Self::from_fn(alphabet, horizon, |_| rng.gen_bool(density))
    }

    pub fn horizon(&self) -> usize {
        self.tables.len()
    }

    pub fn contains(&self, prefix: &[usize]) -> bool {
        let t = prefix.len();
        t >= 1 && t <= self.tables.len() && self.tables[t - 1][prefix_index(prefix, self.alphabet)]
    }
}

impl StoppingRule for PrefixTable {
    fn should_stop(&self, prefix: &[usize]) -> bool {
        self.contains(prefix)
    }
}

/// Acceptance sets `A^t`, one per possible stopping value.
pub trait AcceptanceFamily {
    fn accepts(&self, z: &[usize]) -> bool;
}

impl AcceptanceFamily for PrefixTable {
    fn accepts(&self, z: &[usize]) -> bool {
        self.contains(z)
    }
}

/// `A^t = Z^t` for every `t`.
#[derive(Debug, Clone, Copy)]
pub struct FullSpace;

impl AcceptanceFamily for FullSpace {
    fn accepts(&self, _z: &[usize]) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldReport {
    pub horizon: usize,
    pub expected_t: f64,
    /// `E_P[sum_{i<=T} ln P_i(Z_i)/Q_i(Z_i)]` by enumeration.
    pub lhs: f64,
    /// `sum_i P(T >= i) D(P_i||Q_i)`; `E[T] D(P||Q)` for identical steps.
    pub rhs: f64,
    pub abs_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub horizon: usize,
    pub expected_t: f64,
    pub divergence: f64,
    /// `-E[P^T(A^T) ln Q^T(A^T)]` in nats.
    pub lhs: f64,
    /// `E[T] D + ln 2`.
    pub rhs_ln2: f64,
    /// `E[T] D + 1`, the constant read literally in nats.
    pub rhs_literal: f64,
    pub lhs_bits: f64,
    /// `E[T] D / ln 2 + 1`.
    pub rhs_bits: f64,
    pub holds_ln2: bool,
    pub holds_literal: bool,
    pub holds_bits: bool,
}

impl Lemma1Report {
    pub fn passed(&self) -> bool {
        self.holds_ln2 && self.holds_literal && self.holds_bits
    }
}

fn max_horizon(alphabet: usize, max_prefixes: usize) -> usize {
    if alphabet <= 1 {
        return usize::MAX;
    }
    let mut h = 0;
    let mut count = 1usize;
    while count.saturating_mul(alphabet) <= max_prefixes {
        count *= alphabet;
        h += 1;
    }
    h
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() || p.is_empty() {
        return Err(HarnessError::Invalid(format!(
            "P has {} symbols but Q has {}",
            p.len(),
            q.len()
        )));
    }
    if let Some(i) = q.iter().position(|&v| v <= 0.0) {
        return Err(HarnessError::Invalid(format!("Q must be strictly positive; Q({i}) = 0")));
    }
    Ok(())
}

fn check_horizon(horizon: usize, alphabet: usize, max_prefixes: usize) -> Result<()> {
    let cap = max_horizon(alphabet, max_prefixes);
    if horizon == 0 || horizon > cap {
        return Err(HarnessError::HorizonTooLarge { horizon, cap });
    }
    Ok(())
}

/// Walks every stopped path, calling `leaf(path, P-probability, LLR)`.
fn walk_stopped<S: StoppingRule + ?Sized>(
    steps: &[(&[f64], &[f64])],
    rule: &S,
    prefix: &mut Vec<usize>,
    weight: f64,
    llr: f64,
    leaf: &mut impl FnMut(&[usize], f64, f64),
) {
    let t = prefix.len();
    if t >= 1 && (t == steps.len() || rule.should_stop(prefix)) {
        leaf(prefix, weight, llr);
        return;
    }
    let (p, q) = steps[t];
    for (z, (&pz, &qz)) in p.iter().zip(q).enumerate() {
        if pz == 0.0 {
            continue;
        }
        prefix.push(z);
        walk_stopped(steps, rule, prefix, weight * pz, llr + (pz / qz).ln(), leaf);
        prefix.pop();
    }
}

/// Stopped-divergence identity for i.i.d. steps.
pub fn verify_wald_identity<D, S>(p: &D, q: &D, rule: &S, horizon: usize) -> Result<WaldReport>
where
    D: Distribution + ?Sized,
    S: StoppingRule + ?Sized,
{
    let steps = vec![(p.probs(), q.probs()); horizon];
    verify_wald_identity_steps(&steps, rule)
}

/// Stopped-divergence identity for independent, non-identical steps; the
/// horizon is `steps.len()`.
pub fn verify_wald_identity_steps<S: StoppingRule + ?Sized>(steps: &[(&[f64], &[f64])], rule: &S) -> Result<WaldReport> {
    let horizon = steps.len();
    let alphabet = steps.first().map_or(0, |s| s.0.len());
    for &(p, q) in steps {
        check_pair(p, q)?;
        if p.len() != alphabet {
            return Err(HarnessError::Invalid("steps use different alphabets".into()));
        }
    }
    check_horizon(horizon, alphabet, WALD_MAX_PREFIXES)?;
    let divergences: Vec<f64> = steps.iter().map(|&(p, q)| kl_cells(p, q)).collect::<std::result::Result<_, _>>()?;

    let mut survival = vec![0.0; horizon + 1];
    let mut lhs = 0.0;
    let mut total = 0.0;
    walk_stopped(steps, rule, &mut Vec::with_capacity(horizon), 1.0, 0.0, &mut |path, w, llr| {
        lhs += w * llr;
        total += w;
        survival[path.len()] += w;
    });
    // survival[t] holds P(T = t); turn it into P(T >= i).
    for t in (1..horizon).rev() {
        survival[t] += survival[t + 1];
    }
    let expected_t: f64 = survival[1..].iter().sum();
    let rhs: f64 = survival[1..].iter().zip(&divergences).map(|(s, d)| s * d).sum();
    debug_assert!((total - 1.0).abs() < 1e-12);
    let abs_error = (lhs - rhs).abs();
    Ok(WaldReport {
        horizon,
        expected_t,
        lhs,
        rhs,
        abs_error,
        passed: abs_error <= WALD_TOLERANCE,
    })
}

/// Product-measure probabilities of `A^t` under `p` and `q`.
fn set_masses<A: AcceptanceFamily + ?Sized>(p: &[f64], q: &[f64], t: usize, family: &A) -> (f64, f64) {
    fn rec<A: AcceptanceFamily + ?Sized>(
        p: &[f64],
        q: &[f64],
        t: usize,
        family: &A,
        z: &mut Vec<usize>,
        wp: f64,
        wq: f64,
        acc: &mut (f64, f64),
    ) {
        if z.len() == t {
            if family.accepts(z) {
                acc.0 += wp;
                acc.1 += wq;
            }
            return;
        }
        for s in 0..p.len() {
            z.push(s);
            rec(p, q, t, family, z, wp * p[s], wq * q[s], acc);
            z.pop();
        }
    }
    let mut acc = (0.0, 0.0);
    rec(p, q, t, family, &mut Vec::with_capacity(t), 1.0, 1.0, &mut acc);
    acc
}

/// Stopped data-processing bound with `P_T` induced by `rule` under `P`.
pub fn verify_lemma1<D, S, A>(p: &D, q: &D, rule: &S, family: &A, horizon: usize) -> Result<Lemma1Report>
where
    D: Distribution + ?Sized,
    S: StoppingRule + ?Sized,
    A: AcceptanceFamily + ?Sized,
{
    let (pp, qq) = (p.probs(), q.probs());
    check_pair(pp, qq)?;
    check_horizon(horizon, pp.len(), LEMMA1_MAX_PREFIXES)?;
    let divergence = kl_cells(pp, qq)?;

    let steps = vec![(pp, qq); horizon];
    let mut law_t = vec![0.0; horizon + 1];
    walk_stopped(&steps, rule, &mut Vec::with_capacity(horizon), 1.0, 0.0, &mut |path, w, _| {
        law_t[path.len()] += w;
    });
    let expected_t: f64 = law_t.iter().enumerate().map(|(t, w)| t as f64 * w).sum();

    let mut lhs = 0.0;
    for (t, &w) in law_t.iter().enumerate().skip(1) {
        if w == 0.0 {
            continue;
        }
        let (pa, qa) = set_masses(pp, qq, t, family);
        if pa > 0.0 {
            lhs -= w * pa * qa.ln();
        }
    }

    let base = expected_t * divergence;
    let ln2 = std::f64::consts::LN_2;
    let rhs_ln2 = base + ln2;
    let rhs_literal = base + 1.0;
    let lhs_bits = lhs / ln2;
    let rhs_bits = base / ln2 + 1.0;
    Ok(Lemma1Report {
        horizon,
        expected_t,
        divergence,
        lhs,
        rhs_ln2,
        rhs_literal,
        lhs_bits,
        rhs_bits,
        holds_ln2: lhs <= rhs_ln2 + INEQUALITY_SLACK,
        holds_literal: lhs <= rhs_literal + INEQUALITY_SLACK,
        holds_bits: lhs_bits <= rhs_bits + INEQUALITY_SLACK,
    })
}

/// One line of a verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

impl CheckOutcome {
    pub const CSV_HEADER: &'static str = "check,lhs,rhs,passed";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.name, fmt_real(self.lhs), fmt_real(self.rhs), self.passed)
    }
}

fn random_pmf<R: Rng>(size: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..size).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Standard battery: deterministic, first-occurrence and random stopping
/// rules for the identity (including non-identical steps), and `cases`
/// random stopping-rule/acceptance-set pairs for the bound. The bound's
/// horizon is clamped to what exhaustive enumeration allows.
pub fn default_verify_suite<D: Distribution + ?Sized>(
    p: &D,
    q: &D,
    horizon: usize,
    cases: usize,
    seed: u64,
) -> Result<Vec<CheckOutcome>> {
    let m = p.probs().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut wald = |name: String, r: WaldReport| {
        out.push(CheckOutcome {
            name,
            lhs: r.lhs,
            rhs: r.rhs,
            passed: r.passed,
        })
    };

    wald(format!("wald_fixed_t{horizon}"), verify_wald_identity(p, q, &FixedTime(horizon), horizon)?);
    let mid = horizon.div_ceil(2);
    wald(format!("wald_fixed_t{mid}"), verify_wald_identity(p, q, &FixedTime(mid), horizon)?);
    wald(
        format!("wald_first_{}_cap{horizon}", m - 1),
        verify_wald_identity(p, q, &FirstOccurrence(m - 1), horizon)?,
    );
    wald(
        "wald_same_measure".into(),
        verify_wald_identity(p, p, &FirstOccurrence(m - 1), horizon)
            .or_else(|_| verify_wald_identity(q, q, &FirstOccurrence(m - 1), horizon))?,
    );
    for i in 0..cases.min(5) {
        let rule = PrefixTable::random(m, horizon, 0.3, &mut rng);
        wald(format!("wald_random_rule_{i}"), verify_wald_identity(p, q, &rule, horizon)?);
    }
    for i in 0..cases.min(3) {
        // Step i uses (P, Q) each mixed with a shared random pmf, so P = Q
        // still gives identical steps.
        let owned: Vec<(Vec<f64>, Vec<f64>)> = (0..horizon)
            .map(|_| {
                let r = random_pmf(m, &mut rng);
                let w: f64 = rng.gen_range(0.1..0.9);
                let mix = |base: &[f64]| base.iter().zip(&r).map(|(b, x)| w * b + (1.0 - w) * x).collect();
                (mix(p.probs()), mix(q.probs()))
            })
            .collect();
        let steps: Vec<(&[f64], &[f64])> = owned.iter().map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
        let rule = PrefixTable::random(m, horizon, 0.3, &mut rng);
        wald(format!("wald_varying_steps_{i}"), verify_wald_identity_steps(&steps, &rule)?);
    }

    let bound_h = horizon.min(max_horizon(m, LEMMA1_MAX_PREFIXES));
    let mut bound = |name: String, r: Lemma1Report| {
        out.push(CheckOutcome {
            name,
            lhs: r.lhs,
            rhs: r.rhs_ln2,
            passed: r.passed(),
        })
    };
    bound(
        "bound_full_space".into(),
        verify_lemma1(p, q, &FirstOccurrence(m - 1), &FullSpace, bound_h)?,
    );
    for i in 0..cases {
        let rule = PrefixTable::random(m, bound_h, rng.gen_range(0.1..0.9), &mut rng);
        let sets = PrefixTable::random(m, bound_h, rng.gen_range(0.05..0.95), &mut rng);
        bound(format!("bound_random_{i}"), verify_lemma1(p, q, &rule, &sets, bound_h)?);
    }
    Ok(out)
}
