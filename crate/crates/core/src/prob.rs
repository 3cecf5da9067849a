//! Finite-alphabet probability primitives.
//!
//! Pmfs and joint pmfs are stored as flat `f64` vectors (joints row-major,
//! `x` indexes rows, `y` indexes columns). Empirical types carry integer
//! counts with the same layout, so every distribution-like object exposes a
//! `(rows, cols)` shape and a flat cell slice through [`Distribution`].
//! Divergences are in nats.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inputs whose mass deviates from one by at most this much are renormalized.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("alphabet mismatch: shape {left:?} vs {right:?}")]
    AlphabetMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("unsupported mass: cell {cell} has positive mass under p but zero under q")]
    UnsupportedMass { cell: usize },
    #[error("invalid probability {value} at cell {cell}")]
    InvalidProbability { cell: usize, value: f64 },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("sequence length mismatch: {0}")]
    LengthMismatch(String),
    #[error("symbol {symbol} outside alphabet of size {size}")]
    SymbolOutOfRange { symbol: usize, size: usize },
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
}

pub type Result<T> = std::result::Result<T, ProbError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    labels: Vec<String>,
}

impl Alphabet {
    /// Alphabet `{0, 1, ..., size-1}` labelled by the decimal index.
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(ProbError::InvalidAlphabet("size must be at least 1".into()));
        }
        Ok(Self {
            labels: (0..size).map(|i| i.to_string()).collect(),
        })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(ProbError::InvalidAlphabet("size must be at least 1".into()));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(ProbError::InvalidAlphabet(format!("duplicate label {l:?}")));
            }
        }
        Ok(Self { labels })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Anything laid out as a `rows x cols` grid of probabilities.
pub trait Distribution {
    fn shape(&self) -> (usize, usize);
    fn probs(&self) -> &[f64];
}

fn validated_cells(mut probs: Vec<f64>) -> Result<Vec<f64>> {
    for (cell, &value) in probs.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(ProbError::InvalidProbability { cell, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(ProbError::NotNormalized { sum });
    }
    if sum != 1.0 {
        probs.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pmf {
    alphabet: Alphabet,
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let alphabet = Alphabet::new(probs.len())?;
        Self::with_alphabet(alphabet, probs)
    }

    pub fn with_alphabet(alphabet: Alphabet, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != alphabet.size() {
            return Err(ProbError::LengthMismatch(format!(
                "{} probabilities for an alphabet of size {}",
                probs.len(),
                alphabet.size()
            )));
        }
        Ok(Self {
            alphabet,
            probs: validated_cells(probs)?,
        })
    }

    pub fn uniform(size: usize) -> Result<Self> {
        Self::new(vec![1.0 / size as f64; size])
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    /// Joint pmf of independent draws from `self` and `other`.
    pub fn product(&self, other: &Pmf) -> JointPmf {
        let probs = self
            .probs
            .iter()
            .flat_map(|&a| other.probs.iter().map(move |&b| a * b))
            .collect();
        JointPmf::with_alphabets(self.alphabet.clone(), other.alphabet.clone(), probs)
            .expect("product of valid pmfs is a valid joint pmf")
    }
}

impl Distribution for Pmf {
    fn shape(&self) -> (usize, usize) {
        (self.probs.len(), 1)
    }

    fn probs(&self) -> &[f64] {
        &self.probs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPmf {
    alphabet_x: Alphabet,
    alphabet_y: Alphabet,
    probs: Vec<f64>,
}

impl JointPmf {
    /// Builds a joint pmf from a row-major matrix (`rows[x][y]`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nx = rows.len();
        let ny = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ny) {
            return Err(ProbError::LengthMismatch("ragged joint pmf rows".into()));
        }
        let probs = rows.iter().flatten().copied().collect();
        Self::with_alphabets(Alphabet::new(nx)?, Alphabet::new(ny)?, probs)
    }

    pub fn with_alphabets(alphabet_x: Alphabet, alphabet_y: Alphabet, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != alphabet_x.size() * alphabet_y.size() {
            return Err(ProbError::LengthMismatch(format!(
                "{} cells for a {}x{} joint alphabet",
                probs.len(),
                alphabet_x.size(),
                alphabet_y.size()
            )));
        }
        Ok(Self {
            alphabet_x,
            alphabet_y,
            probs: validated_cells(probs)?,
        })
    }

    pub fn uniform(nx: usize, ny: usize) -> Result<Self> {
        let cells = nx * ny;
        Self::with_alphabets(Alphabet::new(nx)?, Alphabet::new(ny)?, vec![1.0 / cells as f64; cells])
    }

    pub fn alphabet_x(&self) -> &Alphabet {
        &self.alphabet_x
    }

    pub fn alphabet_y(&self) -> &Alphabet {
        &self.alphabet_y
    }

    pub fn nx(&self) -> usize {
        self.alphabet_x.size()
    }

    pub fn ny(&self) -> usize {
        self.alphabet_y.size()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.probs[x * self.ny() + y]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.probs.chunks(self.ny()).map(<[f64]>::to_vec).collect()
    }

    /// True iff every cell carries positive mass.
    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    pub fn min_cell(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn marginal_x(&self) -> Pmf {
        let probs = self.probs.chunks(self.ny()).map(|r| r.iter().sum()).collect();
        Pmf {
            alphabet: self.alphabet_x.clone(),
            probs,
        }
    }

    pub fn marginal_y(&self) -> Pmf {
        let ny = self.ny();
        let mut probs = vec![0.0; ny];
        for row in self.probs.chunks(ny) {
            for (acc, p) in probs.iter_mut().zip(row) {
                *acc += p;
            }
        }
        Pmf {
            alphabet: self.alphabet_y.clone(),
            probs,
        }
    }

    pub fn same_alphabets(&self, other: &JointPmf) -> bool {
        self.nx() == other.nx() && self.ny() == other.ny()
    }
}

impl Distribution for JointPmf {
    fn shape(&self) -> (usize, usize) {
        (self.nx(), self.ny())
    }

    fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Row and column marginals of a joint pmf.
pub fn marginals(j: &JointPmf) -> (Pmf, Pmf) {
    (j.marginal_x(), j.marginal_y())
}

fn check_shapes<A: Distribution + ?Sized, B: Distribution + ?Sized>(a: &A, b: &B) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(ProbError::AlphabetMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// `D(p || q)` in nats over raw cells, with `0 ln 0 = 0`.
pub(crate) fn kl_cells(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut d = 0.0;
    for (cell, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(ProbError::UnsupportedMass { cell });
            }
            d += a * (a / b).ln();
        }
    }
    Ok(d.max(0.0))
}

/// Kullback-Leibler divergence `D(p || q)` in nats.
pub fn kl_divergence<D: Distribution + ?Sized>(p: &D, q: &D) -> Result<f64> {
    check_shapes(p, q)?;
    kl_cells(p.probs(), q.probs())
}

/// Integer counts of an observed sequence (or sequence pair), laid out like
/// the matching pmf. A single-source type has shape `(size, 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmpiricalType {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
    total: u64,
}

impl EmpiricalType {
    pub fn from_counts(rows: usize, cols: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != rows * cols {
            return Err(ProbError::LengthMismatch(format!(
                "{} counts for shape {rows}x{cols}",
                counts.len()
            )));
        }
        let total = counts.iter().sum();
        if total == 0 {
            return Err(ProbError::LengthMismatch("empty type".into()));
        }
        Ok(Self {
            rows,
            cols,
            counts,
            total,
        })
    }

    pub fn of_sequence(seq: &[usize], size: usize) -> Result<Self> {
        if seq.is_empty() {
            return Err(ProbError::LengthMismatch("empty sequence".into()));
        }
        let mut counts = vec![0u64; size];
        for &s in seq {
            *counts
                .get_mut(s)
                .ok_or(ProbError::SymbolOutOfRange { symbol: s, size })? += 1;
        }
        Self::from_counts(size, 1, counts)
    }

    pub fn of_pairs(xs: &[usize], ys: &[usize], size_x: usize, size_y: usize) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(ProbError::LengthMismatch(format!(
                "x has length {}, y has length {}",
                xs.len(),
                ys.len()
            )));
        }
        if xs.is_empty() {
            return Err(ProbError::LengthMismatch("empty sequence".into()));
        }
        let mut counts = vec![0u64; size_x * size_y];
        for (&x, &y) in xs.iter().zip(ys) {
            if x >= size_x {
                return Err(ProbError::SymbolOutOfRange { symbol: x, size: size_x });
            }
            if y >= size_y {
                return Err(ProbError::SymbolOutOfRange { symbol: y, size: size_y });
            }
            counts[x * size_y + y] += 1;
        }
        Self::from_counts(size_x, size_y, counts)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.total as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Cell-wise sum, i.e. the type of the concatenated sequences.
    pub fn merged(&self, other: &EmpiricalType) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(ProbError::AlphabetMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        let counts = self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect();
        Self::from_counts(self.rows, self.cols, counts)
    }
}

/// Type of `seq_x`, or the joint type of `(seq_x, seq_y)` when `seq_y` is given.
pub fn empirical_type(
    seq_x: &[usize],
    size_x: usize,
    seq_y: Option<(&[usize], usize)>,
) -> Result<EmpiricalType> {
    match seq_y {
        None => EmpiricalType::of_sequence(seq_x, size_x),
        Some((ys, size_y)) => EmpiricalType::of_pairs(seq_x, ys, size_x, size_y),
    }
}

/// Max-norm distance between the frequencies of `t` and the cells of `p`.
pub fn linf_distance<D: Distribution + ?Sized>(t: &EmpiricalType, p: &D) -> Result<f64> {
    if t.shape() != p.shape() {
        return Err(ProbError::AlphabetMismatch {
            left: t.shape(),
            right: p.shape(),
        });
    }
    Ok(linf_counts(&t.counts, t.total, p.probs()))
}

#[inline]
pub(crate) fn linf_counts(counts: &[u64], total: u64, probs: &[f64]) -> f64 {
    let n = total as f64;
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| (c as f64 / n - p).abs())
        .fold(0.0, f64::max)
}

/// Table of `ln n!` for `n <= max`, built by cumulative summation.
#[derive(Debug, Clone)]
pub struct LnFactorial {
    table: Vec<f64>,
}

impl LnFactorial {
    pub fn new(max: usize) -> Self {
        let mut table = Vec::with_capacity(max + 1);
        table.push(0.0);
        let mut acc = 0.0;
        for i in 1..=max {
            acc += (i as f64).ln();
            table.push(acc);
        }
        Self { table }
    }

    pub fn max(&self) -> usize {
        self.table.len() - 1
    }

    #[inline]
    pub fn ln_factorial(&self, n: usize) -> f64 {
        self.table[n]
    }

    #[inline]
    pub fn ln_binomial(&self, n: usize, k: usize) -> f64 {
        self.table[n] - self.table[k] - self.table[n - k]
    }

    /// `ln P(counts)` for i.i.d. draws from `probs`.
    pub(crate) fn ln_multinomial(&self, counts: &[u64], probs: &[f64]) -> Result<f64> {
        let total: u64 = counts.iter().sum();
        let mut acc = self.ln_factorial(total as usize);
        for (cell, (&c, &p)) in counts.iter().zip(probs).enumerate() {
            if c == 0 {
                continue;
            }
            if p <= 0.0 {
                return Err(ProbError::UnsupportedMass { cell });
            }
            acc += c as f64 * p.ln() - self.ln_factorial(c as usize);
        }
        Ok(acc)
    }
}

/// Log-probability of observing exactly the counts `t` in `t.total()` i.i.d.
/// draws from `p` (multinomial coefficient times the product of cell powers).
pub fn log_multinomial_weight<D: Distribution + ?Sized>(t: &EmpiricalType, p: &D) -> Result<f64> {
    if t.shape() != p.shape() {
        return Err(ProbError::AlphabetMismatch {
            left: t.shape(),
            right: p.shape(),
        });
    }
    LnFactorial::new(t.total as usize).ln_multinomial(&t.counts, p.probs())
}

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 - exp(x))` for `x <= 0`.
#[inline]
pub fn ln_one_minus_exp(x: f64) -> f64 {
    if x >= 0.0 {
        f64::NEG_INFINITY
    } else if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Log-sum-exp over a slice, reduced in slice order.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pmf(v: &[f64]) -> Pmf {
        Pmf::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kl_examples() {
        let p = pmf(&[0.3, 0.7]);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let d = kl_divergence(&pmf(&[1.0, 0.0]), &pmf(&[0.5, 0.5])).unwrap();
        assert_abs_diff_eq!(d, std::f64::consts::LN_2, epsilon = 1e-15);
        let d = kl_divergence(&pmf(&[0.9, 0.1]), &pmf(&[0.5, 0.5])).unwrap();
        assert_abs_diff_eq!(d, 0.368_064_207_168_497_07, epsilon = 1e-15);
    }

    #[test]
    fn kl_errors() {
        let err = kl_divergence(&pmf(&[0.5, 0.5]), &pmf(&[1.0, 0.0])).unwrap_err();
        assert_eq!(err, ProbError::UnsupportedMass { cell: 1 });
        let err = kl_divergence(&pmf(&[0.5, 0.5]), &pmf(&[0.2, 0.3, 0.5])).unwrap_err();
        assert!(matches!(err, ProbError::AlphabetMismatch { .. }));
    }

    #[test]
    fn constructor_tolerance() {
        let p = Pmf::new(vec![0.5, 0.5 + 5e-10]).unwrap();
        assert_eq!(p.probs().iter().sum::<f64>(), 1.0);
        assert!(matches!(Pmf::new(vec![0.5, 0.51]), Err(ProbError::NotNormalized { .. })));
        assert!(matches!(
            Pmf::new(vec![1.5, -0.5]),
            Err(ProbError::InvalidProbability { cell: 1, .. })
        ));
        assert!(Alphabet::with_labels(vec!["a".into(), "a".into()]).is_err());
        assert!(Alphabet::new(0).is_err());
    }

    #[test]
    fn marginal_examples() {
        let (mx, my) = marginals(&JointPmf::uniform(2, 2).unwrap());
        assert_eq!(mx.probs(), &[0.5, 0.5]);
        assert_eq!(my.probs(), &[0.5, 0.5]);
        let j = JointPmf::from_rows(&[vec![0.4, 0.1], vec![0.1, 0.4]]).unwrap();
        let (mx, my) = marginals(&j);
        assert_eq!(mx.probs(), &[0.5, 0.5]);
        assert_eq!(my.probs(), &[0.5, 0.5]);
        let j = JointPmf::from_rows(&[vec![0.5, 0.2], vec![0.1, 0.2]]).unwrap();
        let (mx, my) = marginals(&j);
        assert_abs_diff_eq!(mx.probs()[0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(mx.probs()[1], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(my.probs()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(my.probs()[1], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn strict_positivity_flag() {
        assert!(JointPmf::uniform(2, 3).unwrap().is_strictly_positive());
        let j = JointPmf::from_rows(&[vec![0.5, 0.0], vec![0.25, 0.25]]).unwrap();
        assert!(!j.is_strictly_positive());
        assert_eq!(j.min_cell(), 0.0);
    }

    #[test]
    fn empirical_type_examples() {
        let t = empirical_type(&[0, 0, 0, 1], 2, None).unwrap();
        assert_eq!(t.counts(), &[3, 1]);
        assert_eq!(t.total(), 4);
        let t = empirical_type(&[0, 1], 2, Some((&[1, 1], 2))).unwrap();
        assert_eq!(t.counts(), &[0, 1, 0, 1]);
        assert_eq!(t.total(), 2);
        assert!(matches!(
            empirical_type(&[], 2, None),
            Err(ProbError::LengthMismatch(_))
        ));
        assert!(matches!(
            empirical_type(&[0, 1], 2, Some((&[1], 2))),
            Err(ProbError::LengthMismatch(_))
        ));
        assert!(matches!(
            empirical_type(&[0, 2], 2, None),
            Err(ProbError::SymbolOutOfRange { symbol: 2, size: 2 })
        ));
    }

    #[test]
    fn linf_examples() {
        let half = pmf(&[0.5, 0.5]);
        let t = EmpiricalType::of_sequence(&[0, 1], 2).unwrap();
        assert_eq!(linf_distance(&t, &half).unwrap(), 0.0);
        let t = EmpiricalType::of_sequence(&[0, 0, 0, 1], 2).unwrap();
        assert_eq!(linf_distance(&t, &half).unwrap(), 0.25);
        let t = EmpiricalType::of_pairs(&[0, 1], &[0, 1], 2, 2).unwrap();
        assert_eq!(linf_distance(&t, &JointPmf::uniform(2, 2).unwrap()).unwrap(), 0.25);
        assert!(linf_distance(&t, &half).is_err());
    }

    #[test]
    fn multinomial_examples() {
        let t = EmpiricalType::from_counts(2, 1, vec![2, 0]).unwrap();
        assert_eq!(log_multinomial_weight(&t, &pmf(&[1.0, 0.0])).unwrap(), 0.0);
        let t = EmpiricalType::from_counts(2, 1, vec![1, 1]).unwrap();
        assert_abs_diff_eq!(
            log_multinomial_weight(&t, &half()).unwrap(),
            0.5f64.ln(),
            epsilon = 1e-15
        );
        let t = EmpiricalType::from_counts(2, 1, vec![3, 1]).unwrap();
        assert_abs_diff_eq!(
            log_multinomial_weight(&t, &pmf(&[0.9, 0.1])).unwrap(),
            -1.232_372_278_847_634,
            epsilon = 1e-14
        );
        let t = EmpiricalType::from_counts(2, 1, vec![1, 1]).unwrap();
        assert_eq!(
            log_multinomial_weight(&t, &pmf(&[1.0, 0.0])).unwrap_err(),
            ProbError::UnsupportedMass { cell: 1 }
        );
    }

    fn half() -> Pmf {
        pmf(&[0.5, 0.5])
    }

    #[test]
    fn multinomial_weights_sum_to_one() {
        let p = pmf(&[0.3, 0.7]);
        let j = JointPmf::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        for n in 1..=12u64 {
            let single: Vec<f64> = (0..=n)
                .map(|a| {
                    let t = EmpiricalType::from_counts(2, 1, vec![a, n - a]).unwrap();
                    log_multinomial_weight(&t, &p).unwrap()
                })
                .collect();
            assert_abs_diff_eq!(log_sum_exp(&single).exp(), 1.0, epsilon = 1e-10);
            let mut joint = Vec::new();
            for a in 0..=n {
                for b in 0..=n - a {
                    for c in 0..=n - a - b {
                        let t = EmpiricalType::from_counts(2, 2, vec![a, b, c, n - a - b - c]).unwrap();
                        joint.push(log_multinomial_weight(&t, &j).unwrap());
                    }
                }
            }
            assert_abs_diff_eq!(log_sum_exp(&joint).exp(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn log_helpers() {
        assert_abs_diff_eq!(log_add_exp(0.0, 0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, -3.0), -3.0);
        assert_abs_diff_eq!(ln_one_minus_exp((0.25f64).ln()), (0.75f64).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(ln_one_minus_exp(-1e-20), (1e-20f64).ln(), epsilon = 1e-12);
        assert_eq!(ln_one_minus_exp(0.0), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, len).prop_filter_map("nonzero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn kl_nonnegative_and_zero_iff_equal(p in simplex(4), q in simplex(4)) {
            let q: Vec<f64> = q.iter().map(|x| 0.9 * x + 0.025).collect();
            let p = Pmf::new(p).unwrap();
            let q = Pmf::new(q).unwrap();
            let d = kl_divergence(&p, &q).unwrap();
            prop_assert!(d >= 0.0);
            let gap = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if gap > 1e-6 {
                prop_assert!(d > 0.0);
            }
            prop_assert_eq!(kl_divergence(&q, &q).unwrap(), 0.0);
        }

        #[test]
        fn product_marginals_fixed_point(a in simplex(3), b in simplex(2)) {
            let pa = Pmf::new(a).unwrap();
            let pb = Pmf::new(b).unwrap();
            let j = pa.product(&pb);
            let (mx, my) = marginals(&j);
            prop_assert!((mx.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!((my.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let again = mx.product(&my);
            let (mx2, my2) = marginals(&again);
            for (u, v) in mx.probs().iter().zip(mx2.probs()) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
            for (u, v) in my.probs().iter().zip(my2.probs()) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }

        #[test]
        fn type_of_concatenation_is_sum(
            xs in prop::collection::vec(0usize..3, 1..40),
            ys in prop::collection::vec(0usize..3, 1..40),
        ) {
            let whole: Vec<usize> = xs.iter().chain(&ys).copied().collect();
            let t = EmpiricalType::of_sequence(&whole, 3).unwrap();
            let parts = EmpiricalType::of_sequence(&xs, 3).unwrap()
                .merged(&EmpiricalType::of_sequence(&ys, 3).unwrap()).unwrap();
            prop_assert_eq!(t, parts);
        }
    }
}
