//! Sensor / decision-center protocol with stop-feedback.
//!
//! At step `t` the sensor holds `x^{tk}` and sends a message `M_t`; the
//! decision center combines all messages with its side information `y^{tk}`
//! and returns a verdict in `{0, 1, *}`. A `*` verdict sends feedback bit
//! `B_{t+1} = 1` (request `k` more samples), anything else sends
//! `B_{t+1} = 0` and ends the run. The stopping time `T` is the number of
//! requests served.
//!
//! The decision rule is a marginal-typicality test: accept `H0` iff both the
//! x-type and the y-type are within `eta` (max-norm) of `P_X` and `P_Y`.
//! Verdicts depend on the data only through empirical types, which is what
//! lets the exact evaluator in [`crate::harness`] enumerate types instead of
//! sequences.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prob::{linf_counts, Distribution, EmpiricalType, JointPmf, LnFactorial, Pmf, ProbError};

/// Absorbs float noise in `|c/N - p| <= eta` comparisons at lattice points.
pub const TYPICALITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("invalid protocol config: {0}")]
    InvalidConfig(String),
    #[error("bad sequence length: {0}")]
    BadLength(String),
    #[error("inconsistent messages: {0}")]
    InconsistentMessages(String),
    #[error(transparent)]
    Prob(#[from] ProbError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// One bit: is the x-type within `eta` of `P_X`?
    OneBit,
    /// The exact empirical type of `x^{tk}`.
    FullType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Always request `n` times, then decide.
    FixedHorizon,
    /// Like `FixedHorizon`, but reject as soon as the y-type leaves a
    /// shrinking margin `eta * (1 + (n - t) / n)`.
    EarlyDecide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Samples per request.
    pub k: usize,
    /// Request budget; both policies stop by step `n`.
    pub n: usize,
    pub eta: f64,
    pub encoder: EncoderKind,
    pub policy: PolicyKind,
    /// Type-I budget.
    pub epsilon: f64,
}

impl ProtocolConfig {
    pub fn new(
        k: usize,
        n: usize,
        eta: Option<f64>,
        encoder: EncoderKind,
        policy: PolicyKind,
        epsilon: f64,
    ) -> Result<Self> {
        let cfg = Self {
            k,
            n,
            eta: eta.unwrap_or_else(|| Self::default_eta(n, k)),
            encoder,
            policy,
            epsilon,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `max(0.05, 2 sqrt(ln(nk) / nk))`.
    pub fn default_eta(n: usize, k: usize) -> f64 {
        let samples = (n * k).max(1) as f64;
        (2.0 * (samples.ln() / samples).sqrt()).max(0.05)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 {
            return Err(ProtocolError::InvalidConfig(format!(
                "k and n must be positive (k = {}, n = {})",
                self.k, self.n
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(ProtocolError::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ProtocolError::InvalidConfig(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Total samples at the horizon, `N = n k`.
    pub fn horizon_samples(&self) -> usize {
        self.n * self.k
    }

    /// Margin for the early-rejection check at step `t`.
    pub fn early_margin(&self, t: usize) -> f64 {
        let n = self.n as f64;
        self.eta + self.eta * (n - t.min(self.n) as f64) / n
    }

    /// Message-set size at step `t` and the resulting rate `(1/k) ln |M_t|`.
    pub fn zero_rate_report(&self, t: usize, size_x: usize) -> ZeroRateReport {
        let samples = t * self.k;
        let log_count = match self.encoder {
            EncoderKind::OneBit => std::f64::consts::LN_2,
            // Number of types of length tk over |X| symbols: C(tk + |X| - 1, |X| - 1).
            EncoderKind::FullType => {
                let lf = LnFactorial::new(samples + size_x);
                lf.ln_binomial(samples + size_x - 1, size_x - 1)
            }
        };
        ZeroRateReport {
            t,
            k: self.k,
            log_message_count: log_count,
            rate: log_count / self.k as f64,
            polynomial_bound: size_x as f64 * ((samples + 1) as f64).ln() / self.k as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroRateReport {
    pub t: usize,
    pub k: usize,
    /// `ln |M_t|`, counting distinct payloads.
    pub log_message_count: f64,
    /// `(1/k) ln |M_t|`.
    pub rate: f64,
    /// `|X| ln(tk + 1) / k`.
    pub polynomial_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Bit(bool),
    Type(EmpiricalType),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub step: usize,
    pub payload: Payload,
}

/// Per-step output of the decision center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "0")]
    Null,
    #[serde(rename = "1")]
    Alternative,
    #[serde(rename = "*")]
    Continue,
}

impl Verdict {
    pub fn is_final(self) -> bool {
        self != Verdict::Continue
    }

    /// Feedback bit sent after this verdict.
    pub fn feedback_bit(self) -> u8 {
        u8::from(self == Verdict::Continue)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Null => "0",
            Verdict::Alternative => "1",
            Verdict::Continue => "*",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hypothesis::H0 => "H0",
            Hypothesis::H1 => "H1",
        })
    }
}

impl FromStr for Hypothesis {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H0" => Ok(Hypothesis::H0),
            "H1" => Ok(Hypothesis::H1),
            other => Err(ProtocolError::InvalidConfig(format!("unknown hypothesis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Accept,
    Reject,
}

/// Where the samples come from: `P_XY` under `H0`, `Q_XY` under `H1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub hypothesis: Hypothesis,
    pub joint: JointPmf,
    pub rng_seed: u64,
}

impl SourceModel {
    pub fn new(hypothesis: Hypothesis, p: &JointPmf, q: &JointPmf, rng_seed: u64) -> Self {
        let joint = match hypothesis {
            Hypothesis::H0 => p.clone(),
            Hypothesis::H1 => q.clone(),
        };
        Self {
            hypothesis,
            joint,
            rng_seed,
        }
    }
}

/// Inverse-CDF sampler over the cells of a joint pmf.
#[derive(Debug, Clone)]
pub(crate) struct PairSampler {
    cumulative: Vec<f64>,
    last_positive: usize,
    ny: usize,
}

impl PairSampler {
    pub(crate) fn new(joint: &JointPmf) -> Self {
        let mut acc = 0.0;
        let cumulative = joint
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let last_positive = joint.probs().iter().rposition(|&p| p > 0.0).unwrap_or(0);
        Self {
            cumulative,
            last_positive,
            ny: joint.ny(),
        }
    }

    #[inline]
    pub(crate) fn sample<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let u: f64 = rng.gen();
        let cell = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.last_positive);
        (cell / self.ny, cell % self.ny)
    }
}

/// Full record of one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub stopping_time: usize,
    pub messages: Vec<Message>,
    /// `B_2, ..., B_{T+1}`: one per step, `1` while more samples are requested.
    pub feedback_bits: Vec<u8>,
    pub decision: Verdict,
    pub x_seq: Vec<usize>,
    pub y_seq: Vec<usize>,
    pub per_step_verdicts: Vec<Verdict>,
}

impl Trace {
    /// `seed,hypothesis,T,decision`.
    pub fn record_line(&self, seed: u64, hypothesis: Hypothesis) -> String {
        format!("{seed},{hypothesis},{},{}", self.stopping_time, self.decision)
    }
}

/// Parsed form of [`Trace::record_line`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub seed: u64,
    pub hypothesis: Hypothesis,
    pub stopping_time: usize,
    pub decision: Verdict,
}

impl FromStr for TraceRecord {
    type Err = ProtocolError;

    fn from_str(line: &str) -> Result<Self> {
        let bad = || ProtocolError::InvalidConfig(format!("malformed trace record {line:?}"));
        let fields: Vec<&str> = line.trim().split(',').collect();
        let [seed, hyp, t, d] = fields.as_slice() else {
            return Err(bad());
        };
        let decision = match *d {
            "0" => Verdict::Null,
            "1" => Verdict::Alternative,
            _ => return Err(bad()),
        };
        Ok(Self {
            seed: seed.parse().map_err(|_| bad())?,
            hypothesis: hyp.parse()?,
            stopping_time: t.parse().map_err(|_| bad())?,
            decision,
        })
    }
}

/// Result of replaying the protocol on given sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replay {
    pub stopping_time: usize,
    pub decision: Verdict,
}

/// The protocol bound to a configuration and the null hypothesis `P_XY`
/// (whose marginals define typicality).
#[derive(Debug, Clone)]
pub struct Protocol {
    config: ProtocolConfig,
    p_x: Pmf,
    p_y: Pmf,
}

impl Protocol {
    pub fn new(config: ProtocolConfig, p: &JointPmf) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            p_x: p.marginal_x(),
            p_y: p.marginal_y(),
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn size_x(&self) -> usize {
        self.p_x.len()
    }

    pub fn size_y(&self) -> usize {
        self.p_y.len()
    }

    /// x-typicality on raw counts.
    #[inline]
    pub fn x_typical(&self, counts_x: &[u64], total: u64) -> bool {
        linf_counts(counts_x, total, self.p_x.probs()) <= self.config.eta + TYPICALITY_SLACK
    }

    /// y-typicality on raw counts with an explicit margin.
    #[inline]
    pub fn y_within(&self, counts_y: &[u64], total: u64, margin: f64) -> bool {
        linf_counts(counts_y, total, self.p_y.probs()) <= margin + TYPICALITY_SLACK
    }

    /// Verdict at step `t` from the x-typicality flag and cumulative y-counts.
    #[inline]
    pub fn verdict_from_types(&self, t: usize, x_ok: bool, counts_y: &[u64]) -> Verdict {
        let total = (t * self.config.k) as u64;
        if t >= self.config.n {
            if x_ok && self.y_within(counts_y, total, self.config.eta) {
                Verdict::Null
            } else {
                Verdict::Alternative
            }
        } else {
            match self.config.policy {
                PolicyKind::FixedHorizon => Verdict::Continue,
                PolicyKind::EarlyDecide => {
                    if self.y_within(counts_y, total, self.config.early_margin(t)) {
                        Verdict::Continue
                    } else {
                        Verdict::Alternative
                    }
                }
            }
        }
    }

    fn encode_counts(&self, t: usize, counts_x: &[u64]) -> Result<Message> {
        let total = (t * self.config.k) as u64;
        let payload = match self.config.encoder {
            EncoderKind::OneBit => Payload::Bit(self.x_typical(counts_x, total)),
            EncoderKind::FullType => {
                Payload::Type(EmpiricalType::from_counts(self.size_x(), 1, counts_x.to_vec())?)
            }
        };
        Ok(Message { step: t, payload })
    }

    /// Sensor encoder `f_t` applied to `x^{tk}`.
    pub fn encode(&self, x_prefix: &[usize], t: usize) -> Result<Message> {
        if t == 0 || x_prefix.len() != t * self.config.k {
            return Err(ProtocolError::BadLength(format!(
                "step {t} needs {} samples, got {}",
                t * self.config.k,
                x_prefix.len()
            )));
        }
        let ty = EmpiricalType::of_sequence(x_prefix, self.size_x())?;
        self.encode_counts(t, ty.counts())
    }

    fn message_x_typical(&self, msg: &Message) -> bool {
        match &msg.payload {
            Payload::Bit(b) => *b,
            Payload::Type(ty) => self.x_typical(ty.counts(), ty.total()),
        }
    }

    fn check_messages(&self, messages: &[Message], t: usize) -> Result<()> {
        if messages.len() != t {
            return Err(ProtocolError::InconsistentMessages(format!(
                "{} messages at step {t}",
                messages.len()
            )));
        }
        for (i, msg) in messages.iter().enumerate() {
            if msg.step != i + 1 {
                return Err(ProtocolError::InconsistentMessages(format!(
                    "message {i} carries step {}",
                    msg.step
                )));
            }
            match (&msg.payload, self.config.encoder) {
                (Payload::Bit(_), EncoderKind::OneBit) => {}
                (Payload::Type(ty), EncoderKind::FullType) => {
                    if ty.total() != (msg.step * self.config.k) as u64 || ty.shape() != (self.size_x(), 1) {
                        return Err(ProtocolError::InconsistentMessages(format!(
                            "type at step {} has total {} and shape {:?}",
                            msg.step,
                            ty.total(),
                            ty.shape()
                        )));
                    }
                }
                _ => {
                    return Err(ProtocolError::InconsistentMessages(format!(
                        "payload of message {} does not match the {:?} encoder",
                        msg.step, self.config.encoder
                    )))
                }
            }
        }
        Ok(())
    }

    /// Decision function `g_t` on the messages so far and `y^{tk}`.
    pub fn decide(&self, messages: &[Message], y_prefix: &[usize], t: usize) -> Result<Verdict> {
        if t == 0 || y_prefix.len() != t * self.config.k {
            return Err(ProtocolError::BadLength(format!(
                "step {t} needs {} samples, got {}",
                t * self.config.k,
                y_prefix.len()
            )));
        }
        self.check_messages(messages, t)?;
        let y_type = EmpiricalType::of_sequence(y_prefix, self.size_y())?;
        let x_ok = self.message_x_typical(&messages[t - 1]);
        Ok(self.verdict_from_types(t, x_ok, y_type.counts()))
    }

    /// Runs the protocol against a sampled source until a final verdict.
    pub fn run(&self, source: &SourceModel) -> Result<Trace> {
        if source.joint.nx() != self.size_x() || source.joint.ny() != self.size_y() {
            return Err(ProtocolError::Prob(ProbError::AlphabetMismatch {
                left: source.joint.shape(),
                right: (self.size_x(), self.size_y()),
            }));
        }
        let k = self.config.k;
        let sampler = PairSampler::new(&source.joint);
        let mut rng = ChaCha8Rng::seed_from_u64(source.rng_seed);
        let mut counts_x = vec![0u64; self.size_x()];
        let mut counts_y = vec![0u64; self.size_y()];
        let cap = self.config.horizon_samples();
        let mut x_seq = Vec::with_capacity(cap);
        let mut y_seq = Vec::with_capacity(cap);
        let mut messages = Vec::new();
        let mut feedback_bits = Vec::new();
        let mut verdicts = Vec::new();

        let mut t = 0;
        loop {
            t += 1;
            for _ in 0..k {
                let (x, y) = sampler.sample(&mut rng);
                counts_x[x] += 1;
                counts_y[y] += 1;
                x_seq.push(x);
                y_seq.push(y);
            }
            let msg = self.encode_counts(t, &counts_x)?;
            let x_ok = self.message_x_typical(&msg);
            messages.push(msg);
            let verdict = self.verdict_from_types(t, x_ok, &counts_y);
            verdicts.push(verdict);
            feedback_bits.push(verdict.feedback_bit());
            if verdict.is_final() {
                return Ok(Trace {
                    stopping_time: t,
                    messages,
                    feedback_bits,
                    decision: verdict,
                    x_seq,
                    y_seq,
                    per_step_verdicts: verdicts,
                });
            }
        }
    }

    /// Same run as [`Protocol::run`] with the same seed, keeping only
    /// `(T, decision)`.
    pub(crate) fn run_outcome(&self, sampler: &PairSampler, rng_seed: u64) -> (usize, Verdict) {
        let k = self.config.k;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut counts_x = vec![0u64; self.size_x()];
        let mut counts_y = vec![0u64; self.size_y()];
        let mut t = 0;
        loop {
            t += 1;
            for _ in 0..k {
                let (x, y) = sampler.sample(&mut rng);
                counts_x[x] += 1;
                counts_y[y] += 1;
            }
            let total = (t * k) as u64;
            // Both encoders yield the same typicality flag at the decoder.
            let x_ok = self.x_typical(&counts_x, total);
            let verdict = self.verdict_from_types(t, x_ok, &counts_y);
            if verdict.is_final() {
                return (t, verdict);
            }
        }
    }

    /// Replays the protocol on given sequences, reading only as many
    /// samples as the run consumes. Errors if the sequences end before a
    /// final verdict.
    pub fn replay(&self, x: &[usize], y: &[usize]) -> Result<Replay> {
        if x.len() != y.len() {
            return Err(ProtocolError::BadLength(format!(
                "x has length {}, y has length {}",
                x.len(),
                y.len()
            )));
        }
        let k = self.config.k;
        let mut counts_x = vec![0u64; self.size_x()];
        let mut counts_y = vec![0u64; self.size_y()];
        let mut t = 0;
        loop {
            t += 1;
            let (lo, hi) = ((t - 1) * k, t * k);
            if hi > x.len() {
                return Err(ProtocolError::BadLength(format!(
                    "sequences end at {} samples before a verdict at step {t}",
                    x.len()
                )));
            }
            for i in lo..hi {
                *counts_x
                    .get_mut(x[i])
                    .ok_or(ProbError::SymbolOutOfRange { symbol: x[i], size: self.size_x() })? += 1;
                *counts_y
                    .get_mut(y[i])
                    .ok_or(ProbError::SymbolOutOfRange { symbol: y[i], size: self.size_y() })? += 1;
            }
            let msg = self.encode_counts(t, &counts_x)?;
            let verdict = self.verdict_from_types(t, self.message_x_typical(&msg), &counts_y);
            if verdict.is_final() {
                return Ok(Replay {
                    stopping_time: t,
                    decision: verdict,
                });
            }
        }
    }

    /// Membership of `(x^{Tk}, y^{Tk})` in the acceptance or rejection region.
    /// The sequences must have exactly the length at which the protocol stops.
    pub fn acceptance_region_membership(&self, x_full: &[usize], y_full: &[usize]) -> Result<Region> {
        let replay = self.replay(x_full, y_full)?;
        let used = replay.stopping_time * self.config.k;
        if used != x_full.len() {
            return Err(ProtocolError::BadLength(format!(
                "protocol stops after {used} samples but {} were given",
                x_full.len()
            )));
        }
        Ok(match replay.decision {
            Verdict::Null => Region::Accept,
            _ => Region::Reject,
        })
    }
}

/// Runs one protocol instance; see [`Protocol::run`].
pub fn run_protocol(config: &ProtocolConfig, p: &JointPmf, source: &SourceModel) -> Result<Trace> {
    Protocol::new(*config, p)?.run(source)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary_p(px0: f64, py0: f64) -> JointPmf {
        Pmf::new(vec![px0, 1.0 - px0])
            .unwrap()
            .product(&Pmf::new(vec![py0, 1.0 - py0]).unwrap())
    }

    fn config(k: usize, n: usize, eta: f64, encoder: EncoderKind, policy: PolicyKind) -> ProtocolConfig {
        ProtocolConfig::new(k, n, Some(eta), encoder, policy, 0.05).unwrap()
    }

    #[test]
    fn encode_examples() {
        let p = binary_p(0.75, 0.5);
        let one = Protocol::new(config(4, 1, 0.1, EncoderKind::OneBit, PolicyKind::FixedHorizon), &p).unwrap();
        assert_eq!(one.encode(&[0, 0, 0, 1], 1).unwrap().payload, Payload::Bit(true));
        assert_eq!(one.encode(&[1, 1, 1, 1], 1).unwrap().payload, Payload::Bit(false));
        let full = Protocol::new(config(4, 1, 0.1, EncoderKind::FullType, PolicyKind::FixedHorizon), &p).unwrap();
        match full.encode(&[0, 0, 0, 1], 1).unwrap().payload {
            Payload::Type(ty) => assert_eq!(ty.counts(), &[3, 1]),
            other => panic!("{other:?}"),
        }
        assert!(matches!(one.encode(&[0, 0, 1], 1), Err(ProtocolError::BadLength(_))));
        assert!(matches!(one.encode(&[], 0), Err(ProtocolError::BadLength(_))));
    }

    #[test]
    fn decide_examples() {
        let p = binary_p(0.5, 0.5);
        let proto = Protocol::new(config(2, 5, 0.25, EncoderKind::OneBit, PolicyKind::FixedHorizon), &p).unwrap();
        let msgs = vec![Message { step: 1, payload: Payload::Bit(true) }];
        assert_eq!(proto.decide(&msgs, &[0, 1], 1).unwrap(), Verdict::Continue);

        let proto = Protocol::new(config(2, 1, 0.25, EncoderKind::OneBit, PolicyKind::FixedHorizon), &p).unwrap();
        assert_eq!(proto.decide(&msgs, &[0, 1], 1).unwrap(), Verdict::Null);
        let bad_x = vec![Message { step: 1, payload: Payload::Bit(false) }];
        for y in [[0, 1], [0, 0], [1, 1]] {
            assert_eq!(proto.decide(&bad_x, &y, 1).unwrap(), Verdict::Alternative);
        }
    }

    #[test]
    fn decide_rejects_inconsistent_messages() {
        let p = binary_p(0.5, 0.5);
        let proto = Protocol::new(config(2, 3, 0.25, EncoderKind::OneBit, PolicyKind::FixedHorizon), &p).unwrap();
        let bit = |s| Message { step: s, payload: Payload::Bit(true) };
        assert!(matches!(
            proto.decide(&[bit(1)], &[0, 1, 0, 1], 2),
            Err(ProtocolError::InconsistentMessages(_))
        ));
        assert!(matches!(
            proto.decide(&[bit(2), bit(1)], &[0, 1, 0, 1], 2),
            Err(ProtocolError::InconsistentMessages(_))
        ));
        let ty = Message {
            step: 1,
            payload: Payload::Type(EmpiricalType::from_counts(2, 1, vec![1, 1]).unwrap()),
        };
        assert!(matches!(
            proto.decide(&[ty], &[0, 1], 1),
            Err(ProtocolError::InconsistentMessages(_))
        ));
        let full = Protocol::new(config(2, 3, 0.25, EncoderKind::FullType, PolicyKind::FixedHorizon), &p).unwrap();
        let wrong_total = Message {
            step: 1,
            payload: Payload::Type(EmpiricalType::from_counts(2, 1, vec![2, 1]).unwrap()),
        };
        assert!(matches!(
            full.decide(&[wrong_total], &[0, 1], 1),
            Err(ProtocolError::InconsistentMessages(_))
        ));
    }

    #[test]
    fn early_decide_rejects_on_y_only() {
        let p = binary_p(0.5, 0.5);
        let proto = Protocol::new(config(4, 4, 0.1, EncoderKind::OneBit, PolicyKind::EarlyDecide), &p).unwrap();
        // t = 1: margin 0.1 + 0.075 = 0.175; y-type (1, 0) is 0.5 away.
        let msgs = vec![Message { step: 1, payload: Payload::Bit(true) }];
        assert_eq!(proto.decide(&msgs, &[0, 0, 0, 0], 1).unwrap(), Verdict::Alternative);
        assert_eq!(proto.decide(&msgs, &[0, 1, 0, 1], 1).unwrap(), Verdict::Continue);
        assert!((proto.config().early_margin(1) - 0.175).abs() < 1e-15);
        assert_eq!(proto.config().early_margin(4), 0.1);
    }

    #[test]
    fn fixed_horizon_run_shape() {
        let p = binary_p(0.7, 0.4);
        let proto = Protocol::new(config(5, 3, 0.2, EncoderKind::FullType, PolicyKind::FixedHorizon), &p).unwrap();
        let trace = proto.run(&SourceModel::new(Hypothesis::H0, &p, &p, 7)).unwrap();
        assert_eq!(trace.stopping_time, 3);
        assert_eq!(trace.feedback_bits, vec![1, 1, 0]);
        assert_eq!(trace.x_seq.len(), 15);
        assert_eq!(trace.messages.len(), 3);
        assert_eq!(trace.per_step_verdicts[..2], [Verdict::Continue, Verdict::Continue]);
        assert_eq!(trace.decision, trace.per_step_verdicts[2]);
        for (i, m) in trace.messages.iter().enumerate() {
            match &m.payload {
                Payload::Type(ty) => assert_eq!(ty.total(), ((i + 1) * 5) as u64),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn wide_margin_always_accepts_typical_x() {
        let p = binary_p(0.5, 0.3);
        let q = JointPmf::uniform(2, 2).unwrap();
        let proto = Protocol::new(config(1, 1, 1.0, EncoderKind::OneBit, PolicyKind::FixedHorizon), &p).unwrap();
        for seed in 0..50 {
            let trace = proto.run(&SourceModel::new(Hypothesis::H1, &p, &q, seed)).unwrap();
            assert_eq!(trace.decision, Verdict::Null);
        }
    }

    #[test]
    fn seeded_runs_replay_identically() {
        let p = binary_p(0.6, 0.3);
        let q = JointPmf::uniform(2, 2).unwrap();
        let proto = Protocol::new(config(3, 6, 0.2, EncoderKind::FullType, PolicyKind::EarlyDecide), &p).unwrap();
        let src = SourceModel::new(Hypothesis::H1, &p, &q, 99);
        let a = serde_json::to_vec(&proto.run(&src).unwrap()).unwrap();
        let b = serde_json::to_vec(&proto.run(&src).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn membership_examples() {
        let p = binary_p(0.5, 0.5);
        let proto = Protocol::new(config(2, 1, 0.25, EncoderKind::OneBit, PolicyKind::FixedHorizon), &p).unwrap();
        assert_eq!(proto.acceptance_region_membership(&[0, 1], &[1, 0]).unwrap(), Region::Accept);
        assert_eq!(proto.acceptance_region_membership(&[0, 0], &[0, 1]).unwrap(), Region::Reject);
        assert!(matches!(
            proto.acceptance_region_membership(&[0, 1, 1], &[1, 0, 0]),
            Err(ProtocolError::BadLength(_))
        ));
        let mut accepted = Vec::new();
        for code in 0..16usize {
            let x = [code & 1, (code >> 1) & 1];
            let y = [(code >> 2) & 1, (code >> 3) & 1];
            if proto.acceptance_region_membership(&x, &y).unwrap() == Region::Accept {
                accepted.push((x, y));
            }
        }
        assert_eq!(accepted.len(), 4);
        for (x, y) in accepted {
            assert!(x == [0, 1] || x == [1, 0]);
            assert!(y == [0, 1] || y == [1, 0]);
        }
    }

    #[test]
    fn zero_rate_report_shrinks_with_k() {
        let mut last = f64::INFINITY;
        for k in [10, 100, 1000] {
            let cfg = config(k, 4, 0.1, EncoderKind::FullType, PolicyKind::FixedHorizon);
            let rep = cfg.zero_rate_report(2, 3);
            assert!(rep.rate < last);
            assert!(rep.rate <= rep.polynomial_bound);
            last = rep.rate;
        }
        // C(2 + 1, 1) = 3 types of length 2 over a binary alphabet.
        let cfg = config(1, 4, 0.1, EncoderKind::FullType, PolicyKind::FixedHorizon);
        assert!((cfg.zero_rate_report(2, 2).log_message_count - 3f64.ln()).abs() < 1e-12);
        let cfg = config(10, 4, 0.1, EncoderKind::OneBit, PolicyKind::FixedHorizon);
        assert!((cfg.zero_rate_report(3, 5).rate - std::f64::consts::LN_2 / 10.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(ProtocolConfig::new(0, 1, None, EncoderKind::OneBit, PolicyKind::FixedHorizon, 0.1).is_err());
        assert!(ProtocolConfig::new(1, 1, Some(0.0), EncoderKind::OneBit, PolicyKind::FixedHorizon, 0.1).is_err());
        assert!(ProtocolConfig::new(1, 1, None, EncoderKind::OneBit, PolicyKind::FixedHorizon, 1.0).is_err());
        let cfg = ProtocolConfig::new(10, 25, None, EncoderKind::OneBit, PolicyKind::FixedHorizon, 0.1).unwrap();
        let expected = (2.0 * (250f64.ln() / 250.0).sqrt()).max(0.05);
        assert_eq!(cfg.eta, expected);
        assert_eq!(ProtocolConfig::default_eta(1, 1), 0.05);
        assert_eq!(ProtocolConfig::default_eta(1_000_000, 1000), 0.05);
    }

    #[test]
    fn record_line_round_trip() {
        let p = binary_p(0.6, 0.3);
        let proto = Protocol::new(config(3, 2, 0.2, EncoderKind::OneBit, PolicyKind::FixedHorizon), &p).unwrap();
        let trace = proto.run(&SourceModel::new(Hypothesis::H0, &p, &p, 5)).unwrap();
        let line = trace.record_line(5, Hypothesis::H0);
        let rec: TraceRecord = line.parse().unwrap();
        assert_eq!(rec.seed, 5);
        assert_eq!(rec.hypothesis, Hypothesis::H0);
        assert_eq!(rec.stopping_time, 2);
        assert_eq!(rec.decision, trace.decision);
        assert!("1,H2,3,0".parse::<TraceRecord>().is_err());
        assert!("1,H0,3,*".parse::<TraceRecord>().is_err());
    }
}
