//! Seeded Monte Carlo estimates of `alpha`, `beta` and `E[T]`.
//!
//! Trial `i` under hypothesis `h` runs on its own ChaCha8 stream seeded by
//! [`trial_seed`], and all reductions are integer counts, so results are
//! bit-identical for any rayon thread count. A single trial can be
//! reproduced in full with [`Protocol::run`] and that seed.

use rayon::prelude::*;

use super::{ErrorReport, HarnessError, Method, Result};
use crate::prob::JointPmf;
use crate::protocol::{Hypothesis, PairSampler, Protocol, ProtocolConfig, Verdict};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG seed of trial `trial` under `hypothesis` for base seed `base`.
pub fn trial_seed(base: u64, hypothesis: Hypothesis, trial: u64) -> u64 {
    let tag = match hypothesis {
        Hypothesis::H0 => 0x4830_0000_0000_0000,
        Hypothesis::H1 => 0x4831_0000_0000_0000,
    };
    splitmix64(splitmix64(base ^ tag) ^ trial)
}

/// Wilson score half-width for `successes` out of `trials` at quantile `z`.
pub fn wilson_half_width(successes: u64, trials: u64, z: f64) -> f64 {
    if trials == 0 {
        return f64::NAN;
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n)
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    accepted: u64,
    total_t: u64,
}

fn simulate(proto: &Protocol, joint: &JointPmf, hyp: Hypothesis, trials: u64, seed: u64) -> Tally {
    let sampler = PairSampler::new(joint);
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let (t, verdict) = proto.run_outcome(&sampler, trial_seed(seed, hyp, i));
            Tally {
                accepted: u64::from(verdict == Verdict::Null),
                total_t: t as u64,
            }
        })
        .reduce(Tally::default, |a, b| Tally {
            accepted: a.accepted + b.accepted,
            total_t: a.total_t + b.total_t,
        })
}

/// Estimates `alpha` under `P` and `beta` under `Q` from `trials` runs each.
pub fn monte_carlo_errors(
    config: &ProtocolConfig,
    p: &JointPmf,
    q: &JointPmf,
    trials: usize,
    seed: u64,
) -> Result<ErrorReport> {
    if trials == 0 {
        return Err(HarnessError::Invalid("trials must be positive".into()));
    }
    if !p.same_alphabets(q) {
        return Err(HarnessError::Invalid("P and Q have different alphabets".into()));
    }
    let proto = Protocol::new(*config, p)?;
    let n = trials as u64;
    let h0 = simulate(&proto, p, Hypothesis::H0, n, seed);
    let h1 = simulate(&proto, q, Hypothesis::H1, n, seed);

    let rejected = n - h0.accepted;
    let mut report = ErrorReport::new(config, Method::MonteCarlo);
    report.alpha = rejected as f64 / n as f64;
    report.beta = h1.accepted as f64 / n as f64;
    report.ln_alpha = report.alpha.ln();
    report.ln_beta = report.beta.ln();
    report.e_t_h0 = h0.total_t as f64 / n as f64;
    report.e_t_h1 = h1.total_t as f64 / n as f64;
    report.trials = trials;
    report.ci_alpha = wilson_half_width(rejected, n, Z95);
    report.ci_beta = wilson_half_width(h1.accepted, n, Z95);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::exact_errors;
    use crate::protocol::{EncoderKind, PolicyKind, SourceModel};

    fn instance() -> (JointPmf, JointPmf) {
        (
            JointPmf::from_rows(&[vec![0.5, 0.2], vec![0.1, 0.2]]).unwrap(),
            JointPmf::from_rows(&[vec![0.1, 0.3], vec![0.4, 0.2]]).unwrap(),
        )
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = trial_seed(7, Hypothesis::H0, 0);
        assert_eq!(a, trial_seed(7, Hypothesis::H0, 0));
        assert_ne!(a, trial_seed(7, Hypothesis::H1, 0));
        assert_ne!(a, trial_seed(7, Hypothesis::H0, 1));
        assert_ne!(a, trial_seed(8, Hypothesis::H0, 0));
    }

    #[test]
    fn wilson_reference_values() {
        // 50/100 at z = 1.96: half-width 0.0960 (Wilson interval 0.4038..0.5962).
        let h = wilson_half_width(50, 100, Z95);
        assert!((h - 0.0961).abs() < 2e-4, "{h}");
        assert!(wilson_half_width(0, 100, Z95) > 0.0);
        assert!(wilson_half_width(0, 0, Z95).is_nan());
    }

    #[test]
    fn zero_trials_rejected() {
        let (p, q) = instance();
        let cfg = ProtocolConfig::new(2, 3, Some(0.1), EncoderKind::OneBit, PolicyKind::FixedHorizon, 0.05).unwrap();
        assert!(matches!(monte_carlo_errors(&cfg, &p, &q, 0, 1), Err(HarnessError::Invalid(_))));
    }

    #[test]
    fn agrees_with_exact_within_ci() {
        let (p, q) = instance();
        let cfg = ProtocolConfig::new(4, 5, Some(0.12), EncoderKind::OneBit, PolicyKind::FixedHorizon, 0.05).unwrap();
        let exact = exact_errors(&cfg, &p, &q).unwrap();
        let mc = monte_carlo_errors(&cfg, &p, &q, 20_000, 3).unwrap();
        assert!((mc.beta - exact.beta).abs() <= 3.0 * mc.ci_beta);
        assert!((mc.alpha - exact.alpha).abs() <= 3.0 * mc.ci_alpha);
        assert_eq!(mc.e_t_h0, 5.0);
    }

    #[test]
    fn trial_reproducible_from_its_seed() {
        let (p, q) = instance();
        let cfg = ProtocolConfig::new(3, 6, Some(0.1), EncoderKind::FullType, PolicyKind::EarlyDecide, 0.05).unwrap();
        let proto = Protocol::new(cfg, &p).unwrap();
        let sampler = PairSampler::new(&q);
        for i in 0..50 {
            let s = trial_seed(11, Hypothesis::H1, i);
            let trace = proto.run(&SourceModel::new(Hypothesis::H1, &p, &q, s)).unwrap();
            assert_eq!(proto.run_outcome(&sampler, s), (trace.stopping_time, trace.decision));
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (p, q) = instance();
        let cfg = ProtocolConfig::new(3, 6, Some(0.1), EncoderKind::OneBit, PolicyKind::EarlyDecide, 0.05).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| monte_carlo_errors(&cfg, &p, &q, 5_000, 99).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
