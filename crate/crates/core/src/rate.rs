//! Expected secret key rate `r = (1 - eps_rob) ell / M(n, k)` for a
//! depolarizing channel.

use rand::Rng;
use rayon::prelude::*;

use crate::bounds::{self, leak_model, ProtocolParams};
use crate::entropy::truncated_entropy;
use crate::rng::{blocks, substream};
use crate::stats::binomial_tail_gt;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    /// Bit error rate `Q`, the same in both bases.
    pub qber: f64,
    pub detection_prob: f64,
}

impl ChannelModel {
    pub fn depolarizing(qber: f64) -> Self {
        ChannelModel { qber, detection_prob: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.qber) {
            return Err(Error::domain(format!("QBER {} outside [0, 1/2]", self.qber)));
        }
        if !(self.detection_prob > 0.0 && self.detection_prob <= 1.0) {
            return Err(Error::domain(format!(
                "detection probability {} outside (0, 1]",
                self.detection_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyLengthMethod {
    /// Closed form with the fixed secrecy split.
    #[default]
    Corollary,
    /// Optimized over the secrecy split.
    General,
}

impl KeyLengthMethod {
    pub fn key_length(self, p: &ProtocolParams) -> Result<u64> {
        match self {
            KeyLengthMethod::Corollary => bounds::key_length_corollary(p),
            KeyLengthMethod::General => bounds::key_length_general(p).map(|(ell, _)| ell),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateResult {
    pub rate: f64,
    pub ell: u64,
    pub m_expected: f64,
    pub eps_rob: f64,
    pub p_x: f64,
    pub p_z: f64,
    pub leak_ec: f64,
}

/// Basis probabilities `p_x = 1 / (1 + sqrt(k/n))`, `p_z = 1 - p_x`.
pub fn basis_probs(n: u64, k: u64) -> (f64, f64) {
    let p_x = 1.0 / (1.0 + (k as f64 / n as f64).sqrt());
    (p_x, 1.0 - p_x)
}

/// `M(n, k) = max(n / p_x^2, k / p_z^2) / detection_prob`, which equals
/// `(sqrt n + sqrt k)^2 / detection_prob` at the optimal `p_x`.
pub fn expected_signals(n: u64, k: u64, detection_prob: f64) -> f64 {
    let (p_x, p_z) = basis_probs(n, k);
    let rounds = (n as f64 / (p_x * p_x)).max(k as f64 / (p_z * p_z));
    rounds / detection_prob
}

/// Monte Carlo estimate of the expected stopping time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub trials: u64,
}

/// Simulates sifting round by round until `|X| >= n` and `|Z| >= k`, and
/// averages the number of rounds.
pub fn expected_signals_mc(
    n: u64,
    k: u64,
    detection_prob: f64,
    trials: u64,
    seed: u64,
) -> Result<SignalEstimate> {
    if n == 0 || k == 0 || trials == 0 {
        return Err(Error::domain("n, k and trials must be positive"));
    }
    if !(detection_prob > 0.0 && detection_prob <= 1.0) {
        return Err(Error::domain("detection probability outside (0, 1]"));
    }
    let (p_x, p_z) = basis_probs(n, k);
    let sift_x = p_x * p_x * detection_prob;
    let sift_z = sift_x + p_z * p_z * detection_prob;
    let (sum, sum_sq) = blocks(trials)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(block, count)| {
            let mut rng = substream(seed, block);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let (mut nx, mut nz, mut rounds) = (0u64, 0u64, 0u64);
                while nx < n || nz < k {
                    rounds += 1;
                    let u: f64 = rng.random();
                    if u < sift_x {
                        nx += 1;
                    } else if u < sift_z {
                        nz += 1;
                    }
                }
                s += rounds as f64;
                s2 += (rounds as f64).powi(2);
            }
            (s, s2)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let t = trials as f64;
    let mean = sum / t;
    let var = if trials > 1 { (sum_sq - t * mean * mean) / (t - 1.0) } else { 0.0 };
    Ok(SignalEstimate { mean, std_err: (var.max(0.0) / t).sqrt(), trials })
}

/// Asymptotic rate `1 - 2 h(Q)`; negative above the BB84 threshold.
pub fn asymptotic_rate(qber: f64) -> f64 {
    1.0 - 2.0 * truncated_entropy(qber)
}

/// Expected rate with `leak_EC = xi n h(Q_tol)` and the closed-form key length.
pub fn expected_rate(p: &ProtocolParams, ch: &ChannelModel, xi: f64) -> Result<RateResult> {
    expected_rate_with(p, ch, xi, KeyLengthMethod::Corollary)
}

/// As [`expected_rate`]; the `leak_ec` field of `p` is replaced by the leak model.
pub fn expected_rate_with(
    p: &ProtocolParams,
    ch: &ChannelModel,
    xi: f64,
    method: KeyLengthMethod,
) -> Result<RateResult> {
    ch.validate()?;
    if !(xi >= 1.0) {
        return Err(Error::domain(format!("xi = {xi} below 1")));
    }
    let leak_ec = leak_model(p.n, p.q_tol, xi).min(p.n as f64);
    let params = p.with_leak(leak_ec);
    let ell = method.key_length(&params)?;
    let eps_rob = binomial_tail_gt(p.k, ch.qber, p.q_tol)?;
    Ok(assemble(p.n, p.k, ell, eps_rob, ch.detection_prob, leak_ec))
}

pub(crate) fn assemble(
    n: u64,
    k: u64,
    ell: u64,
    eps_rob: f64,
    detection_prob: f64,
    leak_ec: f64,
) -> RateResult {
    let (p_x, p_z) = basis_probs(n, k);
    let m_expected = expected_signals(n, k, detection_prob);
    let rate = if ell == 0 { 0.0 } else { (1.0 - eps_rob) * ell as f64 / m_expected };
    RateResult { rate, ell, m_expected, eps_rob, p_x, p_z, leak_ec }
}
