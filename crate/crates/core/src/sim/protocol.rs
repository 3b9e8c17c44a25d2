use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;

use super::bits::BitString;
use super::toeplitz::ToeplitzHasher;
use crate::bounds::{correctness_hash_length, key_length_corollary, ProtocolParams};
use crate::rate::{basis_probs, ChannelModel};
use crate::rng::{substream, StreamRng};
use crate::stats::abort_threshold;
use crate::{Error, Result};

/// How Bob's estimate of the raw key is formed after error correction.
///
/// Error correction itself is not simulated: its cost enters the bounds only
/// through `leak_EC`. The oracle mode hands Bob the exact key; the other
/// modes leave errors behind for the hash check to catch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EcMode {
    #[default]
    Oracle,
    /// Bob keeps his raw bits, channel errors included.
    Uncorrected,
    /// Bob gets the exact key with one uniformly chosen bit flipped.
    FlipOne,
}

/// Which Z-basis rounds enter the error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PeScope {
    /// The first `k` rounds of the Z set.
    #[default]
    FirstK,
    /// Every Z round.
    AllZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimOptions {
    /// Final key length; defaults to the closed-form key length of the params.
    pub ell: Option<u64>,
    pub ec_mode: EcMode,
    pub pe_scope: PeScope,
}

/// Record of one protocol execution. Keys are empty when the run aborts.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTranscript {
    pub seed: u64,
    pub stream: u64,
    /// Alice's basis per round, 1 for Z.
    pub bases_alice: BitString,
    pub bases_bob: BitString,
    pub bits_alice: BitString,
    /// Bob's outcome per round; meaningless where `detected` is 0.
    pub bits_bob: BitString,
    pub detected: BitString,
    pub sifted_x_indices: Vec<u32>,
    pub sifted_z_indices: Vec<u32>,
    /// Rounds of the X set forming the raw key, in selection order.
    pub key_indices: Vec<u32>,
    pub pe_bits: u64,
    pub pe_errors: u64,
    pub lambda_observed: f64,
    pub aborted_pe: bool,
    /// Disagreements between the raw keys before error correction.
    pub raw_key_errors: u64,
    /// Disagreements left in Bob's estimate after error correction.
    pub residual_errors: u64,
    pub hash_alice: BitString,
    pub hash_bob: BitString,
    pub aborted_ec: bool,
    pub ell: u64,
    pub key_alice: BitString,
    pub key_bob: BitString,
}

impl RunTranscript {
    pub fn signals(&self) -> usize {
        self.bases_alice.len()
    }

    pub fn aborted(&self) -> bool {
        self.aborted_pe || self.aborted_ec
    }

    /// Keys differ although the hash check passed.
    pub fn undetected_mismatch(&self) -> bool {
        !self.aborted() && self.residual_errors > 0
    }

    /// Writes one `key=value` line per protocol step.
    pub fn dump<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "step=run seed={} stream={}", self.seed, self.stream)?;
        writeln!(
            out,
            "step=preparation signals={} bases_alice={} bits_alice={}",
            self.signals(),
            self.bases_alice,
            self.bits_alice
        )?;
        writeln!(
            out,
            "step=measurement bases_bob={} bits_bob={} detected={}",
            self.bases_bob, self.bits_bob, self.detected
        )?;
        writeln!(
            out,
            "step=sifting sifted_x={} sifted_z={}",
            self.sifted_x_indices.len(),
            self.sifted_z_indices.len()
        )?;
        writeln!(
            out,
            "step=parameter_estimation pe_bits={} pe_errors={} lambda={} aborted={}",
            self.pe_bits, self.pe_errors, self.lambda_observed, self.aborted_pe
        )?;
        if self.aborted_pe {
            return Ok(());
        }
        writeln!(
            out,
            "step=error_correction raw_key_errors={} residual_errors={} hash_alice={} hash_bob={} aborted={}",
            self.raw_key_errors, self.residual_errors, self.hash_alice, self.hash_bob, self.aborted_ec
        )?;
        if self.aborted_ec {
            return Ok(());
        }
        writeln!(
            out,
            "step=privacy_amplification ell={} key_alice={} key_bob={}",
            self.ell,
            self.key_alice.to_hex(),
            self.key_bob.to_hex()
        )
    }
}

fn check_inputs(p: &ProtocolParams, ch: &ChannelModel) -> Result<()> {
    p.validate()?;
    ch.validate()?;
    if p.n > u32::MAX as u64 / 4 || p.k > u32::MAX as u64 / 4 {
        return Err(Error::Size("block too large to simulate".into()));
    }
    Ok(())
}

/// Runs the protocol on stream 0 of `seed`.
pub fn run_protocol(
    p: &ProtocolParams,
    ch: &ChannelModel,
    opts: &SimOptions,
    seed: u64,
) -> Result<RunTranscript> {
    run_protocol_stream(p, ch, opts, seed, 0)
}

/// Runs the protocol on stream `stream` of `seed`.
pub fn run_protocol_stream(
    p: &ProtocolParams,
    ch: &ChannelModel,
    opts: &SimOptions,
    seed: u64,
    stream: u64,
) -> Result<RunTranscript> {
    check_inputs(p, ch)?;
    let ell = match opts.ell {
        Some(ell) => ell,
        None => key_length_corollary(p)?,
    };
    let hash_len = correctness_hash_length(p.eps_cor)? as usize;
    let mut rng = substream(seed, stream);
    Ok(execute(p, ch, opts, ell, hash_len, &mut rng, seed, stream))
}

#[allow(clippy::too_many_arguments)]
fn execute(
    p: &ProtocolParams,
    ch: &ChannelModel,
    opts: &SimOptions,
    ell: u64,
    hash_len: usize,
    rng: &mut StreamRng,
    seed: u64,
    stream: u64,
) -> RunTranscript {
    let (p_x, _) = basis_probs(p.n, p.k);
    let (n, k) = (p.n as usize, p.k as usize);

    let mut bases_alice = BitString::default();
    let mut bases_bob = BitString::default();
    let mut bits_alice = BitString::default();
    let mut bits_bob = BitString::default();
    let mut detected = BitString::default();
    let mut sifted_x = Vec::with_capacity(n + n / 8);
    let mut sifted_z = Vec::with_capacity(k + k / 8);

    // preparation, distribution, measurement and sifting, round by round
    let mut round = 0u32;
    while sifted_x.len() < n || sifted_z.len() < k {
        let a_z = rng.random::<f64>() >= p_x;
        let y: bool = rng.random();
        let b_z = rng.random::<f64>() >= p_x;
        let click = ch.detection_prob >= 1.0 || rng.random::<f64>() < ch.detection_prob;
        let y_bob = if a_z == b_z { y ^ (rng.random::<f64>() < ch.qber) } else { rng.random() };
        bases_alice.push(a_z);
        bases_bob.push(b_z);
        bits_alice.push(y);
        bits_bob.push(y_bob && click);
        detected.push(click);
        if click && a_z == b_z {
            if a_z {
                sifted_z.push(round)
            } else {
                sifted_x.push(round)
            }
        }
        round += 1;
    }

    // raw key: a uniformly random n-subset of the X set
    let mut pool = sifted_x.clone();
    for i in 0..n {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(n);
    let key_indices = pool;

    let pe_rounds = match opts.pe_scope {
        PeScope::FirstK => &sifted_z[..k],
        PeScope::AllZ => &sifted_z[..],
    };
    let pe_errors =
        pe_rounds.iter().filter(|&&i| bits_alice.get(i as usize) != bits_bob.get(i as usize)).count() as u64;
    let pe_bits = pe_rounds.len() as u64;
    let lambda_observed = pe_errors as f64 / pe_bits as f64;
    let aborted_pe = pe_errors as i64 > abort_threshold(pe_bits, p.q_tol);

    let raw_alice =
        BitString::from_bools(&key_indices.iter().map(|&i| bits_alice.get(i as usize)).collect::<Vec<_>>());
    let raw_bob =
        BitString::from_bools(&key_indices.iter().map(|&i| bits_bob.get(i as usize)).collect::<Vec<_>>());
    let raw_key_errors = raw_alice.hamming_distance(&raw_bob) as u64;

    let mut t = RunTranscript {
        seed,
        stream,
        bases_alice,
        bases_bob,
        bits_alice,
        bits_bob,
        detected,
        sifted_x_indices: sifted_x,
        sifted_z_indices: sifted_z,
        key_indices,
        pe_bits,
        pe_errors,
        lambda_observed,
        aborted_pe,
        raw_key_errors,
        residual_errors: 0,
        hash_alice: BitString::default(),
        hash_bob: BitString::default(),
        aborted_ec: false,
        ell,
        key_alice: BitString::default(),
        key_bob: BitString::default(),
    };
    if aborted_pe {
        return t;
    }

    let estimate = match opts.ec_mode {
        EcMode::Oracle => raw_alice.clone(),
        EcMode::Uncorrected => raw_bob,
        EcMode::FlipOne => {
            let mut e = raw_alice.clone();
            e.flip(rng.random_range(0..n));
            e
        }
    };
    t.residual_errors = raw_alice.hamming_distance(&estimate) as u64;

    let check = ToeplitzHasher::random(hash_len, n, rng).expect("seed length matches");
    t.hash_alice = check.hash(&raw_alice).expect("input length matches");
    t.hash_bob = check.hash(&estimate).expect("input length matches");
    if t.hash_alice != t.hash_bob {
        t.aborted_ec = true;
        return t;
    }

    let extractor = ToeplitzHasher::random(ell as usize, n, rng).expect("seed length matches");
    t.key_alice = extractor.hash(&raw_alice).expect("input length matches");
    t.key_bob = extractor.hash(&estimate).expect("input length matches");
    t
}

/// Aggregate statistics of a batch of runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchSummary {
    pub runs: u64,
    pub seed: u64,
    pub abort_pe: u64,
    pub abort_ec: u64,
    /// Runs that produced differing keys without aborting.
    pub corr_fail: u64,
    pub mean_lambda: f64,
    /// Mean number of rounds until sifting completed.
    pub m_empirical: f64,
    pub pe_bits: u64,
}

impl BatchSummary {
    pub fn abort_pe_rate(&self) -> f64 {
        self.abort_pe as f64 / self.runs as f64
    }

    pub fn abort_ec_rate(&self) -> f64 {
        self.abort_ec as f64 / self.runs as f64
    }
}

#[derive(Clone, Copy)]
struct RunStats {
    aborted_pe: bool,
    aborted_ec: bool,
    corr_fail: bool,
    lambda: f64,
    signals: usize,
    pe_bits: u64,
}

/// Runs `runs` independent executions, run `r` on stream `r` of `seed`.
pub fn batch_run(
    p: &ProtocolParams,
    ch: &ChannelModel,
    opts: &SimOptions,
    runs: u64,
    seed: u64,
) -> Result<BatchSummary> {
    if runs == 0 {
        return Err(Error::domain("runs must be at least 1"));
    }
    check_inputs(p, ch)?;
    let ell = match opts.ell {
        Some(ell) => ell,
        None => key_length_corollary(p)?,
    };
    let hash_len = correctness_hash_length(p.eps_cor)? as usize;
    let stats: Vec<RunStats> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, r);
            let t = execute(p, ch, opts, ell, hash_len, &mut rng, seed, r);
            RunStats {
                aborted_pe: t.aborted_pe,
                aborted_ec: t.aborted_ec,
                corr_fail: !t.aborted() && t.key_alice != t.key_bob,
                lambda: t.lambda_observed,
                signals: t.signals(),
                pe_bits: t.pe_bits,
            }
        })
        .collect();
    let count = |f: fn(&RunStats) -> bool| stats.iter().filter(|s| f(s)).count() as u64;
    let runs_f = runs as f64;
    Ok(BatchSummary {
        runs,
        seed,
        abort_pe: count(|s| s.aborted_pe),
        abort_ec: count(|s| s.aborted_ec),
        corr_fail: count(|s| s.corr_fail),
        mean_lambda: stats.iter().map(|s| s.lambda).sum::<f64>() / runs_f,
        m_empirical: stats.iter().map(|s| s.signals as f64).sum::<f64>() / runs_f,
        pe_bits: stats.iter().map(|s| s.pe_bits).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(q_tol: f64) -> ProtocolParams {
        ProtocolParams { n: 256, k: 128, q: 1.0, q_tol, eps_cor: 2f64.powi(-8), eps_sec: 1e-3, leak_ec: 0.0 }
    }

    #[test]
    fn noiseless_run_agrees() {
        let p = small(0.0);
        let opts = SimOptions { ell: Some(64), ..Default::default() };
        let t = run_protocol(&p, &ChannelModel::depolarizing(0.0), &opts, 9).unwrap();
        assert!(!t.aborted());
        assert_eq!(t.lambda_observed, 0.0);
        assert_eq!(t.key_alice.len(), 64);
        assert_eq!(t.key_alice, t.key_bob);
        assert_eq!(t.key_indices.len(), 256);
        assert!(t.sifted_z_indices.len() >= 128);
        assert_eq!(t.pe_bits, 128);
    }

    #[test]
    fn transcripts_are_reproducible() {
        let p = small(0.1);
        let ch = ChannelModel::depolarizing(0.05);
        let opts = SimOptions { ell: Some(32), ..Default::default() };
        let a = run_protocol(&p, &ch, &opts, 42).unwrap();
        let b = run_protocol(&p, &ch, &opts, 42).unwrap();
        assert_eq!(a, b);
        let c = run_protocol(&p, &ch, &opts, 43).unwrap();
        assert_ne!(a.bits_alice, c.bits_alice);
    }

    #[test]
    fn high_noise_aborts_in_pe() {
        let t =
            run_protocol(&small(0.01), &ChannelModel::depolarizing(0.3), &SimOptions::default(), 1).unwrap();
        assert!(t.aborted_pe);
        assert!(t.key_alice.is_empty() && t.hash_alice.is_empty());
    }

    #[test]
    fn uncorrected_errors_are_caught() {
        let p = ProtocolParams { eps_cor: 1e-10, ..small(0.2) };
        let opts = SimOptions { ell: Some(16), ec_mode: EcMode::Uncorrected, ..Default::default() };
        let t = run_protocol(&p, &ChannelModel::depolarizing(0.05), &opts, 5).unwrap();
        assert!(!t.aborted_pe);
        assert!(t.residual_errors > 0);
        assert!(t.aborted_ec);
        assert_eq!(t.hash_alice.len(), 34);
    }

    #[test]
    fn all_z_scope_uses_every_z_round() {
        let opts = SimOptions { ell: Some(8), pe_scope: PeScope::AllZ, ..Default::default() };
        let t = run_protocol(&small(0.2), &ChannelModel::depolarizing(0.02), &opts, 3).unwrap();
        assert_eq!(t.pe_bits as usize, t.sifted_z_indices.len());
    }

    #[test]
    fn erasures_are_sifted_out() {
        let ch = ChannelModel { qber: 0.0, detection_prob: 0.5 };
        let opts = SimOptions { ell: Some(8), ..Default::default() };
        let t = run_protocol(&small(0.0), &ch, &opts, 4).unwrap();
        for &i in t.sifted_x_indices.iter().chain(&t.sifted_z_indices) {
            assert!(t.detected.get(i as usize));
        }
        assert!(t.signals() > 4 * (256 + 128) / 2);
    }

    #[test]
    fn single_run_batch_matches_stream_zero() {
        let p = small(0.05);
        let ch = ChannelModel::depolarizing(0.03);
        let opts = SimOptions { ell: Some(8), ..Default::default() };
        let t = run_protocol(&p, &ch, &opts, 77).unwrap();
        let s = batch_run(&p, &ch, &opts, 1, 77).unwrap();
        assert_eq!(s.abort_pe, u64::from(t.aborted_pe));
        assert_eq!(s.mean_lambda, t.lambda_observed);
        assert_eq!(s.m_empirical, t.signals() as f64);
    }

    #[test]
    fn dump_has_one_line_per_step() {
        let opts = SimOptions { ell: Some(8), ..Default::default() };
        let t = run_protocol(&small(0.1), &ChannelModel::depolarizing(0.0), &opts, 2).unwrap();
        let mut buf = Vec::new();
        t.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let steps: Vec<&str> = text.lines().map(|l| l.split(' ').next().unwrap()).collect();
        assert_eq!(
            steps,
            [
                "step=run",
                "step=preparation",
                "step=measurement",
                "step=sifting",
                "step=parameter_estimation",
                "step=error_correction",
                "step=privacy_amplification"
            ]
        );
    }
}
