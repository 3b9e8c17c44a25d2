//! Sampling without replacement: Serfling's bound, the exact hypergeometric
//! tail it bounds, a Monte Carlo cross-check, and exact binomial tails for
//! the robustness of parameter estimation.

use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::rng::{blocks, substream};
use crate::{Error, Result};

/// Largest population handled by [`hypergeometric_exceed_exact`].
pub const EXACT_CAP: u64 = 10_000;

/// Slack for comparisons of error fractions against real thresholds.
const FRACTION_TOL: f64 = 1e-12;

/// A population of `N = n + k` positions with `errors_total` errors, of which
/// `k` are sampled for parameter estimation and `n` remain as key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingInstance {
    pub n_total: u64,
    pub k_sample: u64,
    pub n_key: u64,
    pub errors_total: u64,
}

impl SamplingInstance {
    pub fn new(n_key: u64, k_sample: u64, errors_total: u64) -> Result<Self> {
        if n_key == 0 || k_sample == 0 {
            return Err(Error::domain("n and k must be positive"));
        }
        let n_total = n_key + k_sample;
        if errors_total > n_total {
            return Err(Error::domain(format!("errors_total = {errors_total} exceeds N = {n_total}")));
        }
        Ok(SamplingInstance { n_total, k_sample, n_key, errors_total })
    }

    pub fn lambda_total(&self) -> f64 {
        self.errors_total as f64 / self.n_total as f64
    }

    /// Whether `w` errors among the key positions reach `lambda_tot + delta`.
    fn key_exceeds(&self, w: u64, delta: f64) -> bool {
        w as f64 / self.n_key as f64 >= self.lambda_total() + delta - FRACTION_TOL
    }
}

/// Serfling bound `exp(-2 (n N / (k+1)) delta^2)` on
/// `Pr[Lambda_key >= lambda_tot + delta]`, clamped to 1.
pub fn serfling_bound(inst: &SamplingInstance, delta: f64) -> f64 {
    if delta <= 0.0 {
        return 1.0;
    }
    let (n, big_n, k) = (inst.n_key as f64, inst.n_total as f64, inst.k_sample as f64);
    (-2.0 * (n * big_n / (k + 1.0)) * delta * delta).exp().min(1.0)
}

fn ln_choose(n: u64, r: u64) -> f64 {
    if r > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(r as f64 + 1.0) - ln_gamma((n - r) as f64 + 1.0)
}

/// Exact `Pr[Lambda_key >= lambda_tot + delta]` when the `k` sampled positions
/// form a uniformly random subset: the number of key errors is
/// hypergeometric with population `N`, `errors_total` successes and `n` draws.
pub fn hypergeometric_exceed_exact(inst: &SamplingInstance, delta: f64) -> Result<f64> {
    if inst.n_total > EXACT_CAP {
        return Err(Error::Size(format!("N = {} exceeds the exact cap {EXACT_CAP}", inst.n_total)));
    }
    let (big_n, e, n) = (inst.n_total, inst.errors_total, inst.n_key);
    let ln_total = ln_choose(big_n, n);
    let w_lo = n.saturating_sub(big_n - e);
    let w_hi = e.min(n);
    let p = (w_lo..=w_hi)
        .filter(|&w| inst.key_exceeds(w, delta))
        .map(|w| (ln_choose(e, w) + ln_choose(big_n - e, n - w) - ln_total).exp())
        // fold from +0: an empty `sum` would give -0
        .fold(0.0, |acc, t| acc + t);
    Ok(p.min(1.0))
}

/// Counts trials in which a uniformly random PE sample leaves `w` key errors
/// satisfying `accept(w, errors_in_sample)`.
fn count_subsets(
    inst: &SamplingInstance,
    trials: u64,
    seed: u64,
    accept: impl Fn(u64, u64) -> bool + Sync,
) -> u64 {
    let big_n = inst.n_total as usize;
    let k = inst.k_sample as usize;
    let e = inst.errors_total as usize;
    blocks(trials)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(block, count)| {
            let mut rng = substream(seed, block);
            // positions < e carry an error; partial Fisher-Yates selects the
            // first k slots as the sample. The buffer is never reset, which is
            // fine because the selected subset is uniform for any arrangement.
            let mut pos: Vec<u32> = (0..big_n as u32).collect();
            let mut hits = 0;
            for _ in 0..count {
                let mut sample_errors = 0u64;
                for i in 0..k {
                    let j = rng.random_range(i..big_n);
                    pos.swap(i, j);
                    sample_errors += u64::from((pos[i] as usize) < e);
                }
                let key_errors = inst.errors_total - sample_errors;
                hits += u64::from(accept(key_errors, sample_errors));
            }
            hits
        })
        .sum()
}

/// Monte Carlo estimate of [`hypergeometric_exceed_exact`]. Reproducible for
/// a fixed seed regardless of thread count.
pub fn sample_without_replacement_mc(
    inst: &SamplingInstance,
    delta: f64,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::domain("trials must be at least 1"));
    }
    let hits = count_subsets(inst, trials, seed, |w, _| inst.key_exceeds(w, delta));
    Ok(hits as f64 / trials as f64)
}

/// Bound `exp(-2 (k n / N) (k / (k+1)) mu^2)` on `Pr[Lambda_key >= Lambda + mu]`.
pub fn key_sample_deviation_bound(inst: &SamplingInstance, mu: f64) -> f64 {
    if mu <= 0.0 {
        return 1.0;
    }
    let (n, k, big_n) = (inst.n_key as f64, inst.k_sample as f64, inst.n_total as f64);
    (-2.0 * (k * n / big_n) * (k / (k + 1.0)) * mu * mu).exp().min(1.0)
}

/// Monte Carlo frequency of `Lambda_key >= Lambda + mu` for a fixed total
/// error count.
pub fn key_sample_deviation_mc(inst: &SamplingInstance, mu: f64, trials: u64, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::domain("trials must be at least 1"));
    }
    let (n, k) = (inst.n_key as f64, inst.k_sample as f64);
    let hits = count_subsets(inst, trials, seed, |w, s| w as f64 / n >= s as f64 / k + mu - FRACTION_TOL);
    Ok(hits as f64 / trials as f64)
}

/// Inverts `eps = exp(-(k n / N) (k / (k+1)) mu^2)` for `mu`.
pub fn mu_from_eps(n: u64, k: u64, eps: f64) -> f64 {
    let (n, k) = (n as f64, k as f64);
    ((n + k) / (k * n) * ((k + 1.0) / k) * (1.0 / eps).ln()).sqrt()
}

/// The abort threshold in errors: PE aborts when more than this many of the
/// `k` compared bits disagree, i.e. when `lambda > Q_tol`.
pub fn abort_threshold(k: u64, q_tol: f64) -> i64 {
    (q_tol * k as f64 + 1e-9).floor() as i64
}

/// Exact `Pr[Bin(k, p) > floor(threshold k)]` by log-domain summation.
///
/// The sum starts at the boundary term and runs away from the mode, so only
/// a few hundred terms are needed even for `k` in the millions. Below the
/// mode the complement is summed instead.
pub fn binomial_tail_gt(k: u64, p: f64, threshold: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::domain("k must be positive"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("p = {p} outside [0, 1]")));
    }
    let m = abort_threshold(k, threshold);
    if m >= k as i64 {
        return Ok(0.0);
    }
    if m < 0 {
        return Ok(1.0);
    }
    let m = m as u64;
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let mean = k as f64 * p;
    let ln_pmf = |j: u64| ln_binomial_pmf(j, k, p);
    let odds = p / (1.0 - p);
    if (m + 1) as f64 >= mean {
        Ok(sum_upward(k, m + 1, ln_pmf(m + 1), odds).min(1.0))
    } else {
        Ok((1.0 - sum_downward(k, m, ln_pmf(m), odds)).clamp(0.0, 1.0))
    }
}

/// `ln(n! / (sqrt(2 pi n) (n/e)^n))` for `n = 0..=15`.
#[allow(clippy::excessive_precision)]
const STIRLING_ERR: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258,
    0.041_340_695_955_409_294,
    0.027_677_925_684_998_339,
    0.020_790_672_103_765_093,
    0.016_644_691_189_821_192,
    0.013_876_128_823_070_748,
    0.011_896_709_945_891_770,
    0.010_411_265_261_972_096,
    0.009_255_462_182_712_733,
    0.008_330_563_433_362_871,
    0.007_573_675_487_951_841,
    0.006_942_840_107_209_530,
    0.006_408_994_188_004_207,
    0.005_951_370_112_758_848,
    0.005_554_733_551_962_801,
];

/// Error of Stirling's approximation to `ln n!`.
fn stirling_err(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        return STIRLING_ERR[n as usize];
    }
    let x = n as f64;
    let xx = x * x;
    if n > 500 {
        (S0 - S1 / xx) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / xx) / xx) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / xx) / xx) / xx) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / xx) / xx) / xx) / xx) / x
    }
}

/// Deviance term `x ln(x / np) + np - x`, by series when `x` is near `np`.
fn deviance(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let next = s + ej / (2 * j + 1) as f64;
            if next == s {
                break;
            }
            s = next;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// `ln Pr[Bin(n, p) = x]` by Loader's saddle-point expansion, accurate to a
/// few ulps of the pmf even for `n` in the millions.
fn ln_binomial_pmf(x: u64, n: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    if x == 0 {
        return n as f64 * (-p).ln_1p();
    }
    if x == n {
        return n as f64 * p.ln();
    }
    let (xf, nf) = (x as f64, n as f64);
    let lc = stirling_err(n)
        - stirling_err(x)
        - stirling_err(n - x)
        - deviance(xf, nf * p)
        - deviance(nf - xf, nf * q);
    let lf = (2.0 * std::f64::consts::PI).ln() + xf.ln() + (-xf / nf).ln_1p();
    lc - 0.5 * lf
}

/// `sum_{j >= start} pmf(j)` with `pmf(j+1) = pmf(j) (k-j)/(j+1) odds`.
fn sum_upward(k: u64, start: u64, ln_first: f64, odds: f64) -> f64 {
    let mut term = ln_first.exp();
    let mut sum = 0.0;
    let mut j = start;
    loop {
        sum += term;
        if j == k || term < sum * 1e-18 {
            break;
        }
        term *= (k - j) as f64 / (j + 1) as f64 * odds;
        j += 1;
    }
    sum
}

/// `sum_{j <= start} pmf(j)` with `pmf(j-1) = pmf(j) j / (k-j+1) / odds`.
fn sum_downward(k: u64, start: u64, ln_first: f64, odds: f64) -> f64 {
    let mut term = ln_first.exp();
    let mut sum = 0.0;
    let mut j = start;
    loop {
        sum += term;
        if j == 0 || term < sum * 1e-18 {
            break;
        }
        term *= j as f64 / (k - j + 1) as f64 / odds;
        j -= 1;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serfling_examples() {
        let inst = SamplingInstance::new(2, 2, 2).unwrap();
        assert_eq!(serfling_bound(&inst, 0.0), 1.0);
        let b = serfling_bound(&inst, 0.5);
        assert!((b - (-4.0f64 / 3.0).exp()).abs() < 1e-15);
        assert!((b - 0.263_597_138_115_726_8).abs() < 1e-15);
    }

    #[test]
    fn serfling_monotone() {
        let a = SamplingInstance::new(100, 50, 10).unwrap();
        let b = SamplingInstance::new(200, 50, 10).unwrap();
        assert!(serfling_bound(&a, 0.1) >= serfling_bound(&a, 0.2));
        assert!(serfling_bound(&a, 0.1) >= serfling_bound(&b, 0.1));
    }

    #[test]
    fn hypergeometric_examples() {
        let inst = SamplingInstance::new(2, 2, 2).unwrap();
        // both errors in the key half: 1 of the 6 subsets
        let p = hypergeometric_exceed_exact(&inst, 0.5).unwrap();
        assert!((p - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(hypergeometric_exceed_exact(&inst, 1.2).unwrap(), 0.0);
        let clean = SamplingInstance::new(50, 50, 0).unwrap();
        assert_eq!(hypergeometric_exceed_exact(&clean, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn hypergeometric_cap() {
        let inst = SamplingInstance::new(9_000, 1_001, 10).unwrap();
        assert!(matches!(hypergeometric_exceed_exact(&inst, 0.1), Err(Error::Size(_))));
    }

    #[test]
    fn hypergeometric_brute_force() {
        // enumerate all 2^N labelings of a small population
        let inst = SamplingInstance::new(4, 3, 3).unwrap();
        let big_n = inst.n_total as u32;
        let (mut hits, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << big_n) {
            if mask.count_ones() != inst.k_sample as u32 {
                continue;
            }
            total += 1;
            // errors sit at positions 0..3; mask marks the sample
            let sample_errors = (mask & 0b111).count_ones() as u64;
            let key_errors = inst.errors_total - sample_errors;
            if key_errors as f64 / 4.0 >= 3.0 / 7.0 + 0.2 - 1e-12 {
                hits += 1;
            }
        }
        let exact = hypergeometric_exceed_exact(&inst, 0.2).unwrap();
        assert!((exact - hits as f64 / total as f64).abs() < 1e-12);
    }

    #[test]
    fn mc_matches_exact() {
        let inst = SamplingInstance::new(70, 30, 20).unwrap();
        let exact = hypergeometric_exceed_exact(&inst, 0.1).unwrap();
        let trials = 100_000;
        let mc = sample_without_replacement_mc(&inst, 0.1, trials, 11).unwrap();
        let se = (exact * (1.0 - exact) / trials as f64).sqrt();
        assert!((mc - exact).abs() <= 3.0 * se, "mc {mc} exact {exact}");
    }

    #[test]
    fn mc_edge_cases() {
        let inst = SamplingInstance::new(10, 10, 5).unwrap();
        let one = sample_without_replacement_mc(&inst, 0.05, 1, 3).unwrap();
        assert!(one == 0.0 || one == 1.0);
        assert_eq!(one, sample_without_replacement_mc(&inst, 0.05, 1, 3).unwrap());
        let full = SamplingInstance::new(10, 10, 20).unwrap();
        assert_eq!(sample_without_replacement_mc(&full, 0.01, 1000, 3).unwrap(), 0.0);
        assert!(sample_without_replacement_mc(&inst, 0.05, 0, 3).is_err());
    }

    #[test]
    fn eps_identity_reproduces_mu() {
        for &(n, k, eps) in &[(10_000u64, 10_000u64, 2.5e-9), (500, 500, 0.3), (1_000_000, 20_000, 1e-12)] {
            let a = mu_from_eps(n, k, eps);
            let b = crate::bounds::mu(n, k, eps).unwrap();
            assert!((a - b).abs() <= 1e-14 * b, "{a} vs {b}");
        }
    }

    fn tail_oracle(k: u64, p: f64, m: u64) -> f64 {
        // direct pmf sum from the ratio recursion starting at j = 0
        let mut pmf = (1.0 - p).powi(k as i32);
        let mut lower = 0.0;
        for j in 0..=m {
            lower += pmf;
            pmf *= (k - j) as f64 / (j + 1) as f64 * p / (1.0 - p);
        }
        1.0 - lower
    }

    #[test]
    fn binomial_tail_examples() {
        assert_eq!(binomial_tail_gt(100, 0.3, 1.0).unwrap(), 0.0);
        assert_eq!(binomial_tail_gt(100, 0.0, 0.0).unwrap(), 0.0);
        // Pr[Bin(100, 0.01) >= 6], mpmath
        let t = binomial_tail_gt(100, 0.01, 0.05).unwrap();
        assert!((t - 5.345_344_639_930_333e-4).abs() < 1e-15);
        assert!((t - tail_oracle(100, 0.01, 5)).abs() < 1e-14);
    }

    #[test]
    fn binomial_tail_is_strict() {
        // threshold 0.05 with k = 100 allows exactly 5 errors
        let at = binomial_tail_gt(100, 0.05, 0.05).unwrap();
        assert!((at - tail_oracle(100, 0.05, 5)).abs() < 1e-14, "{at} {}", tail_oracle(100, 0.05, 5));
        // 0.29 * 100 is 28.999... in binary; the threshold still sits at 29
        let t = binomial_tail_gt(100, 0.2, 0.29).unwrap();
        assert!((t - tail_oracle(100, 0.2, 29)).abs() < 1e-14);
    }

    #[test]
    fn binomial_tail_below_mode() {
        let t = binomial_tail_gt(1000, 0.5, 0.3).unwrap();
        assert!((t - tail_oracle(1000, 0.5, 300)).abs() < 1e-12);
        assert_eq!(binomial_tail_gt(10, 0.5, -0.1).unwrap(), 1.0);
    }

    #[test]
    fn binomial_tail_large_k() {
        let t = binomial_tail_gt(10_000_000, 0.01, 0.0101).unwrap();
        assert!(t > 0.0 && t < 0.5);
    }
}
