//! Finite-key formulas: statistical slack, secret key length, hash length
//! for the correctness check and the audit of the entropy bound chain.

use crate::entropy::truncated_entropy;
use crate::{Error, Result};

/// Parameters of one protocol instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Block size: number of sifted X-basis bits forming the raw key.
    pub n: u64,
    /// Number of Z-basis bits used for parameter estimation.
    pub k: u64,
    /// Preparation quality in bits.
    pub q: f64,
    pub q_tol: f64,
    pub eps_cor: f64,
    pub eps_sec: f64,
    /// Bits disclosed by error correction.
    pub leak_ec: f64,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return Err(Error::domain("n and k must be positive"));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::domain(format!("preparation quality {} outside [0, 1]", self.q)));
        }
        if !(0.0..0.5).contains(&self.q_tol) {
            return Err(Error::domain(format!("Q_tol {} outside [0, 1/2)", self.q_tol)));
        }
        for (name, eps) in [("eps_cor", self.eps_cor), ("eps_sec", self.eps_sec)] {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::domain(format!("{name} = {eps} outside (0, 1)")));
            }
        }
        if !(self.leak_ec >= 0.0 && self.leak_ec <= self.n as f64) {
            return Err(Error::domain(format!("leak_EC = {} outside [0, n = {}]", self.leak_ec, self.n)));
        }
        Ok(())
    }

    pub fn with_leak(mut self, leak_ec: f64) -> Self {
        self.leak_ec = leak_ec;
        self
    }
}

/// Error-correction leakage model `xi * n * h(Q_tol)`.
pub fn leak_model(n: u64, q_tol: f64, xi: f64) -> f64 {
    xi * n as f64 * truncated_entropy(q_tol)
}

/// Split of the secrecy budget, `2 eps + eps_bar <= eps_sec`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecretSplit {
    pub eps: f64,
    pub eps_bar: f64,
}

impl SecretSplit {
    /// The split behind the closed-form key length: `eps_sec/4`, `eps_sec/2`.
    pub fn fixed(eps_sec: f64) -> Self {
        SecretSplit { eps: eps_sec / 4.0, eps_bar: eps_sec / 2.0 }
    }
}

/// Statistical slack `sqrt((n+k)/(n k) (k+1)/k ln(1/eps))`.
///
/// `eps = 1` is accepted and yields zero.
pub fn mu(n: u64, k: u64, eps: f64) -> Result<f64> {
    if n == 0 || k == 0 {
        return Err(Error::domain("n and k must be positive"));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::domain(format!("eps = {eps} outside (0, 1]")));
    }
    Ok(mu_unchecked(n, k, (1.0 / eps).ln()))
}

fn mu_unchecked(n: u64, k: u64, ln_inv_eps: f64) -> f64 {
    let (n, k) = (n as f64, k as f64);
    ((n + k) / (n * k) * (k + 1.0) / k * ln_inv_eps).sqrt()
}

/// Right-hand side of the general key-length bound before flooring.
fn general_value(p: &ProtocolParams, split: SecretSplit) -> f64 {
    let mu = mu_unchecked(p.n, p.k, (1.0 / split.eps).ln());
    p.n as f64 * (p.q - truncated_entropy(p.q_tol + mu))
        - 2.0 * (1.0 / (2.0 * split.eps_bar)).log2()
        - p.leak_ec
        - (2.0 / p.eps_cor).log2()
}

fn floor_clamped(value: f64) -> u64 {
    if value.is_finite() && value > 0.0 {
        value.floor() as u64
    } else {
        0
    }
}

/// Key length of the general bound at a given split (floored, clamped at 0).
pub fn key_length_at(p: &ProtocolParams, split: SecretSplit) -> u64 {
    floor_clamped(general_value(p, split))
}

const EPS_GRID: usize = 64;
const EPS_GRID_LOW: f64 = 1e-6;
const GOLDEN_ITERS: usize = 60;

/// General key length, maximized over the secrecy split.
///
/// For a fixed `eps` the best `eps_bar` is `eps_sec - 2 eps`, so the search
/// is one-dimensional in `ln eps` over `[eps_sec 1e-6, eps_sec/2)`: a log grid
/// followed by golden-section refinement around the best cell. The fixed
/// split is always a candidate, so the result never falls below
/// [`key_length_corollary`]. Ties go to the smaller `eps`.
pub fn key_length_general(p: &ProtocolParams) -> Result<(u64, SecretSplit)> {
    p.validate()?;
    let eps_sec = p.eps_sec;
    let split_at = |ln_eps: f64| {
        let eps = ln_eps.exp();
        SecretSplit { eps, eps_bar: eps_sec - 2.0 * eps }
    };
    let value_at = |ln_eps: f64| general_value(p, split_at(ln_eps));

    let lo = (eps_sec * EPS_GRID_LOW).ln();
    let hi = (eps_sec / 2.0).ln();
    let step = (hi - lo) / EPS_GRID as f64;
    let grid: Vec<f64> = (0..EPS_GRID).map(|i| lo + step * i as f64).collect();

    let mut best_idx = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &x) in grid.iter().enumerate() {
        let v = value_at(x);
        if v > best_val {
            best_val = v;
            best_idx = i;
        }
    }

    let a = grid[best_idx.saturating_sub(1)];
    let b = if best_idx + 1 < grid.len() { grid[best_idx + 1] } else { hi - step * 1e-3 };
    let refined = golden_section_max(value_at, a, b, GOLDEN_ITERS);

    let mut candidates = vec![SecretSplit::fixed(eps_sec), split_at(grid[best_idx]), split_at(refined)];
    candidates.sort_by(|x, y| x.eps.total_cmp(&y.eps));
    let mut best = (key_length_at(p, candidates[0]), candidates[0]);
    for split in candidates.into_iter().skip(1) {
        let ell = key_length_at(p, split);
        if ell > best.0 {
            best = (ell, split);
        }
    }
    Ok(best)
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        c
    } else {
        d
    }
}

/// Closed-form key length
/// `n (q - h(Q_tol + mu)) - leak_EC - log(2 / (eps_sec^2 eps_cor))` with
/// `mu` evaluated at `ln(4 / eps_sec)`; floored and clamped at 0.
pub fn key_length_corollary(p: &ProtocolParams) -> Result<u64> {
    p.validate()?;
    Ok(floor_clamped(corollary_value(p)))
}

pub(crate) fn corollary_value(p: &ProtocolParams) -> f64 {
    let mu = mu_unchecked(p.n, p.k, (4.0 / p.eps_sec).ln());
    p.n as f64 * (p.q - truncated_entropy(p.q_tol + mu))
        - p.leak_ec
        - (2.0 / (p.eps_sec * p.eps_sec * p.eps_cor)).log2()
}

/// Length `ceil(log2(1/eps_cor))` of the hash compared after error correction.
pub fn correctness_hash_length(eps_cor: f64) -> Result<u32> {
    if !(eps_cor > 0.0 && eps_cor < 1.0) {
        return Err(Error::domain(format!("eps_cor = {eps_cor} outside (0, 1)")));
    }
    Ok((-eps_cor.log2()).ceil() as u32)
}

/// Intermediate values of the smooth-entropy bound chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundAudit {
    pub mu: f64,
    /// `n h(Q_tol + mu)`, the max-entropy bound.
    pub hmax_bound: f64,
    /// `n q - hmax_bound`, from the uncertainty relation.
    pub hmin_after_ucr: f64,
    /// After subtracting error-correction leakage and the hash.
    pub hmin_after_leak: f64,
    /// Secrecy `2 eps + sqrt(2^(ell - hmin_after_leak)) / 2`, capped at 1.
    pub delta_bound: f64,
}

pub fn audit_chain(p: &ProtocolParams, split: SecretSplit, ell: u64) -> BoundAudit {
    let mu = mu_unchecked(p.n, p.k, (1.0 / split.eps).ln());
    let hmax_bound = p.n as f64 * truncated_entropy(p.q_tol + mu);
    let hmin_after_ucr = p.n as f64 * p.q - hmax_bound;
    let hmin_after_leak = hmin_after_ucr - p.leak_ec - (2.0 / p.eps_cor).log2();
    let pa_term = 0.5 * (ell as f64 - hmin_after_leak).exp2().sqrt();
    let delta_bound = (2.0 * split.eps + pa_term).min(1.0);
    BoundAudit { mu, hmax_bound, hmin_after_ucr, hmin_after_leak, delta_bound }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> ProtocolParams {
        let n = 10_000;
        ProtocolParams {
            n,
            k: 10_000,
            q: 1.0,
            q_tol: 0.03,
            eps_cor: 1e-10,
            eps_sec: 1e-8,
            leak_ec: leak_model(n, 0.03, 1.1),
        }
    }

    #[test]
    fn mu_examples() {
        assert_eq!(mu(100, 100, 1.0).unwrap(), 0.0);
        let m = mu(10_000, 10_000, 1e-8 / 4.0).unwrap();
        assert!((m - 0.062_942_760_985_807_99).abs() < 1e-13);
        assert!(mu(10_000, 1_000, 1e-9).unwrap() > mu(10_000, 10_000, 1e-9).unwrap());
    }

    #[test]
    fn mu_domain() {
        assert!(mu(10, 10, 0.0).is_err());
        assert!(mu(10, 10, 1.5).is_err());
        assert!(mu(0, 10, 0.5).is_err());
    }

    #[test]
    fn corollary_reference_value() {
        // high-precision evaluation gives 3312.151...
        assert_eq!(key_length_corollary(&reference()).unwrap(), 3312);
    }

    #[test]
    fn general_dominates_reference() {
        let p = reference();
        let (ell, split) = key_length_general(&p).unwrap();
        assert!(ell >= 3312);
        assert!(2.0 * split.eps + split.eps_bar <= p.eps_sec * (1.0 + 1e-12));
    }

    #[test]
    fn fixed_split_matches_corollary() {
        let p = reference();
        assert_eq!(key_length_at(&p, SecretSplit::fixed(p.eps_sec)), key_length_corollary(&p).unwrap());
    }

    #[test]
    fn truncation_gives_zero() {
        let p = ProtocolParams { k: 10, q_tol: 0.45, leak_ec: 0.0, ..reference() };
        assert_eq!(key_length_corollary(&p).unwrap(), 0);
        assert_eq!(key_length_general(&p).unwrap().0, 0);
    }

    #[test]
    fn leak_is_linear() {
        let p = reference();
        let a = corollary_value(&p);
        let b = corollary_value(&p.with_leak(p.leak_ec + 100.0));
        assert!((a - b - 100.0).abs() < 1e-9);
        let la = key_length_corollary(&p).unwrap();
        let lb = key_length_corollary(&p.with_leak(p.leak_ec + 100.0)).unwrap();
        assert_eq!(la - lb, 100);
    }

    #[test]
    fn hash_lengths() {
        assert_eq!(correctness_hash_length(0.5).unwrap(), 1);
        assert_eq!(correctness_hash_length(1e-10).unwrap(), 34);
        assert_eq!(correctness_hash_length(2f64.powi(-40)).unwrap(), 40);
        assert!(correctness_hash_length(1.0).is_err());
        assert!(correctness_hash_length(0.0).is_err());
    }

    #[test]
    fn audit_at_corollary_is_secure() {
        let p = reference();
        let ell = key_length_corollary(&p).unwrap();
        let audit = audit_chain(&p, SecretSplit::fixed(p.eps_sec), ell);
        assert!(audit.delta_bound <= p.eps_sec);
        assert!(audit.hmin_after_leak <= audit.hmin_after_ucr);
    }

    #[test]
    fn audit_noiseless_limit() {
        let p = ProtocolParams { k: 100_000_000, q_tol: 0.0, leak_ec: 0.0, ..reference() };
        let audit = audit_chain(&p, SecretSplit::fixed(p.eps_sec), 0);
        // mu ~ 0.0445 at k = 1e8, so h(mu) is small but nonzero
        assert!(audit.hmin_after_ucr <= p.n as f64);
        assert!(audit.hmin_after_ucr > 0.7 * p.n as f64);
        let wide = ProtocolParams { n: 100_000_000, ..p };
        let audit = audit_chain(&wide, SecretSplit::fixed(p.eps_sec), 0);
        assert!((audit.hmin_after_ucr / wide.n as f64 - wide.q).abs() < 0.05);
    }

    #[test]
    fn audit_leak_is_additive() {
        let p = reference();
        let split = SecretSplit::fixed(p.eps_sec);
        let a = audit_chain(&p, split, 10);
        let b = audit_chain(&p.with_leak(p.leak_ec + 37.5), split, 10);
        assert!((a.hmin_after_leak - b.hmin_after_leak - 37.5).abs() < 1e-9);
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = [
            ProtocolParams { q_tol: 0.5, ..reference() },
            ProtocolParams { eps_sec: 1.0, ..reference() },
            ProtocolParams { eps_cor: 0.0, ..reference() },
            ProtocolParams { leak_ec: 20_000.0, ..reference() },
            ProtocolParams { k: 0, ..reference() },
        ];
        for p in bad {
            assert!(key_length_corollary(&p).is_err(), "{p:?}");
        }
    }
}
