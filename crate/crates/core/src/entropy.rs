//! Binary entropy and binomial-sum bounds.

use crate::{Error, Result};

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::domain(format!("probability {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

/// Truncated binary entropy `h(x)`.
///
/// Equals `-x log x - (1-x) log(1-x)` on `[0, 1/2]` and `1` on `(1/2, 1]`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    Probability::new(x).map(|p| truncated_entropy(p.value()))
}

/// Infallible form of [`binary_entropy`] for arguments that arise as
/// `Q_tol + mu` and may leave `[0, 1]`: anything above one half maps to 1,
/// anything at or below zero to 0.
pub fn truncated_entropy(x: f64) -> f64 {
    if x > 0.5 {
        1.0
    } else if x <= 0.0 {
        0.0
    } else {
        -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
    }
}

/// `log2` of the partial binomial sum `sum_{w=0}^{w_max} C(n, w)`.
///
/// Terms are carried in the log domain through `C(n, w+1) = C(n, w) (n-w)/(w+1)`
/// and combined with a streaming log-sum-exp, so `n` in the millions is fine.
pub fn binomial_sum_log(n: u64, w_max: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    if w_max > n {
        return Err(Error::domain(format!("w_max = {w_max} exceeds n = {n}")));
    }
    let mut term = 0.0_f64; // ln C(n, 0)
    let mut max = 0.0_f64;
    let mut scaled = 1.0_f64; // sum of exp(term - max)
    for w in 0..w_max {
        term += ((n - w) as f64).ln() - ((w + 1) as f64).ln();
        if term > max {
            scaled = scaled * (max - term).exp() + 1.0;
            max = term;
        } else {
            scaled += (term - max).exp();
        }
    }
    Ok((max + scaled.ln()) / std::f64::consts::LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(0.75).unwrap(), 1.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 1.0);
        // mpmath, 40 digits
        let h = binary_entropy(0.01).unwrap();
        assert!((h - 0.080_793_135_895_911_17).abs() < 1e-15);
    }

    #[test]
    fn entropy_domain() {
        assert!(matches!(binary_entropy(-0.1), Err(Error::Domain(_))));
        assert!(matches!(binary_entropy(1.1), Err(Error::Domain(_))));
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn truncated_outside_unit_interval() {
        assert_eq!(truncated_entropy(1.7), 1.0);
        assert_eq!(truncated_entropy(-0.2), 0.0);
    }

    #[test]
    fn binomial_sum_examples() {
        assert!((binomial_sum_log(4, 4).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(binomial_sum_log(4, 0).unwrap(), 0.0);
        // sum_{w<=5} C(20, w) = 21700
        assert!((binomial_sum_log(20, 5).unwrap() - 21700f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn binomial_sum_errors() {
        assert!(binomial_sum_log(4, 5).is_err());
        assert!(binomial_sum_log(0, 0).is_err());
    }

    #[test]
    fn binomial_sum_large_n() {
        let n = 1_000_000;
        let full = binomial_sum_log(n, n).unwrap();
        assert!((full - n as f64).abs() < 1e-3);
        let half = binomial_sum_log(n, n / 10).unwrap();
        assert!(half <= n as f64 * truncated_entropy(0.1));
        assert!(half.is_finite());
    }
}
