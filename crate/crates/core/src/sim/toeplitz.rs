//! Toeplitz hashing over GF(2), a universal_2 family.

use rand::Rng;

use super::bits::BitString;
use crate::{Error, Result};

/// The `rows x cols` Toeplitz matrix `T[i][j] = seed[i - j + cols - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzHasher {
    rows: usize,
    cols: usize,
    seed: BitString,
}

impl ToeplitzHasher {
    pub fn new(rows: usize, cols: usize, seed: BitString) -> Result<Self> {
        let expected = (rows + cols).saturating_sub(1);
        if cols == 0 {
            return Err(Error::domain("Toeplitz matrix needs at least one column"));
        }
        if seed.len() != expected {
            return Err(Error::Length { expected, actual: seed.len() });
        }
        Ok(ToeplitzHasher { rows, cols, seed })
    }

    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Self> {
        let seed = BitString::random((rows + cols).saturating_sub(1), rng);
        ToeplitzHasher::new(rows, cols, seed)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> &BitString {
        &self.seed
    }

    /// Matrix-vector product over GF(2).
    ///
    /// Column `j` of the matrix is the seed window starting at bit
    /// `cols - 1 - j`, so the product is the XOR of the windows selected by
    /// the set bits of the input.
    pub fn hash(&self, input: &BitString) -> Result<BitString> {
        if input.len() != self.cols {
            return Err(Error::Length { expected: self.cols, actual: input.len() });
        }
        let mut out = BitString::zeros(self.rows);
        if self.rows == 0 {
            return Ok(out);
        }
        let seed = self.seed.words();
        let out_words = out.words_mut();
        for j in input.iter_ones() {
            let start = self.cols - 1 - j;
            let (q, r) = (start / 64, start % 64);
            for (w, dst) in out_words.iter_mut().enumerate() {
                let lo = seed[q + w] >> r;
                let hi = if r == 0 { 0 } else { seed.get(q + w + 1).map_or(0, |s| s << (64 - r)) };
                *dst ^= lo | hi;
            }
        }
        out.mask_tail();
        Ok(out)
    }
}

/// Free-function form of [`ToeplitzHasher::hash`].
pub fn toeplitz_hash(h: &ToeplitzHasher, input: &BitString) -> Result<BitString> {
    h.hash(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn reference_hash(h: &ToeplitzHasher, input: &BitString) -> BitString {
        let mut out = BitString::zeros(h.rows());
        for i in 0..h.rows() {
            let mut acc = false;
            for j in 0..h.cols() {
                acc ^= h.seed().get(i + h.cols() - 1 - j) & input.get(j);
            }
            out.set(i, acc);
        }
        out
    }

    #[test]
    fn matches_explicit_matrix() {
        let mut rng = substream(1, 0);
        for &(rows, cols) in &[(1, 1), (3, 5), (64, 64), (65, 130), (100, 257), (7, 300)] {
            let h = ToeplitzHasher::random(rows, cols, &mut rng).unwrap();
            for _ in 0..5 {
                let x = BitString::random(cols, &mut rng);
                assert_eq!(h.hash(&x).unwrap(), reference_hash(&h, &x), "{rows}x{cols}");
            }
        }
    }

    #[test]
    fn zero_input_hashes_to_zero() {
        let mut rng = substream(2, 0);
        let h = ToeplitzHasher::random(17, 40, &mut rng).unwrap();
        assert_eq!(h.hash(&BitString::zeros(40)).unwrap(), BitString::zeros(17));
    }

    #[test]
    fn identity_1x1() {
        let h = ToeplitzHasher::new(1, 1, BitString::from_bools(&[true])).unwrap();
        let out = h.hash(&BitString::from_bools(&[true])).unwrap();
        assert_eq!(out, BitString::from_bools(&[true]));
    }

    #[test]
    fn length_errors() {
        assert!(matches!(
            ToeplitzHasher::new(2, 3, BitString::zeros(3)),
            Err(Error::Length { expected: 4, actual: 3 })
        ));
        let h = ToeplitzHasher::new(2, 3, BitString::zeros(4)).unwrap();
        assert!(matches!(h.hash(&BitString::zeros(5)), Err(Error::Length { .. })));
    }
}
