//! Preparation quality of the sender's source.
//!
//! The quality `q = -log2 c` is set by the overlap `c` of the two
//! preparation procedures: the maximal fidelity between states of the two
//! bases for qubit sources, or `max ||sqrt(M_x) sqrt(N_z)||_inf^2` for
//! sources that prepare by measuring half of an entangled state.

use nalgebra::{DMatrix, Vector2};
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type Qubit = Vector2<Complex64>;

const NORM_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-9;
const CLAMP_TOL: f64 = 1e-12;
pub const MAX_DIMENSION: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparationQuality {
    /// Quality in bits, `-log2 c`.
    pub q: f64,
    /// Maximal overlap in `(0, 1]`.
    pub c: f64,
}

impl PreparationQuality {
    fn from_overlap(c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidSource(format!("overlap {c} is not positive")));
        }
        // numerical overshoot above 1 would give a negative q
        let c = c.min(1.0);
        // `+ 0.0` turns the -0 of c = 1 into +0
        Ok(PreparationQuality { q: -c.log2() + 0.0, c })
    }
}

#[derive(Debug, Clone)]
pub struct QubitSource {
    pub states_x: Vec<Qubit>,
    pub states_z: Vec<Qubit>,
}

impl QubitSource {
    pub fn new(states_x: Vec<Qubit>, states_z: Vec<Qubit>) -> Result<Self> {
        let src = QubitSource { states_x, states_z };
        src.validate()?;
        Ok(src)
    }

    /// The ideal BB84 preparation: computational and diagonal bases.
    pub fn bb84() -> Self {
        let (zero, one) = computational_basis();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = Qubit::new(Complex64::new(s, 0.0), Complex64::new(s, 0.0));
        let minus = Qubit::new(Complex64::new(s, 0.0), Complex64::new(-s, 0.0));
        QubitSource { states_x: vec![zero, one], states_z: vec![plus, minus] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.states_x.is_empty() || self.states_z.is_empty() {
            return Err(Error::InvalidSource("empty state family".into()));
        }
        for (i, v) in self.states_x.iter().chain(&self.states_z).enumerate() {
            let norm = v.norm();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::InvalidSource(format!("state {i} has norm {norm}")));
            }
        }
        Ok(())
    }
}

fn computational_basis() -> (Qubit, Qubit) {
    let o = Complex64::new(0.0, 0.0);
    let l = Complex64::new(1.0, 0.0);
    (Qubit::new(l, o), Qubit::new(o, l))
}

/// Overlap `max |<psi_x|psi_z>|^2` over all pairs.
pub fn quality_from_qubits(src: &QubitSource) -> Result<PreparationQuality> {
    src.validate()?;
    let c = src
        .states_x
        .iter()
        .flat_map(|x| src.states_z.iter().map(move |z| x.dotc(z).norm_sqr()))
        .fold(0.0_f64, f64::max);
    PreparationQuality::from_overlap(c)
}

#[derive(Debug, Clone)]
pub struct PovmSource {
    pub elements_x: Vec<CMatrix>,
    pub elements_z: Vec<CMatrix>,
}

impl PovmSource {
    pub fn new(elements_x: Vec<CMatrix>, elements_z: Vec<CMatrix>) -> Result<Self> {
        let src = PovmSource { elements_x, elements_z };
        src.validate()?;
        Ok(src)
    }

    /// Rank-one projective measurements onto the given orthonormal bases.
    pub fn projective(basis_x: &[Qubit], basis_z: &[Qubit]) -> Self {
        let proj = |v: &Qubit| {
            let p = v * v.adjoint();
            CMatrix::from_fn(2, 2, |r, c| p[(r, c)])
        };
        PovmSource {
            elements_x: basis_x.iter().map(proj).collect(),
            elements_z: basis_z.iter().map(proj).collect(),
        }
    }

    pub fn bb84() -> Self {
        let q = QubitSource::bb84();
        PovmSource::projective(&q.states_x, &q.states_z)
    }

    pub fn dimension(&self) -> usize {
        self.elements_x.first().map_or(0, |m| m.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        if self.elements_x.is_empty() || self.elements_z.is_empty() {
            return Err(Error::InvalidSource("empty POVM".into()));
        }
        let d = self.dimension();
        if d == 0 || d > MAX_DIMENSION {
            return Err(Error::InvalidSource(format!("dimension {d} outside 1..={MAX_DIMENSION}")));
        }
        for (name, family) in [("X", &self.elements_x), ("Z", &self.elements_z)] {
            let mut sum = CMatrix::zeros(d, d);
            for (i, m) in family.iter().enumerate() {
                if m.nrows() != d || m.ncols() != d {
                    return Err(Error::InvalidSource(format!(
                        "{name} element {i} is {}x{}, expected {d}x{d}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                if (m - m.adjoint()).camax() > NORM_TOL {
                    return Err(Error::InvalidSource(format!("{name} element {i} is not Hermitian")));
                }
                let min_eig = m.clone().symmetric_eigenvalues().min();
                if min_eig < -PSD_TOL {
                    return Err(Error::InvalidSource(format!("{name} element {i} has eigenvalue {min_eig}")));
                }
                sum += m;
            }
            let deviation = (sum - CMatrix::identity(d, d)).camax();
            if deviation > NORM_TOL {
                return Err(Error::InvalidSource(format!(
                    "{name} elements do not sum to the identity (deviation {deviation:e})"
                )));
            }
        }
        Ok(())
    }
}

/// Square root of a Hermitian PSD matrix by spectral decomposition.
/// Eigenvalues within `1e-12` below zero are clamped.
pub fn psd_sqrt(m: &CMatrix) -> Result<CMatrix> {
    let eig = m.clone().symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for ev in roots.iter_mut() {
        if *ev < -CLAMP_TOL {
            return Err(Error::InvalidSource(format!("negative eigenvalue {ev}")));
        }
        *ev = ev.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    let diag = CMatrix::from_diagonal(&roots.map(|r| Complex64::new(r, 0.0)));
    Ok(v * diag * v.adjoint())
}

/// `||sqrt(M) sqrt(N)||_inf^2` via the largest singular value.
pub fn overlap_svd(m: &CMatrix, n: &CMatrix) -> Result<f64> {
    let prod = psd_sqrt(m)? * psd_sqrt(n)?;
    let smax = prod.singular_values().max();
    Ok(smax * smax)
}

/// The same quantity as [`overlap_svd`], as the largest eigenvalue of
/// `sqrt(M) N sqrt(M)`.
pub fn overlap_eigen(m: &CMatrix, n: &CMatrix) -> Result<f64> {
    let sm = psd_sqrt(m)?;
    let inner = &sm * n * &sm;
    let herm = (&inner + inner.adjoint()) * Complex64::new(0.5, 0.0);
    Ok(herm.symmetric_eigenvalues().max())
}

pub fn quality_from_povms(src: &PovmSource) -> Result<PreparationQuality> {
    src.validate()?;
    let roots_x = src.elements_x.iter().map(psd_sqrt).collect::<Result<Vec<_>>>()?;
    let roots_z = src.elements_z.iter().map(psd_sqrt).collect::<Result<Vec<_>>>()?;
    let mut c = 0.0_f64;
    for rx in &roots_x {
        for rz in &roots_z {
            let smax = (rx * rz).singular_values().max();
            c = c.max(smax * smax);
        }
    }
    PreparationQuality::from_overlap(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real_qubit(a: f64, b: f64) -> Qubit {
        Qubit::new(Complex64::new(a, 0.0), Complex64::new(b, 0.0))
    }

    fn rotated_basis(cos2: f64) -> Vec<Qubit> {
        let (c, s) = (cos2.sqrt(), (1.0 - cos2).sqrt());
        vec![real_qubit(c, s), real_qubit(-s, c)]
    }

    #[test]
    fn bb84_qubits() {
        let pq = quality_from_qubits(&QubitSource::bb84()).unwrap();
        assert!((pq.q - 1.0).abs() < 1e-12);
        assert!((pq.c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identical_bases_have_zero_quality() {
        let (zero, one) = computational_basis();
        let src = QubitSource::new(vec![zero, one], vec![zero, one]).unwrap();
        let pq = quality_from_qubits(&src).unwrap();
        assert_eq!(pq.q, 0.0);
        assert_eq!(pq.c, 1.0);
    }

    #[test]
    fn rotated_basis_overlap() {
        let (zero, one) = computational_basis();
        let src = QubitSource::new(vec![zero, one], rotated_basis(0.6)).unwrap();
        let pq = quality_from_qubits(&src).unwrap();
        assert!((pq.c - 0.6).abs() < 1e-12);
        assert!((pq.q - 0.736_965_594_166_206_2).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_state_rejected() {
        let (zero, _) = computational_basis();
        let err = QubitSource::new(vec![zero], vec![real_qubit(1.0, 0.1)]).unwrap_err();
        assert!(matches!(err, Error::InvalidSource(_)));
    }

    #[test]
    fn bb84_povm() {
        let pq = quality_from_povms(&PovmSource::bb84()).unwrap();
        assert!((pq.q - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_povms() {
        let (zero, one) = computational_basis();
        let src = PovmSource::projective(&[zero, one], &[zero, one]);
        let pq = quality_from_povms(&src).unwrap();
        assert_eq!(pq.q, 0.0);
        assert_eq!(pq.c, 1.0);
    }

    #[test]
    fn noisy_diagonal_measurement() {
        // N_z = p I/2 + (1-p)|+-><+-|; <0|N_z|0> = 1/2 for every p
        let p = 0.2;
        let bb = PovmSource::bb84();
        let half_id = CMatrix::identity(2, 2) * Complex64::new(p / 2.0, 0.0);
        let noisy: Vec<CMatrix> =
            bb.elements_z.iter().map(|e| &half_id + e * Complex64::new(1.0 - p, 0.0)).collect();
        let src = PovmSource::new(bb.elements_x.clone(), noisy).unwrap();
        let pq = quality_from_povms(&src).unwrap();
        assert!((pq.c - 0.5).abs() < 1e-12);
        assert!((pq.q - 1.0).abs() < 1e-9);
    }

    #[test]
    fn incomplete_povm_rejected() {
        let mut src = PovmSource::bb84();
        src.elements_z.pop();
        assert!(matches!(quality_from_povms(&src), Err(Error::InvalidSource(_))));
    }

    #[test]
    fn non_psd_rejected() {
        let mut src = PovmSource::bb84();
        let neg = CMatrix::from_diagonal_element(2, 2, Complex64::new(-0.5, 0.0));
        src.elements_x = vec![CMatrix::identity(2, 2) - &neg, neg];
        assert!(src.validate().is_err());
    }

    #[test]
    fn oversized_povm_rejected() {
        let d = MAX_DIMENSION + 1;
        let src = PovmSource {
            elements_x: vec![CMatrix::identity(d, d)],
            elements_z: vec![CMatrix::identity(d, d)],
        };
        assert!(src.validate().is_err());
    }
}
