//! Text form of source specifications: entries `re,im` in row-major order
//! separated by whitespace, elements separated by `|`.

use finitekey::source::{CMatrix, Qubit};
use num_complex::Complex64;

use crate::CliError;

fn entries(element: &str) -> Result<Vec<Complex64>, CliError> {
    element
        .split_whitespace()
        .map(|tok| {
            let parsed = tok
                .split_once(',')
                .and_then(|(re, im)| Some(Complex64::new(re.parse().ok()?, im.parse().ok()?)));
            parsed
                .filter(|c| c.re.is_finite() && c.im.is_finite())
                .ok_or_else(|| CliError::Usage(format!("bad complex entry {tok:?}, expected re,im")))
        })
        .collect()
}

fn elements(spec: &str) -> Result<Vec<Vec<Complex64>>, CliError> {
    let out = spec.split('|').map(entries).collect::<Result<Vec<_>, _>>()?;
    if out.iter().any(Vec::is_empty) {
        return Err(CliError::Usage("empty source element".into()));
    }
    Ok(out)
}

pub fn qubits(spec: &str) -> Result<Vec<Qubit>, CliError> {
    elements(spec)?
        .into_iter()
        .map(|e| match e.as_slice() {
            [a, b] => Ok(Qubit::new(*a, *b)),
            _ => Err(CliError::Usage(format!("qubit state needs 2 entries, got {}", e.len()))),
        })
        .collect()
}

pub fn matrices(spec: &str) -> Result<Vec<CMatrix>, CliError> {
    elements(spec)?
        .into_iter()
        .map(|e| {
            let d = (e.len() as f64).sqrt().round() as usize;
            if d * d != e.len() {
                return Err(CliError::Usage(format!("{} entries is not a square matrix", e.len())));
            }
            Ok(CMatrix::from_row_slice(d, d, &e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_projectors() {
        let m = matrices("1,0 0,0 0,0 0,0 | 0,0 0,0 0,0 1,0").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1][(1, 1)], Complex64::new(1.0, 0.0));
        assert_eq!(m[0][(0, 1)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn row_major_order() {
        let m = matrices("1,0 2,0 3,0 4,0").unwrap();
        assert_eq!(m[0][(0, 1)].re, 2.0);
        assert_eq!(m[0][(1, 0)].re, 3.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matrices("1,0 0,0 0,0").is_err());
        assert!(qubits("1,0").is_err());
        assert!(qubits("1;0 0,0").is_err());
        assert!(matrices("1,0 | ").is_err());
    }
}
