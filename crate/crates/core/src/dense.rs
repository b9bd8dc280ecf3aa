//! Small dense eigenproblems on top of nalgebra's complex Schur form.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigenvalues and unit eigenvectors (columns) of a general complex matrix.
pub fn eig(a: &DMatrix<Complex64>) -> Result<(Vec<Complex64>, DMatrix<Complex64>)> {
    let n = a.nrows();
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let schur = Schur::try_new(a.clone(), 1e-15 * scale, 10_000)
        .ok_or_else(|| Error::NoConvergence { restarts: 0, best: vec![] })?;
    let (qm, t) = schur.unpack();
    let vals: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let tiny = 1e-14 * scale;
    let mut vecs = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        let mut y = DVector::<Complex64>::zeros(n);
        y[i] = Complex64::new(1.0, 0.0);
        for j in (0..i).rev() {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in j + 1..=i {
                acc += t[(j, k)] * y[k];
            }
            let mut d = t[(j, j)] - vals[i];
            if d.norm() < tiny {
                d = Complex64::new(tiny, 0.0);
            }
            y[j] = -acc / d;
        }
        let x = &qm * y;
        let nrm = x.norm();
        vecs.set_column(i, &(x / Complex64::new(nrm, 0.0)));
    }
    Ok((vals, vecs))
}

pub fn eigvals(a: &DMatrix<Complex64>) -> Result<Vec<Complex64>> {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let schur = Schur::try_new(a.clone(), 1e-15 * scale, 10_000)
        .ok_or_else(|| Error::NoConvergence { restarts: 0, best: vec![] })?;
    let t = schur.unpack().1;
    Ok((0..a.nrows()).map(|i| t[(i, i)]).collect())
}

pub fn complexify(a: &DMatrix<f64>) -> DMatrix<Complex64> {
    a.map(|v| Complex64::new(v, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenpairs_of_rotation_block() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
        let c = complexify(&a);
        let (vals, vecs) = eig(&c).unwrap();
        for i in 0..3 {
            let r = &c * vecs.column(i) - vecs.column(i) * vals[i];
            assert!(r.norm() < 1e-13);
        }
        let mut mods: Vec<f64> = vals.iter().map(|z| z.norm()).collect();
        mods.sort_by(f64::total_cmp);
        assert!((mods[0] - 0.5).abs() < 1e-14 && (mods[2] - 1.0).abs() < 1e-14);
    }
}
