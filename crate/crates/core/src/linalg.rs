//! Symmetric eigendecomposition hardened against underflow.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Entries below this fraction of the largest are set to zero before factorizing.
const FLUSH_TOL: f64 = 1e-30;
const JACOBI_SWEEPS: usize = 60;

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// Column `k` pairs with `values[k]`.
    pub vectors: DMatrix<f64>,
}

/// Scales `m` to unit max-norm and zeroes negligible entries; returns the scale.
pub(crate) fn normalized(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let scale = m.amax();
    if scale == 0.0 || !scale.is_finite() {
        return (m.clone(), 1.0);
    }
    let out = m.map(|x| if x.abs() < FLUSH_TOL * scale { 0.0 } else { x / scale });
    (out, scale)
}

pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    if !m.is_square() {
        return Err(Error::InvalidArgument("eigendecomposition needs a square matrix".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure("matrix has non-finite entries".into()));
    }
    let (a, scale) = normalized(m);
    let a = (&a + a.transpose()) * 0.5;
    let (vals, vecs) = match SymmetricEigen::try_new(a.clone(), f64::EPSILON, 0) {
        Some(e) if e.eigenvalues.iter().chain(e.eigenvectors.iter()).all(|x| x.is_finite()) => {
            (e.eigenvalues, e.eigenvectors)
        }
        _ => jacobi(a)?,
    };
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
    Ok(SymEigen {
        values: order.iter().map(|&i| vals[i] * scale).collect(),
        vectors: DMatrix::from_fn(vecs.nrows(), order.len(), |r, c| vecs[(r, order[c])]),
    })
}

/// Cyclic Jacobi rotations.
fn jacobi(mut a: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let mut v = DMatrix::identity(n, n);
    for _ in 0..JACOBI_SWEEPS {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        let diag: f64 = (0..n).map(|i| a[(i, i)].powi(2)).sum();
        if off <= (f64::EPSILON * f64::EPSILON) * diag.max(f64::MIN_POSITIVE) {
            return Ok((a.diagonal(), v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::NumericalFailure("Jacobi eigenvalue iteration did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check(m: &DMatrix<f64>, e: &SymEigen) {
        let n = m.nrows();
        let mut rec = DMatrix::zeros(n, n);
        for k in 0..n {
            let v = e.vectors.column(k);
            rec += v * v.transpose() * e.values[k];
        }
        assert!((rec - m).amax() <= 1e-12 * m.amax().max(1e-300));
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn matches_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = DMatrix::from_fn(12, 12, |_, _| rng.random_range(-1.0..1.0));
        let m = &r + r.transpose();
        check(&m, &sym_eigen(&m).unwrap());
        let (vals, vecs) = jacobi(m.clone()).unwrap();
        let mut rec = DMatrix::zeros(12, 12);
        for k in 0..12 {
            rec += vecs.column(k) * vecs.column(k).transpose() * vals[k];
        }
        assert!((rec - m).amax() < 1e-12);
    }

    #[test]
    fn tiny_entries_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = DMatrix::from_fn(20, 6, |i, _| rng.random_range(-1.0..1.0) * if i % 3 == 0 { 1e-75 } else { 1.0 });
        let m = (&r * r.transpose()) * 1e-5;
        let e = sym_eigen(&m).unwrap();
        assert!(e.values.iter().all(|x| x.is_finite()));
        check(&m, &e);
    }
}
