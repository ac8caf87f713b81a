use super::Mat;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;
const CONVERGENCE: f64 = 1e-12;

/// Eigenvalues of a symmetric matrix in descending order.
///
/// Symmetry is checked first: `max |a − aᵀ| ≤ tol` or [`Error::NotSymmetric`].
/// Uses cyclic Jacobi rotations until the off-diagonal Frobenius norm drops
/// below `1e-12 · ‖a‖_F`.
pub fn sym_eigvals(a: &Mat<f64>, tol: f64) -> Result<Vec<f64>> {
    Ok(jacobi(a, tol, false)?.0)
}

/// Eigenvalues with eigenvectors as columns, descending.
#[cfg(test)]
pub(crate) fn sym_eigen(a: &Mat<f64>, tol: f64) -> Result<(Vec<f64>, Mat<f64>)> {
    let (vals, vecs) = jacobi(a, tol, true)?;
    Ok((vals, vecs.expect("vectors requested")))
}

fn jacobi(a: &Mat<f64>, tol: f64, want_vectors: bool) -> Result<(Vec<f64>, Option<Mat<f64>>)> {
    let asym = a.max_abs_asymmetry();
    if asym.is_nan() || asym > tol {
        return Err(Error::NotSymmetric {
            max_asymmetry: asym,
            tol,
        });
    }
    let n = a.rows();
    // Work on the symmetrized copy so both triangles stay consistent.
    let mut m: Vec<f64> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx % n, idx / n);
            0.5 * (a.get(i, j) + a.get(j, i))
        })
        .collect();
    let mut v = want_vectors.then(|| {
        let mut id = vec![0.0; n * n];
        for i in 0..n {
            id[i + i * n] = 1.0;
        }
        id
    });

    let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&m, n) <= CONVERGENCE * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p + q * n];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p + p * n];
                let aqq = m[q + q * n];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, n, p, q, c, s);
                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v[k + p * n];
                        let vkq = v[k + q * n];
                        v[k + p * n] = c * vkp - s * vkq;
                        v[k + q * n] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j + j * n].total_cmp(&m[i + i * n]));
    let vals = order.iter().map(|&i| m[i + i * n]).collect();
    let vecs = v.map(|v| Mat::from_fn(n, n, |k, col| v[k + order[col] * n]));
    Ok((vals, vecs))
}

/// `m ← Jᵀ m J` for the plane rotation in `(p, q)`.
fn rotate(m: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let mkp = m[k + p * n];
        let mkq = m[k + q * n];
        m[k + p * n] = c * mkp - s * mkq;
        m[k + q * n] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let mpk = m[p + k * n];
        let mqk = m[q + k * n];
        m[p + k * n] = c * mpk - s * mqk;
        m[q + k * n] = s * mpk + c * mqk;
    }
}

fn off_diagonal_norm(m: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                s += m[i + j * n] * m[i + j * n];
            }
        }
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gram, mul};
    use crate::rng::SeededRng;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn diagonal_sorted_descending() {
        let vals = sym_eigvals(&Mat::diag(&[3.0, 1.0, 2.0]), 0.0).unwrap();
        assert_eq!(vals, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn two_by_two() {
        let a = Mat::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        close(&sym_eigvals(&a, 0.0).unwrap(), &[3.0, 1.0], 1e-14);
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Mat::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eigvals(&a, 1e-9), Err(Error::NotSymmetric { .. })));
        let rect = Mat::<f64>::zeros(2, 3);
        assert!(sym_eigvals(&rect, 1.0).is_err());
    }

    #[test]
    fn eigenpair_residuals() {
        let mut rng = SeededRng::new(4);
        let j = Mat::from_fn(30, 25, |_, _| rng.normal());
        let a = gram(&j);
        let (vals, vecs) = sym_eigen(&a, 0.0).unwrap();
        let av = mul(&a, &vecs).unwrap();
        let norm = a.frobenius_norm();
        for (c, &lambda) in vals.iter().enumerate() {
            let r: f64 = av
                .col(c)
                .iter()
                .zip(vecs.col(c))
                .map(|(x, y)| (x - lambda * y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(r <= 1e-10 * norm, "residual {r}");
        }
    }

    #[test]
    fn gram_spectrum_nonnegative() {
        let mut rng = SeededRng::new(9);
        let j = Mat::from_fn(4, 12, |_, _| rng.normal());
        let vals = sym_eigvals(&gram(&j), 0.0).unwrap();
        let max = vals[0];
        assert!(vals.iter().all(|&v| v >= -1e-9 * max));
        // rank 4: the remaining eight eigenvalues vanish
        assert!(vals[4..].iter().all(|v| v.abs() < 1e-10 * max));
    }
}
