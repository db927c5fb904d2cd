//! Small dense linear-algebra helpers shared by every module.
//!
//! Symmetric eigenproblems use a cyclic Jacobi sweep: it is deterministic,
//! accurate to machine precision on the tiny matrices this crate handles, and
//! keeps eigenvectors orthonormal without re-orthogonalization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigen-decomposition `S = V diag(values) Vᵀ` of a symmetric matrix,
/// eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vector,
    pub vectors: Mat,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rebuild `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let w = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= w;
            }
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }
}

pub fn require_square(m: &Mat, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn require_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} has non-finite entries")))
    }
}

/// `(X + Xᵀ) / 2`
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).norm()
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
///
/// Only the symmetric part of `s` is used.
pub fn sym_eigen(s: &Mat) -> SymEigen {
    let n = s.nrows();
    let mut a = symmetrize(s);
    let mut v = Mat::identity(n, n);
    let scale = a.norm();
    if n <= 1 || scale == 0.0 {
        return SymEigen { values: a.diagonal(), vectors: v };
    }

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= 1e-16 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    SymEigen { values, vectors }
}

pub fn min_eigenvalue(s: &Mat) -> f64 {
    if s.nrows() == 0 {
        return f64::INFINITY;
    }
    sym_eigen(s).min()
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    require_square(m, "matrix")?;
    require_finite(m, "matrix")?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let eig = m.clone().complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Symmetric PSD square root `W` with `W·W = S`.
///
/// Eigenvalues in `[-tol_psd, 0)` are treated as zero; anything more negative
/// is rejected.
pub fn sqrt_sym(s: &Mat, tol_psd: f64) -> Result<Mat> {
    require_square(s, "sqrt_sym input")?;
    check_symmetric(s, tol_psd, "sqrt_sym input")?;
    let eig = sym_eigen(s);
    if !eig.values.is_empty() && eig.min() < -tol_psd {
        return Err(Error::Validation(format!(
            "matrix is not positive semidefinite (min eigenvalue {:.3e})",
            eig.min()
        )));
    }
    Ok(eig.map(|l| l.max(0.0).sqrt()))
}

/// Inverse of the symmetric square root; requires a positive definite input.
pub fn inv_sqrt_sym(s: &Mat, tol_psd: f64) -> Result<Mat> {
    let eig = sym_eigen(s);
    if eig.min() <= tol_psd {
        return Err(Error::Degenerate(format!(
            "matrix is not positive definite (min eigenvalue {:.3e})",
            eig.min()
        )));
    }
    Ok(eig.map(|l| 1.0 / l.sqrt()))
}

pub fn check_symmetric(s: &Mat, tol: f64, what: &str) -> Result<()> {
    let scale = s.norm().max(1.0);
    let asym = asymmetry(s);
    if asym > tol * scale {
        return Err(Error::Validation(format!(
            "{what} is not symmetric (‖X − Xᵀ‖ = {asym:.3e})"
        )));
    }
    Ok(())
}

pub fn check_psd(s: &Mat, tol: f64, what: &str) -> Result<()> {
    require_square(s, what)?;
    require_finite(s, what)?;
    check_symmetric(s, tol.max(1e-12), what)?;
    let lmin = min_eigenvalue(s);
    if lmin < -tol {
        return Err(Error::Validation(format!(
            "{what} is not positive semidefinite (min eigenvalue {lmin:.3e})"
        )));
    }
    Ok(())
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Mat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Log-determinant of a symmetric positive definite matrix, `None` when the
/// Cholesky factorization fails.
pub fn logdet_pd(s: &Mat) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(symmetrize(s))?;
    let l = chol.l();
    Some(2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension("ragged nested array".into()));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn random_matrix(n: usize, seed: u64) -> Mat {
        // xorshift keeps the test free of RNG plumbing
        let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        Mat::from_fn(n, n, |_, _| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s as f64 / u64::MAX as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn jacobi_reconstructs() {
        for seed in 1..20 {
            let a = random_matrix(5, seed);
            let s = &a + a.transpose();
            let eig = sym_eigen(&s);
            let rebuilt = eig.map(|l| l);
            assert!((rebuilt - &s).norm() < 1e-12 * s.norm());
            let vtv = eig.vectors.transpose() * &eig.vectors;
            assert!((vtv - Mat::identity(5, 5)).norm() < 1e-12);
            for w in eig.values.as_slice().windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn spectral_radius_examples() {
        assert_relative_eq!(spectral_radius(&Mat::identity(2, 2)).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(spectral_radius(&Mat::zeros(3, 3)).unwrap(), 0.0);
        let f = Mat::from_row_slice(2, 2, &[0.84, 0.23, -0.47, 0.12]);
        // λ² − 0.96λ + 0.2089 = 0, largest root by the quadratic formula
        let (tr, det) = (0.96_f64, 0.84 * 0.12 + 0.23 * 0.47);
        let disc = tr * tr - 4.0 * det;
        let modulus = if disc < 0.0 { det.sqrt() } else { (tr.abs() + disc.sqrt()) / 2.0 };
        assert_relative_eq!(spectral_radius(&f).unwrap(), modulus, epsilon = 1e-9);
        assert!((spectral_radius(&f).unwrap() - 0.6266).abs() < 1e-3);
        assert!(spectral_radius(&Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn sqrt_sym_examples() {
        let i = Mat::identity(3, 3);
        assert!((sqrt_sym(&i, 1e-9).unwrap() - &i).norm() < 1e-14);
        let d = Mat::from_diagonal(&Vector::from_vec(vec![4.0, 9.0]));
        let w = sqrt_sym(&d, 1e-9).unwrap();
        assert!((w - Mat::from_diagonal(&Vector::from_vec(vec![2.0, 3.0]))).norm() < 1e-14);
        let neg = Mat::from_diagonal(&Vector::from_vec(vec![1.0, -1e-3]));
        assert!(sqrt_sym(&neg, 1e-9).is_err());
    }

    #[test]
    fn kron_shape_and_values() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Mat::identity(2, 2);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (4, 4));
        assert_eq!(k[(0, 2)], 2.0);
        assert_eq!(k[(3, 1)], 3.0);
    }
}
