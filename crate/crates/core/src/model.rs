//! Plant, observer, and steady-state residual statistics.
//!
//! The estimation error of a Luenberger observer evolves as
//! `e_{k+1} = (F − LC) e_k − L η_k − L δ_k + v_k` and the residual is
//! `r_k = C e_k + η_k + δ_k`. Without attacks the error covariance settles at
//! the solution of a discrete Lyapunov equation, and the residual covariance
//! `Σ = C P Cᵀ + R2` normalizes the chi-squared distance measure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    check_psd, check_symmetric, inv_sqrt_sym, kron, min_eigenvalue, require_finite, require_square,
    spectral_radius, sqrt_sym, symmetrize, Mat, Vector,
};

/// Numerical tolerances shared by the model and bounding code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub psd: f64,
    pub lyap: f64,
    pub schur: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { psd: 1e-9, lyap: 1e-8, schur: 1e-9 }
    }
}

/// Linear plant `x_{k+1} = F x_k + G u_k + v_k`, `y_k = C x_k + η_k`.
///
/// `G` is carried along for completeness; the control input cancels out of the
/// estimation-error dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub f: Mat,
    pub g: Mat,
    pub c: Mat,
    pub r0: Mat,
    pub r1: Mat,
    pub r2: Mat,
}

impl SystemModel {
    pub fn new(f: Mat, g: Mat, c: Mat, r0: Mat, r1: Mat, r2: Mat) -> Result<Self> {
        Self::with_tolerances(f, g, c, r0, r1, r2, &Tolerances::default())
    }

    pub fn with_tolerances(
        f: Mat,
        g: Mat,
        c: Mat,
        r0: Mat,
        r1: Mat,
        r2: Mat,
        tol: &Tolerances,
    ) -> Result<Self> {
        let n = require_square(&f, "F")?;
        for (m, name) in [(&f, "F"), (&g, "G"), (&c, "C")] {
            require_finite(m, name)?;
        }
        if g.nrows() != n {
            return Err(Error::Dimension(format!("G must have {n} rows, got {}", g.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Dimension(format!("C must have {n} columns, got {}", c.ncols())));
        }
        let m = c.nrows();
        for (mat, name, dim) in [(&r0, "R0", n), (&r1, "R1", n), (&r2, "R2", m)] {
            if mat.shape() != (dim, dim) {
                return Err(Error::Dimension(format!(
                    "{name} must be {dim}x{dim}, got {}x{}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            check_psd(mat, tol.psd, name)?;
        }
        Ok(Self { f, g, c, r0: symmetrize(&r0), r1: symmetrize(&r1), r2: symmetrize(&r2) })
    }

    /// State dimension `n`.
    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    /// Output dimension `m`.
    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    /// Reachable sets of the error are unbounded when `F` itself is not Schur.
    pub fn require_open_loop_stable(&self) -> Result<f64> {
        let radius = spectral_radius(&self.f)?;
        if radius >= 1.0 {
            return Err(Error::Unbounded(format!(
                "open-loop unstable plant (ρ(F) = {radius:.6} ≥ 1): hidden reachable sets are unbounded"
            )));
        }
        Ok(radius)
    }
}

/// Observer gain `L` (n×m).
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverDesign {
    pub l: Mat,
}

impl ObserverDesign {
    pub fn new(l: Mat, model: &SystemModel) -> Result<Self> {
        Self::with_tolerances(l, model, &Tolerances::default())
    }

    pub fn with_tolerances(l: Mat, model: &SystemModel, tol: &Tolerances) -> Result<Self> {
        require_finite(&l, "L")?;
        if l.shape() != (model.n(), model.m()) {
            return Err(Error::Dimension(format!(
                "L must be {}x{}, got {}x{}",
                model.n(),
                model.m(),
                l.nrows(),
                l.ncols()
            )));
        }
        let design = Self { l };
        let radius = spectral_radius(&design.error_dynamics(model))?;
        if radius >= 1.0 - tol.schur {
            return Err(Error::Unstable { radius, context: "F − LC".into() });
        }
        Ok(design)
    }

    /// `F − L C`
    pub fn error_dynamics(&self, model: &SystemModel) -> Mat {
        &model.f - &self.l * &model.c
    }
}

/// Attack-free steady-state statistics of the estimation error and residual.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub p_err: Mat,
    pub sigma: Mat,
    pub sigma_sqrt: Mat,
    pub sigma_inv: Mat,
    pub sigma_inv_sqrt: Mat,
}

impl SteadyState {
    /// Build from an error covariance and a residual covariance directly.
    pub fn from_parts(p_err: Mat, sigma: Mat, tol: &Tolerances) -> Result<Self> {
        require_square(&sigma, "Σ")?;
        let sigma = symmetrize(&sigma);
        let lmin = min_eigenvalue(&sigma);
        if lmin <= tol.psd {
            return Err(Error::Degenerate(format!(
                "residual covariance Σ is singular (min eigenvalue {lmin:.3e})"
            )));
        }
        let sigma_sqrt = sqrt_sym(&sigma, tol.psd)?;
        let sigma_inv_sqrt = inv_sqrt_sym(&sigma, tol.psd)?;
        let sigma_inv = symmetrize(&(&sigma_inv_sqrt * &sigma_inv_sqrt));
        Ok(Self { p_err, sigma, sigma_sqrt, sigma_inv, sigma_inv_sqrt })
    }

    /// Chi-squared distance `rᵀ Σ⁻¹ r`.
    pub fn distance(&self, r: &Vector) -> f64 {
        (r.transpose() * &self.sigma_inv * r)[(0, 0)]
    }
}

const KRONECKER_MAX_DIM: usize = 20;

/// Solve `A X Aᵀ − X + Q = 0` for Schur-stable `A`.
///
/// Uses the vectorized Kronecker system for `n ≤ 20` and squared Smith
/// iteration above that.
pub fn solve_discrete_lyapunov(a: &Mat, q: &Mat, tol: &Tolerances) -> Result<Mat> {
    let n = require_square(a, "A")?;
    if q.shape() != (n, n) {
        return Err(Error::Dimension(format!("Q must be {n}x{n}")));
    }
    require_finite(a, "A")?;
    require_finite(q, "Q")?;
    check_symmetric(q, tol.psd.max(1e-12), "Q")?;
    let radius = spectral_radius(a)?;
    if radius >= 1.0 {
        return Err(Error::Unstable { radius, context: "Lyapunov operator".into() });
    }
    let q = symmetrize(q);

    let x = if n <= KRONECKER_MAX_DIM {
        let nn = n * n;
        let system = Mat::identity(nn, nn) - kron(a, a);
        // column-major vec(Q)
        let rhs = Vector::from_column_slice(q.as_slice());
        let sol = system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular Kronecker system in Lyapunov solve".into()))?;
        Mat::from_column_slice(n, n, sol.as_slice())
    } else {
        smith_iteration(a, &q)?
    };
    let x = symmetrize(&x);

    let residual = (a * &x * a.transpose() - &x + &q).norm();
    let scale = q.norm();
    if residual > tol.lyap * scale.max(f64::MIN_POSITIVE) && residual > 1e-300 {
        return Err(Error::Numerical(format!(
            "Lyapunov residual {residual:.3e} exceeds tolerance (‖Q‖ = {scale:.3e})"
        )));
    }
    Ok(x)
}

fn smith_iteration(a: &Mat, q: &Mat) -> Result<Mat> {
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let update = &ak * &x * ak.transpose();
        x += &update;
        ak = &ak * &ak;
        if update.norm() <= 1e-16 * x.norm() {
            return Ok(x);
        }
    }
    Err(Error::Numerical("Smith iteration did not converge".into()))
}

/// Steady-state error covariance and residual covariance for a given observer.
pub fn steady_state(model: &SystemModel, observer: &ObserverDesign, tol: &Tolerances) -> Result<SteadyState> {
    let a = observer.error_dynamics(model);
    let radius = spectral_radius(&a)?;
    if radius >= 1.0 - tol.schur {
        return Err(Error::Unstable { radius, context: "F − LC".into() });
    }
    let l = &observer.l;
    let q = &model.r1 + l * &model.r2 * l.transpose();
    let p_err = solve_discrete_lyapunov(&a, &q, tol)?;
    let sigma = &model.c * &p_err * model.c.transpose() + &model.r2;
    SteadyState::from_parts(p_err, sigma, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{from_rows, min_eigenvalue};

    pub(crate) fn two_state() -> (SystemModel, ObserverDesign) {
        let f = from_rows(&[vec![0.84, 0.23], vec![-0.47, 0.12]]).unwrap();
        let g = from_rows(&[vec![0.07], vec![0.23]]).unwrap();
        let c = from_rows(&[vec![1.0, 0.0]]).unwrap();
        let r1 = from_rows(&[vec![0.45, -0.11], vec![-0.11, 0.45]]).unwrap();
        let model =
            SystemModel::new(f, g, c, Mat::identity(2, 2), r1, Mat::identity(1, 1)).unwrap();
        let l = from_rows(&[vec![1.16], vec![-0.69]]).unwrap();
        let obs = ObserverDesign::new(l, &model).unwrap();
        (model, obs)
    }

    #[test]
    fn lyapunov_zero_dynamics_returns_q() {
        let q = from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let x = solve_discrete_lyapunov(&Mat::zeros(2, 2), &q, &Tolerances::default()).unwrap();
        assert!((x - q).norm() < 1e-14);
    }

    #[test]
    fn lyapunov_scalar_geometric_series() {
        let a = Mat::from_element(1, 1, 0.5);
        let q = Mat::from_element(1, 1, 1.0);
        let x = solve_discrete_lyapunov(&a, &q, &Tolerances::default()).unwrap();
        assert!((x[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_rejects_unstable_and_asymmetric() {
        let tol = Tolerances::default();
        let a = Mat::from_element(1, 1, 1.0);
        assert!(matches!(
            solve_discrete_lyapunov(&a, &Mat::identity(1, 1), &tol),
            Err(Error::Unstable { .. })
        ));
        let q = from_rows(&[vec![1.0, 0.3], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            solve_discrete_lyapunov(&Mat::zeros(2, 2), &q, &tol),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn smith_branch_matches_kronecker() {
        let n = 4;
        let a = Mat::from_fn(n, n, |i, j| 0.15 * ((i * 3 + j * 7) % 5) as f64 / 5.0 - 0.05);
        let q = Mat::identity(n, n);
        let x1 = solve_discrete_lyapunov(&a, &q, &Tolerances::default()).unwrap();
        let x2 = smith_iteration(&a, &q).unwrap();
        assert!((x1 - x2).norm() < 1e-12);
    }

    #[test]
    fn residual_covariance_reference_system() {
        let (model, obs) = two_state();
        let ss = steady_state(&model, &obs, &Tolerances::default()).unwrap();
        // Lyapunov route on the stated matrices
        assert!((ss.sigma[(0, 0)] - 3.231633450927).abs() < 1e-9);
        assert!(min_eigenvalue(&ss.p_err) > 0.0);
        let w = &ss.sigma_sqrt;
        assert!((w * w - &ss.sigma).norm() < 1e-12);
    }

    #[test]
    fn zero_output_matrix_gives_pure_measurement_noise() {
        let (model, _) = two_state();
        let c = Mat::zeros(1, 2);
        let r2 = Mat::from_element(1, 1, 2.5);
        let m2 = SystemModel::new(model.f.clone(), model.g.clone(), c, model.r0.clone(), model.r1.clone(), r2.clone())
            .unwrap();
        let obs = ObserverDesign::new(Mat::from_column_slice(2, 1, &[0.3, -0.1]), &m2).unwrap();
        let ss = steady_state(&m2, &obs, &Tolerances::default()).unwrap();
        assert!((ss.sigma - r2).norm() < 1e-14);
    }

    #[test]
    fn zero_gain_reduces_to_open_loop_predictor() {
        let (model, _) = two_state();
        let obs = ObserverDesign::new(Mat::zeros(2, 1), &model).unwrap();
        let tol = Tolerances::default();
        let ss = steady_state(&model, &obs, &tol).unwrap();
        let open = solve_discrete_lyapunov(&model.f, &model.r1, &tol).unwrap();
        assert!((ss.p_err - open).norm() < 1e-12);
    }

    #[test]
    fn singular_residual_covariance_is_reported() {
        let (model, _) = two_state();
        let m2 = SystemModel::new(
            model.f.clone(),
            model.g.clone(),
            Mat::zeros(1, 2),
            model.r0.clone(),
            model.r1.clone(),
            Mat::zeros(1, 1),
        )
        .unwrap();
        let obs = ObserverDesign::new(Mat::zeros(2, 1), &m2).unwrap();
        let err = steady_state(&m2, &obs, &Tolerances::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerate(ref msg) if msg.contains("min eigenvalue")));
    }

    #[test]
    fn dimension_checks() {
        let (model, _) = two_state();
        assert!(ObserverDesign::new(Mat::zeros(1, 1), &model).is_err());
        let bad = SystemModel::new(
            model.f.clone(),
            model.g.clone(),
            Mat::zeros(1, 3),
            model.r0.clone(),
            model.r1.clone(),
            model.r2.clone(),
        );
        assert!(matches!(bad, Err(Error::Dimension(_))));
        let not_psd = SystemModel::new(
            model.f.clone(),
            model.g.clone(),
            model.c.clone(),
            model.r0.clone(),
            -Mat::identity(2, 2),
            model.r2.clone(),
        );
        assert!(matches!(not_psd, Err(Error::Validation(_))));
    }

    #[test]
    fn unstable_observer_rejected() {
        let (model, _) = two_state();
        let err = ObserverDesign::new(Mat::from_column_slice(2, 1, &[3.0, 0.0]), &model).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
    }
}
