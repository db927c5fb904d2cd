//! Log-det barrier method for LMI feasibility.
//!
//! Phase I solves `min s  s.t.  Fᵢ(x) + s I ⪰ 0,  |xⱼ| ≤ R` with a
//! path-following barrier. Any iterate with `s ≤ tol` is returned as a
//! feasible point; a lower bound `s(t) − θ/t > tol` on the optimal shift
//! certifies infeasibility.

use nalgebra::Cholesky;

use super::BlockLMI;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, Mat, Vector};

/// Box radius on every coordinate; keeps phase I bounded.
pub(crate) const BOX_RADIUS: f64 = 1e6;
const MU: f64 = 20.0;
const T_MAX: f64 = 1e15;
const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseOneOutcome {
    Feasible(Vec<f64>),
    /// `lower_bound` is a certified lower bound on the optimal shift.
    Infeasible { lower_bound: f64 },
}

struct Barrier<'a> {
    lmis: &'a [BlockLMI],
    n: usize,
}

impl Barrier<'_> {
    /// Shifted matrices `Fᵢ(x) + sI`, or `None` outside the domain.
    fn slacks(&self, y: &[f64]) -> Option<Vec<Cholesky<f64, nalgebra::Dyn>>> {
        let (x, s) = (&y[..self.n], y[self.n]);
        if x.iter().any(|v| v.abs() >= BOX_RADIUS) {
            return None;
        }
        self.lmis
            .iter()
            .map(|l| {
                let mut m = l.instantiate(x);
                for i in 0..m.nrows() {
                    m[(i, i)] += s;
                }
                Cholesky::new(m)
            })
            .collect()
    }

    fn value(&self, y: &[f64], t: f64) -> Option<f64> {
        let chols = self.slacks(y)?;
        let mut v = t * y[self.n];
        for c in &chols {
            v -= 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        for &xj in &y[..self.n] {
            v -= (BOX_RADIUS - xj).ln() + (BOX_RADIUS + xj).ln();
        }
        Some(v)
    }

    fn gradient_hessian(&self, y: &[f64], t: f64) -> Option<(Vector, Mat)> {
        let n1 = self.n + 1;
        let chols = self.slacks(y)?;
        let mut g = Vector::zeros(n1);
        let mut h = Mat::zeros(n1, n1);
        g[self.n] = t;
        for (lmi, chol) in self.lmis.iter().zip(&chols) {
            let d = lmi.dim();
            let sinv = chol.inverse();
            // Aₖ = S⁻¹ Gₖ for every coordinate including the shift
            let a: Vec<Option<Mat>> = (0..n1)
                .map(|k| {
                    if k == self.n {
                        Some(sinv.clone())
                    } else if lmi.coeffs[k].amax() == 0.0 {
                        None
                    } else {
                        Some(&sinv * &lmi.coeffs[k])
                    }
                })
                .collect();
            for k in 0..n1 {
                let Some(ak) = &a[k] else { continue };
                g[k] -= ak.trace();
                for l in k..n1 {
                    let Some(al) = &a[l] else { continue };
                    let mut tr = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            tr += ak[(i, j)] * al[(j, i)];
                        }
                    }
                    h[(k, l)] += tr;
                    if l != k {
                        h[(l, k)] += tr;
                    }
                }
            }
        }
        for j in 0..self.n {
            let (up, lo) = (BOX_RADIUS - y[j], BOX_RADIUS + y[j]);
            g[j] += 1.0 / up - 1.0 / lo;
            h[(j, j)] += 1.0 / (up * up) + 1.0 / (lo * lo);
        }
        Some((g, h))
    }
}

fn newton_direction(g: &Vector, h: &Mat) -> Result<Vector> {
    let mut reg = 0.0;
    let scale = h.diagonal().amax().max(1e-300);
    for _ in 0..20 {
        let mut hr = h.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += reg;
        }
        if let Some(c) = Cholesky::new(hr) {
            return Ok(-c.solve(g));
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    Err(Error::Numerical("barrier Hessian is not positive definite".into()))
}

/// Run phase I on `lmis` over `n` coordinates.
pub fn phase_one(lmis: &[BlockLMI], n: usize, tol_feas: f64, start: Option<&[f64]>) -> Result<PhaseOneOutcome> {
    if lmis.iter().any(|l| l.coeffs.len() != n) {
        return Err(Error::Layout("constraint coordinate count does not match the problem".into()));
    }
    let barrier = Barrier { lmis, n };
    let mut y = vec![0.0; n + 1];
    if let Some(x0) = start {
        y[..n].copy_from_slice(x0);
    }
    let worst = lmis.iter().map(|l| min_eigenvalue(&l.instantiate(&y[..n]))).fold(f64::INFINITY, f64::min);
    if worst >= 0.0 && worst.is_finite() {
        return Ok(PhaseOneOutcome::Feasible(y[..n].to_vec()));
    }
    y[n] = -worst + 1.0_f64.max(worst.abs());
    let theta = (lmis.iter().map(|l| l.dim()).sum::<usize>() + 2 * n) as f64;

    let mut t = 1.0 / y[n].abs().max(1.0);
    loop {
        // centering
        for _ in 0..NEWTON_MAX {
            if y[n] <= tol_feas.min(0.0) {
                return Ok(PhaseOneOutcome::Feasible(y[..n].to_vec()));
            }
            let (g, h) = barrier
                .gradient_hessian(&y, t)
                .ok_or_else(|| Error::Numerical("barrier iterate left the domain".into()))?;
            let dy = newton_direction(&g, &h)?;
            let decrement = -g.dot(&dy);
            if decrement / 2.0 <= NEWTON_TOL {
                break;
            }
            let f0 = barrier.value(&y, t).expect("current iterate is interior");
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = y.iter().zip(dy.iter()).map(|(a, b)| a + step * b).collect();
                if let Some(f1) = barrier.value(&trial, t) {
                    if f1 <= f0 - 0.25 * step * decrement {
                        y = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if y[n] <= tol_feas {
            return Ok(PhaseOneOutcome::Feasible(y[..n].to_vec()));
        }
        let lower = y[n] - theta / t;
        if lower > tol_feas.max(0.0) {
            return Ok(PhaseOneOutcome::Infeasible { lower_bound: lower });
        }
        if t >= T_MAX {
            // s stays above the tolerance with no certificate: report the
            // attained shift as the infeasibility measure
            return Ok(PhaseOneOutcome::Infeasible { lower_bound: lower.max(0.0) });
        }
        t *= MU;
    }
}
