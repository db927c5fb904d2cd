//! Backend (a): exponential-cone reformulation for an interior-point conic
//! solver.
//!
//! Variables are `(x, Z, u)` with `Z` lower triangular. Constraints:
//! every LMI as a PSD-triangle cone, `[[X, Z], [Zᵀ, Diag Z]] ⪰ 0`, and
//! `(uᵢ, 1, Zᵢᵢ)` in the exponential cone (`e^{uᵢ} ≤ Zᵢᵢ`). Minimizing
//! `−Σ uᵢ` then minimizes `−log det X`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, ExponentialConeT, IPSolver, PSDTriangleConeT, SolverStatus,
    SupportedConeT,
};

use super::barrier::{phase_one, PhaseOneOutcome};
use super::{AffineExpr, BlockLMI, MaxDetProblem, UNBOUNDED_MAGNITUDE};
use crate::error::{Error, Result};
use crate::linalg::{inv_sqrt_sym, symmetrize, Mat};

/// Scaled upper-triangle vectorization, column major, off-diagonals times √2.
pub(crate) fn svec(m: &Mat) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for col in 0..d {
        for row in 0..=col {
            if row == col {
                out.push(m[(row, col)]);
            } else {
                out.push(std::f64::consts::SQRT_2 * 0.5 * (m[(row, col)] + m[(col, row)]));
            }
        }
    }
    out
}

struct Builder {
    rows: usize,
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl Builder {
    /// Slack `s = svec(F(x))` written as `b − A x`.
    fn push_lmi(&mut self, lmi: &BlockLMI) {
        let b0 = svec(&lmi.f0);
        for (k, f) in lmi.coeffs.iter().enumerate() {
            if f.amax() == 0.0 {
                continue;
            }
            for (r, val) in svec(f).into_iter().enumerate() {
                if val != 0.0 {
                    self.i.push(self.rows + r);
                    self.j.push(k);
                    self.v.push(-val);
                }
            }
        }
        self.rows += b0.len();
        self.b.extend(b0);
        self.cones.push(PSDTriangleConeT(lmi.dim()));
    }
}

/// The conic solver sees the program in its original coordinates first. Its
/// iterates are only feasible up to residual tolerances, and on thin
/// feasible sets it can stall or even report infeasibility. In any of those
/// cases a phase-one solve either confirms infeasibility or supplies an
/// interior point `x₀`; the program is then re-posed in offsets from `x₀`
/// with every constraint congruence-normalized to `F(x₀) = I`, which is far
/// better conditioned. Only if that point still misses a constraint does the
/// solve repeat with a margin of twice the miss.
pub(super) fn solve(problem: &MaxDetProblem) -> Result<(Vec<f64>, f64)> {
    let tol = problem.settings.tol_feas;
    let reason = match solve_with_margin(problem, 0.0, None) {
        Ok(out) => {
            let worst = problem.worst_violation(&out.0);
            if worst >= -tol {
                return Ok(out);
            }
            format!("solution misses a constraint by {:.3e}", -worst)
        }
        Err(Error::Infeasible(msg) | Error::Numerical(msg)) => msg,
        Err(e) => return Err(e),
    };
    match phase_one(&problem.solver_constraints()?, problem.vars.len(), 0.0, None)? {
        PhaseOneOutcome::Infeasible { lower_bound } => Err(Error::Infeasible(format!(
            "conic solver: {reason}; phase one certifies infeasibility (measure {lower_bound:.3e})"
        ))),
        PhaseOneOutcome::Feasible(x0) => {
            log::debug!("conic solver: {reason}; re-solving around a phase-one interior point");
            solve_with_retries(problem, &x0)
        }
    }
}

fn solve_with_retries(problem: &MaxDetProblem, x0: &[f64]) -> Result<(Vec<f64>, f64)> {
    let tol = problem.settings.tol_feas;
    let center = Some(x0);
    let mut margin = 0.0;
    let mut out = solve_with_margin(problem, margin, center)?;
    for _ in 0..3 {
        let worst = problem.worst_violation(&out.0);
        if worst >= -tol {
            break;
        }
        margin = 2.0 * (margin - worst);
        out = solve_with_margin(problem, margin, center)?;
    }
    Ok(out)
}

/// `F(x₀ + y)` under the congruence by `F(x₀)^{-1/2}`, as an LMI in `y`.
fn recentered(lmi: &BlockLMI, x0: &[f64]) -> Result<BlockLMI> {
    let s = inv_sqrt_sym(&lmi.instantiate(x0), 0.0)?;
    let d = lmi.dim();
    Ok(BlockLMI {
        name: lmi.name.clone(),
        block_sizes: vec![d],
        f0: Mat::identity(d, d),
        coeffs: lmi.coeffs.iter().map(|f| symmetrize(&(&s * f * &s))).collect(),
    })
}

fn solve_with_margin(problem: &MaxDetProblem, margin: f64, center: Option<&[f64]>) -> Result<(Vec<f64>, f64)> {
    let mut vars = problem.vars.clone();
    let n0 = vars.len();
    let d = vars.shape(problem.objective).dims().0;
    let z = vars.lower_triangular("Z", d)?;
    let u = vars.full("u", d, 1)?;
    let n = vars.len();

    // with a center the unknowns are offsets y = x − x₀
    let mut xe = AffineExpr::var(&vars, problem.objective)?;
    if let Some(x0) = center {
        xe = xe.add_constant(&problem.vars.value(problem.objective, x0))?;
    }
    let ze = AffineExpr::var(&vars, z)?;
    let mut diag_z = AffineExpr::zeros(d, d);
    for i in 0..d {
        let e = Mat::from_fn(d, d, |r, c| if r == i && c == i { 1.0 } else { 0.0 });
        diag_z = diag_z.add(&ze.left_mul(&e)?.right_mul(&e)?)?;
    }
    let det_root =
        BlockLMI::assemble("determinant root", &vars, &[vec![Some(xe), Some(ze)], vec![None, Some(diag_z)]])?;

    let mut bld = Builder { rows: 0, i: vec![], j: vec![], v: vec![], b: vec![], cones: vec![] };
    for c in problem.solver_constraints()? {
        let c = match center {
            Some(x0) => recentered(&c, x0)?,
            None => c,
        };
        bld.push_lmi(&c.resized(n).with_margin(margin));
    }
    bld.push_lmi(&det_root.diagonally_scaled());

    let z_off = vars.offset(z);
    let u_off = vars.offset(u);
    // diagonal of Z sits at the start of each column block in lower-triangle order
    let mut diag_idx = Vec::with_capacity(d);
    let mut k = 0;
    for j in 0..d {
        diag_idx.push(z_off + k);
        k += d - j;
    }
    for (i, &zi) in diag_idx.iter().enumerate() {
        // (uᵢ, 1, Zᵢᵢ)
        bld.i.push(bld.rows);
        bld.j.push(u_off + i);
        bld.v.push(-1.0);
        bld.b.push(0.0);
        bld.b.push(1.0);
        bld.i.push(bld.rows + 2);
        bld.j.push(zi);
        bld.v.push(-1.0);
        bld.b.push(0.0);
        bld.rows += 3;
        bld.cones.push(ExponentialConeT());
    }

    let mut q = vec![0.0; n];
    for i in 0..d {
        q[u_off + i] = -1.0;
    }
    let a = CscMatrix::new_from_triplets(bld.rows, n, bld.i, bld.j, bld.v);
    let p = CscMatrix::zeros((n, n));
    let tol = problem.settings.tol_gap.clamp(1e-10, 1e-6);
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(problem.settings.max_iter as u32)
        .tol_gap_abs(tol)
        .tol_gap_rel(tol)
        .tol_feas((problem.settings.tol_feas * 1e-2).clamp(1e-10, 1e-6))
        .build()
        .map_err(|e| Error::Numerical(format!("conic solver settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &bld.b, &bld.cones, settings)
        .map_err(|e| Error::Numerical(format!("conic solver setup: {e}")))?;
    solver.solve();
    let sol = &solver.solution;
    match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            if sol.x[..n0].iter().any(|v| v.abs() > UNBOUNDED_MAGNITUDE) {
                return Err(Error::Unbounded("determinant grows without bound over the feasible set".into()));
            }
            let gap = (sol.obj_val - sol.obj_val_dual).abs();
            let mut x = sol.x[..n0].to_vec();
            if let Some(x0) = center {
                x.iter_mut().zip(x0).for_each(|(xi, ci)| *xi += ci);
            }
            Ok((x, gap))
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            Err(Error::Infeasible("conic solver certified primal infeasibility".into()))
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            Err(Error::Unbounded("determinant grows without bound over the feasible set".into()))
        }
        other => Err(Error::Numerical(format!("conic solver stopped with status {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_preserves_inner_product() {
        let a = Mat::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 5.0, -1.0, 3.0, -1.0, 4.0]);
        let b = Mat::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.1, -2.0, 0.7, 0.0, 0.7, 1.5]);
        let dot: f64 = svec(&a).iter().zip(svec(&b)).map(|(x, y)| x * y).sum();
        assert!((dot - a.dot(&b)).abs() < 1e-12);
        // column-major upper triangle: (0,0), (0,1), (1,1), (0,2), ...
        let s = svec(&a);
        assert_eq!(s[0], 1.0);
        assert!((s[1] - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(s[2], 5.0);
    }
}
