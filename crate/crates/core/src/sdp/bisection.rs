//! Backend (b): bisection on the determinant root.
//!
//! For fixed `t`, `(det X)^{1/d} ≥ t` holds iff some lower-triangular `Z`
//! satisfies `[[X, Z], [Zᵀ, Diag Z]] ⪰ 0` and the geometric mean of `diag Z`
//! is at least `t`. The geometric mean is a tower of 2×2 LMIs
//! `[[a, w], [w, b]] ⪰ 0` over leaves padded with the constant `t` to a power
//! of two. Each `t` is a pure feasibility question for phase I.

use super::barrier::{phase_one, PhaseOneOutcome};
use super::{AffineExpr, BlockLMI, MaxDetProblem, VarSet, UNBOUNDED_MAGNITUDE};
use crate::error::{Error, Result};
use crate::linalg::{logdet_pd, Mat};

const MAX_BISECTIONS: usize = 200;
const MAX_DOUBLINGS: usize = 200;

struct Epigraph {
    vars: VarSet,
    base: Vec<BlockLMI>,
    det_root: BlockLMI,
    diag: Vec<AffineExpr>,
    d: usize,
}

impl Epigraph {
    fn new(problem: &MaxDetProblem) -> Result<Self> {
        let mut vars = problem.vars.clone();
        let d = vars.shape(problem.objective).dims().0;
        let z = vars.lower_triangular("Z", d)?;
        let xe = AffineExpr::var(&vars, problem.objective)?;
        let ze = AffineExpr::var(&vars, z)?;
        let mut diag_z = AffineExpr::zeros(d, d);
        let mut diag = Vec::with_capacity(d);
        for i in 0..d {
            let e = Mat::from_fn(d, 1, |r, _| if r == i { 1.0 } else { 0.0 });
            let zii = ze.left_mul(&e.transpose())?.right_mul(&e)?;
            diag_z = diag_z.add(&zii.left_mul(&e)?.right_mul(&e.transpose())?)?;
            diag.push(zii);
        }
        let det_root = BlockLMI::assemble(
            "determinant root",
            &vars,
            &[vec![Some(xe), Some(ze)], vec![None, Some(diag_z)]],
        )?
        .diagonally_scaled();
        let n = vars.len();
        let base = problem.solver_constraints()?.iter().map(|c| c.resized(n)).collect();
        Ok(Self { vars, base, det_root, diag, d })
    }

    /// Full constraint list and coordinate count for level `t`.
    fn at(&self, t: f64) -> Result<(Vec<BlockLMI>, usize)> {
        let mut vars = self.vars.clone();
        let mut level: Vec<AffineExpr> = self.diag.clone();
        let width = self.d.next_power_of_two().max(2);
        while level.len() < width {
            level.push(AffineExpr::constant(Mat::from_element(1, 1, t)));
        }
        let mut towers = Vec::new();
        while level.len() > 2 {
            let mut next = Vec::with_capacity(level.len() / 2);
            for pair in level.chunks(2) {
                let w = vars.full("w", 1, 1)?;
                let we = AffineExpr::var(&vars, w)?;
                towers.push((pair[0].clone(), pair[1].clone(), Some(we.clone())));
                next.push(we);
            }
            level = next;
        }
        towers.push((level[0].clone(), level[1].clone(), None));

        let n = vars.len();
        let mut lmis: Vec<BlockLMI> = self.base.iter().map(|c| c.resized(n)).collect();
        lmis.push(self.det_root.resized(n));
        for (a, b, w) in towers {
            let w = w.unwrap_or_else(|| AffineExpr::constant(Mat::from_element(1, 1, t)));
            lmis.push(
                BlockLMI::assemble("geometric mean", &vars, &[vec![Some(a), Some(w)], vec![None, Some(b)]])?
                    .diagonally_scaled(),
            );
        }
        Ok((lmis, n))
    }

    /// Feasible point at level `t`, if phase I finds one.
    fn try_level(&self, t: f64, start: Option<&[f64]>) -> Result<Option<Vec<f64>>> {
        let (lmis, n) = self.at(t)?;
        let start = start.map(|s| {
            let mut v = s.to_vec();
            v.resize(n, 0.0);
            v
        });
        match phase_one(&lmis, n, 0.0, start.as_deref())? {
            PhaseOneOutcome::Feasible(x) => Ok(Some(x)),
            PhaseOneOutcome::Infeasible { .. } => Ok(None),
        }
    }
}

pub(super) fn solve(problem: &MaxDetProblem) -> Result<(Vec<f64>, f64)> {
    let n0 = problem.vars.len();
    let base = problem.solver_constraints()?;
    let x0 = match phase_one(&base, n0, 0.0, None)? {
        PhaseOneOutcome::Feasible(x) => x,
        PhaseOneOutcome::Infeasible { lower_bound } => {
            return Err(Error::Infeasible(format!(
                "no point satisfies the constraints (shift lower bound {lower_bound:.3e})"
            )))
        }
    };
    let epi = Epigraph::new(problem)?;
    let d = epi.d as f64;
    let p0 = problem.vars.value(problem.objective, &x0);
    let mut t_lo = logdet_pd(&p0).map(|l| (l / d).exp()).unwrap_or(problem.settings.eps_slack).max(1e-300);
    let mut best = x0.clone();

    // grow the upper end until level t becomes infeasible
    let mut t_hi = t_lo * 2.0;
    let mut doublings = 0;
    loop {
        match epi.try_level(t_hi, None)? {
            Some(x) => {
                if x.iter().any(|v| v.abs() > UNBOUNDED_MAGNITUDE) {
                    return Err(Error::Unbounded("determinant grows without bound over the feasible set".into()));
                }
                best = x;
                t_lo = t_hi;
                t_hi *= 2.0;
            }
            None => break,
        }
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::Unbounded("determinant grows without bound over the feasible set".into()));
        }
    }

    for _ in 0..MAX_BISECTIONS {
        if d * (t_hi / t_lo).ln() <= problem.settings.tol_gap {
            break;
        }
        let mid = (t_lo * t_hi).sqrt();
        match epi.try_level(mid, Some(&best))? {
            Some(x) => {
                best = x;
                t_lo = mid;
            }
            None => t_hi = mid,
        }
    }
    best.truncate(n0);
    Ok((best, d * (t_hi / t_lo).ln()))
}
