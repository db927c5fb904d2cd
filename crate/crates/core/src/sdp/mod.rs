//! Affine linear matrix inequalities and determinant maximization.
//!
//! Decision variables live in a [`VarSet`] as one flat coordinate vector.
//! [`AffineExpr`] describes a matrix-valued affine function of those
//! coordinates, [`BlockLMI::assemble`] stacks a grid of them into a single
//! symmetric constraint `F0 + Σ xₖ Fₖ ⪰ 0`, and [`solve_maxdet`] maximizes
//! `log det` of one symmetric variable subject to a list of such constraints.

mod barrier;
mod bisection;
mod conic;
pub mod dump;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{logdet_pd, min_eigenvalue, symmetrize, Mat};

pub use barrier::{phase_one, PhaseOneOutcome};

/// Coordinates beyond this magnitude mean the determinant is unbounded over
/// the feasible set (every problem in this crate lives at unit scale or below).
pub(crate) const UNBOUNDED_MAGNITUDE: f64 = 1e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarShape {
    /// `d×d` symmetric, stored as the `d(d+1)/2` lower-triangle entries.
    Symmetric(usize),
    /// `r×c` unstructured.
    Full(usize, usize),
    /// `d×d` lower triangular, same coordinate order as `Symmetric`.
    LowerTriangular(usize),
}

impl VarShape {
    pub fn coords(&self) -> usize {
        match *self {
            VarShape::Symmetric(d) | VarShape::LowerTriangular(d) => d * (d + 1) / 2,
            VarShape::Full(r, c) => r * c,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match *self {
            VarShape::Symmetric(d) | VarShape::LowerTriangular(d) => (d, d),
            VarShape::Full(r, c) => (r, c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, PartialEq)]
struct VarInfo {
    name: String,
    shape: VarShape,
    offset: usize,
}

/// Registry of matrix decision variables sharing one coordinate vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VarSet {
    vars: Vec<VarInfo>,
    len: usize,
}

impl VarSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, shape: VarShape) -> Result<VarId> {
        let (r, c) = shape.dims();
        if r == 0 || c == 0 {
            return Err(Error::Dimension(format!("variable `{name}` has an empty dimension")));
        }
        let id = VarId(self.vars.len());
        self.vars.push(VarInfo { name: name.to_string(), shape, offset: self.len });
        self.len += shape.coords();
        Ok(id)
    }

    pub fn symmetric(&mut self, name: &str, d: usize) -> Result<VarId> {
        self.push(name, VarShape::Symmetric(d))
    }

    pub fn full(&mut self, name: &str, rows: usize, cols: usize) -> Result<VarId> {
        self.push(name, VarShape::Full(rows, cols))
    }

    pub fn lower_triangular(&mut self, name: &str, d: usize) -> Result<VarId> {
        self.push(name, VarShape::LowerTriangular(d))
    }

    /// Total number of scalar coordinates.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count(&self) -> usize {
        self.vars.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = VarId> {
        (0..self.vars.len()).map(VarId)
    }

    pub fn shape(&self, id: VarId) -> VarShape {
        self.vars[id.0].shape
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.vars[id.0].name
    }

    pub fn offset(&self, id: VarId) -> usize {
        self.vars[id.0].offset
    }

    fn check(&self, id: VarId) -> Result<()> {
        if id.0 < self.vars.len() {
            Ok(())
        } else {
            Err(Error::Layout(format!("unknown variable id {}", id.0)))
        }
    }

    /// Matrix position(s) of local coordinate `k`.
    fn positions(shape: VarShape, k: usize) -> ((usize, usize), Option<(usize, usize)>) {
        match shape {
            VarShape::Symmetric(d) | VarShape::LowerTriangular(d) => {
                let mirrored = matches!(shape, VarShape::Symmetric(_));
                let mut k = k;
                for j in 0..d {
                    let col_len = d - j;
                    if k < col_len {
                        let i = j + k;
                        return ((i, j), (mirrored && i != j).then_some((j, i)));
                    }
                    k -= col_len;
                }
                unreachable!("coordinate out of range")
            }
            VarShape::Full(r, _) => ((k % r, k / r), None),
        }
    }

    /// Basis matrix of local coordinate `k`.
    pub fn basis(&self, id: VarId, k: usize) -> Mat {
        let shape = self.shape(id);
        let (r, c) = shape.dims();
        let mut b = Mat::zeros(r, c);
        let (p, q) = Self::positions(shape, k);
        b[p] = 1.0;
        if let Some(q) = q {
            b[q] = 1.0;
        }
        b
    }

    /// Read a variable's matrix value out of the coordinate vector.
    pub fn value(&self, id: VarId, x: &[f64]) -> Mat {
        let shape = self.shape(id);
        let (r, c) = shape.dims();
        let off = self.offset(id);
        let mut m = Mat::zeros(r, c);
        for k in 0..shape.coords() {
            let (p, q) = Self::positions(shape, k);
            m[p] = x[off + k];
            if let Some(q) = q {
                m[q] = x[off + k];
            }
        }
        m
    }

    /// Write a matrix value into the coordinate vector (symmetric part only
    /// for symmetric variables).
    pub fn pack(&self, id: VarId, value: &Mat, x: &mut [f64]) -> Result<()> {
        let shape = self.shape(id);
        if value.shape() != shape.dims() {
            return Err(Error::Dimension(format!("value for `{}` has the wrong shape", self.name(id))));
        }
        let v = if matches!(shape, VarShape::Symmetric(_)) { symmetrize(value) } else { value.clone() };
        let off = self.offset(id);
        for k in 0..shape.coords() {
            let (p, _) = Self::positions(shape, k);
            x[off + k] = v[p];
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Term {
    coef: f64,
    left: Mat,
    var: VarId,
    transposed: bool,
    right: Mat,
}

/// Matrix-valued affine function `C + Σ cᵢ Lᵢ Xᵢ(ᵀ) Rᵢ` of the decision
/// variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    constant: Mat,
    terms: Vec<Term>,
}

impl AffineExpr {
    pub fn constant(m: Mat) -> Self {
        Self { constant: m, terms: Vec::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols))
    }

    pub fn identity(d: usize) -> Self {
        Self::constant(Mat::identity(d, d))
    }

    pub fn var(vars: &VarSet, id: VarId) -> Result<Self> {
        vars.check(id)?;
        let (r, c) = vars.shape(id).dims();
        Ok(Self {
            constant: Mat::zeros(r, c),
            terms: vec![Term {
                coef: 1.0,
                left: Mat::identity(r, r),
                var: id,
                transposed: false,
                right: Mat::identity(c, c),
            }],
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.constant.shape()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    /// `A · self`
    pub fn left_mul(&self, a: &Mat) -> Result<Self> {
        if a.ncols() != self.shape().0 {
            return Err(Error::Layout(format!(
                "left factor {}x{} does not match expression {}x{}",
                a.nrows(),
                a.ncols(),
                self.shape().0,
                self.shape().1
            )));
        }
        Ok(Self {
            constant: a * &self.constant,
            terms: self.terms.iter().map(|t| Term { left: a * &t.left, ..t.clone() }).collect(),
        })
    }

    /// `self · B`
    pub fn right_mul(&self, b: &Mat) -> Result<Self> {
        if b.nrows() != self.shape().1 {
            return Err(Error::Layout(format!(
                "right factor {}x{} does not match expression {}x{}",
                b.nrows(),
                b.ncols(),
                self.shape().0,
                self.shape().1
            )));
        }
        Ok(Self {
            constant: &self.constant * b,
            terms: self.terms.iter().map(|t| Term { right: &t.right * b, ..t.clone() }).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            constant: &self.constant * s,
            terms: self.terms.iter().map(|t| Term { coef: t.coef * s, ..t.clone() }).collect(),
        }
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Layout(format!(
                "cannot add {}x{} and {}x{} expressions",
                self.shape().0,
                self.shape().1,
                other.shape().0,
                other.shape().1
            )));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Self { constant: &self.constant + &other.constant, terms })
    }

    pub fn add_constant(&self, c: &Mat) -> Result<Self> {
        self.add(&Self::constant(c.clone()))
    }

    pub fn transpose(&self) -> Self {
        Self {
            constant: self.constant.transpose(),
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coef: t.coef,
                    left: t.right.transpose(),
                    var: t.var,
                    transposed: !t.transposed,
                    right: t.left.transpose(),
                })
                .collect(),
        }
    }

    /// Evaluate at coordinate vector `x`.
    pub fn eval(&self, vars: &VarSet, x: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let v = vars.value(t.var, x);
            let v = if t.transposed { v.transpose() } else { v };
            out += (&t.left * v * &t.right) * t.coef;
        }
        out
    }

    /// Coefficient matrices `(C, [F₁, …, F_N])` of the expanded form.
    pub fn expand(&self, vars: &VarSet) -> Result<(Mat, Vec<Mat>)> {
        let (r, c) = self.shape();
        let mut coeffs = vec![Mat::zeros(r, c); vars.len()];
        for t in &self.terms {
            vars.check(t.var)?;
            let off = vars.offset(t.var);
            for k in 0..vars.shape(t.var).coords() {
                let b = vars.basis(t.var, k);
                let b = if t.transposed { b.transpose() } else { b };
                coeffs[off + k] += (&t.left * b * &t.right) * t.coef;
            }
        }
        Ok((self.constant.clone(), coeffs))
    }
}

/// Symmetric affine constraint `F0 + Σ xₖ Fₖ ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLMI {
    pub name: String,
    /// Sizes of the diagonal blocks, in order.
    pub block_sizes: Vec<usize>,
    pub f0: Mat,
    pub coeffs: Vec<Mat>,
}

impl BlockLMI {
    /// Stack a square grid of blocks into one symmetric matrix expression.
    ///
    /// A missing entry below the diagonal is filled with the transpose of its
    /// mirror; a missing entry with no mirror is zero. Diagonal entries must
    /// be present and symmetric in expanded form, and supplied mirror pairs
    /// must agree.
    pub fn assemble(name: &str, vars: &VarSet, grid: &[Vec<Option<AffineExpr>>]) -> Result<Self> {
        let nb = grid.len();
        if nb == 0 {
            return Err(Error::Layout(format!("{name}: empty block grid")));
        }
        if grid.iter().any(|row| row.len() != nb) {
            return Err(Error::Layout(format!("{name}: block grid must be square")));
        }
        let mut sizes = vec![0usize; nb];
        for (i, size) in sizes.iter_mut().enumerate() {
            let diag = grid[i][i]
                .as_ref()
                .ok_or_else(|| Error::Layout(format!("{name}: diagonal block ({i},{i}) missing")))?;
            let (r, c) = diag.shape();
            if r != c {
                return Err(Error::Layout(format!("{name}: diagonal block ({i},{i}) is {r}x{c}")));
            }
            *size = r;
        }
        let offsets: Vec<usize> = sizes
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let dim: usize = sizes.iter().sum();
        let mut f0 = Mat::zeros(dim, dim);
        let mut coeffs = vec![Mat::zeros(dim, dim); vars.len()];

        for i in 0..nb {
            for j in 0..nb {
                let block = match (&grid[i][j], &grid[j][i]) {
                    (Some(b), _) => b.clone(),
                    (None, Some(mirror)) => mirror.transpose(),
                    (None, None) => AffineExpr::zeros(sizes[i], sizes[j]),
                };
                if block.shape() != (sizes[i], sizes[j]) {
                    return Err(Error::Layout(format!(
                        "{name}: block ({i},{j}) is {}x{}, expected {}x{}",
                        block.shape().0,
                        block.shape().1,
                        sizes[i],
                        sizes[j]
                    )));
                }
                let (c, fs) = block.expand(vars)?;
                f0.view_mut((offsets[i], offsets[j]), (sizes[i], sizes[j])).copy_from(&c);
                for (dst, f) in coeffs.iter_mut().zip(&fs) {
                    dst.view_mut((offsets[i], offsets[j]), (sizes[i], sizes[j])).copy_from(f);
                }
            }
        }

        let tol = 1e-12;
        let asym = |m: &Mat| (m - m.transpose()).amax() > tol * m.amax().max(1.0);
        if asym(&f0) || coeffs.iter().any(asym) {
            return Err(Error::Layout(format!(
                "{name}: assembled matrix is not symmetric (mirror blocks disagree or a diagonal block is asymmetric)"
            )));
        }
        Ok(Self { name: name.to_string(), block_sizes: sizes, f0: symmetrize(&f0), coeffs: coeffs.iter().map(symmetrize).collect() })
    }

    pub fn dim(&self) -> usize {
        self.f0.nrows()
    }

    /// `F(x) = F0 + Σ xₖ Fₖ`
    pub fn instantiate(&self, x: &[f64]) -> Mat {
        let mut m = self.f0.clone();
        for (f, &xk) in self.coeffs.iter().zip(x) {
            if xk != 0.0 {
                m += f * xk;
            }
        }
        m
    }

    pub fn min_eigenvalue(&self, x: &[f64]) -> f64 {
        min_eigenvalue(&self.instantiate(x))
    }

    /// Require `F(x) ⪰ margin·I` instead of `⪰ 0`.
    pub fn with_margin(mut self, margin: f64) -> Self {
        let d = self.dim();
        self.f0 -= Mat::identity(d, d) * margin;
        self
    }

    /// Congruence by a positive diagonal that brings every block row to unit
    /// Frobenius norm (largest block in the row); preserves the PSD cone.
    pub fn diagonally_scaled(&self) -> Self {
        let nb = self.block_sizes.len();
        let offsets: Vec<usize> =
            self.block_sizes.iter().scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let mut norms = vec![0.0f64; nb];
        for (i, ni) in norms.iter_mut().enumerate() {
            for j in 0..nb {
                let view = |m: &Mat| {
                    m.view((offsets[i], offsets[j]), (self.block_sizes[i], self.block_sizes[j])).norm()
                };
                *ni = ni.max(view(&self.f0));
                for f in &self.coeffs {
                    *ni = ni.max(view(f));
                }
            }
        }
        let mut d = vec![1.0; self.dim()];
        for i in 0..nb {
            let s = if norms[i] > 0.0 { 1.0 / norms[i].sqrt() } else { 1.0 };
            for k in 0..self.block_sizes[i] {
                d[offsets[i] + k] = s;
            }
        }
        let scale = |m: &Mat| Mat::from_fn(m.nrows(), m.ncols(), |r, c| d[r] * m[(r, c)] * d[c]);
        Self {
            name: self.name.clone(),
            block_sizes: self.block_sizes.clone(),
            f0: scale(&self.f0),
            coeffs: self.coeffs.iter().map(scale).collect(),
        }
    }

    /// Drop the coefficient list down to (or pad it up to) `n` coordinates.
    pub(crate) fn resized(&self, n: usize) -> Self {
        let d = self.dim();
        let mut coeffs = self.coeffs.clone();
        coeffs.resize(n, Mat::zeros(d, d));
        Self { coeffs, ..self.clone() }
    }
}

/// Which determinant-maximization backend to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Backend {
    /// Exponential-cone reformulation handed to an interior-point conic solver.
    #[default]
    #[serde(rename = "a")]
    Conic,
    /// Bisection on the determinant root with barrier feasibility solves.
    #[serde(rename = "b")]
    Bisection,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "conic" => Ok(Backend::Conic),
            "b" | "bisection" => Ok(Backend::Bisection),
            other => Err(Error::config("solver.backend", format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub backend: Backend,
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub eps_slack: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { backend: Backend::Conic, tol_feas: 1e-7, tol_gap: 1e-7, eps_slack: 1e-8, max_iter: 200 }
    }
}

/// Maximize `log det X` for a symmetric variable `X` under LMI constraints.
#[derive(Debug, Clone)]
pub struct MaxDetProblem {
    pub vars: VarSet,
    pub objective: VarId,
    pub constraints: Vec<BlockLMI>,
    pub settings: SolverSettings,
}

impl MaxDetProblem {
    pub fn new(vars: VarSet, objective: VarId, constraints: Vec<BlockLMI>, settings: SolverSettings) -> Result<Self> {
        vars.check(objective)?;
        if !matches!(vars.shape(objective), VarShape::Symmetric(_)) {
            return Err(Error::Validation("objective variable must be symmetric".into()));
        }
        if !(settings.tol_feas > 0.0 && settings.tol_gap > 0.0 && settings.eps_slack >= 0.0) {
            return Err(Error::Validation("solver tolerances must be positive".into()));
        }
        let off = vars.offset(objective);
        let nc = vars.shape(objective).coords();
        let appears = constraints.iter().any(|c| {
            c.coeffs.len() == vars.len() && c.coeffs[off..off + nc].iter().any(|f| f.amax() > 0.0)
        });
        if !appears {
            return Err(Error::Validation("objective variable does not appear in any constraint".into()));
        }
        for c in &constraints {
            if c.coeffs.len() != vars.len() {
                return Err(Error::Layout(format!(
                    "{}: built for {} coordinates, problem has {}",
                    c.name,
                    c.coeffs.len(),
                    vars.len()
                )));
            }
        }
        Ok(Self { vars, objective, constraints, settings })
    }

    /// Constraint list actually handed to a backend: `X ⪰ ε I` added, every
    /// block diagonally pre-scaled.
    pub(crate) fn solver_constraints(&self) -> Result<Vec<BlockLMI>> {
        let d = self.vars.shape(self.objective).dims().0;
        let x = AffineExpr::var(&self.vars, self.objective)?;
        let floor = BlockLMI::assemble("objective floor", &self.vars, &[vec![Some(x)]])?
            .with_margin(self.settings.eps_slack);
        debug_assert_eq!(floor.dim(), d);
        let mut all: Vec<BlockLMI> = self.constraints.iter().map(|c| c.diagonally_scaled()).collect();
        all.push(floor);
        Ok(all)
    }

    /// Most negative eigenvalue over the unscaled constraints at `x`.
    pub fn worst_violation(&self, x: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.min_eigenvalue(x)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxDetSolution {
    pub x: Vec<f64>,
    pub objective: Mat,
    /// `−log det X` at the returned point.
    pub neg_logdet: f64,
    /// Certified distance to the optimum when the backend provides one.
    pub gap_bound: f64,
    pub backend: Backend,
    /// Smallest eigenvalue over all unscaled constraints at `x`.
    pub min_eig: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeasibilityOutcome {
    Feasible(Vec<f64>),
    /// `measure` is a certified lower bound on the smallest uniform shift
    /// `s` making `F(x) + s I ⪰ 0` feasible.
    Infeasible { measure: f64 },
}

/// Find a point satisfying every constraint, or certify that none exists.
pub fn solve_feasibility(vars: &VarSet, constraints: &[BlockLMI], tol_feas: f64) -> Result<FeasibilityOutcome> {
    if vars.is_empty() {
        return Err(Error::Validation("feasibility problem without variables".into()));
    }
    let scaled: Vec<BlockLMI> = constraints.iter().map(|c| c.resized(vars.len()).diagonally_scaled()).collect();
    match phase_one(&scaled, vars.len(), tol_feas, None)? {
        PhaseOneOutcome::Feasible(x) => {
            let worst = constraints.iter().map(|c| c.min_eigenvalue(&x)).fold(f64::INFINITY, f64::min);
            if worst < -tol_feas {
                return Err(Error::Numerical(format!(
                    "feasible point violates an unscaled constraint by {:.3e}",
                    -worst
                )));
            }
            Ok(FeasibilityOutcome::Feasible(x))
        }
        PhaseOneOutcome::Infeasible { lower_bound } => Ok(FeasibilityOutcome::Infeasible { measure: lower_bound }),
    }
}

/// Solve a determinant-maximization problem with the configured backend.
pub fn solve_maxdet(problem: &MaxDetProblem) -> Result<MaxDetSolution> {
    let x = match problem.settings.backend {
        Backend::Conic => conic::solve(problem)?,
        Backend::Bisection => bisection::solve(problem)?,
    };
    finish(problem, x.0, x.1)
}

fn finish(problem: &MaxDetProblem, x: Vec<f64>, gap_bound: f64) -> Result<MaxDetSolution> {
    let objective = problem.vars.value(problem.objective, &x);
    let logdet = logdet_pd(&objective).ok_or_else(|| {
        Error::Numerical("solver returned a non positive definite objective matrix".into())
    })?;
    let min_eig = problem.worst_violation(&x);
    if min_eig < -problem.settings.tol_feas {
        return Err(Error::Numerical(format!(
            "solution violates a constraint: min eigenvalue {min_eig:.3e} below −{:.1e}",
            problem.settings.tol_feas
        )));
    }
    Ok(MaxDetSolution {
        x,
        objective,
        neg_logdet: -logdet,
        gap_bound,
        backend: problem.settings.backend,
        min_eig,
    })
}
