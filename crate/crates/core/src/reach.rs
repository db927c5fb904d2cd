//! Ellipsoidal outer bounds on hidden reachable sets and observer redesign.
//!
//! With `ζ = Σ^{-1/2}(Ce + η + δ)` the error obeys `e⁺ = F e − L Σ^{1/2} ζ + v`.
//! If `‖ζ‖² + ‖v‖² ≤ ω̄` and some `𝒫 ≻ 0`, `b ∈ (0,1)` make the reachable-set
//! block LMI hold, every trajectory from `e₁ = 0` stays in `{e : eᵀ𝒫e ≤ 1}`.
//! For fixed `b` the LMI is affine in `𝒫`, so the smallest such ellipsoid is a
//! determinant-maximization problem; `b` is searched on a grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    clamp_epsilon, markov_epsilon, noise_norm_quantile, AttackMoments, DetectorCalibration, QuantileMethod,
};
use crate::error::{Error, Result};
use crate::linalg::{logdet_pd, spectral_radius, sym_eigen, Mat};
use crate::model::{steady_state, ObserverDesign, SteadyState, SystemModel, Tolerances};
use crate::sdp::{
    solve_feasibility, solve_maxdet, AffineExpr, BlockLMI, FeasibilityOutcome, MaxDetProblem, SolverSettings,
    VarId, VarSet,
};
use crate::special::ln_gamma;

/// Certification threshold on the re-instantiated LMI.
pub const CERT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetCase {
    /// The attacker keeps the alarm rate at `A`: `ζ̄ = α`, `p = 1 − A`.
    Case1,
    /// The attacker tolerates excess alarm probability `a_p`:
    /// `ζ̄ = α + ε̲_p`, `p = 1 − A + a_p`.
    Case2,
}

/// Disturbance caps certified by a bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenBudget {
    pub case: BudgetCase,
    pub p: f64,
    pub false_alarm: f64,
    pub a_p: Option<f64>,
    pub alpha: f64,
    pub zeta_cap: f64,
    pub eps_p: Option<f64>,
    pub v_bar: f64,
    pub omega_bar: f64,
    /// Contraction rate; filled in once a bound is computed.
    pub b: Option<f64>,
}

impl HiddenBudget {
    pub fn case1(model: &SystemModel, false_alarm: f64, method: QuantileMethod) -> Result<Self> {
        let calib = DetectorCalibration::new(model.m(), false_alarm)?;
        let p = 1.0 - false_alarm;
        let v_bar = noise_norm_quantile(&model.r1, p, method)?.v_bar;
        Ok(Self {
            case: BudgetCase::Case1,
            p,
            false_alarm,
            a_p: None,
            alpha: calib.alpha,
            zeta_cap: calib.alpha,
            eps_p: None,
            v_bar,
            omega_bar: calib.alpha + v_bar,
            b: None,
        })
    }

    /// Case 2 with the attack-free moments `ℳ = I`, `μ = 0`.
    pub fn case2(model: &SystemModel, false_alarm: f64, a_p: f64, method: QuantileMethod) -> Result<Self> {
        Self::case2_with_moments(model, false_alarm, a_p, &AttackMoments::standard(model.m()), method)
    }

    /// Case 2 with explicit attack moments `(μ, ℳ)` in the Markov margin.
    pub fn case2_with_moments(
        model: &SystemModel,
        false_alarm: f64,
        a_p: f64,
        moments: &AttackMoments,
        method: QuantileMethod,
    ) -> Result<Self> {
        let calib = DetectorCalibration::new(model.m(), false_alarm)?;
        let eps = clamp_epsilon(markov_epsilon(moments, false_alarm, a_p, calib.alpha)?);
        let p = 1.0 - false_alarm + a_p;
        let v_bar = noise_norm_quantile(&model.r1, p, method)?.v_bar;
        let zeta_cap = calib.alpha + eps;
        Ok(Self {
            case: BudgetCase::Case2,
            p,
            false_alarm,
            a_p: Some(a_p),
            alpha: calib.alpha,
            zeta_cap,
            eps_p: Some(eps),
            v_bar,
            omega_bar: zeta_cap + v_bar,
            b: None,
        })
    }

    /// Arbitrary caps, for experiments outside the two detector cases.
    pub fn custom(zeta_cap: f64, v_bar: f64) -> Result<Self> {
        if !(zeta_cap >= 0.0 && v_bar >= 0.0 && zeta_cap + v_bar > 0.0) {
            return Err(Error::Domain("budget caps must be nonnegative with a positive sum".into()));
        }
        Ok(Self {
            case: BudgetCase::Case1,
            p: f64::NAN,
            false_alarm: f64::NAN,
            a_p: None,
            alpha: zeta_cap,
            zeta_cap,
            eps_p: None,
            v_bar,
            omega_bar: zeta_cap + v_bar,
            b: None,
        })
    }
}

/// Candidate contraction rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BGrid {
    pub points: Vec<f64>,
    /// Golden-section refinement around the best grid point.
    pub refine: bool,
}

impl Default for BGrid {
    fn default() -> Self {
        let mut points: Vec<f64> = (1..=99).map(|j| j as f64 / 100.0).collect();
        points.extend([0.925, 0.975, 0.995]);
        points.sort_by(f64::total_cmp);
        Self { points, refine: true }
    }
}

impl BGrid {
    pub fn new(mut points: Vec<f64>, refine: bool) -> Result<Self> {
        if points.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Domain("every b must lie in (0,1)".into()));
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        Ok(Self { points, refine })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum BStatus {
    Feasible { b: f64, neg_logdet: f64 },
    Infeasible { b: f64 },
    /// `b ≤ ρ(F)²`: the certificate cannot contract, skipped without solving.
    Skipped { b: f64 },
    Failed { b: f64, reason: String },
}

impl BStatus {
    pub fn b(&self) -> f64 {
        match self {
            BStatus::Feasible { b, .. } | BStatus::Infeasible { b } | BStatus::Skipped { b } | BStatus::Failed { b, .. } => *b,
        }
    }

    fn value(&self) -> Option<f64> {
        match self {
            BStatus::Feasible { neg_logdet, .. } => Some(*neg_logdet),
            _ => None,
        }
    }
}

/// Certified ellipsoid `{e : eᵀ𝒫e ≤ 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidBound {
    pub p_shape: Mat,
    pub budget: HiddenBudget,
    pub neg_logdet: f64,
    /// Euclidean volume, for display.
    pub volume: f64,
    pub certified: bool,
    /// Smallest eigenvalue of the re-instantiated LMI.
    pub min_eig: f64,
    pub scan: Vec<BStatus>,
}

/// Volume of `{e : eᵀ𝒫e ≤ 1}` from `−log det 𝒫`.
pub fn ellipsoid_volume(n: usize, neg_logdet: f64) -> f64 {
    let half = n as f64 / 2.0;
    (half * std::f64::consts::PI.ln() - ln_gamma(half + 1.0) + 0.5 * neg_logdet).exp()
}

fn check_b(b: f64) -> Result<()> {
    if b > 0.0 && b < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("contraction rate b must lie in (0,1), got {b}")))
    }
}

/// Reachable-set grid with `𝒫L` supplied as an expression, so the same layout
/// serves both analysis (`𝒫L` with `L` fixed) and synthesis (`M`).
fn reach_grid(
    vars: &VarSet,
    p: VarId,
    pl: &AffineExpr,
    f: &Mat,
    sigma_sqrt: &Mat,
    b: f64,
    omega_bar: f64,
) -> Result<BlockLMI> {
    check_b(b)?;
    if !(omega_bar > 0.0) {
        return Err(Error::Domain(format!("ω̄ must be positive, got {omega_bar}")));
    }
    let n = f.nrows();
    let m = sigma_sqrt.nrows();
    let c = (1.0 - b) / omega_bar;
    let pe = AffineExpr::var(vars, p)?;
    let pf = pe.right_mul(f)?;
    let attack = pl.right_mul(sigma_sqrt)?.neg();
    let ci = |d: usize| AffineExpr::constant(Mat::identity(d, d) * c);
    let grid = vec![
        vec![Some(pe.scale(b)), Some(pf.transpose()), None, None, None, None],
        vec![None, Some(pe.clone()), Some(pe.clone()), Some(attack), None, None],
        vec![None, None, Some(ci(n)), None, None, None],
        vec![None, None, None, Some(ci(m)), None, None],
        vec![None, None, None, None, Some(AffineExpr::identity(n)), None],
        vec![None, None, None, None, None, Some(AffineExpr::identity(m))],
    ];
    BlockLMI::assemble("reachable set", vars, &grid)
}

/// reachable-set LMI in `𝒫` for a fixed gain `L`.
pub fn build_reach_lmi(
    vars: &VarSet,
    p: VarId,
    f: &Mat,
    l: &Mat,
    sigma_sqrt: &Mat,
    b: f64,
    omega_bar: f64,
) -> Result<BlockLMI> {
    let pl = AffineExpr::var(vars, p)?.right_mul(l)?;
    reach_grid(vars, p, &pl, f, sigma_sqrt, b, omega_bar)
}

/// reachable-set LMI jointly affine in `(𝒫, M)` with `M = 𝒫L`.
pub fn build_reach_lmi_synthesis(
    vars: &VarSet,
    p: VarId,
    m: VarId,
    f: &Mat,
    sigma_sqrt: &Mat,
    b: f64,
    omega_bar: f64,
) -> Result<BlockLMI> {
    let me = AffineExpr::var(vars, m)?;
    reach_grid(vars, p, &me, f, sigma_sqrt, b, omega_bar)
}

/// Bounded-real LMI with `𝒫L` given as an expression; `scale` multiplies
/// every decision-variable block.
fn hinf_grid(vars: &VarSet, p: VarId, pl: &AffineExpr, f: &Mat, c: &Mat, gamma: f64, scale: f64) -> Result<BlockLMI> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("γ must be positive, got {gamma}")));
    }
    let n = f.nrows();
    let m = c.nrows();
    if c.ncols() != n || pl.shape() != (n, m) {
        return Err(Error::Dimension("H∞ LMI: inconsistent F, C, L dimensions".into()));
    }
    let pe = AffineExpr::var(vars, p)?.scale(scale);
    let ple = pl.scale(scale);
    // (F − LC)ᵀ𝒫 = Fᵀ𝒫 − Cᵀ(𝒫L)ᵀ
    let closed = pe.left_mul(&f.transpose())?.add(&ple.transpose().left_mul(&c.transpose())?.neg())?;
    let g2 = gamma * gamma;
    let grid = vec![
        vec![Some(pe.clone()), None, None, Some(closed), Some(AffineExpr::constant(c.transpose()))],
        vec![None, Some(AffineExpr::constant(Mat::identity(m, m) * g2)), None, Some(ple.transpose().neg()), Some(AffineExpr::identity(m))],
        vec![None, None, Some(AffineExpr::constant(Mat::identity(n, n) * g2)), Some(pe.clone()), None],
        vec![None, None, None, Some(pe), None],
        vec![None, None, None, None, Some(AffineExpr::identity(m))],
    ];
    BlockLMI::assemble("H-infinity", vars, &grid)
}

/// Bounded-real LMI in `𝒫` for a fixed gain.
pub fn build_hinf_lmi(vars: &VarSet, p: VarId, f: &Mat, c: &Mat, l: &Mat, gamma: f64) -> Result<BlockLMI> {
    let pl = AffineExpr::var(vars, p)?.right_mul(l)?;
    hinf_grid(vars, p, &pl, f, c, gamma, 1.0)
}

/// Bounded-real LMI jointly in `(𝒫, M)`, imposed on `(κ𝒫, κM)`.
pub fn build_hinf_lmi_synthesis(
    vars: &VarSet,
    p: VarId,
    m: VarId,
    f: &Mat,
    c: &Mat,
    gamma: f64,
    kappa: f64,
) -> Result<BlockLMI> {
    if !(kappa > 0.0) {
        return Err(Error::Domain(format!("κ must be positive, got {kappa}")));
    }
    let me = AffineExpr::var(vars, m)?;
    hinf_grid(vars, p, &me, f, c, gamma, kappa)
}

/// Smallest eigenvalue of the reachable-set LMI at a given `𝒫`.
pub fn reach_lmi_min_eig(p_shape: &Mat, f: &Mat, l: &Mat, sigma_sqrt: &Mat, b: f64, omega_bar: f64) -> Result<f64> {
    let mut vars = VarSet::new();
    let p = vars.symmetric("P", f.nrows())?;
    let lmi = build_reach_lmi(&vars, p, f, l, sigma_sqrt, b, omega_bar)?;
    let mut x = vec![0.0; vars.len()];
    vars.pack(p, p_shape, &mut x)?;
    Ok(lmi.min_eigenvalue(&x))
}

/// Whether the bounded-real LMI admits some `𝒫` at level `γ`.
pub fn hinf_feasible(f: &Mat, c: &Mat, l: &Mat, gamma: f64, tol_feas: f64) -> Result<bool> {
    let mut vars = VarSet::new();
    let p = vars.symmetric("P", f.nrows())?;
    let lmi = build_hinf_lmi(&vars, p, f, c, l, gamma)?;
    let floor = BlockLMI::assemble("P floor", &vars, &[vec![Some(AffineExpr::var(&vars, p)?)]])?.with_margin(1e-9);
    Ok(matches!(solve_feasibility(&vars, &[lmi, floor], tol_feas)?, FeasibilityOutcome::Feasible(_)))
}

/// Smallest `γ` for which the bounded-real LMI is feasible, by bisection.
pub fn min_hinf_gamma(f: &Mat, c: &Mat, l: &Mat, rel_tol: f64) -> Result<f64> {
    let mut hi = 1.0;
    let mut doublings = 0;
    while !hinf_feasible(f, c, l, hi, 0.0)? {
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::Infeasible("no finite H∞ level found (is F − LC Schur?)".into()));
        }
    }
    let mut lo = 0.0;
    while hi - lo > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if hinf_feasible(f, c, l, mid, 0.0)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn largest_singular_value(f: &Mat, c: &Mat, l: &Mat, theta: f64) -> f64 {
    use nalgebra::{Complex, DMatrix};
    let n = f.nrows();
    let m = c.nrows();
    let a = f - l * c;
    let z = Complex::from_polar(1.0, theta);
    let to_c = |x: &Mat| x.map(|v| Complex::new(v, 0.0));
    let resolvent = DMatrix::<Complex<f64>>::identity(n, n) * z - to_c(&a);
    let Some(inv) = resolvent.try_inverse() else {
        return f64::INFINITY;
    };
    let mut input = Mat::zeros(n, m + n);
    input.view_mut((0, 0), (n, m)).copy_from(&(-l));
    input.view_mut((0, m), (n, n)).copy_from(&Mat::identity(n, n));
    let mut feed = Mat::zeros(m, m + n);
    feed.view_mut((0, 0), (m, m)).copy_from(&Mat::identity(m, m));
    let g = to_c(c) * inv * to_c(&input) + to_c(&feed);
    g.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Frequency-sweep estimate of the H∞ gain from `(η, v)` to the residual.
pub fn hinf_gain_estimate(f: &Mat, c: &Mat, l: &Mat, n_freq: usize) -> Result<f64> {
    let a = f - l * c;
    let radius = spectral_radius(&a)?;
    if radius >= 1.0 {
        return Err(Error::Unstable { radius, context: "F − LC".into() });
    }
    if radius > 1.0 - 1e-6 {
        log::warn!("F − LC has a pole within 1e-6 of the unit circle; gain estimate is ill conditioned");
    }
    let n_freq = n_freq.max(2);
    let pi = std::f64::consts::PI;
    let h = pi / (n_freq - 1) as f64;
    let (mut best_theta, mut best) = (0.0, 0.0);
    for i in 0..n_freq {
        let theta = i as f64 * h;
        let s = largest_singular_value(f, c, l, theta);
        if s > best {
            best = s;
            best_theta = theta;
        }
    }
    // golden-section polish on the bracketing cell
    let (mut lo, mut hi) = ((best_theta - h).max(0.0), (best_theta + h).min(pi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if largest_singular_value(f, c, l, x1) > largest_singular_value(f, c, l, x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    Ok(best.max(largest_singular_value(f, c, l, 0.5 * (lo + hi))))
}

fn solve_at_b(
    f: &Mat,
    l: &Mat,
    sigma_sqrt: &Mat,
    omega_bar: f64,
    b: f64,
    settings: &SolverSettings,
) -> Result<(Mat, f64)> {
    let mut vars = VarSet::new();
    let p = vars.symmetric("P", f.nrows())?;
    let lmi = build_reach_lmi(&vars, p, f, l, sigma_sqrt, b, omega_bar)?;
    let problem = MaxDetProblem::new(vars, p, vec![lmi], *settings)?;
    let sol = solve_maxdet(&problem)?;
    Ok((sol.objective, sol.neg_logdet))
}

fn status_of(b: f64, result: Result<(Mat, f64)>) -> (BStatus, Option<Mat>) {
    match result {
        Ok((p, v)) => (BStatus::Feasible { b, neg_logdet: v }, Some(p)),
        Err(Error::Infeasible(_)) => (BStatus::Infeasible { b }, None),
        Err(e) => (BStatus::Failed { b, reason: e.to_string() }, None),
    }
}

/// Golden-section minimization of `g` on `[lo, hi]`; `None` values count as
/// `+∞`. Returns the best point seen.
fn golden_min<G>(mut lo: f64, mut hi: f64, iters: usize, g: G) -> Option<(f64, f64)>
where
    G: Fn(f64) -> Option<f64>,
{
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let val = |x: f64| g(x).unwrap_or(f64::INFINITY);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (val(x1), val(x2));
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = val(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = val(x2);
        }
        for (x, fx) in [(x1, f1), (x2, f2)] {
            if fx < best.1 {
                best = (x, fx);
            }
        }
        if hi - lo < 1e-5 {
            break;
        }
    }
    best.1.is_finite().then_some(best)
}

/// Neighbors of the best feasible grid point, for refinement.
fn bracket(scan: &[BStatus], best: usize) -> (f64, f64) {
    let lo = if best > 0 { scan[best - 1].b() } else { scan[best].b() * 0.5 };
    let hi = if best + 1 < scan.len() { scan[best + 1].b() } else { 0.5 * (scan[best].b() + 1.0) };
    (lo, hi)
}

/// Minimum-volume certified ellipsoid for a fixed observer.
pub fn min_volume_bound(
    model: &SystemModel,
    observer: &ObserverDesign,
    steady: &SteadyState,
    budget: &HiddenBudget,
    grid: &BGrid,
    settings: &SolverSettings,
) -> Result<EllipsoidBound> {
    let rho = model.require_open_loop_stable()?;
    let (f, l, s) = (&model.f, &observer.l, &steady.sigma_sqrt);
    let omega = budget.omega_bar;

    let results: Vec<(BStatus, Option<Mat>)> = grid
        .points
        .par_iter()
        .map(|&b| {
            if b <= rho * rho {
                (BStatus::Skipped { b }, None)
            } else {
                status_of(b, solve_at_b(f, l, s, omega, b, settings))
            }
        })
        .collect();
    let mut scan: Vec<BStatus> = results.iter().map(|r| r.0.clone()).collect();
    let best_idx = scan
        .iter()
        .enumerate()
        .filter_map(|(i, st)| st.value().map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    let Some(best_idx) = best_idx else {
        let summary: Vec<String> = scan
            .iter()
            .map(|st| match st {
                BStatus::Infeasible { b } => format!("b={b:.3}: infeasible"),
                BStatus::Skipped { b } => format!("b={b:.3}: skipped (b ≤ ρ(F)²)"),
                BStatus::Failed { b, reason } => format!("b={b:.3}: {reason}"),
                BStatus::Feasible { .. } => unreachable!(),
            })
            .collect();
        return Err(Error::Infeasible(format!("no b in the grid admits a bound: {}", summary.join("; "))));
    };
    let mut best_b = scan[best_idx].b();
    let mut best_val = scan[best_idx].value().expect("feasible");
    let mut best_p = results[best_idx].1.clone().expect("feasible");

    if grid.refine {
        let (lo, hi) = bracket(&scan, best_idx);
        let lo = lo.max(rho * rho + 1e-9);
        if let Some((b, v)) = golden_min(lo, hi, 40, |b| solve_at_b(f, l, s, omega, b, settings).ok().map(|r| r.1)) {
            if v < best_val {
                let (p, v) = solve_at_b(f, l, s, omega, b, settings)?;
                scan.push(BStatus::Feasible { b, neg_logdet: v });
                best_b = b;
                best_val = v;
                best_p = p;
            }
        }
    }

    let min_eig = reach_lmi_min_eig(&best_p, f, l, s, best_b, omega)?;
    let mut budget = *budget;
    budget.b = Some(best_b);
    Ok(EllipsoidBound {
        volume: ellipsoid_volume(model.n(), best_val),
        p_shape: best_p,
        budget,
        neg_logdet: best_val,
        certified: min_eig >= -CERT_TOL,
        min_eig,
        scan,
    })
}

/// Synthesis search controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisSettings {
    /// Coarse contraction-rate grid.
    pub b_points: Vec<f64>,
    /// `log10 κ` range and number of points.
    pub log_kappa_range: (f64, f64),
    pub kappa_points: usize,
    /// Iterations of the Σ-consistency loop.
    pub sigma_iterations: usize,
    pub sigma_tol: f64,
}

impl Default for SynthesisSettings {
    fn default() -> Self {
        Self {
            b_points: (1..20).map(|j| j as f64 * 0.05).collect(),
            log_kappa_range: (-1.0, 7.0),
            kappa_points: 33,
            sigma_iterations: 10,
            sigma_tol: 1e-6,
        }
    }
}

/// One pass of the joint `(𝒫, M)` program for fixed Σ.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisPass {
    pub l: Mat,
    pub p_shape: Mat,
    pub b: f64,
    pub kappa: f64,
    /// `−log det 𝒫` of the joint program.
    pub neg_logdet: f64,
    pub sigma: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    /// Redesigned gain (after the Σ-consistency loop).
    pub l_new: Mat,
    /// Certified bound for `l_new` under its own residual covariance.
    pub bound: EllipsoidBound,
    pub gamma: f64,
    /// Frequency-sweep H∞ gain of `l_new`.
    pub hinf_gain: f64,
    /// Joint program solved with the original Σ.
    pub one_shot: SynthesisPass,
    /// Last pass of the Σ-consistency loop.
    pub iterated: SynthesisPass,
    pub sigma_iterations: usize,
    pub sigma_converged: bool,
    /// Bound for the one-shot gain, certified with the original Σ.
    pub one_shot_bound: EllipsoidBound,
}

fn synthesis_at(
    model: &SystemModel,
    sigma_sqrt: &Mat,
    omega_bar: f64,
    gamma: f64,
    b: f64,
    kappa: f64,
    settings: &SolverSettings,
) -> Result<(Mat, Mat, f64)> {
    let (n, m) = (model.n(), model.m());
    let mut vars = VarSet::new();
    let p = vars.symmetric("P", n)?;
    let mv = vars.full("M", n, m)?;
    let t1 = build_reach_lmi_synthesis(&vars, p, mv, &model.f, sigma_sqrt, b, omega_bar)?;
    let hinf = build_hinf_lmi_synthesis(&vars, p, mv, &model.f, &model.c, gamma, kappa)?;
    let problem = MaxDetProblem::new(vars.clone(), p, vec![t1, hinf], *settings)?;
    let sol = solve_maxdet(&problem)?;
    let pm = vars.value(p, &sol.x);
    let mm = vars.value(mv, &sol.x);
    let l = pm
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("synthesis returned a non positive definite 𝒫".into()))?
        .solve(&mm);
    Ok((pm, l, sol.neg_logdet))
}

fn synthesis_pass(
    model: &SystemModel,
    sigma: &Mat,
    omega_bar: f64,
    gamma: f64,
    search: &SynthesisSettings,
    settings: &SolverSettings,
) -> Result<SynthesisPass> {
    let rho = spectral_radius(&model.f)?;
    let sigma_sqrt = crate::linalg::sqrt_sym(sigma, 1e-12)?;
    let (k_lo, k_hi) = search.log_kappa_range;
    let kn = search.kappa_points.max(2);
    let kappas: Vec<f64> = (0..kn).map(|i| 10f64.powf(k_lo + (k_hi - k_lo) * i as f64 / (kn - 1) as f64)).collect();
    let pairs: Vec<(f64, f64)> = search
        .b_points
        .iter()
        .filter(|&&b| b > rho * rho)
        .flat_map(|&b| kappas.iter().map(move |&k| (b, k)))
        .collect();
    let eval = |b: f64, k: f64| synthesis_at(model, &sigma_sqrt, omega_bar, gamma, b, k, settings).ok();
    let coarse: Vec<Option<f64>> = pairs.par_iter().map(|&(b, k)| eval(b, k).map(|r| r.2)).collect();
    let (mut b, mut k, mut best) = pairs
        .iter()
        .zip(&coarse)
        .filter_map(|(&(b, k), v)| v.map(|v| (b, k, v)))
        .min_by(|x, y| x.2.total_cmp(&y.2))
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "synthesis infeasible for every (b, κ) searched at γ = {gamma}; try a larger γ or a wider log_kappa_range"
            ))
        })?;

    // alternate golden refinements in b and log κ
    let b_step = search.b_points.windows(2).map(|w| w[1] - w[0]).fold(0.05, f64::max);
    let lk_step = (k_hi - k_lo) / (kn - 1) as f64;
    for _ in 0..2 {
        let lo = (b - b_step).max(rho * rho + 1e-9);
        let hi = (b + b_step).min(1.0 - 1e-9);
        if let Some((nb, v)) = golden_min(lo, hi, 40, |bb| eval(bb, k).map(|r| r.2)) {
            if v < best {
                b = nb;
                best = v;
            }
        }
        let lk = k.log10();
        if let Some((nlk, v)) = golden_min(lk - lk_step, lk + lk_step, 40, |x| eval(b, 10f64.powf(x)).map(|r| r.2)) {
            if v < best {
                k = 10f64.powf(nlk);
                best = v;
            }
        }
    }
    let (p_shape, l, neg_logdet) = synthesis_at(model, &sigma_sqrt, omega_bar, gamma, b, k, settings)?;
    Ok(SynthesisPass { l, p_shape, b, kappa: k, neg_logdet, sigma: sigma.clone() })
}

/// Redesign the observer gain to shrink the Case-1 ellipsoid while keeping
/// the attack-free H∞ gain at most `γ`.
///
/// The bounded-real constraint is imposed on `(κ𝒫, κM)` with `κ > 0`
/// searched alongside `b`. Since `L = 𝒫⁻¹M` is unchanged by the scaling, the
/// H∞ certificate stays valid while the reachable-set certificate keeps its
/// own scale.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_observer(
    model: &SystemModel,
    steady: &SteadyState,
    budget: &HiddenBudget,
    gamma: f64,
    grid: &BGrid,
    search: &SynthesisSettings,
    settings: &SolverSettings,
    tol: &Tolerances,
) -> Result<SynthesisResult> {
    model.require_open_loop_stable()?;
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("γ must be positive, got {gamma}")));
    }
    // pre-pass: is γ achievable by any gain?
    {
        let (n, m) = (model.n(), model.m());
        let mut vars = VarSet::new();
        let p = vars.symmetric("P", n)?;
        let mv = vars.full("M", n, m)?;
        let hinf = build_hinf_lmi_synthesis(&vars, p, mv, &model.f, &model.c, gamma, 1.0)?;
        let floor = BlockLMI::assemble("P floor", &vars, &[vec![Some(AffineExpr::var(&vars, p)?)]])?.with_margin(1e-9);
        if let FeasibilityOutcome::Infeasible { measure } = solve_feasibility(&vars, &[hinf, floor], 0.0)? {
            return Err(Error::Infeasible(format!(
                "no observer gain achieves H∞ level γ = {gamma} (infeasibility measure {measure:.3e}); try a larger γ"
            )));
        }
    }

    let omega = budget.omega_bar;
    let one_shot = synthesis_pass(model, &steady.sigma, omega, gamma, search, settings)?;

    let mut current = one_shot.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < search.sigma_iterations {
        let obs = ObserverDesign::with_tolerances(current.l.clone(), model, tol)?;
        let ss = steady_state(model, &obs, tol)?;
        iterations += 1;
        if (&ss.sigma - &current.sigma).norm() <= search.sigma_tol {
            converged = true;
            break;
        }
        current = synthesis_pass(model, &ss.sigma, omega, gamma, search, settings)?;
    }

    let one_shot_obs = ObserverDesign::with_tolerances(one_shot.l.clone(), model, tol)?;
    let one_shot_bound = min_volume_bound(model, &one_shot_obs, steady, budget, grid, settings)?;
    let obs = ObserverDesign::with_tolerances(current.l.clone(), model, tol)?;
    let ss = steady_state(model, &obs, tol)?;
    let bound = min_volume_bound(model, &obs, &ss, budget, grid, settings)?;
    let hinf_gain = hinf_gain_estimate(&model.f, &model.c, &current.l, 10_000)?;
    if hinf_gain > gamma * (1.0 + 1e-6) + 1e-9 {
        log::warn!("recovered gain has H∞ gain {hinf_gain:.6} above γ = {gamma}");
    }
    Ok(SynthesisResult {
        l_new: current.l.clone(),
        bound,
        gamma,
        hinf_gain,
        one_shot,
        iterated: current,
        sigma_iterations: iterations,
        sigma_converged: converged,
        one_shot_bound,
    })
}

/// `𝒫_small ⪰ 𝒫_large` up to `tol`: the small-budget ellipsoid lies inside.
pub fn nested_within(p_small: &Mat, p_large: &Mat, tol: f64) -> bool {
    sym_eigen(&(p_small - p_large)).min() >= -tol
}

/// `−log det` of a shape matrix, `None` if not positive definite.
pub fn neg_logdet(p: &Mat) -> Option<f64> {
    logdet_pd(p).map(|v| -v)
}
