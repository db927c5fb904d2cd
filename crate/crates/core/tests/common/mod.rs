#![allow(dead_code)]

use hidden_reach::linalg::{from_rows, Mat, Vector};
use hidden_reach::model::{steady_state, ObserverDesign, SteadyState, SystemModel, Tolerances};

pub fn mat(rows: &[&[f64]]) -> Mat {
    from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

/// The two-state, one-sensor loop used throughout the numerical section.
pub fn two_state() -> (SystemModel, ObserverDesign, SteadyState) {
    let model = SystemModel::new(
        mat(&[&[0.84, 0.23], &[-0.47, 0.12]]),
        mat(&[&[0.07], &[0.23]]),
        mat(&[&[1.0, 0.0]]),
        mat(&[&[1.0, 0.0], &[0.0, 1.0]]),
        mat(&[&[0.45, -0.11], &[-0.11, 0.45]]),
        mat(&[&[1.0]]),
    )
    .unwrap();
    let obs = ObserverDesign::new(mat(&[&[1.16], &[-0.69]]), &model).unwrap();
    let ss = steady_state(&model, &obs, &Tolerances::default()).unwrap();
    (model, obs, ss)
}

pub fn scenario(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

pub fn quad(p: &Mat, x: &Vector) -> f64 {
    (x.transpose() * p * x)[(0, 0)]
}

/// Small deterministic generator for test instances (SplitMix64).
pub struct Gen(pub u64);

impl Gen {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn matrix(&mut self, r: usize, c: usize, scale: f64) -> Mat {
        Mat::from_fn(r, c, |_, _| scale * self.normal())
    }

    pub fn unit(&mut self, n: usize) -> Vector {
        let v = Vector::from_fn(n, |_, _| self.normal());
        let nrm = v.norm();
        v / nrm
    }

    /// Random matrix rescaled to spectral radius `rho`.
    pub fn stable(&mut self, n: usize, rho: f64) -> Mat {
        let a = self.matrix(n, n, 1.0);
        let r = hidden_reach::linalg::spectral_radius(&a).unwrap();
        a * (rho / r)
    }

    pub fn spd(&mut self, n: usize, floor: f64) -> Mat {
        let a = self.matrix(n, n, 1.0);
        &a * a.transpose() + Mat::identity(n, n) * floor
    }
}

// ---------------------------------------------------------------------------
// Oracle routines shared by the oracle suite and the acceptance run. Each
// returns the measured discrepancy; callers decide pass/fail.

use hidden_reach::linalg::min_eigenvalue;
use hidden_reach::model::solve_discrete_lyapunov;
use hidden_reach::reach::{
    build_hinf_lmi_synthesis, build_reach_lmi, build_reach_lmi_synthesis, hinf_gain_estimate, min_hinf_gamma,
    reach_lmi_min_eig, EllipsoidBound,
};
use hidden_reach::rng::{streams, CounterRng};
use hidden_reach::sdp::{solve_maxdet, Backend, MaxDetProblem, SolverSettings, VarSet};

/// Compact form of the contraction condition in the stacked variable
/// `(e, ζ, v)`: `diag(b𝒫, cI_m, cI_n) − Tᵀ𝒫T` with `T = [F, −LΣ^{1/2}, I]`.
pub fn compact_reach_form(p: &Mat, f: &Mat, l: &Mat, s: &Mat, b: f64, omega: f64) -> Mat {
    let n = f.nrows();
    let m = s.nrows();
    let c = (1.0 - b) / omega;
    let mut t = Mat::zeros(n, 2 * n + m);
    t.view_mut((0, 0), (n, n)).copy_from(f);
    t.view_mut((0, n), (n, m)).copy_from(&(-(l * s)));
    t.view_mut((0, n + m), (n, n)).copy_from(&Mat::identity(n, n));
    let mut d = Mat::zeros(2 * n + m, 2 * n + m);
    d.view_mut((0, 0), (n, n)).copy_from(&(p * b));
    for i in n..2 * n + m {
        d[(i, i)] = c;
    }
    d - t.transpose() * p * t
}

pub struct SchurOutcome {
    pub agree: usize,
    pub disagree: usize,
    pub feasible: usize,
    pub infeasible: usize,
    pub skipped: usize,
}

/// Sign agreement between the block LMI and its compact Schur form over
/// random instances; near-zero cases (|λ| < 1e-9) are skipped.
pub fn schur_sign_agreement(instances: usize, seed: u64) -> SchurOutcome {
    let mut g = Gen(seed);
    let mut out = SchurOutcome { agree: 0, disagree: 0, feasible: 0, infeasible: 0, skipped: 0 };
    for i in 0..instances {
        let n = 1 + i % 4;
        let m = 1 + (i / 4) % 3;
        let b = g.range(0.3, 0.95);
        let rho = g.range(0.1, 0.95) * b.sqrt();
        let f = g.stable(n, rho);
        let l = g.matrix(n, m, 0.7);
        let s = hidden_reach::linalg::sqrt_sym(&g.spd(m, 0.2), 0.0).unwrap();
        let omega = g.range(0.5, 50.0);
        // bP − FᵀPF = bI, then a random scale to land on either side
        let a = f.transpose() / b.sqrt();
        let base = solve_discrete_lyapunov(&a, &Mat::identity(n, n), &Tolerances::default()).unwrap();
        let p = base * 10f64.powf(g.range(-4.0, 2.0));
        let lam_block = reach_lmi_min_eig(&p, &f, &l, &s, b, omega).unwrap();
        let lam_compact = min_eigenvalue(&compact_reach_form(&p, &f, &l, &s, b, omega));
        if lam_block.abs() < 1e-9 || lam_compact.abs() < 1e-9 {
            out.skipped += 1;
            continue;
        }
        if (lam_block > 0.0) == (lam_compact > 0.0) {
            out.agree += 1;
        } else {
            out.disagree += 1;
        }
        if lam_compact > 0.0 {
            out.feasible += 1;
        } else {
            out.infeasible += 1;
        }
    }
    out
}

/// Largest relative gap between the Lyapunov solver and a truncated series
/// `Σ_k A^k Q (Aᵀ)^k` over random instances (one of them above the
/// Kronecker size limit).
pub fn lyapunov_vs_series(seed: u64) -> f64 {
    let mut g = Gen(seed);
    let mut worst: f64 = 0.0;
    for &(n, rho) in &[(1, 0.5), (2, 0.9), (3, 0.7), (5, 0.95), (8, 0.8), (24, 0.85)] {
        let a = g.stable(n, rho);
        let q = g.spd(n, 0.1);
        let x = solve_discrete_lyapunov(&a, &q, &Tolerances::default()).unwrap();
        let mut term = q.clone();
        let mut sum = Mat::zeros(n, n);
        for _ in 0..10_000 {
            sum += &term;
            term = &a * term * a.transpose();
        }
        worst = worst.max((&x - &sum).norm() / sum.norm());
    }
    worst
}

fn in_ball(rng: &mut CounterRng, dim: usize, radius_sq: f64) -> Vector {
    let dir = Vector::from_vec(rng.normals(dim));
    let dir = &dir / dir.norm();
    // uniform radius fraction, plus boundary points a quarter of the time
    let u = if rng.uniform() < 0.25 { 1.0 } else { rng.uniform() };
    dir * (u * radius_sq).sqrt()
}

/// Worst value of `V(e⁺) − bV(e) − c(‖ζ‖² + ‖v‖²)` and of `V(e⁺) − 1` (for
/// `V(e) ≤ 1`) over budget-feasible samples.
pub fn pointwise_contraction(bound: &EllipsoidBound, model: &SystemModel, obs: &ObserverDesign, ss: &SteadyState, samples: usize, seed: u64) -> (f64, f64) {
    let p = &bound.p_shape;
    let b = bound.budget.b.expect("bound carries b");
    let c = (1.0 - b) / bound.budget.omega_bar;
    let (n, m) = (model.n(), model.m());
    let ls = &obs.l * &ss.sigma_sqrt;
    let p_inv_sqrt = hidden_reach::linalg::inv_sqrt_sym(p, 0.0).unwrap();
    let (mut worst_ineq, mut worst_exit) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in 0..samples {
        let mut rng = CounterRng::keyed(seed, 0, k as u64, streams::BUDGET_SAMPLES);
        // e on or inside the ellipsoid, via the unit ball
        let e = &p_inv_sqrt * in_ball(&mut rng, n, 1.0);
        let zeta = in_ball(&mut rng, m, bound.budget.zeta_cap);
        let v = in_ball(&mut rng, n, bound.budget.v_bar);
        let next = &model.f * &e - &ls * &zeta + &v;
        let (v0, v1) = (quad(p, &e), quad(p, &next));
        worst_ineq = worst_ineq.max(v1 - b * v0 - c * (zeta.norm_squared() + v.norm_squared()));
        worst_exit = worst_exit.max(v1 - 1.0);
    }
    (worst_ineq, worst_exit)
}

/// `−log det 𝒫` from each backend on the fixed-`b` bound program.
pub fn backends_on_bound_program(b: f64, omega: f64) -> (f64, f64) {
    let (model, obs, ss) = two_state();
    let solve = |backend| {
        let mut vars = VarSet::new();
        let p = vars.symmetric("P", 2).unwrap();
        let lmi = build_reach_lmi(&vars, p, &model.f, &obs.l, &ss.sigma_sqrt, b, omega).unwrap();
        let settings = SolverSettings { backend, ..SolverSettings::default() };
        solve_maxdet(&MaxDetProblem::new(vars, p, vec![lmi], settings).unwrap()).unwrap().neg_logdet
    };
    (solve(Backend::Conic), solve(Backend::Bisection))
}

/// `−log det 𝒫` from each backend on the joint `(𝒫, M)` synthesis program at
/// fixed `(b, κ)`.
pub fn backends_on_synthesis_program(b: f64, kappa: f64, gamma: f64, omega: f64) -> (f64, f64) {
    let (model, _, ss) = two_state();
    let solve = |backend| {
        let mut vars = VarSet::new();
        let p = vars.symmetric("P", 2).unwrap();
        let mv = vars.full("M", 2, 1).unwrap();
        let t1 = build_reach_lmi_synthesis(&vars, p, mv, &model.f, &ss.sigma_sqrt, b, omega).unwrap();
        let h = build_hinf_lmi_synthesis(&vars, p, mv, &model.f, &model.c, gamma, kappa).unwrap();
        let settings = SolverSettings { backend, ..SolverSettings::default() };
        solve_maxdet(&MaxDetProblem::new(vars, p, vec![t1, h], settings).unwrap()).unwrap().neg_logdet
    };
    (solve(Backend::Conic), solve(Backend::Bisection))
}

/// Relative gap between the LMI-bisected minimal γ and the frequency-sweep
/// gain, worst over the loop gain and a few random observers.
pub fn hinf_lmi_vs_sweep(seed: u64) -> f64 {
    let (model, obs, _) = two_state();
    let mut cases = vec![(model.f.clone(), model.c.clone(), obs.l.clone())];
    let mut g = Gen(seed);
    for n in [2usize, 3, 4] {
        let f = g.stable(n, 0.8);
        let c = g.matrix(1, n, 1.0);
        // small gains keep F − LC comfortably stable
        let mut l = g.matrix(n, 1, 0.1);
        while hidden_reach::linalg::spectral_radius(&(&f - &l * &c)).unwrap() > 0.95 {
            l *= 0.5;
        }
        cases.push((f, c, l));
    }
    cases
        .iter()
        .map(|(f, c, l)| {
            let lmi = min_hinf_gamma(f, c, l, 1e-6).unwrap();
            let sweep = hinf_gain_estimate(f, c, l, 20_000).unwrap();
            (lmi - sweep).abs() / sweep
        })
        .fold(0.0, f64::max)
}

use hidden_reach::calibration::QuantileMethod;
use hidden_reach::reach::{min_volume_bound, BGrid, HiddenBudget};

pub fn case1_bound(false_alarm: f64) -> EllipsoidBound {
    let (model, obs, ss) = two_state();
    let budget = HiddenBudget::case1(&model, false_alarm, QuantileMethod::GammaApprox).unwrap();
    min_volume_bound(&model, &obs, &ss, &budget, &BGrid::default(), &SolverSettings::default()).unwrap()
}

pub fn case2_bound(false_alarm: f64, a_p: f64) -> EllipsoidBound {
    let (model, obs, ss) = two_state();
    let budget = HiddenBudget::case2(&model, false_alarm, a_p, QuantileMethod::GammaApprox).unwrap();
    min_volume_bound(&model, &obs, &ss, &budget, &BGrid::default(), &SolverSettings::default()).unwrap()
}

/// Largest gap between stored states and a replay of both error recursions:
/// the `(η, δ)` form and the normalized `ζ` form.
pub fn replay_error(tr: &hidden_reach::sim::AttackTrace, model: &SystemModel, obs: &ObserverDesign, ss: &SteadyState) -> (f64, f64) {
    let a = obs.error_dynamics(model);
    let ls = &obs.l * &ss.sigma_sqrt;
    let (mut d5, mut d14) = (0.0f64, 0.0f64);
    for k in 0..tr.horizon {
        let e = tr.e_at(k);
        let next = tr.e_at(k + 1);
        let via_delta = &a * &e - &obs.l * tr.eta_at(k) - &obs.l * tr.delta_at(k) + tr.v_at(k);
        let via_zeta = &model.f * &e - &ls * tr.zeta_at(k) + tr.v_at(k);
        let scale = 1.0 + next.norm();
        d5 = d5.max((via_delta - &next).norm() / scale);
        d14 = d14.max((via_zeta - &next).norm() / scale);
    }
    (d5, d14)
}
