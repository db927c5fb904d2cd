mod common;

use common::*;
use hidden_reach::calibration::{DetectorCalibration, QuantileMethod};
use hidden_reach::error::Error;
use hidden_reach::linalg::Mat;
use hidden_reach::model::{steady_state, SystemModel, Tolerances};
use hidden_reach::reach::{min_volume_bound, nested_within, BGrid, HiddenBudget};
use hidden_reach::sdp::{solve_maxdet, Backend, MaxDetProblem, SolverSettings, VarSet};
use hidden_reach::sim::{
    run_hidden_attack, simulate_attack_free, sphere_quadratic_max, AttackPolicy, ClipMode, SimConfig, Strategy,
};

#[test]
fn block_lmi_and_compact_form_agree_in_sign() {
    let out = schur_sign_agreement(200, 11);
    assert_eq!(out.disagree, 0);
    assert!(out.agree >= 190, "too many borderline instances: {}", out.skipped);
    // both sides of the boundary have to be exercised
    assert!(out.feasible >= 20 && out.infeasible >= 20, "{} feasible / {} infeasible", out.feasible, out.infeasible);
}

#[test]
fn lyapunov_matches_truncated_series() {
    let gap = lyapunov_vs_series(5);
    assert!(gap < 1e-8, "relative gap {gap:.3e}");
}

#[test]
fn certified_bounds_contract_pointwise() {
    let (model, obs, ss) = two_state();
    for bound in [case1_bound(0.01), case2_bound(0.05, 0.03)] {
        assert!(bound.certified && bound.min_eig >= -1e-7);
        let (ineq, exit) = pointwise_contraction(&bound, &model, &obs, &ss, 10_000, 3);
        assert!(ineq <= 1e-7, "contraction inequality violated by {ineq:.3e}");
        assert!(exit <= 1e-7, "one step left the ellipsoid by {exit:.3e}");
    }
}

#[derive(serde::Deserialize)]
struct Reference {
    cases: Vec<RefCase>,
}

#[derive(serde::Deserialize)]
struct RefCase {
    false_alarm: f64,
    b: f64,
    neg_logdet: f64,
}

#[test]
fn both_backends_match_frozen_reference_values() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/maxdet_reference.json")).unwrap();
    let reference: Reference = serde_json::from_str(&text).unwrap();
    let (model, _, _) = two_state();
    for case in &reference.cases {
        let budget = HiddenBudget::case1(&model, case.false_alarm, QuantileMethod::GammaApprox).unwrap();
        let (a, b) = backends_on_bound_program(case.b, budget.omega_bar);
        for (name, got) in [("a", a), ("b", b)] {
            let rel = (got - case.neg_logdet).abs() / case.neg_logdet;
            assert!(rel < 1e-5, "backend {name}, A={} b={}: {got} vs {}", case.false_alarm, case.b, case.neg_logdet);
        }
    }
}

#[test]
fn backends_agree_on_synthesis_program() {
    let (model, _, _) = two_state();
    let omega = HiddenBudget::case1(&model, 0.01, QuantileMethod::GammaApprox).unwrap().omega_bar;
    for (b, kappa) in [(0.736, 1000.0), (0.6, 1e4), (0.9, 1e4)] {
        let (a, bb) = backends_on_synthesis_program(b, kappa, 1.86, omega);
        assert!((a - bb).abs() / a.abs() < 1e-3, "b={b} κ={kappa}: {a} vs {bb}");
    }
}

#[test]
fn infeasible_bound_program_is_reported_by_both_backends() {
    // b below ρ(F)² admits no certificate
    let (model, obs, ss) = two_state();
    for backend in [Backend::Conic, Backend::Bisection] {
        let mut vars = VarSet::new();
        let p = vars.symmetric("P", 2).unwrap();
        let lmi = hidden_reach::reach::build_reach_lmi(&vars, p, &model.f, &obs.l, &ss.sigma_sqrt, 0.3, 10.0).unwrap();
        let settings = SolverSettings { backend, ..SolverSettings::default() };
        let res = solve_maxdet(&MaxDetProblem::new(vars, p, vec![lmi], settings).unwrap());
        assert!(matches!(res, Err(Error::Infeasible(_))), "{backend:?}: {res:?}");
    }
}

#[test]
fn lmi_minimal_gamma_matches_frequency_sweep() {
    let gap = hinf_lmi_vs_sweep(17);
    assert!(gap < 1e-3, "relative gap {gap:.3e}");
}

#[test]
fn sphere_maximizer_beats_dense_sampling() {
    let mut g = Gen(23);
    for _ in 0..20 {
        let a = g.matrix(3, 3, 1.0);
        let q = (&a + a.transpose()) * 0.5;
        let lin = g.matrix(3, 1, 1.0).column(0).into_owned();
        let s = g.range(0.2, 3.0);
        let obj = |x: &hidden_reach::linalg::Vector| quad(&q, x) - 2.0 * lin.dot(x);
        let best = sphere_quadratic_max(&q, &lin, s);
        assert!((best.norm() - s).abs() < 1e-10);
        let mut sampled = f64::NEG_INFINITY;
        for _ in 0..100_000 {
            sampled = sampled.max(obj(&(g.unit(3) * s)));
        }
        assert!(obj(&best) >= sampled - 1e-9, "{} < {sampled}", obj(&best));
    }
}

#[test]
fn sphere_maximizer_hard_case() {
    // g orthogonal to the top eigenvector of Q
    let q = Mat::from_diagonal(&hidden_reach::linalg::Vector::from_vec(vec![3.0, 1.0, -2.0]));
    let lin = hidden_reach::linalg::Vector::from_vec(vec![0.0, 0.5, 0.1]);
    let x = sphere_quadratic_max(&q, &lin, 1.0);
    let obj = |x: &hidden_reach::linalg::Vector| quad(&q, x) - 2.0 * lin.dot(x);
    let mut g = Gen(29);
    let sampled = (0..200_000).map(|_| obj(&g.unit(3))).fold(f64::NEG_INFINITY, f64::max);
    assert!(obj(&x) >= sampled - 1e-9);
    assert!((x.norm() - 1.0).abs() < 1e-10);
}

fn sim_cfg(strategy: Strategy) -> SimConfig {
    SimConfig { horizon: 400, trials: 6, seed: 42, strategy, clip: ClipMode::None, warmup: 50, noise_candidates: 8 }
}

#[test]
fn stored_traces_satisfy_both_recursions() {
    let (model, obs, ss) = two_state();
    let calib = DetectorCalibration::new(1, 0.05).unwrap();
    let bound = case1_bound(0.05);
    for strategy in [Strategy::None, Strategy::GreedyHidden, Strategy::ZeroAlarm] {
        let res = run_hidden_attack(&model, &obs, &ss, &calib, Some(&bound), &sim_cfg(strategy), &AttackPolicy::Builtin(strategy)).unwrap();
        for tr in &res.traces {
            let (d5, d14) = replay_error(tr, &model, &obs, &ss);
            assert!(d5 < 1e-12 && d14 < 1e-12, "{strategy:?}: {d5:.2e} {d14:.2e}");
            // z is the squared normalized residual ‖ζ‖²
            for k in 0..tr.horizon {
                assert!((tr.z[k] - tr.zeta_at(k).norm_squared()).abs() <= 1e-10 * (1.0 + tr.z[k]));
            }
        }
    }
    // clipped runs are replayed after noise clipping and must stay consistent
    let cfg = SimConfig { clip: ClipMode::BudgetClip, ..sim_cfg(Strategy::GreedyHidden) };
    let res = run_hidden_attack(&model, &obs, &ss, &calib, Some(&bound), &cfg, &AttackPolicy::Builtin(Strategy::GreedyHidden)).unwrap();
    for tr in &res.traces {
        let (d5, d14) = replay_error(tr, &model, &obs, &ss);
        assert!(d5 < 1e-12 && d14 < 1e-12);
        for k in 0..tr.horizon {
            assert!(tr.v_at(k).norm_squared() <= bound.budget.v_bar * (1.0 + 1e-12));
            assert!(tr.zeta_at(k).norm_squared() <= bound.budget.zeta_cap * (1.0 + 1e-12));
        }
    }
}

#[test]
fn none_strategy_is_the_attack_free_run() {
    let (model, obs, ss) = two_state();
    let calib = DetectorCalibration::new(1, 0.05).unwrap();
    let cfg = sim_cfg(Strategy::None);
    let free = simulate_attack_free(&model, &obs, &ss, &calib, &cfg).unwrap();
    let none = run_hidden_attack(&model, &obs, &ss, &calib, None, &cfg, &AttackPolicy::Builtin(Strategy::None)).unwrap();
    assert_eq!(free.traces, none.traces);
    assert!(free.traces.iter().all(|t| t.delta.iter().all(|&d| d == 0.0)));
}

#[test]
fn noiseless_loop_is_degenerate() {
    let z2 = Mat::zeros(2, 2);
    let model = SystemModel::new(
        mat(&[&[0.84, 0.23], &[-0.47, 0.12]]),
        mat(&[&[0.07], &[0.23]]),
        mat(&[&[1.0, 0.0]]),
        Mat::identity(2, 2),
        z2,
        Mat::zeros(1, 1),
    )
    .unwrap();
    let (_, obs, _) = two_state();
    let err = steady_state(&model, &obs, &Tolerances::default()).unwrap_err();
    assert!(matches!(err, Error::Degenerate(_)), "{err}");
    assert_eq!(err.exit_code(), 4);
    let err = HiddenBudget::case1(&model, 0.05, QuantileMethod::Exact).unwrap_err();
    assert!(matches!(err, Error::Degenerate(_)), "{err}");
}

#[test]
fn larger_budgets_give_enclosing_ellipsoids() {
    let rates = [0.01, 0.05, 0.1, 0.2];
    let bounds: Vec<_> = rates.iter().map(|&a| case1_bound(a)).collect();
    for w in bounds.windows(2) {
        // smaller A means a larger threshold and a larger set
        assert!(nested_within(&w[1].p_shape, &w[0].p_shape, 1e-9));
        assert!(w[0].neg_logdet > w[1].neg_logdet);
    }
    let (c1, c3) = (case2_bound(0.05, 0.01), case2_bound(0.05, 0.03));
    assert!(nested_within(&c1.p_shape, &c3.p_shape, 1e-9));
    // the Case-2 sets dominate the Case-1 set at the same A
    assert!(nested_within(&bounds[1].p_shape, &c1.p_shape, 1e-9));
}

#[test]
fn both_backends_find_the_same_bound() {
    let (model, obs, ss) = two_state();
    let budget = HiddenBudget::case1(&model, 0.1, QuantileMethod::GammaApprox).unwrap();
    let grid = BGrid::new(vec![0.5, 0.6, 0.7], false).unwrap();
    let solve = |backend| {
        let settings = SolverSettings { backend, ..SolverSettings::default() };
        min_volume_bound(&model, &obs, &ss, &budget, &grid, &settings).unwrap()
    };
    let (a, b) = (solve(Backend::Conic), solve(Backend::Bisection));
    assert!((a.neg_logdet - b.neg_logdet).abs() / a.neg_logdet < 1e-4);
    assert_eq!(a.budget.b, b.budget.b);
    assert!((&a.p_shape - &b.p_shape).norm() / a.p_shape.norm() < 1e-3);
}

#[test]
fn uncapped_hidden_attack_escapes_the_bound() {
    // only the alarm rate is enforced: threshold-crossing steps are inflated
    let (model, obs, ss) = two_state();
    let calib = DetectorCalibration::new(1, 0.01).unwrap();
    let bound = case1_bound(0.01);
    let policy = hidden_reach::sim::tail_inflating_attack(bound.p_shape.clone(), &model, &obs, &ss, &calib, 100.0);
    let cfg = SimConfig { horizon: 100_000, trials: 1, seed: 2, strategy: Strategy::GreedyHidden, clip: ClipMode::None, warmup: 100, noise_candidates: 0 };
    let res = run_hidden_attack(&model, &obs, &ss, &calib, Some(&bound), &cfg, &policy).unwrap();
    let (k, v) = res.traces[0].max_lyap().unwrap();
    assert!(v > 1.0, "max V {v:.4} at step {k}");
    assert!(res.alarm_rate.contains(0.01), "{:?}", res.alarm_rate);
}

#[test]
fn chi_squared_greedy_attack_keeps_the_alarm_law() {
    let (model, obs, ss) = two_state();
    let calib = DetectorCalibration::new(1, 0.05).unwrap();
    let bound = case1_bound(0.05);
    let cfg = SimConfig { horizon: 10_100, trials: 10, seed: 4, strategy: Strategy::GreedyHidden, clip: ClipMode::None, warmup: 100, noise_candidates: 0 };
    let res = run_hidden_attack(&model, &obs, &ss, &calib, Some(&bound), &cfg, &AttackPolicy::Builtin(Strategy::GreedyHidden)).unwrap();
    let z: Vec<f64> = res.traces.iter().flat_map(|t| t.z[100..].iter().copied()).collect();
    assert_eq!(z.len(), 100_000);
    let (d, ok) = hidden_reach::sim::ks_chi2_accepts(&z, 1);
    assert!(ok, "KS D = {d}");
    assert!(res.alarm_rate.contains(0.05));
    // the attack does move the estimate away from the free run
    let free = simulate_attack_free(&model, &obs, &ss, &calib, &cfg).unwrap();
    assert!(res.mean_error_norm > 2.0 * free.mean_error_norm);
}

#[test]
fn unlimited_gain_level_drops_the_gain() {
    let (model, _, ss) = two_state();
    let budget = HiddenBudget::case1(&model, 0.01, QuantileMethod::GammaApprox).unwrap();
    let search = hidden_reach::reach::SynthesisSettings {
        b_points: vec![0.5, 0.6, 0.7, 0.8, 0.9],
        log_kappa_range: (1.0, 5.0),
        kappa_points: 9,
        sigma_iterations: 1,
        sigma_tol: 1e-6,
    };
    let res = hidden_reach::reach::synthesize_observer(
        &model,
        &ss,
        &budget,
        1e6,
        &BGrid::new(vec![0.5, 0.6, 0.7], true).unwrap(),
        &search,
        &SolverSettings::default(),
        &Tolerances::default(),
    )
    .unwrap();
    assert!(res.l_new.norm() < 1e-2, "L_new = {}", res.l_new);
    assert!(res.bound.neg_logdet < case1_bound(0.01).neg_logdet);
}
