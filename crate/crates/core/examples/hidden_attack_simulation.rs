//! Monte Carlo: attack-free vs greedy hidden attack, zero-alarm attack, and
//! the containment stress test against a certified bound.

use hidden_reach::calibration::DetectorCalibration;
use hidden_reach::model::steady_state;
use hidden_reach::reach::{min_volume_bound, HiddenBudget};
use hidden_reach::report::ScenarioConfig;
use hidden_reach::sim::{
    clipped_containment_test, ks_chi2_accepts, run_hidden_attack, simulate_attack_free, AttackPolicy, SimConfig,
    Strategy,
};

fn run() -> hidden_reach::Result<()> {
    let cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/two_state_case1.json").as_ref())?;
    let model = cfg.model()?;
    let obs = cfg.require_observer(&model)?;
    let ss = steady_state(&model, &obs, &cfg.solver.tolerances)?;
    let a = 0.05;
    let calib = DetectorCalibration::new(model.m(), a)?;
    let budget = HiddenBudget::case1(&model, a, cfg.detector.quantile)?;
    let bound = min_volume_bound(&model, &obs, &ss, &budget, &cfg.b_grid()?, &cfg.solver.settings)?;

    let sim = SimConfig { horizon: 1000, trials: 200, seed: 7, ..Default::default() };
    let free = simulate_attack_free(&model, &obs, &ss, &calib, &sim)?;
    let greedy = run_hidden_attack(&model, &obs, &ss, &calib, Some(&bound), &sim, &AttackPolicy::Builtin(Strategy::GreedyHidden))?;
    let zero = run_hidden_attack(&model, &obs, &ss, &calib, Some(&bound), &sim, &AttackPolicy::Builtin(Strategy::ZeroAlarm))?;
    for (name, r) in [("attack-free", &free), ("greedy hidden", &greedy), ("zero alarm", &zero)] {
        println!(
            "{name:<14} alarm rate {:.4} [{:.4}, {:.4}], mean |e| {:.3}",
            r.alarm_rate.rate, r.alarm_rate.ci_low, r.alarm_rate.ci_high, r.mean_error_norm
        );
    }
    let z: Vec<f64> = greedy.traces.iter().flat_map(|t| t.z.iter().copied()).collect();
    let (d, ok) = ks_chi2_accepts(&z, model.m());
    println!("KS statistic of attacked z against chi2({}): {d:.5}, accepted = {ok}", model.m());

    let rep = clipped_containment_test(&bound, &model, &obs, &ss, &SimConfig { trials: 100, ..sim })?;
    println!("containment: passed = {}, max V = {:.5}", rep.passed, rep.max_lyap);
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
