//! Detector thresholds, noise caps and Case-2 margins for the two-state scenario.

use hidden_reach::calibration::{
    chi2_threshold, markov_epsilon, noise_norm_quantile, AttackMoments, QuantileMethod,
};
use hidden_reach::report::ScenarioConfig;

fn run() -> hidden_reach::Result<()> {
    let cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/two_state_case1.json").as_ref())?;
    let model = cfg.model()?;

    println!("{:>6} {:>10} {:>12} {:>12}", "A", "alpha", "v_bar gamma", "v_bar exact");
    for &a in &cfg.detector.false_alarm {
        let alpha = chi2_threshold(model.m(), a)?;
        let gamma = noise_norm_quantile(&model.r1, 1.0 - a, QuantileMethod::GammaApprox)?;
        let exact = noise_norm_quantile(&model.r1, 1.0 - a, QuantileMethod::Exact)?;
        println!("{a:>6} {alpha:>10.4} {:>12.4} {:>12.4}", gamma.v_bar, exact.v_bar);
    }

    // Case 2: the attacker keeps the attack-free moments and accepts a_p extra alarms
    let a = 0.05;
    let alpha = chi2_threshold(model.m(), a)?;
    let moments = AttackMoments::standard(model.m());
    for ap in [0.01, 0.03] {
        let eps = markov_epsilon(&moments, a, ap, alpha)?;
        let v = noise_norm_quantile(&model.r1, 1.0 - a + ap, QuantileMethod::GammaApprox)?;
        println!("A = {a}, a_p = {ap}: eps = {eps:.2}, v_bar = {:.4}", v.v_bar);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
