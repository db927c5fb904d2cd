//! Redesign the observer gain to shrink the Case-1 ellipsoid at H∞ level γ.
//!
//! Takes about half a minute in release mode.

use hidden_reach::model::steady_state;
use hidden_reach::reach::{hinf_gain_estimate, min_hinf_gamma, min_volume_bound, synthesize_observer, HiddenBudget};
use hidden_reach::report::ScenarioConfig;

fn run() -> hidden_reach::Result<()> {
    let cfg =
        ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/two_state_synthesis.json").as_ref())?;
    let syn = cfg.observer.synthesize.clone().expect("scenario has a synthesis block");
    let model = cfg.model()?;
    let obs = cfg.require_observer(&model)?;
    let ss = steady_state(&model, &obs, &cfg.solver.tolerances)?;
    let grid = cfg.b_grid()?;
    let settings = cfg.solver.settings;
    let budget = HiddenBudget::case1(&model, syn.false_alarm, cfg.detector.quantile)?;

    let before = min_volume_bound(&model, &obs, &ss, &budget, &grid, &settings)?;
    println!(
        "original L = {:?}: H-inf gain {:.4} (LMI level {:.4}), -log det {:.4}",
        obs.l.as_slice(),
        hinf_gain_estimate(&model.f, &model.c, &obs.l, 10_000)?,
        min_hinf_gamma(&model.f, &model.c, &obs.l, 1e-6)?,
        before.neg_logdet
    );

    let res = synthesize_observer(&model, &ss, &budget, syn.gamma, &grid, &syn.search, &settings, &cfg.solver.tolerances)?;
    println!(
        "new L = {:?}: H-inf gain {:.4} <= {}, -log det {:.4}, volume ratio {:.3}",
        res.l_new.as_slice(),
        res.hinf_gain,
        syn.gamma,
        res.bound.neg_logdet,
        res.bound.volume / before.volume
    );
    println!(
        "one-shot L = {:?}; Sigma loop: {} iterations, converged = {}",
        res.one_shot.l.as_slice(),
        res.sigma_iterations,
        res.sigma_converged
    );
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
