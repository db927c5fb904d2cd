//! Minimum-volume ellipsoids for every two-state budget and their nesting order.

use hidden_reach::model::steady_state;
use hidden_reach::reach::{min_volume_bound, nested_within, HiddenBudget};
use hidden_reach::report::ScenarioConfig;

fn run() -> hidden_reach::Result<()> {
    let cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/two_state_case1.json").as_ref())?;
    let model = cfg.model()?;
    let obs = cfg.require_observer(&model)?;
    let ss = steady_state(&model, &obs, &cfg.solver.tolerances)?;
    let grid = cfg.b_grid()?;
    let settings = cfg.solver.settings;

    let mut shapes = Vec::new();
    for &a in &cfg.detector.false_alarm {
        let budget = HiddenBudget::case1(&model, a, cfg.detector.quantile)?;
        let bound = min_volume_bound(&model, &obs, &ss, &budget, &grid, &settings)?;
        println!(
            "Case 1, A = {a:<4}: b = {:.4}, -log det = {:.4}, volume = {:.2}, certified = {}",
            bound.budget.b.unwrap_or(f64::NAN),
            bound.neg_logdet,
            bound.volume,
            bound.certified
        );
        shapes.push(bound.p_shape);
    }
    // a smaller false-alarm rate means a larger threshold and a larger set
    for w in shapes.windows(2) {
        println!("nested: {}", nested_within(&w[1], &w[0], 1e-9));
    }

    for ap in [0.01, 0.03] {
        let budget = HiddenBudget::case2(&model, 0.05, ap, cfg.detector.quantile)?;
        let bound = min_volume_bound(&model, &obs, &ss, &budget, &grid, &settings)?;
        println!(
            "Case 2, a_p = {ap}: zeta_cap = {:.2}, -log det = {:.4}, volume = {:.1}",
            budget.zeta_cap, bound.neg_logdet, bound.volume
        );
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
