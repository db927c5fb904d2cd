//! One determinant-maximization program solved by both backends, plus a
//! plain-text dump for external solvers.

use hidden_reach::model::steady_state;
use hidden_reach::reach::{build_reach_lmi, HiddenBudget};
use hidden_reach::report::ScenarioConfig;
use hidden_reach::sdp::{dump, solve_maxdet, Backend, MaxDetProblem, SolverSettings, VarSet};

fn run() -> hidden_reach::Result<()> {
    let cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/two_state_case1.json").as_ref())?;
    let model = cfg.model()?;
    let obs = cfg.require_observer(&model)?;
    let ss = steady_state(&model, &obs, &cfg.solver.tolerances)?;
    let budget = HiddenBudget::case1(&model, 0.01, cfg.detector.quantile)?;

    let mut vars = VarSet::new();
    let p = vars.symmetric("P", model.n())?;
    let lmi = build_reach_lmi(&vars, p, &model.f, &obs.l, &ss.sigma_sqrt, 0.6, budget.omega_bar)?;

    for backend in [Backend::Conic, Backend::Bisection] {
        let settings = SolverSettings { backend, ..Default::default() };
        let problem = MaxDetProblem::new(vars.clone(), p, vec![lmi.clone()], settings)?;
        let t = std::time::Instant::now();
        let sol = solve_maxdet(&problem)?;
        println!(
            "{backend:?}: -log det P = {:.9}, min eig = {:.2e}, gap = {:.1e} ({:.2?})",
            sol.neg_logdet,
            sol.min_eig,
            sol.gap_bound,
            t.elapsed()
        );
    }

    let problem = MaxDetProblem::new(vars, p, vec![lmi], SolverSettings::default())?;
    let mut text = Vec::new();
    dump::write_problem(&problem, &mut text)?;
    println!("\n{}", String::from_utf8_lossy(&text).lines().take(8).collect::<Vec<_>>().join("\n"));
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
