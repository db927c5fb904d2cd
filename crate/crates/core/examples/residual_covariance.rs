//! Steady-state error covariance and residual covariance of the two-state loop.

use hidden_reach::linalg::spectral_radius;
use hidden_reach::model::{solve_discrete_lyapunov, steady_state, Tolerances};
use hidden_reach::report::ScenarioConfig;

fn run() -> hidden_reach::Result<()> {
    let cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/two_state_case1.json").as_ref())?;
    let model = cfg.model()?;
    let obs = cfg.require_observer(&model)?;
    let tol = Tolerances::default();

    println!("rho(F)      = {:.4}", spectral_radius(&model.f)?);
    println!("rho(F - LC) = {:.4}", spectral_radius(&obs.error_dynamics(&model))?);
    let ss = steady_state(&model, &obs, &tol)?;
    println!("P_err = {:.6}", ss.p_err);
    println!("Sigma = {:.6}", ss.sigma[(0, 0)]);

    // the open-loop predictor (L = 0) only sees process noise
    let p0 = solve_discrete_lyapunov(&model.f, &model.r1, &tol)?;
    println!("P_err with L = 0: {:.6}", p0);
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
