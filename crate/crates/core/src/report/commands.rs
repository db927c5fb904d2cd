//! The four CLI commands. Each writes its artifacts under the configured
//! output directory and returns the bundle it serialized to `report.json`.
//!
//! The reporting layer only copies numbers out of operation results; nothing
//! here recomputes a quantity that an operation already returned.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::{Format, ScenarioConfig, SCHEMA};
use super::svg::{ellipse_boundary, plot, projected_boundary, Curve};
use crate::calibration::{markov_epsilon, noise_norm_quantile, DetectorCalibration, QuantileMethod};
use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, to_rows, Mat};
use crate::model::{steady_state, ObserverDesign, SteadyState, SystemModel};
use crate::reach::{
    hinf_gain_estimate, min_volume_bound, synthesize_observer, BStatus, BudgetCase, EllipsoidBound, HiddenBudget,
};
use crate::sim::{
    clipped_containment_test, run_hidden_attack, traces_to_csv, AlarmRate, AttackPolicy, AttackTrace, SimResult,
    Strategy,
};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub false_alarm: f64,
    pub alpha: f64,
    pub p: f64,
    pub v_bar: f64,
    pub method: QuantileMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case2Row {
    pub false_alarm: f64,
    pub a_p: f64,
    pub alpha: f64,
    pub p: f64,
    /// Markov margin before clamping at zero.
    pub eps_raw: f64,
    pub eps_p: f64,
    pub v_bar: f64,
    pub zeta_cap: f64,
    pub omega_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadySummary {
    #[serde(rename = "L")]
    pub l: Rows,
    pub sigma: Rows,
    pub p_err: Rows,
    /// `ρ(F − LC)`.
    pub error_dynamics_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub label: String,
    pub case: BudgetCase,
    pub false_alarm: f64,
    pub a_p: Option<f64>,
    pub p: f64,
    pub alpha: f64,
    pub zeta_cap: f64,
    pub v_bar: f64,
    pub omega_bar: f64,
    pub b: Option<f64>,
    pub p_shape: Rows,
    pub neg_logdet: f64,
    pub volume: f64,
    pub certified: bool,
    pub min_eig: f64,
    pub scan: Vec<BStatus>,
}

impl BoundSummary {
    fn new(label: String, bound: &EllipsoidBound) -> Self {
        let b = &bound.budget;
        Self {
            label,
            case: b.case,
            false_alarm: b.false_alarm,
            a_p: b.a_p,
            p: b.p,
            alpha: b.alpha,
            zeta_cap: b.zeta_cap,
            v_bar: b.v_bar,
            omega_bar: b.omega_bar,
            b: b.b,
            p_shape: to_rows(&bound.p_shape),
            neg_logdet: bound.neg_logdet,
            volume: bound.volume,
            certified: bound.certified,
            min_eig: bound.min_eig,
            scan: bound.scan.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub gamma: f64,
    pub false_alarm: f64,
    #[serde(rename = "L_original")]
    pub l_original: Rows,
    #[serde(rename = "L_new")]
    pub l_new: Rows,
    #[serde(rename = "L_one_shot")]
    pub l_one_shot: Rows,
    pub hinf_gain_original: f64,
    pub hinf_gain_new: f64,
    pub b: f64,
    pub kappa: f64,
    pub sigma_new: Rows,
    pub sigma_iterations: usize,
    pub sigma_converged: bool,
    pub original: BoundSummary,
    pub new: BoundSummary,
    pub one_shot: BoundSummary,
    /// Volume of the new bound over the original one.
    pub volume_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentSummary {
    pub label: String,
    pub verdict: String,
    pub passed: bool,
    pub max_lyap: f64,
    pub worst_trial: usize,
    pub worst_step: usize,
    pub trials: usize,
    pub horizon: usize,
    pub offending_trace: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub alarm_rate: AlarmRate,
    pub mean_error_norm: f64,
    pub max_lyap: Option<f64>,
}

impl RunSummary {
    fn new(strategy: Strategy, r: &SimResult) -> Self {
        Self { strategy, alarm_rate: r.alarm_rate, mean_error_norm: r.mean_error_norm, max_lyap: r.max_lyap }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub seed: u64,
    pub false_alarm: f64,
    pub alpha: f64,
    pub horizon: usize,
    pub trials: usize,
    pub warmup: usize,
    pub bound: String,
    pub attack_free: RunSummary,
    pub attacked: Option<RunSummary>,
    pub containment: Vec<ContainmentSummary>,
}

/// Everything one command produced, as serialized to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReportBundle {
    pub schema: String,
    pub command: String,
    pub scenario: Option<String>,
    pub steady_state: Option<SteadySummary>,
    pub calibration: Vec<CalibrationRow>,
    pub case2: Vec<Case2Row>,
    pub bounds: Vec<BoundSummary>,
    pub synthesis: Option<SynthesisSummary>,
    pub simulation: Option<SimulationSummary>,
    pub files: Vec<String>,
}

struct Outputs<'a> {
    cfg: &'a ScenarioConfig,
    dir: PathBuf,
    bundle: ReportBundle,
}

impl<'a> Outputs<'a> {
    fn new(cfg: &'a ScenarioConfig, command: &str) -> Result<Self> {
        let dir = PathBuf::from(&cfg.output.directory);
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            cfg,
            dir,
            bundle: ReportBundle {
                schema: SCHEMA.into(),
                command: command.into(),
                scenario: cfg.name.clone(),
                ..Default::default()
            },
        })
    }

    fn write(&mut self, format: Format, name: &str, contents: &str) -> Result<()> {
        if !self.cfg.output.wants(format) {
            return Ok(());
        }
        std::fs::write(self.dir.join(name), contents)?;
        self.bundle.files.push(name.to_string());
        Ok(())
    }

    fn finish(mut self) -> Result<ReportBundle> {
        if self.cfg.output.wants(Format::Json) {
            self.bundle.files.push("report.json".into());
            let text = serde_json::to_string_pretty(&self.bundle)?;
            std::fs::write(self.dir.join("report.json"), text + "\n")?;
        }
        Ok(self.bundle)
    }
}

fn steady_summary(model: &SystemModel, obs: &ObserverDesign, ss: &SteadyState) -> Result<SteadySummary> {
    Ok(SteadySummary {
        l: to_rows(&obs.l),
        sigma: to_rows(&ss.sigma),
        p_err: to_rows(&ss.p_err),
        error_dynamics_radius: spectral_radius(&obs.error_dynamics(model))?,
    })
}

fn case1_label(a: f64) -> String {
    format!("case1_A{a}")
}

fn case2_label(a: f64, ap: f64) -> String {
    format!("case2_A{a}_ap{ap}")
}

/// Case-2 budgets for every configured `a_p`, with the raw Markov margin.
fn case2_budgets(cfg: &ScenarioConfig, model: &SystemModel) -> Result<Vec<(HiddenBudget, f64)>> {
    let Some(c2) = &cfg.detector.case2 else {
        return Ok(Vec::new());
    };
    let moments = cfg.case2_moments(model.m())?;
    c2.a_p
        .iter()
        .map(|&ap| {
            let budget =
                HiddenBudget::case2_with_moments(model, c2.false_alarm, ap, &moments, cfg.detector.quantile)?;
            let raw = markov_epsilon(&moments, c2.false_alarm, ap, budget.alpha)?;
            Ok((budget, raw))
        })
        .collect()
}

/// `(A, α, v̄)` rows plus the Case-2 constants.
pub fn cmd_calibrate(cfg: &ScenarioConfig) -> Result<ReportBundle> {
    let model = cfg.model()?;
    let mut out = Outputs::new(cfg, "calibrate")?;
    for (i, &a) in cfg.detector.false_alarm.iter().enumerate() {
        let calib = DetectorCalibration::new(model.m(), a)
            .map_err(|e| Error::config(format!("detector.false_alarm[{i}]"), e.to_string()))?;
        let nb = noise_norm_quantile(&model.r1, 1.0 - a, cfg.detector.quantile)?;
        out.bundle.calibration.push(CalibrationRow {
            false_alarm: a,
            alpha: calib.alpha,
            p: nb.p,
            v_bar: nb.v_bar,
            method: nb.method,
        });
    }
    for (b, raw) in case2_budgets(cfg, &model)? {
        out.bundle.case2.push(Case2Row {
            false_alarm: b.false_alarm,
            a_p: b.a_p.expect("case 2"),
            alpha: b.alpha,
            p: b.p,
            eps_raw: raw,
            eps_p: b.eps_p.expect("case 2"),
            v_bar: b.v_bar,
            zeta_cap: b.zeta_cap,
            omega_bar: b.omega_bar,
        });
    }

    let mut csv = String::from("false_alarm,alpha,p,v_bar\n");
    for r in &out.bundle.calibration {
        let _ = writeln!(csv, "{},{:.12e},{:.12e},{:.12e}", r.false_alarm, r.alpha, r.p, r.v_bar);
    }
    out.write(Format::Csv, "calibration.csv", &csv)?;
    if !out.bundle.case2.is_empty() {
        let mut csv = String::from("false_alarm,a_p,alpha,p,eps_p,v_bar,zeta_cap,omega_bar\n");
        for r in &out.bundle.case2 {
            let _ = writeln!(
                csv,
                "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.false_alarm, r.a_p, r.alpha, r.p, r.eps_p, r.v_bar, r.zeta_cap, r.omega_bar
            );
        }
        out.write(Format::Csv, "calibration_case2.csv", &csv)?;
    }
    out.finish()
}

struct Analysis {
    model: SystemModel,
    observer: ObserverDesign,
    steady: SteadyState,
}

fn analysis(cfg: &ScenarioConfig) -> Result<Analysis> {
    let model = cfg.model()?;
    let observer = cfg.require_observer(&model)?;
    let steady = steady_state(&model, &observer, &cfg.solver.tolerances)?;
    Ok(Analysis { model, observer, steady })
}

/// One bound per Case-1 rate and per Case-2 `a_p`, labelled.
fn all_bounds(cfg: &ScenarioConfig, an: &Analysis) -> Result<Vec<(String, EllipsoidBound)>> {
    let grid = cfg.b_grid()?;
    let settings = &cfg.solver.settings;
    let mut out = Vec::new();
    for &a in &cfg.detector.false_alarm {
        let budget = HiddenBudget::case1(&an.model, a, cfg.detector.quantile)?;
        log::info!("bounding {}", case1_label(a));
        let bound = min_volume_bound(&an.model, &an.observer, &an.steady, &budget, &grid, settings)?;
        out.push((case1_label(a), bound));
    }
    for (budget, _) in case2_budgets(cfg, &an.model)? {
        let label = case2_label(budget.false_alarm, budget.a_p.expect("case 2"));
        log::info!("bounding {label}");
        let bound = min_volume_bound(&an.model, &an.observer, &an.steady, &budget, &grid, settings)?;
        out.push((label, bound));
    }
    Ok(out)
}

/// Boundary CSV and SVG(s) for a set of labelled shape matrices.
fn emit_ellipses(out: &mut Outputs<'_>, stem: &str, title: &str, shapes: &[(String, Mat)], scatter: &[Vec<f64>]) -> Result<()> {
    let Some((_, first)) = shapes.first() else {
        return Ok(());
    };
    let n = first.nrows();
    if n == 1 {
        let mut csv = String::from("label,e_min,e_max\n");
        for (label, p) in shapes {
            let r = 1.0 / p[(0, 0)].sqrt();
            let _ = writeln!(csv, "{label},{:.12e},{:.12e}", -r, r);
        }
        return out.write(Format::Csv, &format!("{stem}.csv"), &csv);
    }
    let pairs: Vec<(usize, usize)> = if n == 2 {
        vec![(0, 1)]
    } else {
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
    };
    let mut csv = String::from("label,i,j,k,x,y\n");
    for &(i, j) in &pairs {
        let mut curves = Vec::new();
        for (label, p) in shapes {
            let pts = if n == 2 { ellipse_boundary(p)? } else { projected_boundary(p, i, j)? };
            for (k, q) in pts.iter().enumerate() {
                let _ = writeln!(csv, "{label},{},{},{k},{:.12e},{:.12e}", i + 1, j + 1, q[0], q[1]);
            }
            curves.push(Curve { label: label.clone(), points: pts });
        }
        let cloud: Vec<[f64; 2]> = scatter.iter().map(|e| [e[i], e[j]]).collect();
        let axes = (format!("e_{}", i + 1), format!("e_{}", j + 1));
        let svg = plot(title, (&axes.0, &axes.1), &curves, &cloud);
        let name = if n == 2 { format!("{stem}.svg") } else { format!("{stem}_e{}_e{}.svg", i + 1, j + 1) };
        out.write(Format::Svg, &name, &svg)?;
    }
    out.write(Format::Csv, &format!("{stem}.csv"), &csv)
}

/// Minimum-volume certified ellipsoids for every configured budget.
pub fn cmd_bound(cfg: &ScenarioConfig) -> Result<ReportBundle> {
    let an = analysis(cfg)?;
    let bounds = all_bounds(cfg, &an)?;
    let mut out = Outputs::new(cfg, "bound")?;
    out.bundle.steady_state = Some(steady_summary(&an.model, &an.observer, &an.steady)?);
    for (label, b) in &bounds {
        if !b.certified {
            log::warn!("{label}: re-instantiated LMI has min eigenvalue {:.3e}", b.min_eig);
        }
        out.bundle.bounds.push(BoundSummary::new(label.clone(), b));
    }
    let shapes: Vec<(String, Mat)> = bounds.iter().map(|(l, b)| (l.clone(), b.p_shape.clone())).collect();
    emit_ellipses(&mut out, "bounds", "Hidden reachable set bounds", &shapes, &[])?;
    out.finish()
}

/// Observer redesign under an H∞ constraint, compared with the fixed gain.
pub fn cmd_synthesize(cfg: &ScenarioConfig) -> Result<ReportBundle> {
    let syn = cfg
        .observer
        .synthesize
        .as_ref()
        .ok_or_else(|| Error::config("observer.synthesize", "missing synthesis block"))?;
    let an = analysis(cfg)?;
    let grid = cfg.b_grid()?;
    let settings = &cfg.solver.settings;
    let budget = HiddenBudget::case1(&an.model, syn.false_alarm, cfg.detector.quantile)?;
    let original = min_volume_bound(&an.model, &an.observer, &an.steady, &budget, &grid, settings)?;
    let res = synthesize_observer(
        &an.model,
        &an.steady,
        &budget,
        syn.gamma,
        &grid,
        &syn.search,
        settings,
        &cfg.solver.tolerances,
    )?;
    let mut out = Outputs::new(cfg, "synthesize")?;
    out.bundle.steady_state = Some(steady_summary(&an.model, &an.observer, &an.steady)?);
    let summary = SynthesisSummary {
        gamma: syn.gamma,
        false_alarm: syn.false_alarm,
        l_original: to_rows(&an.observer.l),
        l_new: to_rows(&res.l_new),
        l_one_shot: to_rows(&res.one_shot.l),
        hinf_gain_original: hinf_gain_estimate(&an.model.f, &an.model.c, &an.observer.l, 10_000)?,
        hinf_gain_new: res.hinf_gain,
        b: res.iterated.b,
        kappa: res.iterated.kappa,
        sigma_new: to_rows(&res.iterated.sigma),
        sigma_iterations: res.sigma_iterations,
        sigma_converged: res.sigma_converged,
        original: BoundSummary::new("original".into(), &original),
        new: BoundSummary::new("synthesized".into(), &res.bound),
        one_shot: BoundSummary::new("one-shot".into(), &res.one_shot_bound),
        volume_ratio: res.bound.volume / original.volume,
    };
    out.bundle.synthesis = Some(summary);
    let shapes = vec![
        ("original L".to_string(), original.p_shape.clone()),
        ("synthesized L".to_string(), res.bound.p_shape.clone()),
    ];
    emit_ellipses(&mut out, "synthesis", "Bound before and after observer redesign", &shapes, &[])?;
    out.finish()
}

fn scatter_points(traces: &[AttackTrace], limit: usize) -> Vec<Vec<f64>> {
    let total: usize = traces.iter().map(|t| t.horizon + 1).sum();
    let stride = total.div_ceil(limit.max(1)).max(1);
    let mut pts = Vec::new();
    let mut idx = 0;
    for t in traces {
        for k in 0..=t.horizon {
            if idx % stride == 0 {
                pts.push(t.e[k * t.n..(k + 1) * t.n].to_vec());
            }
            idx += 1;
        }
    }
    pts
}

/// Attack-free and attacked Monte Carlo runs, optional containment tests.
///
/// A containment violation is reported after all artifacts are written.
pub fn cmd_simulate(cfg: &ScenarioConfig) -> Result<ReportBundle> {
    if cfg.sim.seed.is_none() {
        log::info!("no seed given; using seed 0");
    }
    let a = cfg
        .sim
        .false_alarm
        .or_else(|| cfg.detector.false_alarm.first().copied())
        .ok_or_else(|| Error::config("sim.false_alarm", "no detector rate to simulate at"))?;
    let an = analysis(cfg)?;
    let calib = DetectorCalibration::new(an.model.m(), a)?;
    let budget = HiddenBudget::case1(&an.model, a, cfg.detector.quantile)?;
    let bound =
        min_volume_bound(&an.model, &an.observer, &an.steady, &budget, &cfg.b_grid()?, &cfg.solver.settings)?;
    let sim_cfg = cfg.sim.sim_config();

    let free_cfg = crate::sim::SimConfig { strategy: Strategy::None, ..sim_cfg.clone() };
    let free = run_hidden_attack(
        &an.model,
        &an.observer,
        &an.steady,
        &calib,
        Some(&bound),
        &free_cfg,
        &AttackPolicy::Builtin(Strategy::None),
    )?;
    let attacked = match sim_cfg.strategy {
        Strategy::None => None,
        s => Some(run_hidden_attack(
            &an.model,
            &an.observer,
            &an.steady,
            &calib,
            Some(&bound),
            &sim_cfg,
            &AttackPolicy::Builtin(s),
        )?),
    };

    let mut out = Outputs::new(cfg, "simulate")?;
    out.bundle.steady_state = Some(steady_summary(&an.model, &an.observer, &an.steady)?);
    let label = case1_label(a);
    out.bundle.bounds.push(BoundSummary::new(label.clone(), &bound));

    let mut containment = Vec::new();
    if cfg.sim.containment {
        for (blabel, b) in all_bounds(cfg, &an)? {
            let rep = clipped_containment_test(&b, &an.model, &an.observer, &an.steady, &cfg.sim.containment_config())?;
            let offending_trace = match &rep.offending {
                Some(tr) => {
                    let name = format!("containment_{blabel}_offending.csv");
                    out.write(Format::Csv, &name, &traces_to_csv(std::slice::from_ref(tr)))?;
                    Some(name)
                }
                None => None,
            };
            containment.push(ContainmentSummary {
                label: blabel,
                verdict: if rep.passed { "CONTAINED".into() } else { "ESCAPED".into() },
                passed: rep.passed,
                max_lyap: rep.max_lyap,
                worst_trial: rep.worst_trial,
                worst_step: rep.worst_step,
                trials: rep.trials,
                horizon: rep.horizon,
                offending_trace,
            });
        }
    }

    out.write(Format::Csv, "trace_attack_free.csv", &traces_to_csv(&free.traces))?;
    if let Some(att) = &attacked {
        out.write(Format::Csv, "trace_attacked.csv", &traces_to_csv(&att.traces))?;
    }
    let shown = attacked.as_ref().unwrap_or(&free);
    let shapes = vec![(label.clone(), bound.p_shape.clone())];
    emit_ellipses(
        &mut out,
        "simulation",
        "Estimation errors over the certified bound",
        &shapes,
        &scatter_points(&shown.traces, 4000),
    )?;

    out.bundle.simulation = Some(SimulationSummary {
        seed: sim_cfg.seed,
        false_alarm: a,
        alpha: calib.alpha,
        horizon: sim_cfg.horizon,
        trials: sim_cfg.trials,
        warmup: sim_cfg.warmup,
        bound: label,
        attack_free: RunSummary::new(Strategy::None, &free),
        attacked: attacked.as_ref().map(|r| RunSummary::new(sim_cfg.strategy, r)),
        containment: containment.clone(),
    });
    let bundle = out.finish()?;
    if let Some(bad) = containment.iter().find(|c| !c.passed) {
        return Err(Error::Containment(format!(
            "{}: max eᵀ𝒫e = {:.6} at trial {}, step {}",
            bad.label, bad.max_lyap, bad.worst_trial, bad.worst_step
        )));
    }
    Ok(bundle)
}
