//! Monte Carlo simulation of the error/residual/detector loop under attack.
//!
//! Only the estimation error is propagated: `u` and `x̂` cancel out of
//! `e_{k+1} = (F − LC) e_k − L η_k − L δ_k + v_k`. Each trial starts from
//! `e₁ = 0` and draws its noise from counter-keyed streams, so trials are
//! independent of scheduling and reproduce bit for bit.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{chi2_cdf, DetectorCalibration};
use crate::error::{Error, Result};
use crate::linalg::{sqrt_sym, sym_eigen, Mat, Vector};
use crate::model::{ObserverDesign, SteadyState, SystemModel};
use crate::reach::{EllipsoidBound, HiddenBudget};
use crate::rng::{streams, CounterRng};

/// Two-sided 99% standard normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_9;
/// Asymptotic Kolmogorov–Smirnov critical value at the 1% level (times √N).
pub const KS_CRITICAL_1PCT: f64 = 1.628;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    None,
    GreedyHidden,
    ZeroAlarm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    #[default]
    None,
    BudgetClip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub clip: ClipMode,
    pub warmup: usize,
    /// Number of random process-noise candidates per step in containment runs.
    pub noise_candidates: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 1000,
            trials: 100,
            seed: 0,
            strategy: Strategy::None,
            clip: ClipMode::None,
            warmup: 100,
            noise_candidates: 16,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.trials == 0 {
            return Err(Error::config("sim", "horizon and trials must be at least 1"));
        }
        Ok(())
    }
}

/// What a custom attack sees at step `k`.
pub struct AttackContext<'a> {
    pub trial: usize,
    pub k: usize,
    pub e: &'a Vector,
    pub eta: &'a Vector,
    pub rng: &'a mut CounterRng,
}

pub type CustomAttack = Arc<dyn Fn(&mut AttackContext<'_>) -> Vector + Send + Sync>;

/// Attack policy: one of the built-in strategies or a user closure that
/// returns the normalized injection `ζ_k`.
#[derive(Clone)]
pub enum AttackPolicy {
    Builtin(Strategy),
    Custom(CustomAttack),
}

impl std::fmt::Debug for AttackPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackPolicy::Builtin(s) => write!(f, "Builtin({s:?})"),
            AttackPolicy::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Per-step record of one trajectory, stored flat.
///
/// `e` holds `horizon + 1` states (`e₁ … e_{K+1}`); every other per-step
/// field holds `horizon` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub trial: usize,
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
    pub e: Vec<f64>,
    pub zeta: Vec<f64>,
    pub delta: Vec<f64>,
    pub v: Vec<f64>,
    pub eta: Vec<f64>,
    pub z: Vec<f64>,
    pub alarm: Vec<bool>,
    /// `e_kᵀ𝒫e_k` for `k = 1 … K+1` when a bound is attached.
    pub lyap: Option<Vec<f64>>,
}

impl AttackTrace {
    fn with_capacity(trial: usize, n: usize, m: usize, horizon: usize, with_bound: bool) -> Self {
        Self {
            trial,
            n,
            m,
            horizon,
            e: Vec::with_capacity((horizon + 1) * n),
            zeta: Vec::with_capacity(horizon * m),
            delta: Vec::with_capacity(horizon * m),
            v: Vec::with_capacity(horizon * n),
            eta: Vec::with_capacity(horizon * m),
            z: Vec::with_capacity(horizon),
            alarm: Vec::with_capacity(horizon),
            lyap: with_bound.then(|| Vec::with_capacity(horizon + 1)),
        }
    }

    pub fn e_at(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.e[k * self.n..(k + 1) * self.n])
    }

    pub fn zeta_at(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.zeta[k * self.m..(k + 1) * self.m])
    }

    pub fn delta_at(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.delta[k * self.m..(k + 1) * self.m])
    }

    pub fn v_at(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.v[k * self.n..(k + 1) * self.n])
    }

    pub fn eta_at(&self, k: usize) -> Vector {
        Vector::from_column_slice(&self.eta[k * self.m..(k + 1) * self.m])
    }

    pub fn max_lyap(&self) -> Option<(usize, f64)> {
        self.lyap.as_ref().map(|v| {
            v.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |acc, (k, x)| if x > acc.1 { (k, x) } else { acc })
        })
    }

    pub fn mean_error_norm(&self) -> f64 {
        let steps = self.horizon + 1;
        (0..steps).map(|k| self.e_at(k).norm()).sum::<f64>() / steps as f64
    }
}

/// Empirical alarm rate with a Wilson 99% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmRate {
    pub rate: f64,
    pub alarms: usize,
    pub steps: usize,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl AlarmRate {
    pub fn from_counts(alarms: usize, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Validation("alarm rate over an empty window".into()));
        }
        let nf = steps as f64;
        let p = alarms as f64 / nf;
        let z2 = Z_99 * Z_99;
        let denom = 1.0 + z2 / nf;
        let center = (p + z2 / (2.0 * nf)) / denom;
        let half = Z_99 / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
        Ok(Self { rate: p, alarms, steps, ci_low: (center - half).max(0.0), ci_high: (center + half).min(1.0) })
    }

    pub fn contains(&self, rate: f64) -> bool {
        self.ci_low <= rate && rate <= self.ci_high
    }
}

/// Alarm rate of one trace after discarding the first `warmup` steps.
pub fn empirical_alarm_rate(trace: &AttackTrace, warmup: usize) -> Result<AlarmRate> {
    alarm_rate_of(&trace.alarm, warmup)
}

pub fn alarm_rate_of(alarms: &[bool], warmup: usize) -> Result<AlarmRate> {
    if alarms.len() <= warmup {
        return Err(Error::Validation(format!(
            "trace of {} steps has nothing after a warmup of {warmup}",
            alarms.len()
        )));
    }
    let window = &alarms[warmup..];
    AlarmRate::from_counts(window.iter().filter(|a| **a).count(), window.len())
}

/// Kolmogorov–Smirnov statistic of `samples` against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// KS test of `z` samples against the chi-squared law; `true` means the fit
/// is not rejected at the 1% level.
pub fn ks_chi2_accepts(samples: &[f64], dof: usize) -> (f64, bool) {
    let d = ks_statistic(samples, |x| chi2_cdf(dof, x).unwrap_or(0.0));
    (d, d <= KS_CRITICAL_1PCT / (samples.len() as f64).sqrt())
}

/// Maximize `(F e − B ζ)ᵀ 𝒫 (F e − B ζ)` over `‖ζ‖ = s`, `B = L Σ^{1/2}`.
///
/// Expands to `ζᵀQζ − 2gᵀζ + const` with `Q = Bᵀ𝒫B`, `g = Bᵀ𝒫Fe`; the global
/// maximizer is `ζ = −(λI − Q)⁻¹ g` with `λ ≥ λ_max(Q)` fixed by the sphere
/// constraint (secular equation), plus the usual hard case.
pub fn greedy_hidden_step(e: &Vector, p_shape: &Mat, f: &Mat, l: &Mat, sigma_sqrt: &Mat, s: f64) -> Vector {
    let b = l * sigma_sqrt;
    let fe = f * e;
    let q = b.transpose() * p_shape * &b;
    let g = b.transpose() * p_shape * fe;
    sphere_quadratic_max(&q, &g, s)
}

/// `argmax_{‖x‖=s} xᵀQx − 2gᵀx` for symmetric `Q`.
pub fn sphere_quadratic_max(q: &Mat, g: &Vector, s: f64) -> Vector {
    let m = g.len();
    if s <= 0.0 || m == 0 {
        return Vector::zeros(m);
    }
    let eig = sym_eigen(q);
    let lam = &eig.values;
    let gt = eig.vectors.transpose() * g;
    let top = lam[m - 1];
    let gnorm = gt.norm();
    let scale = lam.amax().max(gnorm / s).max(1e-300);
    let degenerate = |i: usize| (lam[i] - top).abs() <= 1e-12 * scale;
    let norm_at = |mu: f64| -> f64 {
        (0..m).map(|i| (gt[i] / (mu - lam[i])).powi(2)).sum::<f64>().sqrt()
    };
    let top_mass: f64 = (0..m).filter(|&i| degenerate(i)).map(|i| gt[i] * gt[i]).sum::<f64>().sqrt();

    let y = if top_mass <= 1e-14 * gnorm.max(1e-300) || gnorm == 0.0 {
        // hard case: the secular root may sit at the top eigenvalue itself
        let mut y = Vector::zeros(m);
        let mut rest = 0.0;
        for i in 0..m {
            if !degenerate(i) {
                y[i] = -gt[i] / (top - lam[i]);
                rest += y[i] * y[i];
            }
        }
        if rest <= s * s {
            let tau = (s * s - rest).sqrt();
            let i_top = (0..m).rev().find(|&i| degenerate(i)).expect("top eigenvalue present");
            y[i_top] = tau;
            y
        } else {
            secular_solution(lam, &gt, top, gnorm, s, &norm_at)
        }
    } else {
        secular_solution(lam, &gt, top, gnorm, s, &norm_at)
    };
    let x = &eig.vectors * y;
    // both signs of the top direction are stationary in the hard case; keep the better
    let obj = |v: &Vector| (v.transpose() * q * v)[(0, 0)] - 2.0 * g.dot(v);
    let flipped = -&x;
    if obj(&flipped) > obj(&x) + 1e-15 * obj(&x).abs() {
        flipped
    } else {
        x
    }
}

fn secular_solution(lam: &Vector, gt: &Vector, top: f64, gnorm: f64, s: f64, norm_at: &dyn Fn(f64) -> f64) -> Vector {
    let m = lam.len();
    let mut lo = top;
    let mut hi = top + gnorm / s;
    if norm_at(hi) > s {
        hi = top + 2.0 * gnorm / s;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) > s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = hi;
    let mut y = Vector::from_fn(m, |i, _| -gt[i] / (mu - lam[i]));
    let nrm = y.norm();
    if nrm > 0.0 {
        y *= s / nrm;
    }
    y
}

/// Greedy attack that keeps the alarm events of the hidden attack but
/// multiplies every above-threshold magnitude `s²` by `inflation`.
///
/// The alarm rate is still exactly `A`, yet the injected energy has no cap,
/// so no bounded reachable set survives. `steer` is the shape matrix used to
/// aim `ζ` (usually the ellipsoid under test).
pub fn tail_inflating_attack(
    steer: Mat,
    model: &SystemModel,
    observer: &ObserverDesign,
    steady: &SteadyState,
    calib: &DetectorCalibration,
    inflation: f64,
) -> AttackPolicy {
    let (f, l, s) = (model.f.clone(), observer.l.clone(), steady.sigma_sqrt.clone());
    let (alpha, m) = (calib.alpha, model.m());
    AttackPolicy::Custom(Arc::new(move |ctx: &mut AttackContext<'_>| {
        let mut s2 = ctx.rng.chi_squared(m);
        if s2 > alpha {
            s2 *= inflation;
        }
        greedy_hidden_step(ctx.e, &steer, &f, &l, &s, s2.sqrt())
    }))
}

/// Everything a trajectory needs, precomputed once.
struct Plant<'a> {
    model: &'a SystemModel,
    a: Mat,
    l: &'a Mat,
    steady: &'a SteadyState,
    r1_sqrt: Mat,
    r2_sqrt: Mat,
}

impl<'a> Plant<'a> {
    fn new(model: &'a SystemModel, observer: &'a ObserverDesign, steady: &'a SteadyState) -> Result<Self> {
        Ok(Self {
            model,
            a: observer.error_dynamics(model),
            l: &observer.l,
            steady,
            r1_sqrt: sqrt_sym(&model.r1, 1e-9)?,
            r2_sqrt: sqrt_sym(&model.r2, 1e-9)?,
        })
    }

    fn draw(&self, sqrt: &Mat, rng: &mut CounterRng) -> Vector {
        let w = Vector::from_vec(rng.normals(sqrt.ncols()));
        sqrt * w
    }
}

/// Inputs for one step that the trajectory loop cannot infer itself.
enum StepAttack {
    /// No injection, `δ = 0`.
    Free,
    /// Attacker picks `ζ` directly.
    Zeta(Vector),
}

fn run_trajectory<Step>(
    plant: &Plant<'_>,
    calib: &DetectorCalibration,
    trial: usize,
    cfg: &SimConfig,
    p_shape: Option<&Mat>,
    v_override: Option<&dyn Fn(&Vector, &Vector, &mut CounterRng) -> Vector>,
    v_cap: Option<f64>,
    mut attack: Step,
) -> AttackTrace
where
    Step: FnMut(usize, &Vector, &Vector, &mut CounterRng) -> StepAttack,
{
    let (n, m) = (plant.model.n(), plant.model.m());
    let mut tr = AttackTrace::with_capacity(trial, n, m, cfg.horizon, p_shape.is_some());
    let mut e = Vector::zeros(n);
    let c = &plant.model.c;
    let lyap = |e: &Vector| p_shape.map(|p| (e.transpose() * p * e)[(0, 0)]);
    tr.e.extend(e.iter());
    if let (Some(l), Some(v)) = (tr.lyap.as_mut(), lyap(&e)) {
        l.push(v);
    }
    for k in 0..cfg.horizon {
        let (t, kk) = (trial as u64, k as u64);
        let mut rng_eta = CounterRng::keyed(cfg.seed, t, kk, streams::MEASUREMENT_NOISE);
        let eta = plant.draw(&plant.r2_sqrt, &mut rng_eta);
        let mut rng_att = CounterRng::keyed(cfg.seed, t, kk, streams::ATTACK_MAGNITUDE);
        let (zeta, delta) = match attack(k, &e, &eta, &mut rng_att) {
            StepAttack::Free => {
                let r = c * &e + &eta;
                (&plant.steady.sigma_inv_sqrt * r, Vector::zeros(m))
            }
            StepAttack::Zeta(zeta) => {
                let delta = &plant.steady.sigma_sqrt * &zeta - c * &e - &eta;
                (zeta, delta)
            }
        };
        let v = match v_override {
            Some(pick) => {
                let mut rng_v = CounterRng::keyed(cfg.seed, t, kk, streams::NOISE_CANDIDATES);
                // the disturbance-free successor, for the adversarial choice of v
                let w = &plant.a * &e - plant.l * (&eta + &delta);
                pick(&e, &w, &mut rng_v)
            }
            None => {
                let mut rng_v = CounterRng::keyed(cfg.seed, t, kk, streams::PROCESS_NOISE);
                let v = plant.draw(&plant.r1_sqrt, &mut rng_v);
                match v_cap {
                    Some(cap) if v.norm_squared() > cap => {
                        let nrm = v.norm();
                        v * (cap.sqrt() / nrm)
                    }
                    _ => v,
                }
            }
        };
        let r = c * &e + &eta + &delta;
        let z = (r.transpose() * &plant.steady.sigma_inv * &r)[(0, 0)];
        let next = &plant.a * &e - plant.l * &eta - plant.l * &delta + &v;

        tr.zeta.extend(zeta.iter());
        tr.delta.extend(delta.iter());
        tr.v.extend(v.iter());
        tr.eta.extend(eta.iter());
        tr.z.push(z);
        tr.alarm.push(calib.alarm(z));
        e = next;
        tr.e.extend(e.iter());
        if let (Some(l), Some(val)) = (tr.lyap.as_mut(), lyap(&e)) {
            l.push(val);
        }
    }
    tr
}

/// Aggregate outcome of a batch of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub traces: Vec<AttackTrace>,
    pub alarm_rate: AlarmRate,
    /// Mean of `‖e_k‖` over all trials and steps.
    pub mean_error_norm: f64,
    /// Largest `e_kᵀ𝒫e_k` when a bound was attached.
    pub max_lyap: Option<f64>,
}

fn summarize(traces: Vec<AttackTrace>, warmup: usize) -> Result<SimResult> {
    let mut alarms = 0;
    let mut steps = 0;
    for t in &traces {
        let r = empirical_alarm_rate(t, warmup)?;
        alarms += r.alarms;
        steps += r.steps;
    }
    let mean_error_norm = traces.iter().map(|t| t.mean_error_norm()).sum::<f64>() / traces.len() as f64;
    let max_lyap = traces.iter().filter_map(|t| t.max_lyap().map(|x| x.1)).reduce(f64::max);
    Ok(SimResult { alarm_rate: AlarmRate::from_counts(alarms, steps)?, traces, mean_error_norm, max_lyap })
}

/// Attack-free runs: `δ = 0`, Gaussian noise.
pub fn simulate_attack_free(
    model: &SystemModel,
    observer: &ObserverDesign,
    steady: &SteadyState,
    calib: &DetectorCalibration,
    cfg: &SimConfig,
) -> Result<SimResult> {
    let cfg = SimConfig { strategy: Strategy::None, ..cfg.clone() };
    run_hidden_attack(model, observer, steady, calib, None, &cfg, &AttackPolicy::Builtin(Strategy::None))
}

fn draw_magnitude_sq(strategy: Strategy, dof: usize, alpha: f64, rng: &mut CounterRng) -> f64 {
    match strategy {
        Strategy::ZeroAlarm => loop {
            let s2 = rng.chi_squared(dof);
            if s2 <= alpha * (1.0 - 1e-12) {
                break s2;
            }
        },
        _ => rng.chi_squared(dof),
    }
}

/// Attacked runs with a chosen policy.
///
/// Greedy and zero-alarm attacks draw `s² ~ χ²(m)` (truncated to `[0, α]`
/// for zero-alarm) and steer `ζ` with `‖ζ‖ = s` toward the boundary of the
/// attached ellipsoid; since `z_k = ‖ζ_k‖²`, the alarm law is exactly the
/// attack-free one. With `clip = budget-clip`, `‖ζ‖² ≤ ζ̄` and `‖v‖² ≤ v̄`.
pub fn run_hidden_attack(
    model: &SystemModel,
    observer: &ObserverDesign,
    steady: &SteadyState,
    calib: &DetectorCalibration,
    bound: Option<&EllipsoidBound>,
    cfg: &SimConfig,
    policy: &AttackPolicy,
) -> Result<SimResult> {
    cfg.validate()?;
    let plant = Plant::new(model, observer, steady)?;
    let budget: Option<HiddenBudget> = match (cfg.clip, bound) {
        (ClipMode::BudgetClip, None) => {
            return Err(Error::config("sim.clip", "budget-clip requires an attached bound"));
        }
        (ClipMode::BudgetClip, Some(b)) => Some(b.budget),
        _ => None,
    };
    let p_shape = bound.map(|b| b.p_shape.clone());
    let steer = p_shape.clone().unwrap_or_else(|| Mat::identity(model.n(), model.n()));
    let m = model.m();


    let traces: Vec<AttackTrace> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let attack = |k: usize, e: &Vector, eta: &Vector, rng: &mut CounterRng| match policy {
                AttackPolicy::Builtin(Strategy::None) => StepAttack::Free,
                AttackPolicy::Builtin(strategy) => {
                    let mut s2 = draw_magnitude_sq(*strategy, m, calib.alpha, rng);
                    if let Some(b) = budget {
                        s2 = s2.min(b.zeta_cap);
                    }
                    StepAttack::Zeta(greedy_hidden_step(e, &steer, &model.f, &observer.l, &steady.sigma_sqrt, s2.sqrt()))
                }
                AttackPolicy::Custom(f) => {
                    let mut ctx = AttackContext { trial, k, e, eta, rng };
                    let mut zeta = f(&mut ctx);
                    if let Some(b) = budget {
                        let n2 = zeta.norm_squared();
                        if n2 > b.zeta_cap {
                            zeta *= (b.zeta_cap / n2).sqrt();
                        }
                    }
                    StepAttack::Zeta(zeta)
                }
            };
            run_trajectory(&plant, calib, trial, cfg, p_shape.as_ref(), None, budget.map(|b| b.v_bar), attack)
        })
        .collect();
    summarize(traces, cfg.warmup.min(cfg.horizon - 1))
}

/// Verdict of a containment stress test.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    pub passed: bool,
    pub max_lyap: f64,
    pub worst_trial: usize,
    pub worst_step: usize,
    pub trials: usize,
    pub horizon: usize,
    /// Full trajectory of the worst trial when the test fails.
    pub offending: Option<AttackTrace>,
}

/// Drive trajectories with budget-saturating adversarial disturbances and
/// check they never leave `{e : eᵀ𝒫e ≤ 1}`.
///
/// Each step uses the greedy `ζ` at `‖ζ‖² = ζ̄`, then the worst `v` with
/// `‖v‖² = v̄` among random directions and the exact sphere maximizer.
pub fn clipped_containment_test(
    bound: &EllipsoidBound,
    model: &SystemModel,
    observer: &ObserverDesign,
    steady: &SteadyState,
    cfg: &SimConfig,
) -> Result<ContainmentReport> {
    adversarial_run(bound, model, observer, steady, cfg, true)
}

/// The same adversary with the caps removed: `‖ζ‖² ~ χ²(m)` and `‖v‖`
/// distributed as the norm of an `N(0, R1)` draw, directions still chosen
/// to push `eᵀ𝒫e` up. Rare large draws are what the bound leaves out, so this
/// run is expected to leave the ellipsoid eventually.
pub fn unclipped_adversary_run(
    bound: &EllipsoidBound,
    model: &SystemModel,
    observer: &ObserverDesign,
    steady: &SteadyState,
    cfg: &SimConfig,
) -> Result<ContainmentReport> {
    adversarial_run(bound, model, observer, steady, cfg, false)
}

fn adversarial_run(
    bound: &EllipsoidBound,
    model: &SystemModel,
    observer: &ObserverDesign,
    steady: &SteadyState,
    cfg: &SimConfig,
    clipped: bool,
) -> Result<ContainmentReport> {
    cfg.validate()?;
    let plant = Plant::new(model, observer, steady)?;
    let calib = DetectorCalibration { false_alarm: bound.budget.false_alarm, dof: model.m(), alpha: bound.budget.alpha };
    let p = &bound.p_shape;
    let (zeta_cap, v_bar) = (bound.budget.zeta_cap, bound.budget.v_bar);
    let (n, m) = (model.n(), model.m());
    let s_zeta = zeta_cap.max(0.0).sqrt();
    let s_v = v_bar.max(0.0).sqrt();
    let candidates = cfg.noise_candidates;
    let r1_sqrt = &plant.r1_sqrt;

    let pick_v = move |_e: &Vector, w: &Vector, rng: &mut CounterRng| -> Vector {
        let radius = if clipped { s_v } else { (r1_sqrt * Vector::from_vec(rng.normals(n))).norm() };
        let score = |v: &Vector| {
            let x = w + v;
            (x.transpose() * p * &x)[(0, 0)]
        };
        // exact maximizer of (w + v)ᵀ𝒫(w + v) on the sphere: Q = 𝒫, g = −𝒫w
        let mut best = sphere_quadratic_max(p, &(-(p * w)), radius);
        let mut best_score = score(&best);
        for _ in 0..candidates {
            let dir = Vector::from_vec(rng.normals(n));
            let nrm = dir.norm();
            if nrm == 0.0 {
                continue;
            }
            let v = dir * (radius / nrm);
            let sc = score(&v);
            if sc > best_score {
                best = v;
                best_score = sc;
            }
        }
        best
    };

    let traces: Vec<AttackTrace> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let attack = |_k: usize, e: &Vector, _eta: &Vector, rng: &mut CounterRng| {
                let s = if clipped { s_zeta } else { rng.chi_squared(m).sqrt() };
                StepAttack::Zeta(greedy_hidden_step(e, p, &model.f, &observer.l, &steady.sigma_sqrt, s))
            };
            run_trajectory(&plant, &calib, trial, cfg, Some(p), Some(&pick_v), None, attack)
        })
        .collect();

    let (worst_trial, (worst_step, max_lyap)) = traces
        .iter()
        .map(|t| t.max_lyap().expect("bound attached"))
        .enumerate()
        .fold((0, (0, f64::NEG_INFINITY)), |acc, (i, x)| if x.1 > acc.1 .1 { (i, x) } else { acc });
    let passed = max_lyap <= 1.0 + 1e-6;
    let offending = (!passed).then(|| traces[worst_trial].clone());
    Ok(ContainmentReport {
        passed,
        max_lyap,
        worst_trial,
        worst_step,
        trials: cfg.trials,
        horizon: cfg.horizon,
        offending,
    })
}

/// CSV rows `k,trial,e_1..e_n,z,alarm,V` for a set of traces.
pub fn traces_to_csv(traces: &[AttackTrace]) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let Some(first) = traces.first() else {
        return "k,trial,z,alarm,V\n".to_string();
    };
    let n = first.n;
    out.push_str("k,trial");
    for i in 1..=n {
        let _ = write!(out, ",e_{i}");
    }
    out.push_str(",z,alarm,V\n");
    for t in traces {
        for k in 0..t.horizon {
            let _ = write!(out, "{},{}", k + 1, t.trial);
            for i in 0..n {
                let _ = write!(out, ",{:.12e}", t.e[k * n + i]);
            }
            let v = t.lyap.as_ref().map(|l| format!("{:.12e}", l[k])).unwrap_or_default();
            let _ = writeln!(out, ",{:.12e},{},{}", t.z[k], u8::from(t.alarm[k]), v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_interval_edges() {
        let all = AlarmRate::from_counts(50, 50).unwrap();
        assert_eq!(all.rate, 1.0);
        assert!(all.ci_high <= 1.0 && all.ci_low < 1.0);
        let none = AlarmRate::from_counts(0, 50).unwrap();
        assert_eq!(none.rate, 0.0);
        assert_eq!(none.ci_low, 0.0);
        assert!(AlarmRate::from_counts(0, 0).is_err());
    }

    #[test]
    fn every_twentieth_step() {
        let alarms: Vec<bool> = (0..2000).map(|k| k % 20 == 19).collect();
        let r = alarm_rate_of(&alarms, 0).unwrap();
        assert_eq!(r.rate, 0.05);
        assert!(alarm_rate_of(&alarms, 2000).is_err());
    }

    #[test]
    fn sphere_max_one_dimensional_picks_better_sign() {
        let q = Mat::from_element(1, 1, 2.0);
        for g in [0.7, -0.3, 0.0] {
            let gv = Vector::from_element(1, g);
            let x = sphere_quadratic_max(&q, &gv, 1.5);
            let obj = |t: f64| 2.0 * t * t - 2.0 * g * t;
            assert!((x[0].abs() - 1.5).abs() < 1e-12);
            assert!(obj(x[0]) >= obj(-x[0]) - 1e-12);
        }
    }

    #[test]
    fn sphere_max_hard_case() {
        // g orthogonal to the top eigenvector
        let q = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 3.0]));
        let g = Vector::from_vec(vec![0.5, 0.0]);
        let x = sphere_quadratic_max(&q, &g, 2.0);
        assert!((x.norm() - 2.0).abs() < 1e-10);
        let obj = |v: &Vector| (v.transpose() * &q * v)[(0, 0)] - 2.0 * g.dot(v);
        // brute force on the circle
        let best = (0..100_000)
            .map(|i| {
                let th = i as f64 / 100_000.0 * std::f64::consts::TAU;
                obj(&Vector::from_vec(vec![2.0 * th.cos(), 2.0 * th.sin()]))
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(obj(&x) >= best - 1e-6);
    }

    #[test]
    fn ks_uniform_sanity() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_statistic(&xs, |x| x.clamp(0.0, 1.0)) < 1e-3);
    }
}
