//! Detector thresholds and probabilistic disturbance caps.
//!
//! Three quantities feed every bound: the chi-squared threshold `α` for a
//! false-alarm rate, the cap `v̄_p` on `‖v‖²` for Gaussian process noise, and
//! the Markov-inequality margin `ε̲_p` that extends the attacker's budget when
//! an excess alarm probability is tolerated.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_psd, sym_eigen, Mat, Vector};
use crate::rng::{streams, CounterRng};
use crate::special::{bisect_increasing, inv_reg_lower_incomplete_gamma, reg_lower_incomplete_gamma};

const QUANTILE_MAX_ITER: usize = 200;

fn check_probability(p: f64, what: &str) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must lie in (0,1), got {p}")))
    }
}

/// CDF of the chi-squared law with `dof` degrees of freedom.
pub fn chi2_cdf(dof: usize, x: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::Domain("chi-squared needs at least one degree of freedom".into()));
    }
    reg_lower_incomplete_gamma(dof as f64 / 2.0, x.max(0.0) / 2.0)
}

/// Threshold `α = 2 P⁻¹(m/2, 1 − A)` giving false-alarm rate `A`.
pub fn chi2_threshold(dof: usize, false_alarm: f64) -> Result<f64> {
    check_probability(false_alarm, "false-alarm rate")?;
    if dof == 0 {
        return Err(Error::Domain("chi-squared needs at least one degree of freedom".into()));
    }
    let alpha = 2.0 * inv_reg_lower_incomplete_gamma(dof as f64 / 2.0, 1.0 - false_alarm)?;
    let residual = chi2_cdf(dof, alpha)? - (1.0 - false_alarm);
    if residual.abs() > 1e-8 {
        return Err(Error::Numerical(format!(
            "threshold search stalled with CDF residual {residual:.3e}"
        )));
    }
    Ok(alpha)
}

/// Chi-squared detector settings for an `m`-dimensional residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorCalibration {
    pub false_alarm: f64,
    pub dof: usize,
    pub alpha: f64,
}

impl DetectorCalibration {
    pub fn new(dof: usize, false_alarm: f64) -> Result<Self> {
        let alpha = chi2_threshold(dof, false_alarm)?;
        Ok(Self { false_alarm, dof, alpha })
    }

    /// `z > α` raises an alarm.
    pub fn alarm(&self, z: f64) -> bool {
        z > self.alpha
    }
}

/// How the `‖v‖²` quantile is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum QuantileMethod {
    /// Invert the generalized chi-squared CDF of `Σ λᵢ χ²₁`.
    #[default]
    Exact,
    /// Moment-matched `Γ(n/2, 2 tr(R1)/n)`, which is exact only when `R1` is
    /// a multiple of the identity. Kept to reproduce published numbers.
    GammaApprox,
    /// Empirical quantile of `samples` draws.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Cap `v̄_p` with `pr[‖v‖² ≤ v̄_p] = p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBound {
    pub p: f64,
    pub v_bar: f64,
    pub method: QuantileMethod,
}

fn noise_weights(r1: &Mat) -> Result<Vec<f64>> {
    check_psd(r1, 1e-9, "R1")?;
    let eig = sym_eigen(r1);
    let scale = eig.max().max(0.0);
    if scale == 0.0 {
        return Err(Error::Degenerate("process-noise covariance R1 is zero".into()));
    }
    Ok(eig.values.iter().copied().filter(|&l| l > 1e-14 * scale).collect())
}

/// Quantile of `‖v‖²` for `v ~ N(0, R1)`.
pub fn noise_norm_quantile(r1: &Mat, p: f64, method: QuantileMethod) -> Result<NoiseBound> {
    check_probability(p, "probability level")?;
    let weights = noise_weights(r1)?;
    let v_bar = match method {
        QuantileMethod::Exact => generalized_chi2_quantile(&weights, p)?,
        QuantileMethod::GammaApprox => {
            let n = r1.nrows() as f64;
            let shape = n / 2.0;
            let scale = 2.0 * r1.trace() / n;
            scale * inv_reg_lower_incomplete_gamma(shape, p)?
        }
        QuantileMethod::MonteCarlo { samples, seed } => monte_carlo_quantile(&weights, p, samples, seed)?,
    };
    Ok(NoiseBound { p, v_bar, method })
}

fn all_equal(weights: &[f64]) -> bool {
    let first = weights[0];
    weights.iter().all(|w| (w - first).abs() <= 1e-14 * first)
}

/// CDF of `Σ wᵢ χ²₁` with positive weights.
pub fn generalized_chi2_cdf(weights: &[f64], x: f64) -> Result<f64> {
    if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Domain("generalized chi-squared needs positive weights".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if all_equal(weights) {
        return chi2_cdf(weights.len(), x / weights[0]);
    }
    Ok(imhof_cdf(weights, x).clamp(0.0, 1.0))
}

fn gauss_legendre_20() -> &'static ([f64; 20], [f64; 20]) {
    static RULE: OnceLock<([f64; 20], [f64; 20])> = OnceLock::new();
    RULE.get_or_init(|| {
        const N: usize = 20;
        let mut nodes = [0.0; N];
        let mut weights = [0.0; N];
        for i in 0..N {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (N as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=N {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = N as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

fn imhof_cdf(weights: &[f64], x: f64) -> f64 {
    let integrand = |u: f64| {
        let mut theta = -0.5 * x * u;
        let mut log_rho = 0.0;
        for &l in weights {
            theta += 0.5 * (l * u).atan();
            log_rho += 0.25 * (l * l * u * u).ln_1p();
        }
        theta.sin() / (u * log_rho.exp())
    };
    let (nodes, gw) = gauss_legendre_20();
    let segment = 2.0 * std::f64::consts::PI / x;
    let mut partial = 0.0;
    let mut prev_avg = f64::NAN;
    for k in 0..2_000_000usize {
        let (a, b) = (k as f64 * segment, (k + 1) as f64 * segment);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let contrib: f64 = nodes.iter().zip(gw).map(|(t, w)| w * integrand(mid + half * t)).sum::<f64>() * half;
        let before = partial;
        partial += contrib;
        // consecutive partial sums straddle the limit once the tail oscillates
        let avg = 0.5 * (partial + before);
        if k > 4 && (avg - prev_avg).abs() < 1e-12 && contrib.abs() < 1e-6 {
            partial = avg;
            break;
        }
        prev_avg = avg;
    }
    0.5 - partial / std::f64::consts::PI
}

/// Quantile of `Σ wᵢ χ²₁` by bisection on the CDF.
pub fn generalized_chi2_quantile(weights: &[f64], p: f64) -> Result<f64> {
    check_probability(p, "probability level")?;
    let total: f64 = weights.iter().sum();
    bisect_increasing(|x| generalized_chi2_cdf(weights, x), p, total.max(1e-300), QUANTILE_MAX_ITER)
}

fn monte_carlo_quantile(weights: &[f64], p: f64, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Domain("Monte Carlo quantile needs at least one sample".into()));
    }
    const CHUNK: usize = 1 << 16;
    let chunks = samples.div_ceil(CHUNK);
    let mut draws: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = CounterRng::keyed(seed, c as u64, 0, streams::QUANTILE_MONTE_CARLO);
            let len = CHUNK.min(samples - c * CHUNK);
            (0..len)
                .map(|_| weights.iter().map(|w| w * rng.normal().powi(2)).sum::<f64>())
                .collect::<Vec<_>>()
        })
        .collect();
    let idx = ((p * samples as f64).ceil() as usize).clamp(1, samples) - 1;
    let (_, q, _) = draws.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(*q)
}

/// First and second moments of the normalized attack signal `ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackMoments {
    pub mean: Vector,
    pub second_moment: Mat,
}

impl AttackMoments {
    pub fn new(mean: Vector, second_moment: Mat) -> Result<Self> {
        if second_moment.shape() != (mean.len(), mean.len()) {
            return Err(Error::Dimension("second moment must be m×m for an m-vector mean".into()));
        }
        check_psd(&second_moment, 1e-9, "second moment")?;
        let cov = &second_moment - &mean * mean.transpose();
        check_psd(&cov, 1e-9, "second moment minus mean outer product")?;
        Ok(Self { mean, second_moment })
    }

    /// Zero-mean, identity second moment: the attack-free law of `ζ`.
    pub fn standard(m: usize) -> Self {
        Self { mean: Vector::zeros(m), second_moment: Mat::identity(m, m) }
    }
}

/// Markov-inequality lower bound `ε̲_p = (tr ℳ + μᵀμ)/(A − a_p) − α`.
///
/// The value may be negative; callers that need a valid margin go through
/// [`clamp_epsilon`].
pub fn markov_epsilon(moments: &AttackMoments, false_alarm: f64, a_p: f64, alpha: f64) -> Result<f64> {
    check_probability(false_alarm, "false-alarm rate")?;
    if !(a_p > 0.0 && a_p < false_alarm) {
        return Err(Error::Domain(format!(
            "excess probability a_p must lie in (0, A = {false_alarm}), got {a_p}"
        )));
    }
    let energy = moments.second_moment.trace() + moments.mean.norm_squared();
    Ok(energy / (false_alarm - a_p) - alpha)
}

/// Clamp a negative margin at zero, logging when that happens.
pub fn clamp_epsilon(raw: f64) -> f64 {
    if raw < 0.0 {
        log::warn!("Markov margin ε̲ = {raw:.6} is negative; clamping to 0");
        0.0
    } else {
        raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use approx::assert_abs_diff_eq;

    fn r1() -> Mat {
        from_rows(&[vec![0.45, -0.11], vec![-0.11, 0.45]]).unwrap()
    }

    #[test]
    fn thresholds_for_one_dof() {
        let expected = [(0.01, 6.63), (0.05, 3.84), (0.10, 2.70), (0.20, 1.64)];
        for (a, alpha) in expected {
            assert_abs_diff_eq!(chi2_threshold(1, a).unwrap(), alpha, epsilon = 0.01);
        }
    }

    #[test]
    fn two_dof_closed_form() {
        assert_abs_diff_eq!(chi2_threshold(2, 0.05).unwrap(), -2.0 * 0.05_f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn threshold_round_trip_grid() {
        for m in 1..=10 {
            for &a in &[0.001, 0.01, 0.05, 0.1, 0.2, 0.3, 0.5] {
                let alpha = chi2_threshold(m, a).unwrap();
                let cdf = reg_lower_incomplete_gamma(m as f64 / 2.0, alpha / 2.0).unwrap();
                assert_abs_diff_eq!(cdf, 1.0 - a, epsilon = 1e-8);
            }
        }
        assert!(chi2_threshold(1, 0.0).is_err());
        assert!(chi2_threshold(1, 1.0).is_err());
    }

    #[test]
    fn gamma_mode_reproduces_published_caps() {
        let expected = [(0.99, 4.14), (0.95, 2.69), (0.90, 2.07), (0.80, 1.44)];
        for (p, v) in expected {
            let nb = noise_norm_quantile(&r1(), p, QuantileMethod::GammaApprox).unwrap();
            assert_abs_diff_eq!(nb.v_bar, v, epsilon = 0.01);
        }
    }

    #[test]
    fn exact_mode_on_isotropic_noise_is_scaled_chi_squared() {
        let s2 = 0.7;
        let r = Mat::identity(3, 3) * s2;
        let nb = noise_norm_quantile(&r, 0.9, QuantileMethod::Exact).unwrap();
        let chi = 2.0 * inv_reg_lower_incomplete_gamma(1.5, 0.9).unwrap();
        assert_abs_diff_eq!(nb.v_bar, s2 * chi, epsilon = 1e-9);
    }

    #[test]
    fn imhof_matches_two_weight_closed_form() {
        // convolution oracle for two distinct weights
        let (a, b) = (0.56_f64, 0.34_f64);
        let x = 2.0;
        let steps = 200_000;
        // P(aU + bV ≤ x) = ∫_0^{x/a} f₁(u) F₁((x − a u)/b) du with χ²₁ law;
        // substitute u = t² to remove the endpoint singularity.
        let f1cdf = |y: f64| chi2_cdf(1, y).unwrap();
        let tmax = (x / a).sqrt();
        let h = tmax / steps as f64;
        let mut acc = 0.0;
        for i in 0..steps {
            let t = (i as f64 + 0.5) * h;
            let u = t * t;
            // f₁(u) du = e^{−u/2}/(√(2π u)) · 2t dt = 2 e^{−t²/2}/√(2π) dt
            let dens = 2.0 * (-0.5 * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
            acc += dens * f1cdf((x - a * u) / b) * h;
        }
        let ours = generalized_chi2_cdf(&[a, b], x).unwrap();
        assert_abs_diff_eq!(ours, acc, epsilon = 1e-8);
    }

    #[test]
    fn exact_mode_matches_frozen_monte_carlo() {
        // 10⁷-sample reference quantiles for the reference R1
        let reference = [(0.99, 4.3036), (0.95, 2.7373), (0.90, 2.0819), (0.80, 1.4396)];
        for (p, q) in reference {
            let nb = noise_norm_quantile(&r1(), p, QuantileMethod::Exact).unwrap();
            assert!((nb.v_bar - q).abs() / q < 5e-3, "p={p}: {} vs {q}", nb.v_bar);
        }
    }

    #[test]
    fn monte_carlo_mode_is_deterministic_and_close() {
        let m = QuantileMethod::MonteCarlo { samples: 400_000, seed: 3 };
        let a = noise_norm_quantile(&r1(), 0.95, m).unwrap();
        let b = noise_norm_quantile(&r1(), 0.95, m).unwrap();
        assert_eq!(a.v_bar, b.v_bar);
        let exact = noise_norm_quantile(&r1(), 0.95, QuantileMethod::Exact).unwrap();
        assert!((a.v_bar - exact.v_bar).abs() / exact.v_bar < 0.01);
    }

    #[test]
    fn noise_quantile_errors() {
        assert!(matches!(
            noise_norm_quantile(&Mat::zeros(2, 2), 0.9, QuantileMethod::Exact),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            noise_norm_quantile(&r1(), 1.0, QuantileMethod::Exact),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn markov_margins() {
        let mo = AttackMoments::standard(1);
        let alpha = 3.84;
        assert_abs_diff_eq!(markov_epsilon(&mo, 0.05, 0.01, alpha).unwrap(), 21.16, epsilon = 0.01);
        assert_abs_diff_eq!(markov_epsilon(&mo, 0.05, 0.03, alpha).unwrap(), 46.16, epsilon = 0.01);
        let zero = AttackMoments::new(Vector::zeros(1), Mat::zeros(1, 1)).unwrap();
        assert_eq!(markov_epsilon(&zero, 0.05, 0.01, alpha).unwrap(), -alpha);
        assert!(markov_epsilon(&mo, 0.05, 0.05, alpha).is_err());
        assert_eq!(clamp_epsilon(-1.0), 0.0);
    }

    #[test]
    fn markov_bound_closes_the_inequality() {
        let mo = AttackMoments::new(Vector::from_vec(vec![0.5]), Mat::from_element(1, 1, 2.0)).unwrap();
        let (a, ap, alpha) = (0.1, 0.04, 2.7);
        let eps = markov_epsilon(&mo, a, ap, alpha).unwrap();
        let energy = 2.0 + 0.25;
        assert_abs_diff_eq!(energy / (alpha + eps), a - ap, epsilon = 1e-14);
    }

    #[test]
    fn invalid_moments_rejected() {
        let bad = AttackMoments::new(Vector::from_vec(vec![2.0]), Mat::from_element(1, 1, 1.0));
        assert!(bad.is_err());
    }
}
