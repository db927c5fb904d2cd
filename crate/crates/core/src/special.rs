//! Gamma-family special functions and a bracketing root finder.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const EPS: f64 = 1e-16;
const FPMIN: f64 = 1e-300;
const MAX_TERMS: usize = 100_000;

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn check_shape(a: f64, x: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("gamma shape must be > 0, got {a}")));
    }
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("gamma argument must be ≥ 0, got {x}")));
    }
    Ok(())
}

fn prefactor(a: f64, x: f64) -> f64 {
    (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn lower_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_TERMS {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * prefactor(a, x)
}

fn upper_continued_fraction(a: f64, x: f64) -> f64 {
    // modified Lentz
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_TERMS {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    prefactor(a, x) * h
}

/// Regularized lower incomplete gamma function `P(a, x)`.
pub fn reg_lower_incomplete_gamma(a: f64, x: f64) -> Result<f64> {
    check_shape(a, x)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let p = if x < a + 1.0 { lower_series(a, x) } else { 1.0 - upper_continued_fraction(a, x) };
    Ok(p.clamp(0.0, 1.0))
}

/// Regularized upper incomplete gamma function `Q(a, x) = 1 − P(a, x)`,
/// evaluated without cancellation in the far tail.
pub fn reg_upper_incomplete_gamma(a: f64, x: f64) -> Result<f64> {
    check_shape(a, x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let q = if x < a + 1.0 { 1.0 - lower_series(a, x) } else { upper_continued_fraction(a, x) };
    Ok(q.clamp(0.0, 1.0))
}

/// Solve `f(x) = target` for a nondecreasing `f` on `[0, ∞)`.
///
/// The upper end starts at `initial_upper` and doubles until it brackets the
/// target, then plain bisection runs for at most `max_iter` halvings.
pub fn bisect_increasing<F>(f: F, target: f64, initial_upper: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut lo = 0.0;
    let mut hi = initial_upper.max(f64::MIN_POSITIVE);
    let mut doublings = 0;
    while f(hi)? < target {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 1100 || !hi.is_finite() {
            return Err(Error::Numerical(format!(
                "could not bracket target {target} (upper end reached {hi:e})"
            )));
        }
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
            break;
        }
        if f(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Inverse of `P(a, ·)`: the `x` with `P(a, x) = p`.
pub fn inv_reg_lower_incomplete_gamma(a: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0,1), got {p}")));
    }
    check_shape(a, 0.0)?;
    // Work with the complementary function so that small tail masses keep precision.
    let tail = 1.0 - p;
    bisect_increasing(
        |x| reg_upper_incomplete_gamma(a, x).map(|q| -q),
        -tail,
        a.max(1.0),
        200,
    )
}
