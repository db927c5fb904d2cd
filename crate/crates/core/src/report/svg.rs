//! Dependency-free SVG plots of ellipse boundaries and trajectory scatter.
//!
//! Output is a pure function of the inputs with fixed number formatting, so
//! the bytes are stable across runs.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::linalg::{inv_sqrt_sym, sqrt_sym, Mat, Vector};

pub const BOUNDARY_POINTS: usize = 256;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// `BOUNDARY_POINTS` points on `{e : eᵀ𝒫e = 1}` for a 2×2 shape matrix.
pub fn ellipse_boundary(p_shape: &Mat) -> Result<Vec<[f64; 2]>> {
    if p_shape.shape() != (2, 2) {
        return Err(Error::Dimension(format!("boundary needs a 2×2 shape, got {:?}", p_shape.shape())));
    }
    let w = inv_sqrt_sym(p_shape, 0.0)?;
    Ok(circle_image(&w))
}

/// Boundary of the projection of `{e : eᵀ𝒫e ≤ 1}` onto coordinates `(i, j)`:
/// the ellipse whose inverse shape is the `(i, j)` block of `𝒫⁻¹`.
pub fn projected_boundary(p_shape: &Mat, i: usize, j: usize) -> Result<Vec<[f64; 2]>> {
    let q = p_shape
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("shape matrix is singular".into()))?;
    let off = 0.5 * (q[(i, j)] + q[(j, i)]);
    let block = Mat::from_row_slice(2, 2, &[q[(i, i)], off, off, q[(j, j)]]);
    Ok(circle_image(&sqrt_sym(&block, 1e-12)?))
}

fn circle_image(w: &Mat) -> Vec<[f64; 2]> {
    (0..BOUNDARY_POINTS)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / BOUNDARY_POINTS as f64;
            let e = w * Vector::from_vec(vec![th.cos(), th.sin()]);
            [e[0], e[1]]
        })
        .collect()
}

pub struct Curve {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

/// Closed curves plus an optional point cloud, on shared equal-aspect axes.
pub fn plot(title: &str, axes: (&str, &str), curves: &[Curve], scatter: &[[f64; 2]]) -> String {
    let all = curves.iter().flat_map(|c| c.points.iter()).chain(scatter.iter());
    let mut half = all.fold(0.0f64, |acc, p| acc.max(p[0].abs()).max(p[1].abs()));
    if half == 0.0 || !half.is_finite() {
        half = 1.0;
    }
    half = nice_ceil(half * 1.05);
    let span = SIZE - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x + half) / (2.0 * half) * span;
    let sy = |y: f64| SIZE - MARGIN - (y + half) / (2.0 * half) * span;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, SIZE / 2.0, escape(title));
    // frame, zero lines and ticks
    let _ = writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        out,
        r##"<line x1="{:.3}" y1="{MARGIN}" x2="{:.3}" y2="{:.3}" stroke="#bbb" stroke-dasharray="3,3"/>"##,
        sx(0.0),
        sx(0.0),
        SIZE - MARGIN
    );
    let _ = writeln!(
        out,
        r##"<line x1="{MARGIN}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#bbb" stroke-dasharray="3,3"/>"##,
        sy(0.0),
        SIZE - MARGIN,
        sy(0.0)
    );
    for t in [-half, -half / 2.0, 0.0, half / 2.0, half] {
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
            sx(t),
            SIZE - MARGIN + 16.0,
            tick(t)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            sy(t) + 4.0,
            tick(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        SIZE - 14.0,
        escape(axes.0)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        SIZE / 2.0,
        SIZE / 2.0,
        escape(axes.1)
    );
    for p in scatter {
        let _ = writeln!(out, r##"<circle cx="{:.3}" cy="{:.3}" r="1.2" fill="#777" fill-opacity="0.5"/>"##, sx(p[0]), sy(p[1]));
    }
    for (idx, c) in curves.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut d = String::new();
        for (k, p) in c.points.iter().enumerate() {
            let _ = write!(d, "{}{:.3},{:.3} ", if k == 0 { "M" } else { "L" }, sx(p[0]), sy(p[1]));
        }
        d.push('Z');
        let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let ly = MARGIN + 14.0 + 14.0 * idx as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.3}" y1="{ly:.3}" x2="{:.3}" y2="{ly:.3}" stroke="{color}" stroke-width="2"/>"#,
            MARGIN + 8.0,
            MARGIN + 24.0
        );
        let _ = writeln!(out, r#"<text x="{:.3}" y="{:.3}">{}</text>"#, MARGIN + 28.0, ly + 4.0, escape(&c.label));
    }
    out.push_str("</svg>\n");
    out
}

fn nice_ceil(x: f64) -> f64 {
    let mag = 10f64.powf(x.log10().floor());
    for step in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if step * mag >= x {
            return step * mag;
        }
    }
    10.0 * mag
}

fn tick(t: f64) -> String {
    let s = format!("{t:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_lies_on_the_level_set() {
        let p = Mat::from_row_slice(2, 2, &[3.0, 0.7, 0.7, 1.2]);
        for e in ellipse_boundary(&p).unwrap() {
            let v = Vector::from_vec(e.to_vec());
            assert!(((v.transpose() * &p * &v)[(0, 0)] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_of_diagonal_ellipsoid() {
        let p = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 4.0, 9.0]));
        let pts = projected_boundary(&p, 0, 2).unwrap();
        let max_x = pts.iter().map(|q| q[0].abs()).fold(0.0, f64::max);
        let max_y = pts.iter().map(|q| q[1].abs()).fold(0.0, f64::max);
        assert!((max_x - 1.0).abs() < 1e-9);
        assert!((max_y - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn plot_is_deterministic() {
        let c = vec![Curve { label: "a<b".into(), points: vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]] }];
        let a = plot("t", ("x", "y"), &c, &[[0.1, 0.2]]);
        assert_eq!(a, plot("t", ("x", "y"), &c, &[[0.1, 0.2]]));
        assert!(a.contains("a&lt;b"));
        assert!(a.ends_with("</svg>\n"));
        assert_eq!(nice_ceil(0.73), 1.0);
        assert_eq!(tick(-0.0), "0");
    }
}
