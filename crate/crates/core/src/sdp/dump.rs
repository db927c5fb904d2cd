//! Plain-text dump of a determinant-maximization problem.
//!
//! The format is line oriented; see `docs/sdp-dump-format.md` for the grammar.
//! Every constraint is written as its expanded coefficients, so an external
//! solver only has to read sparse symmetric matrices.

use std::io::{BufRead, Write};

use super::{BlockLMI, MaxDetProblem, VarShape};
use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const HEADER: &str = "# hidden-reach sdp dump v1";

fn shape_tag(shape: VarShape) -> (&'static str, usize, usize) {
    match shape {
        VarShape::Symmetric(d) => ("sym", d, d),
        VarShape::Full(r, c) => ("full", r, c),
        VarShape::LowerTriangular(d) => ("lower", d, d),
    }
}

fn write_upper(out: &mut impl Write, tag: usize, m: &Mat) -> std::io::Result<()> {
    for j in 0..m.ncols() {
        for i in 0..=j {
            let v = m[(i, j)];
            if v != 0.0 {
                writeln!(out, "F {tag} {i} {j} {v:.17e}")?;
            }
        }
    }
    Ok(())
}

/// Write the problem. Coefficient index 0 is the constant term; index `k ≥ 1`
/// multiplies coordinate `k − 1`.
pub fn write_problem(problem: &MaxDetProblem, out: &mut impl Write) -> Result<()> {
    let vars = &problem.vars;
    writeln!(out, "{HEADER}")?;
    writeln!(out, "coords {}", vars.len())?;
    for id in vars.ids() {
        let (tag, r, c) = shape_tag(vars.shape(id));
        writeln!(out, "var {} {tag} {r} {c} {}", vars.name(id), vars.offset(id))?;
    }
    writeln!(out, "maximize logdet {}", vars.name(problem.objective))?;
    writeln!(out, "eps_slack {:.17e}", problem.settings.eps_slack)?;
    for lmi in &problem.constraints {
        let sizes: Vec<String> = lmi.block_sizes.iter().map(|s| s.to_string()).collect();
        writeln!(out, "lmi {} {} {}", lmi.dim(), sizes.join(","), lmi.name.replace(' ', "_"))?;
        write_upper(out, 0, &lmi.f0)?;
        for (k, f) in lmi.coeffs.iter().enumerate() {
            write_upper(out, k + 1, f)?;
        }
        writeln!(out, "end")?;
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Validation(format!("dump line {line}: {}", msg.into()))
}

/// Read back the constraint list of a dump.
pub fn read_constraints(input: impl BufRead) -> Result<Vec<BlockLMI>> {
    let mut coords = None;
    let mut lmis = Vec::new();
    let mut current: Option<BlockLMI> = None;
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        let no = no + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            None => continue,
            Some(t) if t.starts_with('#') => continue,
            Some("coords") => {
                coords = Some(parts.next().and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| parse_err(no, "bad coords"))?);
            }
            Some("lmi") => {
                let n = coords.ok_or_else(|| parse_err(no, "lmi before coords"))?;
                let dim: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| parse_err(no, "bad dim"))?;
                let sizes = parts
                    .next()
                    .ok_or_else(|| parse_err(no, "missing block sizes"))?
                    .split(',')
                    .map(|s| s.parse::<usize>().map_err(|_| parse_err(no, "bad block size")))
                    .collect::<Result<Vec<_>>>()?;
                let name = parts.next().unwrap_or("lmi").replace('_', " ");
                current = Some(BlockLMI {
                    name,
                    block_sizes: sizes,
                    f0: Mat::zeros(dim, dim),
                    coeffs: vec![Mat::zeros(dim, dim); n],
                });
            }
            Some("F") => {
                let lmi = current.as_mut().ok_or_else(|| parse_err(no, "entry outside lmi"))?;
                let nums: Vec<&str> = parts.collect();
                if nums.len() != 4 {
                    return Err(parse_err(no, "entry needs `k i j value`"));
                }
                let k: usize = nums[0].parse().map_err(|_| parse_err(no, "bad index"))?;
                let i: usize = nums[1].parse().map_err(|_| parse_err(no, "bad index"))?;
                let j: usize = nums[2].parse().map_err(|_| parse_err(no, "bad index"))?;
                let v: f64 = nums[3].parse().map_err(|_| parse_err(no, "bad value"))?;
                let dim = lmi.dim();
                if i >= dim || j >= dim || k > lmi.coeffs.len() {
                    return Err(parse_err(no, "index out of range"));
                }
                let m = if k == 0 { &mut lmi.f0 } else { &mut lmi.coeffs[k - 1] };
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
            Some("end") => {
                lmis.push(current.take().ok_or_else(|| parse_err(no, "`end` without lmi"))?);
            }
            Some(_) => continue,
        }
    }
    if current.is_some() {
        return Err(Error::Validation("dump ends inside an lmi block".into()));
    }
    Ok(lmis)
}
