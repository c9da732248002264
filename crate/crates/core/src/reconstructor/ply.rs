//! ASCII PLY point clouds.
//!
//! Writes `format ascii 1.0` with a single `vertex` element carrying float
//! `x`, `y`, `z`. Values are printed with nine significant digits, enough to
//! round-trip any `f32`. The reader accepts any ASCII PLY whose `vertex`
//! element has scalar `x`, `y` and `z` properties.

use crate::geometry::Vec3;
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("ply i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed ply: {0}")]
    Malformed(String),
    #[error("unsupported ply: {0}")]
    Unsupported(String),
}

pub fn write_ply<W: Write>(mut out: W, points: &[Vec3]) -> io::Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "comment orbitscan point cloud")?;
    writeln!(out, "element vertex {}", points.len())?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    writeln!(out, "end_header")?;
    for p in points {
        writeln!(
            out,
            "{} {} {}",
            format_float(p.x as f32),
            format_float(p.y as f32),
            format_float(p.z as f32)
        )?;
    }
    out.flush()
}

/// Nine significant digits, fixed notation for moderate exponents and
/// scientific otherwise, trailing zeros trimmed.
pub fn format_float(v: f32) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        trim_zeros(format!("{:.*}", (8 - exp) as usize, v))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// Reads the vertex positions of an ASCII PLY file.
pub fn read_ply<R: BufRead>(input: R) -> Result<Vec<Vec3>, PlyError> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .transpose()?
        .ok_or_else(|| PlyError::Malformed("empty file".into()))?;
    if first.trim() != "ply" {
        return Err(PlyError::Malformed("missing 'ply' magic".into()));
    }

    let mut elements: Vec<Element> = Vec::new();
    let mut ascii = false;
    loop {
        let line = lines
            .next()
            .transpose()?
            .ok_or_else(|| PlyError::Malformed("header not terminated".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => {
                if *fmt != "ascii" {
                    return Err(PlyError::Unsupported(format!("format {fmt}")));
                }
                ascii = true;
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| PlyError::Malformed(format!("bad element count '{count}'")))?,
                properties: vec![],
            }),
            ["property", "list", .., name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Malformed("property before element".into()))?;
                if el.name == "vertex" {
                    return Err(PlyError::Unsupported("list property on vertex".into()));
                }
                el.properties.push(name.to_string());
            }
            ["property", _ty, name] => elements
                .last_mut()
                .ok_or_else(|| PlyError::Malformed("property before element".into()))?
                .properties
                .push(name.to_string()),
            _ => {
                return Err(PlyError::Malformed(format!(
                    "unexpected header line '{line}'"
                )))
            }
        }
    }
    if !ascii {
        return Err(PlyError::Malformed("missing format line".into()));
    }

    let mut points = Vec::new();
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines
                    .next()
                    .transpose()?
                    .ok_or_else(|| PlyError::Malformed(format!("truncated '{}' data", el.name)))?;
            }
            continue;
        }
        let index = |axis: &str| {
            el.properties
                .iter()
                .position(|p| p == axis)
                .ok_or_else(|| PlyError::Malformed(format!("vertex has no '{axis}' property")))
        };
        let (ix, iy, iz) = (index("x")?, index("y")?, index("z")?);
        for row in 0..el.count {
            let line = lines.next().transpose()?.ok_or_else(|| {
                PlyError::Malformed(format!("expected {} vertices, got {row}", el.count))
            })?;
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| PlyError::Malformed(format!("vertex {row}: {e}")))?;
            if values.len() != el.properties.len() {
                return Err(PlyError::Malformed(format!(
                    "vertex {row} has {} values, expected {}",
                    values.len(),
                    el.properties.len()
                )));
            }
            points.push(Vec3::new(values[ix], values[iy], values[iz]));
        }
        return Ok(points);
    }
    Err(PlyError::Malformed("no vertex element".into()))
}
