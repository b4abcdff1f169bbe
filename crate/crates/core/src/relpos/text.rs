//! Plain-text matrix files.
//!
//! ```text
//! <kind> <n> <d> <D>
//! <row 0: D values>
//! ...
//! <row n-1>
//! ```
//!
//! Values carry 17 significant digits so binary64 survives a round trip.

use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixHeader {
    pub kind: String,
    pub n: usize,
    pub unit: f64,
    pub dim: usize,
}

/// Formats a value with 17 significant digits.
pub(crate) fn fmt_f64(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String cannot fail");
}

pub fn format_matrix(kind: &str, unit: f64, matrix: &Tensor) -> String {
    let (n, dim) = match matrix.shape() {
        [n, dim] => (*n, *dim),
        [n] => (*n, 1),
        other => panic!("format_matrix expects a vector or matrix, got {other:?}"),
    };
    let mut out = format!("{kind} {n} {unit} {dim}\n");
    for row in matrix.data().chunks(dim) {
        for (j, &v) in row.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            fmt_f64(&mut out, v);
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<(MatrixHeader, Tensor)> {
    let mut lines = line_offsets(text);
    let (offset, header) = lines.next().ok_or_else(|| Error::parse(0, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [kind, n, unit, dim] = fields[..] else {
        return Err(Error::parse(offset, "header must be `kind n d D`"));
    };
    let parse_usize = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::parse(offset, format!("`{s}`: {e}")))
    };
    let header = MatrixHeader {
        kind: kind.to_string(),
        n: parse_usize(n)?,
        unit: unit
            .parse()
            .map_err(|e| Error::parse(offset, format!("`{unit}`: {e}")))?,
        dim: parse_usize(dim)?,
    };

    let mut data = Vec::with_capacity(header.n * header.dim);
    for row in 0..header.n {
        let (offset, line) = lines
            .next()
            .ok_or_else(|| Error::parse(text.len(), format!("expected {} rows, found {row}", header.n)))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            data.push(
                tok.parse::<f64>()
                    .map_err(|e| Error::parse(offset, format!("`{tok}`: {e}")))?,
            );
        }
        if data.len() - before != header.dim {
            return Err(Error::parse(
                offset,
                format!("row {row} has {} values, expected {}", data.len() - before, header.dim),
            ));
        }
    }
    if let Some((offset, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(offset, "trailing data after the last row"));
    }
    let tensor = Tensor::new(vec![header.n, header.dim], data).map_err(|e| Error::parse(0, e.to_string()))?;
    Ok((header, tensor))
}

/// Lines paired with the byte offset at which each starts.
pub(crate) fn line_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split_inclusive('\n').scan(0usize, |pos, line| {
        let start = *pos;
        *pos += line.len();
        Some((start, line.trim_end_matches(['\n', '\r'])))
    })
}
