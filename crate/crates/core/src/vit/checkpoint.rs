//! Text checkpoints.
//!
//! ```text
//! <config-hash> <mode> <n> <D> <heads> <L> <classes>
//! param <name>
//! shape <d0> <d1> ...
//! <flat values, 17 significant digits>
//! ...
//! ```

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::relpos::text::{fmt_f64, line_offsets};

/// First 16 hex digits of the SHA-256 of the canonical config line.
pub fn config_hash(cfg: &ModelConfig) -> String {
    let digest = Sha256::digest(cfg.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn write_checkpoint(params: &ModelParams, cfg: &ModelConfig) -> Result<String> {
    let grid = cfg.validate()?;
    let mut out = format!(
        "{} {} {} {} {} {} {}\n",
        config_hash(cfg),
        cfg.positional.mode,
        grid.n(),
        cfg.embed_dim,
        cfg.heads,
        cfg.blocks,
        cfg.classes
    );
    for (name, t) in params.as_ref().into_named() {
        out.push_str("param ");
        out.push_str(&name);
        out.push_str("\nshape");
        for d in t.shape() {
            out.push(' ');
            out.push_str(&d.to_string());
        }
        out.push('\n');
        for (i, &v) in t.data().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            fmt_f64(&mut out, v);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses a checkpoint written for `cfg`; the header must match it.
pub fn read_checkpoint(text: &str, cfg: &ModelConfig) -> Result<ModelParams> {
    let mut lines = line_offsets(text);
    let (_, header) = lines.next().ok_or_else(|| Error::parse(0, "empty checkpoint"))?;
    let hash = header.split_whitespace().next().unwrap_or_default();
    if hash != config_hash(cfg) {
        return Err(Error::parse(
            0,
            format!("checkpoint was written for a different config (hash {hash})"),
        ));
    }

    let mut sections: HashMap<String, Tensor> = HashMap::new();
    while let Some((offset, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let name = line
            .strip_prefix("param ")
            .ok_or_else(|| Error::parse(offset, "expected `param <name>`"))?;
        let (offset, shape_line) = lines
            .next()
            .ok_or_else(|| Error::parse(text.len(), "missing shape line"))?;
        let shape = shape_line
            .strip_prefix("shape")
            .ok_or_else(|| Error::parse(offset, "expected `shape ...`"))?
            .split_whitespace()
            .map(|s| s.parse::<usize>().map_err(|e| Error::parse(offset, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let (offset, values) = lines
            .next()
            .ok_or_else(|| Error::parse(text.len(), "missing values line"))?;
        let data = values
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::parse(offset, format!("`{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let tensor = Tensor::new(shape, data).map_err(|e| Error::parse(offset, e.to_string()))?;
        sections.insert(name.to_string(), tensor);
    }

    let template = ModelParams::init(cfg, 0)?;
    let mut missing = None;
    let params = template.map(|name, t| match sections.remove(name) {
        Some(loaded) if loaded.shape() == t.shape() => loaded,
        _ => {
            missing.get_or_insert_with(|| name.to_string());
            t
        }
    });
    if let Some(name) = missing {
        return Err(Error::parse(0, format!("section `{name}` missing or misshapen")));
    }
    if let Some(extra) = sections.keys().next() {
        return Err(Error::parse(0, format!("unexpected section `{extra}`")));
    }
    Ok(params)
}
