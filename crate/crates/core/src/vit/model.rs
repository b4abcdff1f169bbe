use super::config::ModelConfig;
use super::params::{BlockParams, ModelParams, Params};
use super::patch::patchify_batch;
use crate::autodiff::{finite_diff_check, OpKind, Tape, Tensor, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::relpos::distance_vector;

/// Parameters registered on a tape.
pub type BoundParams = Params<Var>;

/// Records every parameter on `tape` as a gradient-tracking leaf.
pub fn bind_params(tape: &mut Tape, params: &ModelParams) -> BoundParams {
    params.as_ref().map(|_, t| tape.param(t.clone()))
}

/// Records every parameter as a constant (inference only).
pub fn bind_constants(tape: &mut Tape, params: &ModelParams) -> BoundParams {
    params.as_ref().map(|_, t| tape.constant(t.clone()))
}

/// Gradients of every bound parameter after `backward`; zeros where none
/// reached.
pub fn collect_grads(tape: &Tape, bound: &BoundParams) -> Params<Tensor> {
    bound
        .as_ref()
        .map(|_, &v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
}

fn layer_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let normed = tape.layer_norm_last_axis(x, LAYER_NORM_EPS)?;
    let scaled = tape.mul(normed, gain)?;
    tape.add(scaled, bias)
}

fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let y = tape.matmul(x, weight)?;
    tape.add(y, bias)
}

/// `[N + 1, D]` positional matrix assembled on the tape, so gradients reach
/// the PE, the relation core and the class positional row.
pub(crate) fn positional_on_tape(tape: &mut Tape, bound: &BoundParams, cfg: &ModelConfig) -> Result<Var> {
    let grid = cfg.grid()?;
    let (n, d) = (grid.n(), cfg.embed_dim);
    let mode = cfg.positional.mode;

    let mut patch_rows: Option<Var> = None;
    if mode.uses_pe() {
        patch_rows = Some(bound.pe.ok_or(Error::MissingParameter("position embedding matrix"))?);
    }
    if let Some(kind) = mode.relation() {
        let core = bound
            .relation_core
            .ok_or(Error::MissingParameter("relation core vector"))?;
        let dis = distance_vector(&grid, kind, cfg.positional.unit_distance)?;
        let column = tape.constant(Tensor::new(vec![n, 1], dis.values().to_vec())?);
        let relation = tape.matmul(column, core)?;
        patch_rows = Some(match patch_rows {
            Some(pe) => tape.add(pe, relation)?,
            None => relation,
        });
    }
    let patch_rows = match patch_rows {
        Some(v) => v,
        None => tape.constant(Tensor::zeros(&[n, d])),
    };
    let cls_row = match bound.cls_pos {
        Some(v) => v,
        None => tape.constant(Tensor::zeros(&[1, d])),
    };
    tape.concat_rows(cls_row, patch_rows)
}

fn encoder_block(tape: &mut Tape, x: Var, p: &BlockParams<Var>, cfg: &ModelConfig) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (batch, tokens, d) = (shape[0], shape[1], shape[2]);
    let (heads, head_dim) = (cfg.heads, cfg.head_dim());

    let h = layer_norm(tape, x, p.ln1_gain, p.ln1_bias)?;
    let mut split = |w: Var, b: Var| -> Result<Var> {
        let y = linear(tape, h, w, b)?;
        let y = tape.reshape(y, &[batch, tokens, heads, head_dim])?;
        tape.swap_axes(y, 1, 2)
    };
    let q = split(p.wq, p.bq)?;
    let k = split(p.wk, p.bk)?;
    let v = split(p.wv, p.bv)?;
    let kt = tape.transpose_last_two(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (head_dim as f64).sqrt())?;
    let attn = tape.softmax_last_axis(scores)?;
    let ctx = tape.matmul(attn, v)?;
    let ctx = tape.swap_axes(ctx, 1, 2)?;
    let ctx = tape.reshape(ctx, &[batch, tokens, d])?;
    let attn_out = linear(tape, ctx, p.wo, p.bo)?;
    let x = tape.add(x, attn_out)?;

    let h = layer_norm(tape, x, p.ln2_gain, p.ln2_bias)?;
    let h = linear(tape, h, p.w1, p.b1)?;
    let h = tape.gelu(h)?;
    let mlp_out = linear(tape, h, p.w2, p.b2)?;
    tape.add(x, mlp_out)
}

/// Logits `[B, classes]` for a `[B, H, W, C]` image batch.
pub fn forward_on_tape(tape: &mut Tape, bound: &BoundParams, cfg: &ModelConfig, images: &Tensor) -> Result<Var> {
    let grid = cfg.validate()?;
    let expected = [cfg.image_side, cfg.image_side, cfg.channels];
    if images.ndim() != 4 || images.shape()[1..] != expected {
        return Err(Error::shape(format!(
            "batch {:?} does not match images of {expected:?}",
            images.shape()
        )));
    }
    let batch = images.shape()[0];
    let d = cfg.embed_dim;

    let patches = tape.constant(patchify_batch(images, cfg.patch_size)?);
    let tokens = linear(tape, patches, bound.patch_weight, bound.patch_bias)?;
    let zeros = tape.constant(Tensor::zeros(&[batch, 1, d]));
    let cls = tape.add(zeros, bound.cls_token)?;
    let tokens = tape.concat_rows(cls, tokens)?;
    debug_assert_eq!(tape.shape(tokens), [batch, grid.n() + 1, d]);

    let pos = positional_on_tape(tape, bound, cfg)?;
    let mut x = tape.add(tokens, pos)?;
    for block in &bound.blocks {
        x = encoder_block(tape, x, block, cfg)?;
    }
    let x = layer_norm(tape, x, bound.final_ln_gain, bound.final_ln_bias)?;
    let cls_out = tape.slice_rows(x, 0, 1)?;
    let cls_out = tape.reshape(cls_out, &[batch, d])?;
    linear(tape, cls_out, bound.head_weight, bound.head_bias)
}

/// Inference-only forward pass.
pub fn forward(params: &ModelParams, cfg: &ModelConfig, images: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = bind_constants(&mut tape, params);
    let logits = forward_on_tape(&mut tape, &bound, cfg, images)?;
    Ok(tape.value(logits).clone())
}

/// Mean cross-entropy of `[B, classes]` logits.
pub fn loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let l = tape.cross_entropy_logits(z, labels)?;
    Ok(tape.value(l).item())
}

/// Index of the largest entry, ties going to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Finite-difference check of the mean cross-entropy with respect to every
/// parameter tensor. Returns the worst relative error per named tensor.
/// `fault` corrupts one backward rule, for negative controls.
pub fn gradcheck_model(
    params: &ModelParams,
    cfg: &ModelConfig,
    images: &Tensor,
    labels: &[usize],
    h: f64,
    fault: Option<OpKind>,
) -> Result<Vec<(String, f64)>> {
    let names: Vec<String> = params.as_ref().into_named().into_iter().map(|(n, _)| n).collect();
    let flat: Vec<Tensor> = params.clone().into_named().into_iter().map(|(_, t)| t).collect();
    let report = finite_diff_check(&flat, h, |tape, vars| {
        if let Some(kind) = fault {
            tape.inject_fault(kind);
        }
        let mut it = vars.iter().copied();
        let bound = params.as_ref().map(|_, _| it.next().expect("one var per parameter"));
        let logits = forward_on_tape(tape, &bound, cfg, images)?;
        tape.cross_entropy_logits(logits, labels)
    })?;
    Ok(names.into_iter().zip(report.per_param).collect())
}
