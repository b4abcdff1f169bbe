use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::relpos::ClassTokenPolicy;

const INIT_STD: f64 = 0.02;

/// One pre-norm encoder block. Generic over the slot type so the same
/// layout holds tensors, tape handles, gradients or optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub ln1_gain: T,
    pub ln1_bias: T,
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
    pub ln2_gain: T,
    pub ln2_bias: T,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub patch_weight: T,
    pub patch_bias: T,
    pub cls_token: T,
    /// `[N, D]` absolute position embedding.
    pub pe: Option<T>,
    /// `[1, D]` core shared by sequence and circle embeddings.
    pub relation_core: Option<T>,
    /// `[1, D]` positional row of the class token.
    pub cls_pos: Option<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub final_ln_gain: T,
    pub final_ln_bias: T,
    pub head_weight: T,
    pub head_bias: T,
}

pub type ModelParams = Params<Tensor>;

impl<T> BlockParams<T> {
    fn map<U>(self, prefix: &str, f: &mut impl FnMut(&str, T) -> U) -> BlockParams<U> {
        let mut g = |name: &str, t: T| f(&format!("{prefix}.{name}"), t);
        BlockParams {
            ln1_gain: g("ln1.gain", self.ln1_gain),
            ln1_bias: g("ln1.bias", self.ln1_bias),
            wq: g("attn.wq", self.wq),
            bq: g("attn.bq", self.bq),
            wk: g("attn.wk", self.wk),
            bk: g("attn.bk", self.bk),
            wv: g("attn.wv", self.wv),
            bv: g("attn.bv", self.bv),
            wo: g("attn.wo", self.wo),
            bo: g("attn.bo", self.bo),
            ln2_gain: g("ln2.gain", self.ln2_gain),
            ln2_bias: g("ln2.bias", self.ln2_bias),
            w1: g("mlp.w1", self.w1),
            b1: g("mlp.b1", self.b1),
            w2: g("mlp.w2", self.w2),
            b2: g("mlp.b2", self.b2),
        }
    }

    fn as_ref(&self) -> BlockParams<&T> {
        BlockParams {
            ln1_gain: &self.ln1_gain,
            ln1_bias: &self.ln1_bias,
            wq: &self.wq,
            bq: &self.bq,
            wk: &self.wk,
            bk: &self.bk,
            wv: &self.wv,
            bv: &self.bv,
            wo: &self.wo,
            bo: &self.bo,
            ln2_gain: &self.ln2_gain,
            ln2_bias: &self.ln2_bias,
            w1: &self.w1,
            b1: &self.b1,
            w2: &self.w2,
            b2: &self.b2,
        }
    }

    fn as_mut(&mut self) -> BlockParams<&mut T> {
        BlockParams {
            ln1_gain: &mut self.ln1_gain,
            ln1_bias: &mut self.ln1_bias,
            wq: &mut self.wq,
            bq: &mut self.bq,
            wk: &mut self.wk,
            bk: &mut self.bk,
            wv: &mut self.wv,
            bv: &mut self.bv,
            wo: &mut self.wo,
            bo: &mut self.bo,
            ln2_gain: &mut self.ln2_gain,
            ln2_bias: &mut self.ln2_bias,
            w1: &mut self.w1,
            b1: &mut self.b1,
            w2: &mut self.w2,
            b2: &mut self.b2,
        }
    }
}

impl<T> Params<T> {
    /// Applies `f` to every slot in a fixed order, passing its dotted name.
    pub fn map<U>(self, mut f: impl FnMut(&str, T) -> U) -> Params<U> {
        let patch_weight = f("patch_embed.weight", self.patch_weight);
        let patch_bias = f("patch_embed.bias", self.patch_bias);
        let cls_token = f("cls_token", self.cls_token);
        let pe = self.pe.map(|t| f("pos.pe", t));
        let relation_core = self.relation_core.map(|t| f("pos.relation_core", t));
        let cls_pos = self.cls_pos.map(|t| f("pos.cls_row", t));
        let blocks = self
            .blocks
            .into_iter()
            .enumerate()
            .map(|(i, b)| b.map(&format!("blocks.{i}"), &mut f))
            .collect();
        Params {
            patch_weight,
            patch_bias,
            cls_token,
            pe,
            relation_core,
            cls_pos,
            blocks,
            final_ln_gain: f("final_ln.gain", self.final_ln_gain),
            final_ln_bias: f("final_ln.bias", self.final_ln_bias),
            head_weight: f("head.weight", self.head_weight),
            head_bias: f("head.bias", self.head_bias),
        }
    }

    pub fn as_ref(&self) -> Params<&T> {
        Params {
            patch_weight: &self.patch_weight,
            patch_bias: &self.patch_bias,
            cls_token: &self.cls_token,
            pe: self.pe.as_ref(),
            relation_core: self.relation_core.as_ref(),
            cls_pos: self.cls_pos.as_ref(),
            blocks: self.blocks.iter().map(BlockParams::as_ref).collect(),
            final_ln_gain: &self.final_ln_gain,
            final_ln_bias: &self.final_ln_bias,
            head_weight: &self.head_weight,
            head_bias: &self.head_bias,
        }
    }

    pub fn as_mut(&mut self) -> Params<&mut T> {
        Params {
            patch_weight: &mut self.patch_weight,
            patch_bias: &mut self.patch_bias,
            cls_token: &mut self.cls_token,
            pe: self.pe.as_mut(),
            relation_core: self.relation_core.as_mut(),
            cls_pos: self.cls_pos.as_mut(),
            blocks: self.blocks.iter_mut().map(BlockParams::as_mut).collect(),
            final_ln_gain: &mut self.final_ln_gain,
            final_ln_bias: &mut self.final_ln_bias,
            head_weight: &mut self.head_weight,
            head_bias: &mut self.head_bias,
        }
    }

    /// Slots in their fixed order, with names.
    pub fn into_named(self) -> Vec<(String, T)> {
        let mut out = Vec::new();
        self.map(|name, t| out.push((name.to_string(), t)));
        out
    }
}

impl ModelParams {
    /// Deterministic initialization: weights, PE, relation core and class
    /// positional row from `normal(0, 0.02)`; biases and the class token
    /// zero; layer-norm gains one.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let grid = cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, p, c) = (cfg.embed_dim, cfg.hidden_dim(), cfg.patch_dim(), cfg.classes);
        let mut normal = |shape: &[usize]| Tensor::randn(shape, INIT_STD, &mut rng);

        let patch_weight = normal(&[p, d]);
        let mode = cfg.positional.mode;
        let pe = mode.uses_pe().then(|| normal(&[grid.n(), d]));
        let relation_core = mode.relation().is_some().then(|| normal(&[1, d]));
        let cls_pos = (cfg.positional.class_token_policy == ClassTokenPolicy::LearnableRow).then(|| normal(&[1, d]));
        let blocks = (0..cfg.blocks)
            .map(|_| BlockParams {
                ln1_gain: Tensor::ones(&[d]),
                ln1_bias: Tensor::zeros(&[d]),
                wq: normal(&[d, d]),
                bq: Tensor::zeros(&[d]),
                wk: normal(&[d, d]),
                bk: Tensor::zeros(&[d]),
                wv: normal(&[d, d]),
                bv: Tensor::zeros(&[d]),
                wo: normal(&[d, d]),
                bo: Tensor::zeros(&[d]),
                ln2_gain: Tensor::ones(&[d]),
                ln2_bias: Tensor::zeros(&[d]),
                w1: normal(&[d, h]),
                b1: Tensor::zeros(&[h]),
                w2: normal(&[h, d]),
                b2: Tensor::zeros(&[d]),
            })
            .collect();
        let head_weight = normal(&[d, c]);
        Ok(Params {
            patch_weight,
            patch_bias: Tensor::zeros(&[d]),
            cls_token: Tensor::zeros(&[1, d]),
            pe,
            relation_core,
            cls_pos,
            blocks,
            final_ln_gain: Tensor::ones(&[d]),
            final_ln_bias: Tensor::zeros(&[d]),
            head_weight,
            head_bias: Tensor::zeros(&[c]),
        })
    }

    pub fn num_params(&self) -> usize {
        self.as_ref().into_named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Parameters held by the positional slot (PE, relation core and class
    /// positional row).
    pub fn positional_params(&self) -> usize {
        [&self.pe, &self.relation_core, &self.cls_pos]
            .into_iter()
            .flatten()
            .map(Tensor::numel)
            .sum()
    }
}
