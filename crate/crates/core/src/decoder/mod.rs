//! Twin-attention decoder: learned box/semantic queries refined by a stack of
//! blocks that attend to both superpoint scales with shared weights.

pub mod attention;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use attention::{
    mask_attention_bias, twin_cross_attention, twin_self_attention, Attended, AttentionLayer,
    Fused, Fusion,
};

use crate::error::{Error, Result};
use crate::layers::{Affine, LayerNorm, Mlp};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor2, Var};
use crate::regularizer::{Regularizer, SceneWise, BOX_DIM};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub blocks: usize,
    pub heads: usize,
    /// Mask-attention threshold on sigmoid probabilities.
    pub mask_threshold: f64,
    /// Semantic query width `D_s`; queries are `D_s + 6` wide.
    pub semantic_dim: usize,
    pub queries: usize,
    pub ffn_hidden: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            blocks: 6,
            heads: 8,
            mask_threshold: 0.5,
            semantic_dim: 58,
            queries: 32,
            ffn_hidden: 128,
        }
    }
}

impl DecoderConfig {
    pub fn query_dim(&self) -> usize {
        self.semantic_dim + BOX_DIM
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("decoder: {m}")));
        if self.blocks == 0 || self.queries == 0 || self.heads == 0 || self.ffn_hidden == 0 {
            return fail("blocks, queries, heads and ffn_hidden must be positive");
        }
        if !self.query_dim().is_multiple_of(self.heads) {
            return fail("semantic_dim + 6 must be divisible by heads");
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return fail("mask_threshold must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Which superpoint scales feed the attention stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Both scales through the shared twin layers, fused by product.
    #[default]
    Twin,
    /// Low scale only; no mask attention.
    LowOnly,
    /// High scale only, with mask attention.
    HighOnly,
}

/// Per-block parameters. Both scales of a stage share one set.
#[derive(Debug, Clone)]
pub struct TwinBlock {
    pub cross: AttentionLayer,
    pub self_attn: AttentionLayer,
    pub fusion: Fusion,
}

/// Prediction heads shared by every block.
#[derive(Debug, Clone)]
pub struct Heads {
    pub class: Mlp,
    pub mask_score: Mlp,
    pub boxes: Mlp,
    pub box_score: Mlp,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub num_classes: usize,
    pub input_proj: Affine,
    pub input_norm: LayerNorm,
    pub query: ParamId,
    pub blocks: Vec<TwinBlock>,
    pub out_norm: LayerNorm,
    pub heads: Heads,
}

/// The learned initial queries `X⁰ = [X_s ; X_b]`.
#[derive(Debug, Clone, Copy)]
pub struct QueryState {
    pub param: ParamId,
    pub queries: usize,
    pub semantic_dim: usize,
}

/// Creates `X⁰`: semantic part `N(0, 0.02²)`, box part the unit box.
pub fn init_queries<T: Scalar, R: Rng>(
    store: &mut ParamStore<T>,
    cfg: &DecoderConfig,
    rng: &mut R,
) -> QueryState {
    let normal = Normal::new(0.0, 0.02).unwrap();
    let unit = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let init = Tensor2::from_fn(cfg.queries, cfg.query_dim(), |_, j| {
        if j < cfg.semantic_dim {
            T::of(normal.sample(rng))
        } else {
            T::of(unit[j - cfg.semantic_dim])
        }
    });
    let param = store.add_no_decay("decoder.query", init);
    QueryState {
        param,
        queries: cfg.queries,
        semantic_dim: cfg.semantic_dim,
    }
}

/// Graph handles for one block's outputs.
#[derive(Debug, Clone, Copy)]
pub struct BlockOutput {
    pub class_logits: Var,
    pub mask_logits: Var,
    pub mask_score: Var,
    pub boxes: Var,
    pub box_score: Var,
    /// `X^L` after the fusion stage.
    pub queries: Var,
}

/// Values of one block's predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPrediction<T> {
    /// `N_o × N_h`, pre-sigmoid.
    pub mask_logits: Tensor2<T>,
    /// `N_o × (N_C + 1)`; the last column is "no instance".
    pub class_probs: Tensor2<T>,
    pub mask_score: Vec<T>,
    /// `N_o × 6` in scene-normalized coordinates.
    pub boxes: Tensor2<T>,
    pub box_score: Vec<T>,
}

impl BlockOutput {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> Result<BlockPrediction<T>> {
        Ok(BlockPrediction {
            mask_logits: g.value(self.mask_logits).clone(),
            class_probs: g.value(self.class_logits).row_softmax()?,
            mask_score: g.value(self.mask_score).column(0),
            boxes: g.value(self.boxes).clone(),
            box_score: g.value(self.box_score).column(0),
        })
    }
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        cfg: &DecoderConfig,
        feature_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.query_dim();
        let input_proj = Affine::new(store, "decoder.input_proj", feature_dim, d, rng);
        let input_norm = LayerNorm::new(store, "decoder.input_norm", d);
        let query = init_queries(store, cfg, rng).param;
        let blocks = (0..cfg.blocks)
            .map(|l| {
                let name = format!("decoder.block{l}");
                TwinBlock {
                    cross: AttentionLayer::new(
                        store,
                        &format!("{name}.cross_attn"),
                        d,
                        d,
                        cfg.heads,
                        rng,
                    ),
                    self_attn: AttentionLayer::new(
                        store,
                        &format!("{name}.self_attn"),
                        d,
                        d,
                        cfg.heads,
                        rng,
                    ),
                    fusion: Fusion::new(store, &name, d, cfg.ffn_hidden, rng),
                }
            })
            .collect();
        let out_norm = LayerNorm::new(store, "decoder.out_norm", d);
        let heads = Heads {
            class: Mlp::new(store, "decoder.head.class", &[d, d, num_classes + 1], rng),
            mask_score: Mlp::new(store, "decoder.head.mask_score", &[d, d, 1], rng),
            boxes: Mlp::new(store, "decoder.head.box", &[d, d, BOX_DIM], rng),
            box_score: Mlp::new(store, "decoder.head.box_score", &[d, d, 1], rng),
        };
        Ok(Self {
            cfg: cfg.clone(),
            num_classes,
            input_proj,
            input_norm,
            query,
            blocks,
            out_norm,
            heads,
        })
    }

    /// Shared projection of pooled superpoint features to the query width.
    pub fn project<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        s: Var,
    ) -> Result<Var> {
        let h = self.input_proj.forward(g, store, s)?;
        let h = self.input_norm.forward(g, store, h)?;
        Ok(g.gelu(h))
    }

    /// Heads on `X^L`; masks come from the regularizer using the predicted boxes.
    pub fn predict<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        regularizer: &Regularizer,
        scene: &SceneWise,
        x: Var,
    ) -> Result<BlockOutput> {
        let h = self.out_norm.forward(g, store, x)?;
        let class_logits = self.heads.class.forward(g, store, h)?;
        let mask_score = self.heads.mask_score.forward(g, store, h)?;
        let boxes = self.heads.boxes.forward(g, store, h)?;
        let box_score = self.heads.box_score.forward(g, store, h)?;
        let mask_logits = regularizer.regularized_masks(g, store, boxes, scene, h)?;
        Ok(BlockOutput {
            class_logits,
            mask_logits,
            mask_score,
            boxes,
            box_score,
            queries: x,
        })
    }

    /// Runs every block; block `L` masks its high branch with block `L-1`'s
    /// mask logits, block 1 is unmasked.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        regularizer: &Regularizer,
        s_low: Var,
        s_high: Var,
        mode: ScaleMode,
        initial_queries: Option<Var>,
    ) -> Result<Vec<BlockOutput>> {
        let p_high = self.project(g, store, s_high)?;
        let p_low = self.project(g, store, s_low)?;
        let scene = regularizer.scene_heads(g, store, s_high)?;
        let mut x = match initial_queries {
            Some(q) => q,
            None => g.param(store, self.query),
        };
        let mut bias: Option<Tensor2<T>> = None;
        let mut outputs = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            x = match mode {
                ScaleMode::Twin => {
                    let (yh, yl) = twin_cross_attention(
                        g,
                        store,
                        &block.cross,
                        x,
                        p_high,
                        p_low,
                        bias.as_ref(),
                    )?;
                    let (zh, zl) =
                        twin_self_attention(g, store, &block.self_attn, yh.output, yl.output)?;
                    block.fusion.fuse(g, store, zh.output, zl.output)?.output
                }
                ScaleMode::LowOnly | ScaleMode::HighOnly => {
                    let (source, b) = if mode == ScaleMode::LowOnly {
                        (p_low, None)
                    } else {
                        (p_high, bias.as_ref())
                    };
                    let y = block.cross.attend(g, store, x, source, b)?;
                    let z = block.self_attn.attend(g, store, y.output, y.output, None)?;
                    block.fusion.refine(g, store, z.output)?.output
                }
            };
            let out = self.predict(g, store, regularizer, &scene, x)?;
            bias = Some(mask_attention_bias(
                g.value(out.mask_logits),
                self.cfg.mask_threshold,
            ));
            outputs.push(out);
        }
        Ok(outputs)
    }
}
