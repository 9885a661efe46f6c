use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Affine, LayerNorm, Mlp};
use crate::numerics::{Graph, ParamStore, Tensor2, Var};
use crate::scalar::Scalar;

/// Additive pre-softmax mask from the previous block's mask logits.
///
/// Entry `(i, j)` is `0` where `sigmoid(logit) >= tau` and `-inf` otherwise.
/// A row that would be entirely `-inf` is reset to zeros.
pub fn mask_attention_bias<T: Scalar>(prev_mask_logits: &Tensor2<T>, tau: f64) -> Tensor2<T> {
    let tau = T::of(tau);
    let mut bias = prev_mask_logits.map(|l| {
        if crate::numerics::graph::sigmoid(l) >= tau {
            T::zero()
        } else {
            T::neg_infinity()
        }
    });
    for i in 0..bias.rows() {
        let row = bias.row_mut(i);
        if row.iter().all(|&v| v == T::neg_infinity()) {
            row.iter_mut().for_each(|v| *v = T::zero());
        }
    }
    bias
}

/// Multi-head attention followed by a residual connection and layer norm.
/// One instance serves both scales of a twin stage.
#[derive(Debug, Clone)]
pub struct AttentionLayer {
    pub q: Affine,
    pub k: Affine,
    pub v: Affine,
    pub out: Affine,
    pub norm: LayerNorm,
    pub heads: usize,
}

/// Output of one attention call, with per-head weights kept for inspection.
#[derive(Debug, Clone)]
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl AttentionLayer {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        query_dim: usize,
        source_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            q: Affine::new(store, &format!("{name}.q"), query_dim, query_dim, rng),
            k: Affine::new(store, &format!("{name}.k"), source_dim, query_dim, rng),
            v: Affine::new(store, &format!("{name}.v"), source_dim, query_dim, rng),
            out: Affine::new(store, &format!("{name}.out"), query_dim, query_dim, rng),
            norm: LayerNorm::new(store, &format!("{name}_norm"), query_dim),
            heads,
        }
    }

    /// `LN(x + out(concat_h softmax(q_h k_hᵀ / sqrt(d) + bias) v_h))`.
    pub fn attend<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        source: Var,
        bias: Option<&Tensor2<T>>,
    ) -> Result<Attended> {
        let width = self.q.fan_out;
        let d = width / self.heads;
        if let Some(b) = bias {
            let expect = (g.value(x).rows(), g.value(source).rows());
            if b.shape() != expect {
                return Err(Error::Dimension {
                    op: "attention bias",
                    lhs: expect,
                    rhs: b.shape(),
                });
            }
        }
        let q = self.q.forward(g, store, x)?;
        let k = self.k.forward(g, store, source)?;
        let v = self.v.forward(g, store, source)?;
        let inv_sqrt_d = T::one() / T::from_usize(d).unwrap().sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * d, (h + 1) * d);
            let qh = g.slice_cols(q, lo, hi)?;
            let kh = g.slice_cols(k, lo, hi)?;
            let vh = g.slice_cols(v, lo, hi)?;
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.scale(scores, inv_sqrt_d);
            let a = g.softmax_rows(scores, bias)?;
            weights.push(a);
            heads.push(g.matmul(a, vh)?);
        }
        let merged = g.concat_cols(&heads)?;
        let projected = self.out.forward(g, store, merged)?;
        let res = g.add(x, projected)?;
        let output = self.norm.forward(g, store, res)?;
        Ok(Attended { output, weights })
    }
}

/// Cross-attention of the shared queries onto both superpoint scales with one
/// parameter set. Only the high branch is masked.
pub fn twin_cross_attention<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &AttentionLayer,
    queries: Var,
    high: Var,
    low: Var,
    high_bias: Option<&Tensor2<T>>,
) -> Result<(Attended, Attended)> {
    let y_high = layer.attend(g, store, queries, high, high_bias)?;
    let y_low = layer.attend(g, store, queries, low, None)?;
    Ok((y_high, y_low))
}

/// Shared-weight self-attention over the queries of each branch, unmasked.
pub fn twin_self_attention<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    layer: &AttentionLayer,
    y_high: Var,
    y_low: Var,
) -> Result<(Attended, Attended)> {
    let z_high = layer.attend(g, store, y_high, y_high, None)?;
    let z_low = layer.attend(g, store, y_low, y_low, None)?;
    Ok((z_high, z_low))
}

/// Multi-scale fusion `LN(Z_h + FFN(Z_l ⊙ Z_h))`.
#[derive(Debug, Clone)]
pub struct Fusion {
    pub ffn: Mlp,
    pub norm: LayerNorm,
}

/// Fusion output together with the FFN input it was computed from.
#[derive(Debug, Clone, Copy)]
pub struct Fused {
    pub output: Var,
    pub ffn_input: Var,
}

impl Fusion {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        width: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            ffn: Mlp::new(store, &format!("{name}.ffn"), &[width, hidden, width], rng),
            norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), width),
        }
    }

    pub fn fuse<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z_high: Var,
        z_low: Var,
    ) -> Result<Fused> {
        let ffn_input = g.mul(z_low, z_high)?;
        self.finish(g, store, z_high, ffn_input)
    }

    /// Single-scale form: the FFN sees `Z` directly.
    pub fn refine<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        z: Var,
    ) -> Result<Fused> {
        self.finish(g, store, z, z)
    }

    fn finish<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        residual: Var,
        ffn_input: Var,
    ) -> Result<Fused> {
        let h = self.ffn.forward(g, store, ffn_input)?;
        let res = g.add(residual, h)?;
        let output = self.norm.forward(g, store, res)?;
        Ok(Fused { output, ffn_input })
    }
}
