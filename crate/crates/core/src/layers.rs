//! Parameterised building blocks shared by the encoder, decoder and heads.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{Graph, ParamId, ParamStore, Tensor2, Var};
use crate::scalar::Scalar;

/// `x · W + b` with `W: in × out`.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Affine {
    /// Xavier-normal weight, zero bias.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = store.add_normal(&format!("{name}.weight"), fan_in, fan_out, std, rng);
        let bias = store.add_no_decay(&format!("{name}.bias"), Tensor2::zeros(1, fan_out));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let h = g.matmul(x, w)?;
        g.add_row(h, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        let gain = store.add_no_decay(&format!("{name}.gain"), Tensor2::filled(1, width, T::one()));
        let bias = store.add_no_decay(&format!("{name}.bias"), Tensor2::zeros(1, width));
        Self { gain, bias }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, T::of(LN_EPS))
    }
}

/// Affine layers with GELU between them and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Affine>,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        rng: &mut R,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| Affine::new(store, &format!("{name}.fc{k}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            if k > 0 {
                h = g.gelu(h);
            }
            h = layer.forward(g, store, h)?;
        }
        Ok(h)
    }
}
