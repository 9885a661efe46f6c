use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scene;
use crate::error::Result;
use crate::layers::Mlp;
use crate::numerics::{Graph, ParamStore, Tensor2, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: usize,
    /// Output channels per point (`D_b`).
    pub out_dim: usize,
    /// Octaves of the sinusoidal position lift.
    pub frequencies: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            out_dim: 32,
            frequencies: 4,
        }
    }
}

impl EncoderConfig {
    pub fn input_dim(&self) -> usize {
        6 + 6 * self.frequencies
    }
}

/// Per-point feature network standing in for a sparse-convolution backbone.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    mlp: Mlp,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Self {
        let widths = [cfg.input_dim(), cfg.hidden, cfg.hidden, cfg.out_dim];
        Self {
            cfg: cfg.clone(),
            mlp: Mlp::new(store, "encoder", &widths, rng),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        inputs: Var,
    ) -> Result<Var> {
        self.mlp.forward(g, store, inputs)
    }
}

/// Fixed encoder input: normalized xyz, rgb and `sin/cos(2^k π x)` per axis.
pub fn point_inputs<T: Scalar>(scene: &Scene, frequencies: usize) -> Tensor2<T> {
    let frame = scene.frame();
    let width = 6 + 6 * frequencies;
    let mut out = Tensor2::zeros(scene.len(), width);
    for (i, p) in scene.points.iter().enumerate() {
        let u = frame.to_unit([p[0], p[1], p[2]]);
        let row = out.row_mut(i);
        for a in 0..3 {
            row[a] = T::of(u[a]);
            row[3 + a] = T::of(p[3 + a]);
        }
        let mut k = 6;
        for f in 0..frequencies {
            let w = std::f64::consts::PI * (1u64 << f) as f64;
            for &x in &u {
                row[k] = T::of((w * x).sin());
                row[k + 1] = T::of((w * x).cos());
                k += 2;
            }
        }
    }
    out
}

/// Runs the encoder over every point of `scene`: `N × D_b`.
pub fn encode_points<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    encoder: &Encoder,
    scene: &Scene,
) -> Result<Var> {
    let x = g.constant(point_inputs(scene, encoder.cfg.frequencies));
    encoder.forward(g, store, x)
}

/// Mean of member features per superpoint: `K × D_b`.
pub fn pool<T: Scalar>(g: &mut Graph<T>, features: Var, assign: &[usize], k: usize) -> Result<Var> {
    g.segment_mean(features, assign, k)
}
