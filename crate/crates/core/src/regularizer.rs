//! Box regularizer: scene-wise heads on the high-scale superpoints and the
//! mask prediction from relative box positions.
//!
//! For query `i` and superpoint `j` the mask logit is
//!
//! ```text
//! f_ij  = [ b_i - Fb_j ; Fm_j ]            (width 6 + D_s = D_o)
//! E_ij  = f_ij · W + c                     (affine map D_o -> D_o)
//! logit = E_ij · x_i
//! ```
//!
//! The graph route never materialises `E`: with `u_i = W x_i` the logit is
//! `b_i·u_i[..6] - Fb_j·u_i[..6] + Fm_j·u_i[6..] + c·x_i`, which costs
//! `O(N_o N_h D_o)` instead of `O(N_o N_h D_o²)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Affine;
use crate::numerics::{Graph, ParamStore, Tensor2, Var};
use crate::scalar::Scalar;

pub const BOX_DIM: usize = 6;

#[derive(Debug, Clone)]
pub struct Regularizer {
    pub scene_mask: Affine,
    pub scene_box: Affine,
    pub mask_embed: Affine,
    pub semantic_dim: usize,
}

/// Scene-wise semantic score `F_m` (`N_h × D_s`) and box information `F_b`
/// (`N_h × 6`).
#[derive(Debug, Clone, Copy)]
pub struct SceneWise {
    pub f_m: Var,
    pub f_b: Var,
}

impl Regularizer {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        feature_dim: usize,
        semantic_dim: usize,
        rng: &mut R,
    ) -> Self {
        let width = semantic_dim + BOX_DIM;
        Self {
            scene_mask: Affine::new(
                store,
                "regularizer.scene_mask",
                feature_dim,
                semantic_dim,
                rng,
            ),
            scene_box: Affine::new(store, "regularizer.scene_box", feature_dim, BOX_DIM, rng),
            mask_embed: Affine::new(store, "regularizer.mask_embed", width, width, rng),
            semantic_dim,
        }
    }

    /// Two affine maps of the pooled high-scale features.
    pub fn scene_heads<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        s_high: Var,
    ) -> Result<SceneWise> {
        Ok(SceneWise {
            f_m: self.scene_mask.forward(g, store, s_high)?,
            f_b: self.scene_box.forward(g, store, s_high)?,
        })
    }

    /// Regularized mask logits `N_o × N_h` for boxes `N_o × 6` and queries
    /// `N_o × D_o`.
    pub fn regularized_masks<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        boxes: Var,
        scene: &SceneWise,
        queries: Var,
    ) -> Result<Var> {
        let width = self.semantic_dim + BOX_DIM;
        let qw = g.value(queries).cols();
        if qw != width || g.value(boxes).cols() != BOX_DIM {
            return Err(Error::Dimension {
                op: "regularized_masks",
                lhs: (g.value(queries).rows(), qw),
                rhs: (width, BOX_DIM),
            });
        }
        let w = g.param(store, self.mask_embed.weight);
        let c = g.param(store, self.mask_embed.bias);
        // u_i = W x_i, split into position and semantic parts
        let u = g.matmul_t(queries, w)?;
        let u_pos = g.slice_cols(u, 0, BOX_DIM)?;
        let u_sem = g.slice_cols(u, BOX_DIM, width)?;

        let pos = g.matmul_t(u_pos, scene.f_b)?;
        let sem = g.matmul_t(u_sem, scene.f_m)?;
        let per_superpoint = g.sub(sem, pos)?;

        let bu = g.mul(boxes, u_pos)?;
        let box_term = g.row_sum(bu);
        let bias_term = g.matmul_t(queries, c)?;
        let per_query = g.add(box_term, bias_term)?;
        g.add_col(per_superpoint, per_query)
    }
}

/// `R[i][j][k] = boxes[i][k] - f_b[j][k]`, stored `N_o × N_h × 6`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelPos<T> {
    pub queries: usize,
    pub superpoints: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> RelPos<T> {
    pub fn get(&self, i: usize, j: usize) -> &[T] {
        let at = (i * self.superpoints + j) * BOX_DIM;
        &self.data[at..at + BOX_DIM]
    }

    /// `R_i` as an `N_h × 6` matrix.
    pub fn query_block(&self, i: usize) -> Tensor2<T> {
        let at = i * self.superpoints * BOX_DIM;
        Tensor2::from_vec(
            self.superpoints,
            BOX_DIM,
            self.data[at..at + self.superpoints * BOX_DIM].to_vec(),
        )
        .expect("block shape")
    }
}

/// Broadcast subtraction of scene-wise boxes from each predicted box.
pub fn relative_positions<T: Scalar>(boxes: &Tensor2<T>, f_b: &Tensor2<T>) -> Result<RelPos<T>> {
    if boxes.cols() != BOX_DIM || f_b.cols() != BOX_DIM {
        return Err(Error::Dimension {
            op: "relative_positions",
            lhs: boxes.shape(),
            rhs: f_b.shape(),
        });
    }
    let mut data = Vec::with_capacity(boxes.rows() * f_b.rows() * BOX_DIM);
    for i in 0..boxes.rows() {
        let b = boxes.row(i);
        for j in 0..f_b.rows() {
            data.extend(b.iter().zip(f_b.row(j)).map(|(&x, &y)| x - y));
        }
    }
    Ok(RelPos {
        queries: boxes.rows(),
        superpoints: f_b.rows(),
        data,
    })
}

/// Direct evaluation with explicit `E_i = [R_i ; F_m] W + c` per query.
pub fn materialized_masks<T: Scalar>(
    rel: &RelPos<T>,
    f_m: &Tensor2<T>,
    weight: &Tensor2<T>,
    bias: &Tensor2<T>,
    queries: &Tensor2<T>,
) -> Result<Tensor2<T>> {
    let mut out = Tensor2::zeros(rel.queries, rel.superpoints);
    for i in 0..rel.queries {
        let feats = Tensor2::concat_cols(&[&rel.query_block(i), f_m])?;
        let mut e = feats.matmul(weight)?;
        for j in 0..e.rows() {
            for (v, &b) in e.row_mut(j).iter_mut().zip(bias.data()) {
                *v += b;
            }
        }
        let logits = e.matmul_t(&Tensor2::row_vector(queries.row(i).to_vec()))?;
        for j in 0..rel.superpoints {
            out[(i, j)] = logits[(j, 0)];
        }
    }
    Ok(out)
}
