//! Set-prediction loss over every decoder block.

use serde::{Deserialize, Serialize};

use super::matching::{box_iou, hungarian_tensor, mask_iou, pairwise_cost, Cost, MatchResult};
use crate::decoder::BlockOutput;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor2, Var};
use crate::scalar::Scalar;

/// Loss weights, IoU indicator thresholds and matching weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta_cls: f64,
    /// Weight of `bce + dice`.
    pub beta_mask: f64,
    pub beta_mask_score: f64,
    pub beta_box: f64,
    pub beta_box_score: f64,
    pub eta_mask_score: f64,
    pub eta_box_score: f64,
    pub lambda_cls: f64,
    pub lambda_mask: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta_cls: 0.5,
            beta_mask: 1.0,
            beta_mask_score: 0.5,
            beta_box: 1.0,
            beta_box_score: 0.5,
            eta_mask_score: 0.5,
            eta_box_score: 0.5,
            lambda_cls: 0.5,
            lambda_mask: 1.0,
        }
    }
}

/// What a scene should be segmented into, in the model's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Target<T> {
    /// `N_I × N_h` binary masks.
    pub masks: Tensor2<T>,
    /// `N_I × 6` boxes in scene-normalized coordinates.
    pub boxes: Tensor2<T>,
    pub classes: Vec<usize>,
}

impl<T: Scalar> Target<T> {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub bce: f64,
    pub dice: f64,
    pub mask_score: f64,
    #[serde(rename = "box")]
    pub box_l1: f64,
    pub box_score: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted sum of the parts.
    pub fn recompose(&self, cfg: &LossConfig) -> f64 {
        cfg.beta_mask * (self.bce + self.dice)
            + cfg.beta_cls * self.cls
            + cfg.beta_mask_score * self.mask_score
            + cfg.beta_box * self.box_l1
            + cfg.beta_box_score * self.box_score
    }

    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("cls", self.cls),
            ("bce", self.bce),
            ("dice", self.dice),
            ("mask_score", self.mask_score),
            ("box", self.box_l1),
            ("box_score", self.box_score),
        ]
    }
}

/// Graph handles of one block's six loss terms.
#[derive(Debug, Clone, Copy)]
pub struct BlockTerms {
    pub cls: Var,
    pub bce: Var,
    pub dice: Var,
    pub mask_score: Var,
    pub box_l1: Var,
    pub box_score: Var,
}

impl BlockTerms {
    fn vars(&self) -> [Var; 6] {
        [
            self.cls,
            self.bce,
            self.dice,
            self.mask_score,
            self.box_l1,
            self.box_score,
        ]
    }
}

/// Matches one block's predictions against the target.
pub fn match_block<T: Scalar + Cost>(
    g: &Graph<T>,
    out: &BlockOutput,
    target: &Target<T>,
    cfg: &LossConfig,
) -> Result<MatchResult<T>> {
    let probs = g.value(out.class_logits).row_softmax()?;
    let cost = pairwise_cost(
        &probs,
        g.value(out.mask_logits),
        &target.masks,
        &target.classes,
        cfg.lambda_cls,
        cfg.lambda_mask,
    );
    hungarian_tensor(&cost)
}

fn zero<T: Scalar>(g: &mut Graph<T>) -> Var {
    g.constant(Tensor2::zeros(1, 1))
}

/// Squared error of `scores[rows]` against `targets`, averaged over the rows.
fn score_l2<T: Scalar>(
    g: &mut Graph<T>,
    scores: Var,
    rows: &[usize],
    targets: Vec<T>,
) -> Result<Var> {
    if rows.is_empty() {
        return Ok(zero(g));
    }
    let n = T::from_usize(rows.len()).unwrap();
    let sel = g.select_rows(scores, rows)?;
    let t = g.constant(Tensor2::column_vector(targets));
    let d = g.sub(sel, t)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, T::one() / n))
}

/// Everything a block is supervised with: the assignment and the detached
/// score-head targets derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervision<T> {
    pub matching: MatchResult<T>,
    /// `(proposal, mask IoU)` for matched pairs above the mask indicator.
    pub mask_score: Vec<(usize, T)>,
    /// `(proposal, box IoU)` for matched pairs above the box indicator.
    pub box_score: Vec<(usize, T)>,
}

/// Score targets of `matching` measured on the current predictions.
pub fn supervision<T: Scalar>(
    g: &Graph<T>,
    out: &BlockOutput,
    target: &Target<T>,
    matching: MatchResult<T>,
    cfg: &LossConfig,
) -> Supervision<T> {
    let half = T::of(0.5);
    let mask_vals = g.value(out.mask_logits);
    let box_vals = g.value(out.boxes);
    let (mut mask_score, mut box_score) = (Vec::new(), Vec::new());
    for &(p, j) in &matching.assignment {
        let pred: Vec<bool> = mask_vals.row(p).iter().map(|&l| l > T::zero()).collect();
        let gt: Vec<bool> = target.masks.row(j).iter().map(|&v| v > half).collect();
        let iou = mask_iou(&pred, &gt);
        if iou > cfg.eta_mask_score {
            mask_score.push((p, T::of(iou)));
        }
        let biou = box_iou(box_vals.row(p), target.boxes.row(j));
        if biou.as_f64() > cfg.eta_box_score {
            box_score.push((p, biou));
        }
    }
    Supervision {
        matching,
        mask_score,
        box_score,
    }
}

/// The six terms for one block under fixed supervision.
pub fn block_terms<T: Scalar>(
    g: &mut Graph<T>,
    out: &BlockOutput,
    target: &Target<T>,
    sup: &Supervision<T>,
    num_classes: usize,
) -> Result<BlockTerms> {
    let matching = &sup.matching;
    let proposals = g.value(out.class_logits).rows();
    let mut cls_target = vec![num_classes; proposals];
    for &(p, j) in &matching.assignment {
        cls_target[p] = target.classes[j];
    }
    let cls = g.cross_entropy(out.class_logits, &cls_target)?;
    if matching.assignment.is_empty() {
        let z = zero(g);
        return Ok(BlockTerms {
            cls,
            bce: z,
            dice: z,
            mask_score: z,
            box_l1: z,
            box_score: z,
        });
    }

    let props: Vec<usize> = matching.assignment.iter().map(|&(p, _)| p).collect();
    let gts: Vec<usize> = matching.assignment.iter().map(|&(_, j)| j).collect();
    let gt_masks = target.masks.select_rows(&gts);
    let logits = g.select_rows(out.mask_logits, &props)?;
    let bce = g.bce_with_logits(logits, &gt_masks)?;
    let dice = g.dice(logits, &gt_masks)?;

    let (ms_rows, ms_targets): (Vec<usize>, Vec<T>) = sup.mask_score.iter().copied().unzip();
    let (bs_rows, bs_targets): (Vec<usize>, Vec<T>) = sup.box_score.iter().copied().unzip();
    let mask_score = score_l2(g, out.mask_score, &ms_rows, ms_targets)?;
    let box_score = score_l2(g, out.box_score, &bs_rows, bs_targets)?;

    let pred_boxes = g.select_rows(out.boxes, &props)?;
    let gt_boxes = g.constant(target.boxes.select_rows(&gts));
    let d = g.sub(pred_boxes, gt_boxes)?;
    let a = g.abs(d);
    let s = g.sum(a);
    let box_l1 = g.scale(s, T::one() / T::from_usize(target.len()).unwrap());
    Ok(BlockTerms {
        cls,
        bce,
        dice,
        mask_score,
        box_l1,
        box_score,
    })
}

/// Total loss over all blocks, with per-block matching.
#[derive(Debug, Clone)]
pub struct SceneLoss<T> {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub supervision: Vec<Supervision<T>>,
}

pub fn scene_loss<T: Scalar + Cost>(
    g: &mut Graph<T>,
    outputs: &[BlockOutput],
    target: &Target<T>,
    num_classes: usize,
    cfg: &LossConfig,
) -> Result<SceneLoss<T>> {
    let sups = outputs
        .iter()
        .map(|out| {
            Ok(supervision(
                g,
                out,
                target,
                match_block(g, out, target, cfg)?,
                cfg,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    scene_loss_with(g, outputs, target, &sups, num_classes, cfg).map(|(total, breakdown)| {
        SceneLoss {
            total,
            breakdown,
            supervision: sups,
        }
    })
}

/// Like [`scene_loss`] with the supervision of every block supplied by the
/// caller.
pub fn scene_loss_with<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &[BlockOutput],
    target: &Target<T>,
    sups: &[Supervision<T>],
    num_classes: usize,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    if outputs.is_empty() || outputs.len() != sups.len() {
        return Err(Error::Config(
            "one supervision per decoder block is required".into(),
        ));
    }
    let mut sums: Option<[Var; 6]> = None;
    for (out, m) in outputs.iter().zip(sups) {
        let terms = block_terms(g, out, target, m, num_classes)?.vars();
        sums = Some(match sums {
            None => terms,
            Some(acc) => {
                let mut next = acc;
                for k in 0..6 {
                    next[k] = g.add(acc[k], terms[k])?;
                }
                next
            }
        });
    }
    let inv = T::one() / T::from_usize(outputs.len()).unwrap();
    let means = sums.unwrap().map(|v| g.scale(v, inv));
    let weights = [
        cfg.beta_cls,
        cfg.beta_mask,
        cfg.beta_mask,
        cfg.beta_mask_score,
        cfg.beta_box,
        cfg.beta_box_score,
    ];
    let mut total = g.scale(means[0], T::of(weights[0]));
    for k in 1..6 {
        let w = g.scale(means[k], T::of(weights[k]));
        total = g.add(total, w)?;
    }
    let v = |k: usize| g.scalar(means[k]).as_f64();
    let breakdown = LossBreakdown {
        cls: v(0),
        bce: v(1),
        dice: v(2),
        mask_score: v(3),
        box_l1: v(4),
        box_score: v(5),
        total: g.scalar(total).as_f64(),
    };
    for (name, value) in breakdown.terms() {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss term {name} = {value}")));
        }
    }
    Ok((total, breakdown))
}
