//! Turning the last block's predictions into scored point-level instances.

use serde::{Deserialize, Serialize};

use crate::decoder::BlockPrediction;
use crate::numerics::graph::sigmoid;
use crate::scalar::Scalar;
use crate::scene::SuperpointPartition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePrediction {
    /// Proposal row the instance came from.
    pub proposal: usize,
    pub point_mask: Vec<bool>,
    pub superpoint_mask: Vec<bool>,
    pub class_id: usize,
    pub confidence: f64,
    pub factors: ScoreFactors,
}

/// The four factors whose product is the confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreFactors {
    pub class_prob: f64,
    pub box_score: f64,
    pub mask_score: f64,
    pub mask_mean: f64,
}

impl ScoreFactors {
    pub fn product(&self) -> f64 {
        self.class_prob * self.box_score * self.mask_score * self.mask_mean
    }
}

/// Mean of the probabilities above 0.5; 0 when there are none.
pub fn superpoint_mask_score(probs: &[f64]) -> f64 {
    let (sum, n) = probs
        .iter()
        .filter(|&&p| p > 0.5)
        .fold((0.0, 0usize), |(s, n), &p| (s + p, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Best foreground class of proposal `i` and its score factors.
pub fn score_factors<T: Scalar>(pred: &BlockPrediction<T>, i: usize) -> (usize, ScoreFactors) {
    let probs = pred.class_probs.row(i);
    let foreground = &probs[..probs.len() - 1];
    let mut class_id = 0;
    for (c, &p) in foreground.iter().enumerate() {
        if p > foreground[class_id] {
            class_id = c;
        }
    }
    let mask_probs: Vec<f64> = pred
        .mask_logits
        .row(i)
        .iter()
        .map(|&l| sigmoid(l).as_f64())
        .collect();
    let factors = ScoreFactors {
        class_prob: foreground[class_id].as_f64(),
        box_score: pred.box_score[i].as_f64().clamp(0.0, 1.0),
        mask_score: pred.mask_score[i].as_f64().clamp(0.0, 1.0),
        mask_mean: superpoint_mask_score(&mask_probs),
    };
    (class_id, factors)
}

/// `(class_id, score)` of proposal `i`.
pub fn confidence<T: Scalar>(pred: &BlockPrediction<T>, i: usize) -> (usize, f64) {
    let (c, f) = score_factors(pred, i);
    (c, f.product())
}

/// Top-`k` proposals by confidence with masks binarized at 0.5 and expanded
/// to points. No suppression is applied.
pub fn select_instances<T: Scalar>(
    pred: &BlockPrediction<T>,
    k: usize,
    part: &SuperpointPartition,
) -> Vec<InstancePrediction> {
    let mut all: Vec<InstancePrediction> = (0..pred.class_probs.rows())
        .map(|i| {
            let (class_id, factors) = score_factors(pred, i);
            let superpoint_mask: Vec<bool> = pred
                .mask_logits
                .row(i)
                .iter()
                .map(|&l| sigmoid(l).as_f64() > 0.5)
                .collect();
            InstancePrediction {
                proposal: i,
                point_mask: part.expand_high(&superpoint_mask),
                superpoint_mask,
                class_id,
                confidence: factors.product(),
                factors,
            }
        })
        .collect();
    all.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.proposal.cmp(&b.proposal))
    });
    all.truncate(k);
    all
}
