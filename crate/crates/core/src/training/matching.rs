//! Proposal/ground-truth matching: IoUs, the pairwise cost and an exact
//! Hungarian solver.

use std::fmt::Debug;
use std::ops::{Add, Sub};

use num_rational::Ratio;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::numerics::graph::{bce_logit, sigmoid};
use crate::numerics::{dice_cost, Tensor2};
use crate::scalar::Scalar;

/// Superpoint IoU of two binary masks; 0 when the union is empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU of two `[min xyz, max xyz]` boxes. Inverted extents count as zero.
pub fn box_iou<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut inter = T::one();
    let (mut va, mut vb) = (T::one(), T::one());
    for k in 0..3 {
        let lo = a[k].max(b[k]);
        let hi = a[k + 3].min(b[k + 3]);
        inter *= (hi - lo).max(T::zero());
        va *= (a[k + 3] - a[k]).max(T::zero());
        vb *= (b[k + 3] - b[k]).max(T::zero());
    }
    let union = va + vb - inter;
    if union > T::zero() {
        inter / union
    } else {
        T::zero()
    }
}

/// Mean BCE of `sigmoid(logits)` against `gt` plus the smoothed dice cost.
pub fn mask_match_cost<T: Scalar>(pred_logits: &[T], gt: &[T]) -> T {
    let n = T::from_usize(pred_logits.len().max(1)).unwrap();
    let bce: T = pred_logits
        .iter()
        .zip(gt)
        .map(|(&x, &t)| bce_logit(x, t))
        .sum::<T>()
        / n;
    let probs: Vec<T> = pred_logits.iter().map(|&x| sigmoid(x)).collect();
    bce + dice_cost(&probs, gt)
}

/// `C[i][j] = -λ_cls p(i, class_j) + λ_mask · mask_match_cost(i, j)`, shape
/// `N_o × N_I`.
pub fn pairwise_cost<T: Scalar>(
    class_probs: &Tensor2<T>,
    mask_logits: &Tensor2<T>,
    gt_masks: &Tensor2<T>,
    gt_classes: &[usize],
    lambda_cls: f64,
    lambda_mask: f64,
) -> Tensor2<T> {
    let (lc, lm) = (T::of(lambda_cls), T::of(lambda_mask));
    Tensor2::from_fn(class_probs.rows(), gt_classes.len(), |i, j| {
        let p = class_probs[(i, gt_classes[j])];
        -lc * p + lm * mask_match_cost(mask_logits.row(i), gt_masks.row(j))
    })
}

/// Element type the solver works over. Exact types compare for equality,
/// floats within a relative tolerance.
pub trait Cost: Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Zero + Debug {
    fn same(a: Self, b: Self) -> bool;
}

impl Cost for f64 {
    fn same(a: Self, b: Self) -> bool {
        (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
    }
}

impl Cost for f32 {
    fn same(a: Self, b: Self) -> bool {
        (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1.0)
    }
}

impl Cost for i64 {
    fn same(a: Self, b: Self) -> bool {
        a == b
    }
}

impl Cost for Ratio<i64> {
    fn same(a: Self, b: Self) -> bool {
        a == b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult<C> {
    /// `(proposal, gt)` pairs in ground-truth order.
    pub assignment: Vec<(usize, usize)>,
    pub unmatched_proposals: Vec<usize>,
    pub total_cost: C,
}

impl<C> MatchResult<C> {
    /// Ground-truth index per proposal.
    pub fn gt_of_proposal(&self, proposals: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; proposals];
        for &(p, g) in &self.assignment {
            out[p] = Some(g);
        }
        out
    }
}

/// Minimum-cost assignment of every gt row `cost[gt][proposal]` to a distinct
/// proposal; returns the column per row. Rows ≤ columns.
fn solve<C: Cost>(cost: &[Vec<C>], cols: &[usize]) -> Vec<usize> {
    let n = cost.len();
    let m = cols.len();
    if n == 0 {
        return Vec::new();
    }
    // potentials formulation, 1-based with a virtual column 0
    let mut u = vec![C::zero(); n + 1];
    let mut v = vec![C::zero(); m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv: Vec<Option<C>> = vec![None; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta: Option<C> = None;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][cols[j - 1]] - u[i0] - v[j];
                if minv[j].is_none_or(|mv| cur < mv) {
                    minv[j] = Some(cur);
                    way[j] = j0;
                }
                let mv = minv[j].unwrap();
                if delta.is_none_or(|d| mv < d) {
                    delta = Some(mv);
                    j1 = j;
                }
            }
            let delta = delta.expect("a free column exists while rows <= columns");
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] = u[owner[j]] + delta;
                    v[j] = v[j] - delta;
                } else if let Some(mv) = minv[j].as_mut() {
                    *mv = *mv - delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = cols[j - 1];
        }
    }
    out
}

fn assignment_cost<C: Cost>(cost: &[Vec<C>], cols: &[usize]) -> C {
    cost.iter()
        .zip(cols)
        .fold(C::zero(), |acc, (row, &c)| acc + row[c])
}

/// Optimal one-to-one assignment of all ground truths to proposals.
///
/// `cost` is `N_o × N_I` (proposals by rows). Among optimal assignments the
/// lexicographically smallest `(gt, proposal)` sequence is returned.
pub fn hungarian<C: Cost>(cost: &[Vec<C>]) -> Result<MatchResult<C>> {
    let proposals = cost.len();
    let targets = cost.first().map_or(0, |r| r.len());
    if cost.iter().any(|r| r.len() != targets) {
        return Err(Error::Dimension {
            op: "hungarian",
            lhs: (proposals, targets),
            rhs: (proposals, cost.iter().map(|r| r.len()).max().unwrap_or(0)),
        });
    }
    if proposals < targets {
        return Err(Error::Capacity { proposals, targets });
    }
    let by_gt: Vec<Vec<C>> = (0..targets)
        .map(|j| cost.iter().map(|r| r[j]).collect())
        .collect();
    let all: Vec<usize> = (0..proposals).collect();
    let best = assignment_cost(&by_gt, &solve(&by_gt, &all));

    // fix gts in order to the lowest proposal that still admits an optimum
    let mut chosen: Vec<usize> = Vec::with_capacity(targets);
    let mut fixed = C::zero();
    for j in 0..targets {
        let free: Vec<usize> = all
            .iter()
            .copied()
            .filter(|p| !chosen.contains(p))
            .collect();
        let rest = &by_gt[j + 1..];
        let mut pick = None;
        for &p in &free {
            let others: Vec<usize> = free.iter().copied().filter(|&q| q != p).collect();
            let tail = solve(rest, &others);
            let total = fixed + by_gt[j][p] + assignment_cost(rest, &tail);
            if C::same(total, best) || total < best {
                pick = Some(p);
                break;
            }
        }
        let p = pick.unwrap_or_else(|| solve(&by_gt[j..], &free)[0]);
        fixed = fixed + by_gt[j][p];
        chosen.push(p);
    }
    let assignment: Vec<(usize, usize)> = chosen.iter().enumerate().map(|(g, &p)| (p, g)).collect();
    let unmatched_proposals = all.into_iter().filter(|p| !chosen.contains(p)).collect();
    Ok(MatchResult {
        assignment,
        unmatched_proposals,
        total_cost: fixed,
    })
}

/// Convenience wrapper over a dense cost tensor.
pub fn hungarian_tensor<T: Scalar + Cost>(cost: &Tensor2<T>) -> Result<MatchResult<T>> {
    let rows: Vec<Vec<T>> = (0..cost.rows()).map(|i| cost.row(i).to_vec()).collect();
    if cost.cols() == 0 {
        return Ok(MatchResult {
            assignment: Vec::new(),
            unmatched_proposals: (0..cost.rows()).collect(),
            total_cost: T::zero(),
        });
    }
    hungarian(&rows)
}
