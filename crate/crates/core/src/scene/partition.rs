use std::collections::HashMap;

use super::Scene;

/// Two-scale point-to-superpoint assignment. The high scale is the finer one
/// and carries the instance masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpointPartition {
    pub assign_low: Vec<usize>,
    pub assign_high: Vec<usize>,
    pub n_low: usize,
    pub n_high: usize,
}

impl SuperpointPartition {
    /// Member point indices of every high-scale superpoint.
    pub fn high_members(&self) -> Vec<Vec<usize>> {
        members(&self.assign_high, self.n_high)
    }

    pub fn low_members(&self) -> Vec<Vec<usize>> {
        members(&self.assign_low, self.n_low)
    }

    /// Low-scale superpoint containing each high-scale superpoint.
    pub fn high_to_low(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.n_high];
        for (&h, &l) in self.assign_high.iter().zip(&self.assign_low) {
            out[h] = l;
        }
        out
    }

    /// Expands a per-superpoint flag to points.
    pub fn expand_high(&self, sp_mask: &[bool]) -> Vec<bool> {
        self.assign_high.iter().map(|&s| sp_mask[s]).collect()
    }
}

fn members(assign: &[usize], n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n];
    for (k, &s) in assign.iter().enumerate() {
        out[s].push(k);
    }
    out
}

/// Contiguous ids in order of first appearance.
fn label_cells(keys: impl Iterator<Item = [i64; 3]>) -> (Vec<usize>, usize) {
    let mut ids: HashMap<[i64; 3], usize> = HashMap::new();
    let assign = keys
        .map(|k| {
            let next = ids.len();
            *ids.entry(k).or_insert(next)
        })
        .collect();
    (assign, ids.len())
}

/// Grid clustering at two cell sizes, `cell_low > cell_high > 0`.
///
/// A high cell is assigned to the low cell containing its minimum corner, so
/// every high superpoint lies inside exactly one low superpoint even when the
/// cell sizes are not integer multiples of each other.
pub fn partition_superpoints(scene: &Scene, cell_low: f64, cell_high: f64) -> SuperpointPartition {
    assert!(
        cell_low > cell_high && cell_high > 0.0,
        "cell sizes must satisfy cell_low > cell_high > 0"
    );
    let high_keys: Vec<[i64; 3]> = scene
        .points
        .iter()
        .map(|p| [0, 1, 2].map(|a| (p[a] / cell_high).floor() as i64))
        .collect();
    let low_keys = high_keys
        .iter()
        .map(|k| k.map(|c| ((c as f64 * cell_high) / cell_low).floor() as i64));
    let (assign_high, n_high) = label_cells(high_keys.iter().copied());
    let (assign_low, n_low) = label_cells(low_keys);
    SuperpointPartition {
        assign_low,
        assign_high,
        n_low,
        n_high,
    }
}
