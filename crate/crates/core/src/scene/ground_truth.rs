use super::{Aabb, Scene, SuperpointPartition};
use crate::numerics::Tensor2;

/// How faithfully superpoint labels reproduce point labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Fidelity {
    /// Fraction of points whose superpoint label equals their own label.
    pub point_agreement: f64,
    /// Instances that lost every superpoint to majority voting.
    pub empty_instances: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `N_I × N_h` binary instance masks over high-scale superpoints.
    pub masks: Tensor2<f64>,
    /// Exact min/max box of each instance's raw points.
    pub boxes: Vec<Aabb>,
    pub classes: Vec<usize>,
    /// Instance label of each high-scale superpoint after voting.
    pub superpoint_label: Vec<Option<usize>>,
    pub fidelity: Fidelity,
}

impl GroundTruth {
    pub fn num_instances(&self) -> usize {
        self.classes.len()
    }

    pub fn mask_row(&self, i: usize) -> Vec<bool> {
        self.masks.row(i).iter().map(|&v| v > 0.5).collect()
    }
}

/// Projects point labels onto high-scale superpoints by strict majority.
///
/// Ties and background majorities leave the superpoint unlabelled. An
/// instance that wins no superpoint keeps an all-zero mask row and is listed in
/// [`Fidelity::empty_instances`].
pub fn gt_superpoint_masks(scene: &Scene, part: &SuperpointPartition) -> GroundTruth {
    let n_inst = scene.num_instances();
    let members = part.high_members();
    let mut label = vec![None; part.n_high];
    let mut tally: Vec<usize> = vec![0; n_inst + 1];
    for (s, pts) in members.iter().enumerate() {
        tally.iter_mut().for_each(|c| *c = 0);
        for &k in pts {
            let slot = scene.instance_of[k].map_or(n_inst, |i| i);
            tally[slot] += 1;
        }
        // strict majority among the labels present; background competes too
        let mut best = (0usize, None);
        let mut tied = false;
        for (slot, &c) in tally.iter().enumerate() {
            if c == 0 {
                continue;
            }
            if c > best.0 {
                best = (c, Some(slot));
                tied = false;
            } else if c == best.0 {
                tied = true;
            }
        }
        label[s] = match best.1 {
            Some(slot) if !tied && slot < n_inst => Some(slot),
            _ => None,
        };
    }

    let mut masks = Tensor2::zeros(n_inst, part.n_high);
    for (s, l) in label.iter().enumerate() {
        if let Some(i) = *l {
            masks[(i, s)] = 1.0;
        }
    }
    let agree = scene
        .instance_of
        .iter()
        .zip(&part.assign_high)
        .filter(|(&inst, &s)| label[s] == inst)
        .count();
    let empty_instances = (0..n_inst)
        .filter(|&i| masks.row(i).iter().all(|&v| v == 0.0))
        .collect();
    let boxes = (0..n_inst)
        .map(|i| {
            scene
                .instance_box(i)
                .expect("instances own at least one point")
        })
        .collect();

    GroundTruth {
        masks,
        boxes,
        classes: scene.class_of_instance.clone(),
        superpoint_label: label,
        fidelity: Fidelity {
            point_agreement: agree as f64 / scene.len() as f64,
            empty_instances,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, partition_superpoints, SceneConfig};

    fn tiny(labels: Vec<Option<usize>>, classes: usize) -> (Scene, SuperpointPartition) {
        let n = labels.len();
        let scene = Scene {
            points: (0..n)
                .map(|k| [k as f64, 0.0, 0.0, 0.5, 0.5, 0.5])
                .collect(),
            instance_of: labels,
            class_of_instance: vec![0; classes],
            seed: 0,
            config: SceneConfig::default(),
        };
        let part = SuperpointPartition {
            assign_low: vec![0; n],
            assign_high: vec![0; n],
            n_low: 1,
            n_high: 1,
        };
        (scene, part)
    }

    #[test]
    fn majority_wins_over_background() {
        let (s, p) = tiny(vec![Some(0), Some(0), None], 1);
        let gt = gt_superpoint_masks(&s, &p);
        assert_eq!(gt.superpoint_label, vec![Some(0)]);
        assert_eq!(gt.masks[(0, 0)], 1.0);
    }

    #[test]
    fn tie_assigns_nobody() {
        let (s, p) = tiny(vec![Some(0), Some(1)], 2);
        let gt = gt_superpoint_masks(&s, &p);
        assert_eq!(gt.superpoint_label, vec![None]);
        assert_eq!(gt.fidelity.empty_instances, vec![0, 1]);
        assert_eq!(gt.fidelity.point_agreement, 0.0);
    }

    #[test]
    fn boxes_are_tight() {
        let s = generate_scene(&SceneConfig::default(), 3).unwrap();
        let p = partition_superpoints(&s, 0.5, 0.25);
        let gt = gt_superpoint_masks(&s, &p);
        for (i, pts) in s.instance_points().iter().enumerate() {
            let b = gt.boxes[i];
            for &k in pts {
                for a in 0..3 {
                    assert!(b[a] <= s.points[k][a] && s.points[k][a] <= b[a + 3]);
                }
            }
            // every face touches a point, so shrinking it would exclude one
            for face in 0..6 {
                let a = face % 3;
                assert!(pts.iter().any(|&k| s.points[k][a] == b[face]));
            }
        }
    }

    #[test]
    fn default_cell_size_is_faithful() {
        let cfg = SceneConfig::default();
        for seed in 0..20 {
            let s = generate_scene(&cfg, seed).unwrap();
            let p = partition_superpoints(&s, 0.5, 0.25);
            let gt = gt_superpoint_masks(&s, &p);
            assert!(
                gt.fidelity.point_agreement >= 0.95,
                "seed {seed}: {:?}",
                gt.fidelity
            );
            assert!(gt.fidelity.empty_instances.is_empty());
        }
    }
}
