//! Synthetic scenes and everything upstream of the decoder: superpoint
//! partitions, ground-truth masks and boxes, the point encoder and pooling.

mod encoder;
mod generate;
mod ground_truth;
pub mod io;
mod partition;

use serde::{Deserialize, Serialize};

pub use encoder::{encode_points, point_inputs, pool, Encoder, EncoderConfig};
pub use generate::generate_scene;
pub use ground_truth::{gt_superpoint_masks, Fidelity, GroundTruth};
pub use partition::{partition_superpoints, SuperpointPartition};

use crate::error::{Error, Result};

/// Axis-aligned box `[xmin, ymin, zmin, xmax, ymax, zmax]`.
pub type Aabb = [f64; 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Total point budget, background included.
    pub points: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub classes: usize,
    pub min_points_per_instance: usize,
    /// Share of the budget spent on the floor and wall shell.
    pub background_fraction: f64,
    /// Room extent along x, y, z.
    pub room: [f64; 3],
    /// Relative weights of box, sphere and plane primitives.
    pub primitive_mix: [f64; 3],
    /// Minimum clearance between instances, walls and floor.
    pub gap: f64,
    pub color_noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            points: 4096,
            min_instances: 3,
            max_instances: 8,
            classes: 6,
            min_points_per_instance: 96,
            background_fraction: 0.3,
            room: [4.0, 4.0, 2.5],
            primitive_mix: [1.0, 1.0, 1.0],
            gap: 0.3,
            color_noise: 0.03,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("scene: {m}")));
        if self.points == 0 {
            return fail("point budget must be positive");
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return fail("instance range must satisfy 1 <= min <= max");
        }
        if self.classes == 0 {
            return fail("class count must be positive");
        }
        if !(0.0..1.0).contains(&self.background_fraction) {
            return fail("background_fraction must lie in [0, 1)");
        }
        if self.room.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
            return fail("room extents must be positive");
        }
        if self.primitive_mix.iter().any(|&w| w.is_nan() || w < 0.0)
            || self.primitive_mix.iter().sum::<f64>() <= 0.0
        {
            return fail("primitive_mix needs a positive weight");
        }
        if [self.gap, self.color_noise]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return fail("gap and color_noise must be non-negative");
        }
        let instance_budget = self.points - self.background_points();
        if self.min_points_per_instance.max(1) * self.min_instances > instance_budget {
            return fail("point budget cannot give every instance its minimum share");
        }
        Ok(())
    }

    pub(crate) fn background_points(&self) -> usize {
        (self.points as f64 * self.background_fraction).round() as usize
    }
}

/// A labelled point cloud. Points are `x, y, z, r, g, b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub points: Vec<[f64; 6]>,
    /// Instance id per point, `None` for background.
    pub instance_of: Vec<Option<usize>>,
    pub class_of_instance: Vec<usize>,
    pub seed: u64,
    pub config: SceneConfig,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_instances(&self) -> usize {
        self.class_of_instance.len()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::SceneFormat(m));
        if self.points.is_empty() {
            return fail("scene has no points".into());
        }
        if self.instance_of.len() != self.points.len() {
            return fail("label count differs from point count".into());
        }
        let mut owned = vec![0usize; self.num_instances()];
        for (k, (p, inst)) in self.points.iter().zip(&self.instance_of).enumerate() {
            if p[..3].iter().any(|v| !v.is_finite()) {
                return fail(format!("point {k} has non-finite coordinates"));
            }
            if p[3..].iter().any(|c| !(0.0..=1.0).contains(c)) {
                return fail(format!("point {k} has a color outside [0, 1]"));
            }
            if let Some(i) = *inst {
                match owned.get_mut(i) {
                    Some(n) => *n += 1,
                    None => return fail(format!("point {k} references instance {i}")),
                }
            }
        }
        if let Some(i) = owned.iter().position(|&n| n == 0) {
            return fail(format!("instance {i} owns no points"));
        }
        if let Some(&c) = self
            .class_of_instance
            .iter()
            .find(|&&c| c >= self.config.classes)
        {
            return fail(format!("class {c} outside [0, {})", self.config.classes));
        }
        Ok(())
    }

    /// Exact min/max box of an instance's points.
    pub fn instance_box(&self, instance: usize) -> Option<Aabb> {
        let mut b: Option<Aabb> = None;
        for (p, _) in self
            .points
            .iter()
            .zip(&self.instance_of)
            .filter(|(_, &i)| i == Some(instance))
        {
            let bb = b.get_or_insert([p[0], p[1], p[2], p[0], p[1], p[2]]);
            for a in 0..3 {
                bb[a] = bb[a].min(p[a]);
                bb[a + 3] = bb[a + 3].max(p[a]);
            }
        }
        b
    }

    /// Point indices per instance.
    pub fn instance_points(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_instances()];
        for (k, inst) in self.instance_of.iter().enumerate() {
            if let Some(i) = *inst {
                out[i].push(k);
            }
        }
        out
    }

    /// Frame mapping the scene's bounding cube onto the unit cube.
    pub fn frame(&self) -> SceneFrame {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        SceneFrame {
            origin: lo,
            scale: if extent > 0.0 { extent } else { 1.0 },
        }
    }
}

/// Uniform scaling into scene-normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneFrame {
    pub origin: [f64; 3],
    pub scale: f64,
}

impl SceneFrame {
    pub fn to_unit(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.scale,
            (p[1] - self.origin[1]) / self.scale,
            (p[2] - self.origin[2]) / self.scale,
        ]
    }

    pub fn box_to_unit(&self, b: &Aabb) -> Aabb {
        let lo = self.to_unit([b[0], b[1], b[2]]);
        let hi = self.to_unit([b[3], b[4], b[5]]);
        [lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]]
    }

    pub fn box_from_unit(&self, b: &Aabb) -> Aabb {
        let mut out = [0.0; 6];
        for k in 0..6 {
            out[k] = b[k] * self.scale + self.origin[k % 3];
        }
        out
    }
}
