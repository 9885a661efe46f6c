//! Average precision over point-level instance masks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::InstancePrediction;
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Instances kept per scene.
    pub top_k: usize,
    /// IoU thresholds averaged into mAP.
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            top_k: 16,
            thresholds: standard_thresholds(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0
            || self.thresholds.is_empty()
            || self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(Error::Config(
                "eval: top_k must be positive and thresholds lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// 0.50, 0.55, ..., 0.95.
pub fn standard_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// Point-level ground-truth instances of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstances {
    pub masks: Vec<Vec<bool>>,
    pub classes: Vec<usize>,
}

impl SceneInstances {
    pub fn from_scene(scene: &Scene) -> Self {
        let masks = (0..scene.num_instances())
            .map(|i| scene.instance_of.iter().map(|&l| l == Some(i)).collect())
            .collect();
        Self {
            masks,
            classes: scene.class_of_instance.clone(),
        }
    }
}

/// A scored prediction reduced to what evaluation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub mask: Vec<bool>,
    pub class_id: usize,
    pub confidence: f64,
}

impl From<&InstancePrediction> for Detection {
    fn from(p: &InstancePrediction) -> Self {
        Self {
            mask: p.point_mask.clone(),
            class_id: p.class_id,
            confidence: p.confidence,
        }
    }
}

pub fn point_iou(a: &[bool], b: &[bool]) -> f64 {
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub class: usize,
    pub gt_instances: usize,
    /// AP at each configured threshold.
    pub ap: Vec<f64>,
    pub ap50: f64,
    pub ap25: f64,
    pub counts: Vec<Counts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "mAP50")]
    pub map50: f64,
    #[serde(rename = "mAP25")]
    pub map25: f64,
    pub thresholds: Vec<f64>,
    /// Classes with at least one ground-truth instance.
    pub per_class: Vec<ClassResult>,
}

/// AP of one class at one threshold, with its counts.
fn class_ap(
    scenes: &[(&[Detection], &SceneInstances)],
    class: usize,
    threshold: f64,
) -> (f64, Counts) {
    let mut dets: Vec<(f64, usize, usize)> = Vec::new();
    for (s, (d, _)) in scenes.iter().enumerate() {
        for (k, det) in d.iter().enumerate() {
            if det.class_id == class {
                dets.push((det.confidence, s, k));
            }
        }
    }
    dets.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let n_gt: usize = scenes
        .iter()
        .map(|(_, g)| g.classes.iter().filter(|&&c| c == class).count())
        .sum();
    let mut used: Vec<Vec<bool>> = scenes
        .iter()
        .map(|(_, g)| vec![false; g.classes.len()])
        .collect();

    let mut hits = Vec::with_capacity(dets.len());
    for &(_, s, k) in &dets {
        let (d, gt) = scenes[s];
        let mut best: Option<(f64, usize)> = None;
        for (j, m) in gt.masks.iter().enumerate() {
            if gt.classes[j] != class || used[s][j] {
                continue;
            }
            let iou = point_iou(&d[k].mask, m);
            if best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, j));
            }
        }
        let hit = match best {
            Some((iou, j)) if iou >= threshold => {
                used[s][j] = true;
                true
            }
            _ => false,
        };
        hits.push(hit);
    }
    let tp = hits.iter().filter(|&&h| h).count();
    let counts = Counts {
        tp,
        fp: hits.len() - tp,
        fn_: n_gt - tp,
    };
    (average_precision(&hits, n_gt), counts)
}

/// Area under the precision envelope for a ranked hit list.
pub fn average_precision(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += h as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev) * p;
        prev = *r;
    }
    ap
}

/// Class-mean AP per threshold, then the threshold mean.
pub fn evaluate(
    detections: &[Vec<Detection>],
    gts: &[SceneInstances],
    thresholds: &[f64],
) -> Result<EvalReport> {
    if detections.len() != gts.len() {
        return Err(Error::Config(format!(
            "eval: {} prediction sets for {} scenes",
            detections.len(),
            gts.len()
        )));
    }
    let scenes: Vec<(&[Detection], &SceneInstances)> = detections
        .iter()
        .map(|d| d.as_slice())
        .zip(gts.iter())
        .collect();
    let mut classes: Vec<usize> = gts.iter().flat_map(|g| g.classes.iter().copied()).collect();
    classes.sort_unstable();
    classes.dedup();

    let per_class: Vec<ClassResult> = classes
        .iter()
        .map(|&c| {
            let (ap, counts): (Vec<f64>, Vec<Counts>) =
                thresholds.iter().map(|&t| class_ap(&scenes, c, t)).unzip();
            ClassResult {
                class: c,
                gt_instances: gts
                    .iter()
                    .map(|g| g.classes.iter().filter(|&&k| k == c).count())
                    .sum(),
                ap,
                ap50: class_ap(&scenes, c, 0.5).0,
                ap25: class_ap(&scenes, c, 0.25).0,
                counts,
            }
        })
        .collect();
    let mean = |f: &dyn Fn(&ClassResult) -> f64| {
        if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / per_class.len() as f64
        }
    };
    let map = if thresholds.is_empty() {
        0.0
    } else {
        (0..thresholds.len())
            .map(|t| mean(&|r: &ClassResult| r.ap[t]))
            .sum::<f64>()
            / thresholds.len() as f64
    };
    Ok(EvalReport {
        map,
        map50: mean(&|r| r.ap50),
        map25: mean(&|r| r.ap25),
        thresholds: thresholds.to_vec(),
        per_class,
    })
}

impl EvalReport {
    /// Per-class table followed by the mean row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>8} {:>8} {:>8}",
            "class", "gt", "AP", "AP50", "AP25"
        );
        for r in &self.per_class {
            let ap = r.ap.iter().sum::<f64>() / r.ap.len().max(1) as f64;
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>8.4} {:>8.4} {:>8.4}",
                r.class, r.gt_instances, ap, r.ap50, r.ap25
            );
        }
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>8.4} {:>8.4} {:>8.4}",
            "mean", "", self.map, self.map50, self.map25
        );
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "mAP": self.map, "mAP50": self.map50, "mAP25": self.map25 })
    }
}
