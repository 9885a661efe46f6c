//! The full network and the per-scene inputs it consumes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{BlockOutput, Decoder, DecoderConfig, ScaleMode};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor2};
use crate::regularizer::Regularizer;
use crate::scalar::Scalar;
use crate::scene::{
    gt_superpoint_masks, partition_superpoints, point_inputs, pool, Encoder, EncoderConfig,
    GroundTruth, Scene, SceneFrame, SuperpointPartition,
};
use crate::training::Target;

/// Named random substreams derived from one root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Train = 3,
}

pub fn substream(root: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperpointConfig {
    /// Coarse grid cell (low scale).
    pub cell_low: f64,
    /// Fine grid cell (high scale).
    pub cell_high: f64,
}

impl Default for SuperpointConfig {
    fn default() -> Self {
        Self {
            cell_low: 0.5,
            cell_high: 0.25,
        }
    }
}

impl SuperpointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_low > self.cell_high && self.cell_high > 0.0) {
            return Err(Error::Config(
                "superpoints: need cell_low > cell_high > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub scale_mode: ScaleMode,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

/// A scene with its partition, ground truth and fixed encoder inputs.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub scene: Scene,
    pub partition: SuperpointPartition,
    pub ground_truth: GroundTruth,
    pub frame: SceneFrame,
    pub inputs: Tensor2<T>,
    pub target: Target<T>,
}

impl<T: Scalar> Prepared<T> {
    pub fn new(scene: Scene, sp: &SuperpointConfig, encoder: &EncoderConfig) -> Result<Self> {
        sp.validate()?;
        scene.validate()?;
        let partition = partition_superpoints(&scene, sp.cell_low, sp.cell_high);
        let ground_truth = gt_superpoint_masks(&scene, &partition);
        let frame = scene.frame();
        let boxes: Vec<f64> = ground_truth
            .boxes
            .iter()
            .flat_map(|b| frame.box_to_unit(b))
            .collect();
        let target = Target {
            masks: ground_truth.masks.cast(),
            boxes: Tensor2::<f64>::from_vec(ground_truth.num_instances(), 6, boxes)?.cast(),
            classes: ground_truth.classes.clone(),
        };
        let inputs = point_inputs(&scene, encoder.frequencies);
        Ok(Self {
            scene,
            partition,
            ground_truth,
            frame,
            inputs,
            target,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub num_classes: usize,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub regularizer: Regularizer,
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters drawn from the `init` substream of `seed`.
    pub fn new(cfg: &ModelConfig, num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("model: need at least one class".into()));
        }
        let mut rng = substream(seed, Stream::Init);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &cfg.encoder, &mut rng);
        let feat = cfg.encoder.out_dim;
        let decoder = Decoder::new(&mut store, &cfg.decoder, feat, num_classes, &mut rng)?;
        let regularizer = Regularizer::new(&mut store, feat, cfg.decoder.semantic_dim, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            num_classes,
            store,
            encoder,
            decoder,
            regularizer,
        })
    }

    /// Encoder, two-scale pooling and every decoder block.
    pub fn forward(&self, g: &mut Graph<T>, scene: &Prepared<T>) -> Result<Vec<BlockOutput>> {
        self.forward_with(g, &self.store, scene)
    }

    /// [`Model::forward`] reading parameter values from `store`, which must
    /// have this model's layout.
    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        scene: &Prepared<T>,
    ) -> Result<Vec<BlockOutput>> {
        let x = g.constant(scene.inputs.clone());
        let feats = self.encoder.forward(g, store, x)?;
        let part = &scene.partition;
        let s_low = pool(g, feats, &part.assign_low, part.n_low)?;
        let s_high = pool(g, feats, &part.assign_high, part.n_high)?;
        self.decoder.forward(
            g,
            store,
            &self.regularizer,
            s_low,
            s_high,
            self.cfg.scale_mode,
            None,
        )
    }
}
