//! Matching, losses and the optimisation loop.

mod loss;
pub mod matching;
mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use loss::{
    block_terms, match_block, scene_loss, scene_loss_with, supervision, BlockTerms, LossBreakdown,
    LossConfig, SceneLoss, Supervision, Target,
};
pub use matching::{
    box_iou, hungarian, mask_iou, mask_match_cost, pairwise_cost, Cost, MatchResult,
};
pub use optim::{poly_lr, AdamW};

use crate::error::{Error, Result};
use crate::model::{substream, Model, Prepared, Stream};
use crate::numerics::Graph;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub steps: usize,
    /// Scenes per optimiser step.
    pub batch: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables periodic saves.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.05,
            poly_power: 0.9,
            steps: 2000,
            batch: 1,
            seed: 0,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0
            || [self.lr, self.weight_decay]
                .iter()
                .any(|v| v.is_nan() || *v < 0.0)
        {
            return Err(Error::Config(
                "train: batch must be positive, lr and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub lr: f64,
    pub wall_ms: f64,
}

/// Model, optimiser state and the deterministic scene schedule.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub optimizer: AdamW<T>,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub step: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl<T: Scalar + Cost> Trainer<T> {
    pub fn new(model: Model<T>, train: TrainConfig, loss: LossConfig) -> Result<Self> {
        train.validate()?;
        let optimizer = AdamW::new(&model.store, train.weight_decay);
        let rng = substream(train.seed, Stream::Train);
        Ok(Self {
            model,
            optimizer,
            train,
            loss,
            step: 0,
            order: Vec::new(),
            cursor: 0,
            rng,
        })
    }

    /// Scene indices for the next step: a fresh shuffle per pass over the data.
    pub fn next_batch(&mut self, scenes: usize) -> Vec<usize> {
        (0..self.train.batch)
            .map(|_| {
                if self.cursor >= self.order.len() {
                    self.order = (0..scenes).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    pub fn current_lr(&self) -> f64 {
        poly_lr(
            self.train.lr,
            self.step,
            self.train.steps,
            self.train.poly_power,
        )
    }

    /// Forward, per-block matching, loss and backward on each scene, then one
    /// optimiser update with the batch-mean gradient.
    pub fn train_step(&mut self, batch: &[&Prepared<T>]) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(Error::Config("train: empty batch".into()));
        }
        let started = Instant::now();
        self.model.store.zero_grads();
        let inv = T::one() / T::from_usize(batch.len()).unwrap();
        let mut sum = LossBreakdown::default();
        for scene in batch {
            let mut g = Graph::new();
            let outs = self.model.forward(&mut g, scene)?;
            let l = scene_loss(
                &mut g,
                &outs,
                &scene.target,
                self.model.num_classes,
                &self.loss,
            )?;
            let scaled = g.scale(l.total, inv);
            let grads = g.backward(scaled)?;
            grads.accumulate_into(&mut self.model.store)?;
            let b = l.breakdown;
            sum.cls += b.cls;
            sum.bce += b.bce;
            sum.dice += b.dice;
            sum.mask_score += b.mask_score;
            sum.box_l1 += b.box_l1;
            sum.box_score += b.box_score;
            sum.total += b.total;
        }
        let n = batch.len() as f64;
        let mean = LossBreakdown {
            cls: sum.cls / n,
            bce: sum.bce / n,
            dice: sum.dice / n,
            mask_score: sum.mask_score / n,
            box_l1: sum.box_l1 / n,
            box_score: sum.box_score / n,
            total: sum.total / n,
        };
        let lr = self.current_lr();
        self.optimizer.step(&mut self.model.store, lr);
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            loss: mean,
            lr,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs the configured number of steps, calling `on_step` after each.
    pub fn run(
        &mut self,
        scenes: &[Prepared<T>],
        mut on_step: impl FnMut(&Self, &StepRecord) -> Result<()>,
    ) -> Result<()> {
        if scenes.is_empty() {
            return Err(Error::Config("train: no scenes".into()));
        }
        while self.step < self.train.steps {
            let idx = self.next_batch(scenes.len());
            let batch: Vec<&Prepared<T>> = idx.iter().map(|&i| &scenes[i]).collect();
            let rec = self.train_step(&batch)?;
            on_step(self, &rec)?;
        }
        Ok(())
    }
}
