//! End-to-end runs: scene sets, training and evaluation from a [`RunConfig`].

use std::thread;

use crate::config::RunConfig;
use crate::error::Result;
use crate::eval::{evaluate, Detection, EvalReport, SceneInstances};
use crate::inference::{select_instances, InstancePrediction};
use crate::model::{Model, Prepared};
use crate::numerics::Graph;
use crate::scalar::Scalar;
use crate::scene::{generate_scene, Scene};
use crate::training::{Cost, StepRecord, Trainer};

/// Maps `f` over `items` on scoped worker threads, keeping input order.
pub fn fan_out<I, O, F>(items: &[I], f: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> Result<O> + Sync,
{
    let workers = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<O>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker thread panicked")?);
        }
        Ok(out)
    })
}

/// Scenes with seeds `base_seed .. base_seed + count`.
pub fn generate_scenes(cfg: &RunConfig, base_seed: u64, count: usize) -> Result<Vec<Scene>> {
    let seeds: Vec<u64> = (0..count as u64).map(|k| base_seed + k).collect();
    fan_out(&seeds, |&seed| generate_scene(&cfg.scene, seed))
}

pub fn prepare<T: Scalar>(cfg: &RunConfig, scenes: Vec<Scene>) -> Result<Vec<Prepared<T>>> {
    fan_out(&scenes, |s| {
        Prepared::new(s.clone(), &cfg.superpoints, &cfg.model.encoder)
    })
}

/// Fresh model from `cfg.train.seed`, trained for `cfg.train.steps` steps.
pub fn train<T: Scalar + Cost>(
    cfg: &RunConfig,
    scenes: &[Prepared<T>],
    on_step: impl FnMut(&Trainer<T>, &StepRecord) -> Result<()>,
) -> Result<Model<T>> {
    let model = Model::new(&cfg.model, cfg.scene.classes, cfg.train.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), cfg.loss.clone())?;
    trainer.run(scenes, on_step)?;
    Ok(trainer.model)
}

/// Last-block instances of one scene.
pub fn predict<T: Scalar>(
    model: &Model<T>,
    scene: &Prepared<T>,
    top_k: usize,
) -> Result<Vec<InstancePrediction>> {
    let mut g = Graph::new();
    let outs = model.forward(&mut g, scene)?;
    let last = outs
        .last()
        .expect("decoder has at least one block")
        .values(&g)?;
    Ok(select_instances(&last, top_k, &scene.partition))
}

pub fn evaluate_model<T: Scalar>(
    model: &Model<T>,
    scenes: &[Prepared<T>],
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let dets = fan_out(scenes, |s| {
        let preds = predict(model, s, cfg.eval.top_k)?;
        Ok(preds.iter().map(Detection::from).collect::<Vec<_>>())
    })?;
    let gts: Vec<SceneInstances> = scenes
        .iter()
        .map(|s| SceneInstances::from_scene(&s.scene))
        .collect();
    evaluate(&dets, &gts, &cfg.eval.thresholds)
}
