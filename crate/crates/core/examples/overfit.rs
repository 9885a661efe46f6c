//! Trains on a small synthetic set and evaluates on the same scenes.
//!
//! usage: overfit [steps] [scenes] [train_seed] [twin|low_only|high_only] [data_seed]

use std::time::Instant;

use twinattn::config::RunConfig;
use twinattn::decoder::ScaleMode;
use twinattn::experiment::{evaluate_model, generate_scenes, prepare, train};
use twinattn::Prepared;

fn main() -> twinattn::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize| args.get(i).map(String::as_str);
    let mut cfg = RunConfig::default();
    cfg.scene.max_instances = 6;
    cfg.train.steps = arg(1).map_or(2000, |s| s.parse().expect("steps"));
    let count: usize = arg(2).map_or(4, |s| s.parse().expect("scene count"));
    cfg.train.seed = arg(3).map_or(0, |s| s.parse().expect("train seed"));
    cfg.model.scale_mode = match arg(4).unwrap_or("twin") {
        "twin" => ScaleMode::Twin,
        "low_only" => ScaleMode::LowOnly,
        "high_only" => ScaleMode::HighOnly,
        other => panic!("unknown scale mode {other}"),
    };
    let data_seed: u64 = arg(5).map_or(0, |s| s.parse().expect("data seed"));

    let scenes: Vec<Prepared> = prepare(&cfg, generate_scenes(&cfg, data_seed, count)?)?;
    let every = (cfg.train.steps / 4).max(1);
    let start = Instant::now();
    let model = train(&cfg, &scenes, |t, r| {
        if r.step % 100 == 0 {
            println!(
                "step {:>5}  loss {:.4}  cls {:.3}  bce {:.3}  dice {:.3}  box {:.3}",
                r.step, r.loss.total, r.loss.cls, r.loss.bce, r.loss.dice, r.loss.box_l1
            );
        }
        if r.step % every == 0 {
            let rep = evaluate_model(&t.model, &scenes, &cfg)?;
            println!(
                "  eval at {}: mAP {:.3}  mAP50 {:.3}  mAP25 {:.3}",
                r.step, rep.map, rep.map50, rep.map25
            );
        }
        Ok(())
    })?;
    let rep = evaluate_model(&model, &scenes, &cfg)?;
    println!(
        "final mAP {:.3}  mAP50 {:.3}  mAP25 {:.3}  in {:.1}s",
        rep.map,
        rep.map50,
        rep.map25,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
