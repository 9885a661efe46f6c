use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use twinattn::config::RunConfig;
use twinattn::experiment::{evaluate_model, generate_scenes, prepare};
use twinattn::numerics::Checkpoint;
use twinattn::report::ParamReport;
use twinattn::scene::{gt_superpoint_masks, io as scene_io, partition_superpoints, Scene};
use twinattn::{Model, Prepared, Trainer};

#[derive(Parser)]
#[command(
    name = "twinattn",
    version,
    about = "Twin-attention instance segmentation on synthetic point clouds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the command (data seed for gen, train seed otherwise).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write deterministic synthetic scenes and a manifest.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Train on a directory of scene files.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory of scene-*.txt files.
        #[arg(long)]
        data: PathBuf,
        /// Overrides the configured number of steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint on a directory of scene files.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of scene-*.txt files.
        #[arg(long)]
        data: PathBuf,
    },
    /// Print grouped parameter counts of a checkpoint, or of a fresh model.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn write_config(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn read_scenes(dir: &Path) -> anyhow::Result<Vec<Scene>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("scene-") && name.ends_with(".txt")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(twinattn::Error::Config(format!(
            "no scene-*.txt files in {}",
            dir.display()
        )));
    }
    files
        .iter()
        .map(|f| scene_io::read(f).with_context(|| f.display().to_string()))
        .collect()
}

fn gen(common: &Common, count: usize) -> anyhow::Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let base = common.seed.unwrap_or(0);
    write_config(&common.out, &cfg)?;
    let scenes = generate_scenes(&cfg, base, count)?;
    let mut manifest = Vec::with_capacity(count);
    for scene in &scenes {
        let file = format!("scene-{:06}.txt", scene.seed);
        scene_io::write(scene, &common.out.join(&file))?;
        let part =
            partition_superpoints(scene, cfg.superpoints.cell_low, cfg.superpoints.cell_high);
        let gt = gt_superpoint_masks(scene, &part);
        manifest.push(json!({
            "file": file,
            "seed": scene.seed,
            "points": scene.len(),
            "instances": scene.num_instances(),
            "superpoints_low": part.n_low,
            "superpoints_high": part.n_high,
            "fidelity": gt.fidelity.point_agreement,
            "empty_instances": gt.fidelity.empty_instances,
        }));
        println!(
            "{file}  instances {}  fidelity {:.4}",
            scene.num_instances(),
            gt.fidelity.point_agreement
        );
    }
    let text = serde_json::to_string_pretty(&json!({ "base_seed": base, "scenes": manifest }))?;
    fs::write(common.out.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn train(common: &Common, data: &Path, steps: Option<usize>) -> anyhow::Result<()> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = steps {
        cfg.train.steps = s;
    }
    cfg.validate()?;
    write_config(&common.out, &cfg)?;
    let scenes: Vec<Prepared> = prepare(&cfg, read_scenes(data)?)?;
    let config_text = cfg.to_toml();
    let model = Model::new(&cfg.model, cfg.scene.classes, cfg.train.seed)?;
    let mut trainer = Trainer::new(model, cfg.train.clone(), cfg.loss.clone())?;
    let mut log = fs::File::create(common.out.join("train_log.jsonl"))?;
    let every = cfg.train.checkpoint_every;
    trainer.run(&scenes, |t, rec| {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(log, "{line}")?;
        if rec.step % 100 == 0 || rec.step == t.train.steps {
            println!(
                "step {:>6}  loss {:.5}  lr {:.3e}",
                rec.step, rec.loss.total, rec.lr
            );
        }
        if every > 0 && rec.step % every == 0 && rec.step < t.train.steps {
            let path = common.out.join(format!("ckpt-{:06}.ckpt", rec.step));
            Checkpoint::from_store(&t.model.store, &config_text).save(&path)?;
        }
        Ok(())
    })?;
    let path = common.out.join("model.ckpt");
    Checkpoint::from_store(&trainer.model.store, &config_text).save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Model config comes from the checkpoint; evaluation settings from
/// `--config` when given.
fn load_model(path: &Path) -> anyhow::Result<(Model, RunConfig)> {
    let ckpt = Checkpoint::load(path).with_context(|| path.display().to_string())?;
    let cfg = RunConfig::from_toml(&ckpt.config_text)?;
    let mut model = Model::new(&cfg.model, cfg.scene.classes, cfg.train.seed)?;
    ckpt.restore(&mut model.store)?;
    Ok((model, cfg))
}

fn eval(common: &Common, checkpoint: &Path, data: &Path) -> anyhow::Result<()> {
    let (model, mut cfg) = load_model(checkpoint)?;
    if let Some(p) = &common.config {
        cfg.eval = RunConfig::load(p)?.eval;
    }
    write_config(&common.out, &cfg)?;
    let scenes: Vec<Prepared> = prepare(&cfg, read_scenes(data)?)?;
    let report = evaluate_model(&model, &scenes, &cfg)?;
    let text = report.to_text();
    print!("{text}");
    fs::write(common.out.join("report.txt"), &text)?;
    fs::write(
        common.out.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    fs::write(
        common.out.join("summary.json"),
        serde_json::to_string_pretty(&report.summary_json())? + "\n",
    )?;
    Ok(())
}

fn inspect(common: &Common, checkpoint: Option<&Path>) -> anyhow::Result<()> {
    let (model, cfg) = match checkpoint {
        Some(p) => load_model(p)?,
        None => {
            let cfg = load_config(common.config.as_deref())?;
            let seed = common.seed.unwrap_or(cfg.train.seed);
            (Model::new(&cfg.model, cfg.scene.classes, seed)?, cfg)
        }
    };
    write_config(&common.out, &cfg)?;
    let text = ParamReport::from_store(&model.store).to_text();
    print!("{text}");
    fs::write(common.out.join("params.txt"), text)?;
    Ok(())
}

fn category(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<twinattn::Error>() {
            return e.category();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    "error"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen { common, count } => gen(common, *count),
        Command::Train {
            common,
            data,
            steps,
        } => train(common, data, *steps),
        Command::Eval {
            common,
            checkpoint,
            data,
        } => eval(common, checkpoint, data),
        Command::Inspect { common, checkpoint } => inspect(common, checkpoint.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e:#}", category(&e));
            ExitCode::from(match category(&e) {
                "config" => 2,
                "io" => 3,
                _ => 1,
            })
        }
    }
}
