//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twinattn::config::RunConfig;
use twinattn::decoder::attention::{
    mask_attention_bias, twin_cross_attention, twin_self_attention,
};
use twinattn::decoder::{BlockOutput, DecoderConfig, ScaleMode};
use twinattn::eval::{evaluate, standard_thresholds, Detection, SceneInstances};
use twinattn::experiment::{evaluate_model, generate_scenes, prepare, train};
use twinattn::model::{ModelConfig, SuperpointConfig};
use twinattn::numerics::{grad_check, Checkpoint, GradCheck, Graph, ParamStore, Tensor2, Var};
use twinattn::regularizer::{relative_positions, Regularizer, SceneWise};
use twinattn::scene::{generate_scene, EncoderConfig, SceneConfig};
use twinattn::training::{
    hungarian, match_block, scene_loss, scene_loss_with, supervision, Cost, LossConfig,
    Supervision, Target,
};
use twinattn::{Model, Prepared};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2<f64> {
    Tensor2::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

// ---------------------------------------------------------------- 1

fn tiny_run_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scene = SceneConfig {
        points: 160,
        min_instances: 2,
        max_instances: 3,
        classes: 3,
        min_points_per_instance: 20,
        room: [2.0, 2.0, 1.5],
        gap: 0.15,
        ..SceneConfig::default()
    };
    cfg.superpoints = SuperpointConfig {
        cell_low: 1.0,
        cell_high: 0.5,
    };
    cfg.model = ModelConfig {
        scale_mode: ScaleMode::Twin,
        encoder: EncoderConfig {
            hidden: 8,
            out_dim: 8,
            frequencies: 1,
        },
        decoder: DecoderConfig {
            blocks: 1,
            heads: 2,
            semantic_dim: 4,
            queries: 5,
            ffn_hidden: 8,
            ..DecoderConfig::default()
        },
    };
    cfg
}

/// Per-op checks: each op on random inputs, projected to a scalar.
fn op_checks(seed: u64) -> Result<f64, String> {
    type Build = fn(&mut Graph<f64>, &[Var]) -> twinattn::Result<Var>;
    let targets = Tensor2::from_rows(&[&[1.0, 0.0, 1.0], &[0.0, 0.0, 1.0]]);
    let bias = Tensor2::from_rows(&[
        &[0.0, f64::NEG_INFINITY, 0.0],
        &[f64::NEG_INFINITY, 0.0, 0.0],
    ]);
    let ops: Vec<(&str, Vec<(usize, usize)>, Build)> = vec![
        ("matmul", vec![(2, 3), (3, 3)], |g, v| g.matmul(v[0], v[1])),
        ("matmul_t", vec![(2, 3), (4, 3)], |g, v| {
            g.matmul_t(v[0], v[1])
        }),
        ("add", vec![(2, 3), (2, 3)], |g, v| {
            let y = g.add(v[0], v[1])?;
            Ok(g.square(y))
        }),
        ("sub", vec![(2, 3), (2, 3)], |g, v| {
            let y = g.sub(v[0], v[1])?;
            Ok(g.square(y))
        }),
        ("mul", vec![(2, 3), (2, 3)], |g, v| g.mul(v[0], v[1])),
        ("scale", vec![(2, 3)], |g, v| {
            let y = g.scale(v[0], 1.3);
            Ok(g.square(y))
        }),
        ("gelu", vec![(2, 3)], |g, v| Ok(g.gelu(v[0]))),
        ("abs", vec![(2, 3)], |g, v| Ok(g.abs(v[0]))),
        ("add_row", vec![(2, 3), (1, 3)], |g, v| {
            let y = g.add_row(v[0], v[1])?;
            Ok(g.square(y))
        }),
        ("add_col", vec![(2, 3), (2, 1)], |g, v| {
            let y = g.add_col(v[0], v[1])?;
            Ok(g.square(y))
        }),
        ("softmax", vec![(2, 3)], |g, v| g.softmax_rows(v[0], None)),
        ("layer_norm", vec![(2, 4), (1, 4), (1, 4)], |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5)
        }),
        ("slice_cols", vec![(2, 4)], |g, v| {
            let y = g.slice_cols(v[0], 1, 3)?;
            Ok(g.square(y))
        }),
        ("concat_cols", vec![(2, 2), (2, 1)], |g, v| {
            let y = g.concat_cols(&[v[0], v[1]])?;
            Ok(g.square(y))
        }),
        ("select_rows", vec![(3, 2)], |g, v| {
            let y = g.select_rows(v[0], &[2, 0, 2])?;
            Ok(g.square(y))
        }),
        ("segment_mean", vec![(4, 2)], |g, v| {
            let y = g.segment_mean(v[0], &[1, 0, 1, 1], 2)?;
            Ok(g.square(y))
        }),
        ("row_sum", vec![(3, 2)], |g, v| {
            let y = g.row_sum(v[0]);
            Ok(g.square(y))
        }),
        ("mean", vec![(3, 2)], |g, v| {
            let y = g.square(v[0]);
            Ok(g.mean(y))
        }),
        ("cross_entropy", vec![(3, 4)], |g, v| {
            g.cross_entropy(v[0], &[3, 0, 1])
        }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut run =
        |name: &str,
         shapes: &[(usize, usize)],
         build: &dyn Fn(&mut Graph<f64>, &[Var]) -> twinattn::Result<Var>| {
            let mut store = ParamStore::new();
            let ids: Vec<_> = shapes
                .iter()
                .enumerate()
                .map(|(k, &(r, c))| {
                    let t = Tensor2::from_fn(r, c, |_, _| {
                        let m: f64 = rng.gen_range(0.1..1.0);
                        if rng.gen_bool(0.5) {
                            m
                        } else {
                            -m
                        }
                    });
                    store.add(&format!("{name}{k}"), t)
                })
                .collect();
            let (rows, cols) = {
                let mut g = Graph::new();
                let vars: Vec<Var> = ids.iter().map(|&id| g.param(&store, id)).collect();
                let y = build(&mut g, &vars).map_err(err)?;
                g.value(y).shape()
            };
            let w = uniform(&mut rng, rows, cols);
            let report = grad_check(
                &mut store,
                |g, st| {
                    let vars: Vec<Var> = ids.iter().map(|&id| g.param(st, id)).collect();
                    let y = build(g, &vars)?;
                    let wv = g.constant(w.clone());
                    let p = g.mul(y, wv)?;
                    Ok(g.sum(p))
                },
                &GradCheck::new(1e-6),
            )
            .map_err(err)?;
            ensure(report.passed, || {
                format!("op {name} seed {seed}: {report:?}")
            })?;
            worst = worst.max(report.max_rel_error);
            Ok::<(), String>(())
        };
    for (name, shapes, build) in &ops {
        run(name, shapes, build)?;
    }
    run("masked_softmax", &[(2, 3)], &|g, v| {
        g.softmax_rows(v[0], Some(&bias))
    })?;
    run("bce", &[(2, 3)], &|g, v| g.bce_with_logits(v[0], &targets))?;
    run("dice", &[(2, 3)], &|g, v| g.dice(v[0], &targets))?;
    Ok(worst)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let cfg = tiny_run_config();
    // every matched pair feeds both score heads
    let loss_cfg = LossConfig {
        eta_mask_score: -1.0,
        eta_box_score: -1.0,
        ..LossConfig::default()
    };
    let mut worst_e2e: f64 = 0.0;
    let mut worst_at = None;
    let mut entries = 0;
    for seed in 0..10u64 {
        let scene = generate_scene(&cfg.scene, 500 + seed).map_err(err)?;
        let prep: Prepared =
            Prepared::new(scene, &cfg.superpoints, &cfg.model.encoder).map_err(err)?;
        let model = Model::new(&cfg.model, cfg.scene.classes, seed).map_err(err)?;
        let sups: Vec<Supervision<f64>> = {
            let mut g = Graph::new();
            let outs = model.forward(&mut g, &prep).map_err(err)?;
            outs.iter()
                .map(|o| {
                    let m = match_block(&g, o, &prep.target, &loss_cfg)?;
                    Ok(supervision(&g, o, &prep.target, m, &loss_cfg))
                })
                .collect::<twinattn::Result<_>>()
                .map_err(err)?
        };
        let mut store = model.store.clone();
        let report = grad_check(
            &mut store,
            |g, st| {
                let outs = model.forward_with(g, st, &prep)?;
                Ok(scene_loss_with(g, &outs, &prep.target, &sups, model.num_classes, &loss_cfg)?.0)
            },
            // key biases shift whole score rows, which softmax ignores, so
            // their true gradient is 0; the floor judges such entries on
            // absolute error 1e-9
            &GradCheck::new(1e-4).with_floor(1e-5),
        )
        .map_err(err)?;
        ensure(report.passed, || {
            format!("end-to-end seed {seed}: {report:?}")
        })?;
        if report.max_rel_error > worst_e2e {
            worst_e2e = report.max_rel_error;
            worst_at = report.worst.clone();
        }
        entries += report.entries_checked;
    }
    let mut worst_op: f64 = 0.0;
    for seed in 0..10 {
        worst_op = worst_op.max(op_checks(seed)?);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "end-to-end max rel err {worst_e2e:.2e} at {worst_at:?} over {entries} entries (10 seeds), per-op max {worst_op:.2e}, {secs:.1}s"
    ))
}

// ---------------------------------------------------------------- 2

/// Minimum over all injective gt -> proposal maps.
fn brute_force<C: Cost>(cost: &[Vec<C>]) -> C {
    fn go<C: Cost>(cost: &[Vec<C>], j: usize, used: &mut [bool], acc: C, best: &mut Option<C>) {
        let n_gt = cost[0].len();
        if j == n_gt {
            if best.is_none_or(|b| acc < b) {
                *best = Some(acc);
            }
            return;
        }
        for p in 0..cost.len() {
            if !used[p] {
                used[p] = true;
                go(cost, j + 1, used, acc + cost[p][j], best);
                used[p] = false;
            }
        }
    }
    if cost.is_empty() || cost[0].is_empty() {
        return C::zero();
    }
    let mut best = None;
    go(cost, 0, &mut vec![false; cost.len()], C::zero(), &mut best);
    best.unwrap()
}

fn check_assignment<C: Cost>(cost: &[Vec<C>], rounds: &mut usize) -> Result<(), String> {
    let r = hungarian(cost).map_err(err)?;
    let n_gt = cost.first().map_or(0, |row| row.len());
    ensure(r.assignment.len() == n_gt, || {
        "not every gt assigned".into()
    })?;
    let mut seen = vec![false; cost.len()];
    let mut sum = C::zero();
    for &(p, j) in &r.assignment {
        ensure(!seen[p], || format!("proposal {p} used twice"))?;
        seen[p] = true;
        sum = sum + cost[p][j];
    }
    let expect = brute_force(cost);
    ensure(sum == r.total_cost, || {
        format!("reported {:?} vs assignment {:?}", r.total_cost, sum)
    })?;
    ensure(sum == expect, || {
        format!("cost {sum:?} vs brute force {expect:?} on {cost:?}")
    })?;
    *rounds += 1;
    Ok(())
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rounds = 0;
    for k in 0..200 {
        let n_gt = rng.gen_range(0..=7);
        let n_o = rng.gen_range(n_gt.max(1)..=9);
        // small ranges force many ties
        let hi = if k % 3 == 0 { 4 } else { 1000 };
        if k % 2 == 0 {
            let cost: Vec<Vec<i64>> = (0..n_o)
                .map(|_| (0..n_gt).map(|_| rng.gen_range(0..hi)).collect())
                .collect();
            check_assignment(&cost, &mut rounds)?;
        } else {
            let cost: Vec<Vec<Ratio<i64>>> = (0..n_o)
                .map(|_| {
                    (0..n_gt)
                        .map(|_| Ratio::new(rng.gen_range(-hi..hi), rng.gen_range(1..13)))
                        .collect()
                })
                .collect();
            check_assignment(&cost, &mut rounds)?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!(
        "{rounds} matrices (i64 and rational) equal brute force exactly, {secs:.2}s"
    ))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let model = Model::new(&ModelConfig::default(), 6, 3).map_err(err)?;
    let layer = &model.decoder.blocks[0].cross;
    let n_o = model.decoder.cfg.queries;
    let d_o = model.decoder.cfg.query_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut masked, mut fallback_rows) = (0usize, 0usize);
    for trial in 0..50 {
        let n_h = rng.gen_range(1..40);
        let mut logits = Tensor2::from_fn(n_o, n_h, |_, _| rng.gen_range(-4.0..4.0));
        for i in 0..n_o {
            if rng.gen_bool(0.2) {
                logits
                    .row_mut(i)
                    .iter_mut()
                    .for_each(|v| *v = -rng.gen_range(0.1..30.0));
            }
        }
        let bias = mask_attention_bias(&logits, 0.5);
        let mut g = Graph::new();
        let q = g.constant(uniform(&mut rng, n_o, d_o));
        let src = g.constant(uniform(&mut rng, n_h, d_o));
        let with = layer
            .attend(&mut g, &model.store, q, src, Some(&bias))
            .map_err(err)?;
        let without = layer
            .attend(&mut g, &model.store, q, src, None)
            .map_err(err)?;
        ensure(g.value(with.output).all_finite(), || {
            format!("trial {trial}: non-finite output")
        })?;
        for i in 0..n_o {
            let all_masked = logits
                .row(i)
                .iter()
                .all(|&l: &f64| 1.0 / (1.0 + (-l).exp()) < 0.5);
            if all_masked {
                fallback_rows += 1;
                ensure(bias.row(i).iter().all(|&b| b == 0.0), || {
                    format!("trial {trial} row {i}: no fallback")
                })?;
            }
            for (h, (&a, &b)) in with.weights.iter().zip(&without.weights).enumerate() {
                let (wa, wb) = (g.value(a), g.value(b));
                ensure(wa.row(i).iter().all(|v| v.is_finite()), || {
                    format!("trial {trial}: NaN weight")
                })?;
                for j in 0..n_h {
                    if bias[(i, j)] == f64::NEG_INFINITY {
                        masked += 1;
                        ensure(wa[(i, j)] == 0.0, || {
                            format!("trial {trial} head {h} ({i},{j}): weight {:e}", wa[(i, j)])
                        })?;
                    }
                }
                if all_masked {
                    ensure(wa.row(i) == wb.row(i), || {
                        format!("trial {trial} row {i}: fallback differs from unmasked")
                    })?;
                }
            }
        }
    }
    ensure(fallback_rows > 0 && masked > 0, || {
        "fixture exercised nothing".into()
    })?;
    Ok(format!(
        "{masked} masked weights exactly 0, {fallback_rows} all-masked rows fell back to unmasked attention"
    ))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let model = Model::new(&ModelConfig::default(), 6, 4).map_err(err)?;
    let dec = &model.decoder;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (l, block) in dec.blocks.iter().enumerate() {
        let mut g = Graph::new();
        let s = uniform(&mut rng, 37, model.cfg.encoder.out_dim);
        let s_high = g.constant(s.clone());
        let s_low = g.constant(s);
        let p_high = dec.project(&mut g, &model.store, s_high).map_err(err)?;
        let p_low = dec.project(&mut g, &model.store, s_low).map_err(err)?;
        let x = g.param(&model.store, dec.query);
        let (yh, yl) =
            twin_cross_attention(&mut g, &model.store, &block.cross, x, p_high, p_low, None)
                .map_err(err)?;
        ensure(g.value(yh.output) == g.value(yl.output), || {
            format!("block {l}: cross branches differ")
        })?;
        let (zh, zl) =
            twin_self_attention(&mut g, &model.store, &block.self_attn, yh.output, yl.output)
                .map_err(err)?;
        ensure(g.value(zh.output) == g.value(zl.output), || {
            format!("block {l}: self branches differ")
        })?;
        let fresh = uniform(&mut rng, dec.cfg.queries, dec.cfg.query_dim());
        let (a, b) = (g.constant(fresh.clone()), g.constant(fresh));
        let (zh, zl) =
            twin_self_attention(&mut g, &model.store, &block.self_attn, a, b).map_err(err)?;
        ensure(g.value(zh.output) == g.value(zl.output), || {
            format!("block {l}: self stage differs")
        })?;
    }

    let ckpt = Checkpoint::from_store(&model.store, "");
    let names: Vec<&str> = ckpt.tensors.iter().map(|(n, _)| n.as_str()).collect();
    let mut unique = names.clone();
    unique.sort_unstable();
    unique.dedup();
    ensure(unique.len() == names.len(), || {
        "duplicate tensor names".into()
    })?;
    let branchy: Vec<&&str> = names
        .iter()
        .filter(|n| {
            n.split('.')
                .any(|p| p.contains("low") || p.contains("high"))
        })
        .collect();
    ensure(branchy.is_empty(), || {
        format!("branch-specific tensors: {branchy:?}")
    })?;
    let single = Model::new(
        &ModelConfig {
            scale_mode: ScaleMode::LowOnly,
            ..ModelConfig::default()
        },
        6,
        4,
    )
    .map_err(err)?;
    ensure(single.store.count() == model.store.count(), || {
        format!(
            "twin {} vs single-scale {} parameters",
            model.store.count(),
            single.store.count()
        )
    })?;
    Ok(format!(
        "branches bit-identical in {} blocks; {} tensors, no branch duplicates, same count as single-scale",
        dec.blocks.len(),
        names.len()
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_r, mut worst_m): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let n_o = rng.gen_range(1..=4);
        let n_h = rng.gen_range(1..=6);
        let d_s = rng.gen_range(1..=5);
        let d_o = d_s + 6;
        let boxes = uniform(&mut rng, n_o, 6);
        let f_b = uniform(&mut rng, n_h, 6);
        let f_m = uniform(&mut rng, n_h, d_s);
        let x = uniform(&mut rng, n_o, d_o);

        let rel = relative_positions(&boxes, &f_b).map_err(err)?;
        for i in 0..n_o {
            for j in 0..n_h {
                for k in 0..6 {
                    let e = (rel.get(i, j)[k] - (boxes[(i, k)] - f_b[(j, k)])).abs();
                    worst_r = worst_r.max(e);
                }
            }
        }

        let mut store = ParamStore::new();
        let reg = Regularizer::new(&mut store, 3, d_s, &mut rng);
        for p in store.iter_mut() {
            p.tensor = Tensor2::from_fn(p.tensor.rows(), p.tensor.cols(), |_, _| {
                rng.gen_range(-1.0..1.0)
            });
        }
        let w = store.tensor(reg.mask_embed.weight).clone();
        let c = store.tensor(reg.mask_embed.bias).clone();
        let mut g = Graph::new();
        let scene = SceneWise {
            f_m: g.constant(f_m.clone()),
            f_b: g.constant(f_b.clone()),
        };
        let (bv, xv) = (g.constant(boxes.clone()), g.constant(x.clone()));
        let out = reg
            .regularized_masks(&mut g, &store, bv, &scene, xv)
            .map_err(err)?;
        let got = g.value(out);
        for i in 0..n_o {
            for j in 0..n_h {
                // f_ij = [b_i - Fb_j ; Fm_j], E_ij = f_ij W + c, logit = E_ij . x_i
                let f: Vec<f64> = (0..6)
                    .map(|k| boxes[(i, k)] - f_b[(j, k)])
                    .chain((0..d_s).map(|k| f_m[(j, k)]))
                    .collect();
                let mut logit = 0.0;
                for b in 0..d_o {
                    let mut e = c[(0, b)];
                    for (a, fa) in f.iter().enumerate() {
                        e += fa * w[(a, b)];
                    }
                    logit += e * x[(i, b)];
                }
                worst_m = worst_m.max((got[(i, j)] - logit).abs());
            }
        }
    }
    ensure(worst_r <= 1e-12 && worst_m <= 1e-12, || {
        format!("max errors {worst_r:e} / {worst_m:e}")
    })?;
    Ok(format!(
        "200 instances, max abs error relative positions {worst_r:.1e}, mask logits {worst_m:.1e}"
    ))
}

// ---------------------------------------------------------------- 6

const BIG: f64 = 40.0;

fn constant_block(
    g: &mut Graph<f64>,
    cls: Tensor2<f64>,
    masks: Tensor2<f64>,
    boxes: Tensor2<f64>,
    ms: Vec<f64>,
    bs: Vec<f64>,
) -> BlockOutput {
    let queries = g.constant(Tensor2::zeros(cls.rows(), 1));
    BlockOutput {
        class_logits: g.constant(cls),
        mask_logits: g.constant(masks),
        mask_score: g.constant(Tensor2::column_vector(ms)),
        boxes: g.constant(boxes),
        box_score: g.constant(Tensor2::column_vector(bs)),
        queries,
    }
}

fn random_target(rng: &mut ChaCha8Rng, n_i: usize, n_h: usize, classes: usize) -> Target<f64> {
    // every instance owns one distinct superpoint, the rest are random
    let mut cols: Vec<usize> = (0..n_h).collect();
    cols.shuffle(rng);
    let mut masks = Tensor2::zeros(n_i, n_h);
    for (k, &j) in cols.iter().enumerate() {
        let owner = if k < n_i { k } else { rng.gen_range(0..=n_i) };
        if owner < n_i {
            masks[(owner, j)] = 1.0;
        }
    }
    let boxes = Tensor2::from_fn(n_i, 6, |_, k| {
        if k < 3 {
            rng.gen_range(0.0..0.5)
        } else {
            rng.gen_range(0.5..1.0)
        }
    });
    Target {
        masks,
        boxes,
        classes: (0..n_i).map(|_| rng.gen_range(0..classes)).collect(),
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = LossConfig::default();
    let betas = [
        cfg.beta_cls,
        cfg.beta_mask,
        cfg.beta_mask_score,
        cfg.beta_box,
        cfg.beta_box_score,
    ];
    ensure(betas == [0.5, 1.0, 0.5, 1.0, 0.5], || {
        format!("default weights {betas:?}")
    })?;
    let classes = 4;
    let (mut worst_term, mut worst_recompose): (f64, f64) = (0.0, 0.0);
    for trial in 0..50 {
        let n_i = rng.gen_range(1..=4);
        let n_o = n_i + rng.gen_range(0..=3);
        let n_h = rng.gen_range(n_i.max(2)..=10);
        let t = random_target(&mut rng, n_i, n_h, classes);
        let mut perm: Vec<usize> = (0..n_o).collect();
        perm.shuffle(&mut rng);
        // gt j is predicted by proposal perm[j]; the rest predict "no instance"
        let mut cls = Tensor2::zeros(n_o, classes + 1);
        let mut masks = Tensor2::filled(n_o, n_h, -BIG);
        let mut boxes = uniform(&mut rng, n_o, 6);
        let mut ms = vec![0.0; n_o];
        let mut bs = vec![0.0; n_o];
        for p in 0..n_o {
            cls[(p, classes)] = BIG;
        }
        for j in 0..n_i {
            let p = perm[j];
            cls[(p, classes)] = 0.0;
            cls[(p, t.classes[j])] = BIG;
            for s in 0..n_h {
                masks[(p, s)] = if t.masks[(j, s)] > 0.5 { BIG } else { -BIG };
            }
            for k in 0..6 {
                boxes[(p, k)] = t.boxes[(j, k)];
            }
            ms[p] = 1.0;
            bs[p] = 1.0;
        }
        let mut g = Graph::new();
        let blocks = 1 + trial % 3;
        let out = constant_block(&mut g, cls, masks, boxes, ms, bs);
        let outs = vec![out; blocks];
        let l = scene_loss(&mut g, &outs, &t, classes, &cfg).map_err(err)?;
        let expect: Vec<(usize, usize)> = (0..n_i).map(|j| (perm[j], j)).collect();
        ensure(l.supervision[0].matching.assignment == expect, || {
            format!("trial {trial}: matching not recovered")
        })?;
        let b = l.breakdown;
        for (name, v) in [
            ("bce", b.bce),
            ("dice", b.dice),
            ("box", b.box_l1),
            ("mask_score", b.mask_score),
            ("box_score", b.box_score),
            ("cls", b.cls),
        ] {
            ensure(v.abs() < 1e-6, || format!("trial {trial}: {name} = {v:e}"))?;
            worst_term = worst_term.max(v.abs());
        }

        // recomposition on arbitrary predictions
        let mut g = Graph::new();
        let out = constant_block(
            &mut g,
            uniform(&mut rng, n_o, classes + 1),
            uniform(&mut rng, n_o, n_h).scale(3.0),
            uniform(&mut rng, n_o, 6),
            (0..n_o).map(|_| rng.gen_range(0.0..1.0)).collect(),
            (0..n_o).map(|_| rng.gen_range(0.0..1.0)).collect(),
        );
        let loose = LossConfig {
            eta_mask_score: -1.0,
            eta_box_score: -1.0,
            ..LossConfig::default()
        };
        let b = scene_loss(&mut g, &vec![out; blocks], &t, classes, &loose)
            .map_err(err)?
            .breakdown;
        let manual = 0.5 * b.cls
            + 1.0 * (b.bce + b.dice)
            + 0.5 * b.mask_score
            + 1.0 * b.box_l1
            + 0.5 * b.box_score;
        let e = (b.total - manual).abs();
        ensure(e <= 1e-12, || {
            format!("trial {trial}: recomposition off by {e:e}")
        })?;
        worst_recompose = worst_recompose.max(e);
    }
    Ok(format!(
        "50 perfect fixtures: max term {worst_term:.1e}; recomposition max error {worst_recompose:.1e}"
    ))
}

// ---------------------------------------------------------------- 7

fn mask(bits: &str) -> Vec<bool> {
    bits.bytes().map(|b| b == b'1').collect()
}

fn det(bits: &str, class_id: usize, confidence: f64) -> Detection {
    Detection {
        mask: mask(bits),
        class_id,
        confidence,
    }
}

/// Reference AP: per class, ranked greedy matching, then the
/// all-point-interpolated area with sentinels at recall 0 and 1.
fn reference_map(dets: &[Vec<Detection>], gts: &[SceneInstances], thresholds: &[f64]) -> f64 {
    fn iou(a: &[bool], b: &[bool]) -> f64 {
        let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
        let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
    fn ap(dets: &[Vec<Detection>], gts: &[SceneInstances], class: usize, t: f64) -> f64 {
        let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
        for (s, d) in dets.iter().enumerate() {
            for (k, x) in d.iter().enumerate() {
                if x.class_id == class {
                    ranked.push((x.confidence, s, k));
                }
            }
        }
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let n_gt = gts
            .iter()
            .flat_map(|g| &g.classes)
            .filter(|&&c| c == class)
            .count();
        let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.masks.len()]).collect();
        let (mut tp, mut fp) = (0.0, 0.0);
        let mut rec = vec![0.0];
        let mut prec = vec![0.0];
        for (_, s, k) in ranked {
            let m = &dets[s][k].mask;
            let best = (0..gts[s].masks.len())
                .filter(|&j| gts[s].classes[j] == class && !taken[s][j])
                .map(|j| (iou(m, &gts[s].masks[j]), j))
                .fold(None, |acc: Option<(f64, usize)>, c| match acc {
                    Some(a) if a.0 >= c.0 => Some(a),
                    _ => Some(c),
                });
            match best {
                Some((v, j)) if v >= t => {
                    taken[s][j] = true;
                    tp += 1.0;
                }
                _ => fp += 1.0,
            }
            rec.push(tp / n_gt as f64);
            prec.push(tp / (tp + fp));
        }
        rec.push(1.0);
        prec.push(0.0);
        for i in (0..prec.len() - 1).rev() {
            prec[i] = prec[i].max(prec[i + 1]);
        }
        let mut area = 0.0;
        for i in 1..rec.len() {
            if rec[i] != rec[i - 1] && i < rec.len() - 1 {
                area += (rec[i] - rec[i - 1]) * prec[i];
            }
        }
        area
    }
    let mut classes: Vec<usize> = gts.iter().flat_map(|g| g.classes.clone()).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut total = 0.0;
    for &t in thresholds {
        let s: f64 = classes.iter().map(|&c| ap(dets, gts, c, t)).sum();
        total += s / classes.len() as f64;
    }
    total / thresholds.len() as f64
}

fn criterion_7() -> Outcome {
    // 2 classes with 4 ground-truth instances each across 3 scenes
    let gts = vec![
        SceneInstances {
            masks: vec![mask("1111000000"), mask("0000111100"), mask("0000000011")],
            classes: vec![0, 1, 0],
        },
        SceneInstances {
            masks: vec![mask("1110000000"), mask("0001111111")],
            classes: vec![1, 0],
        },
        SceneInstances {
            masks: vec![mask("1100000000"), mask("0011110000"), mask("0000001111")],
            classes: vec![1, 0, 1],
        },
    ];
    let dets = vec![
        vec![
            det("1111000000", 0, 0.95), // IoU 1
            det("0000111000", 1, 0.90), // IoU 0.75
            det("0000000111", 0, 0.40), // IoU 2/3
            det("1110000000", 0, 0.85), // duplicate, IoU 0.75 with an already taken gt
            det("0000011111", 1, 0.30), // IoU 0.5 with an already taken gt
        ],
        vec![
            det("1100000000", 1, 0.80), // IoU 2/3
            det("0001111000", 0, 0.70), // IoU 4/7
            det("1111111111", 0, 0.99), // IoU 0.7, high-confidence
        ],
        vec![
            det("1000000001", 1, 0.60), // IoU 1/3
            det("0011110000", 0, 0.88), // IoU 1
            det("0000000111", 1, 0.75), // IoU 0.75
            det("0011000000", 1, 0.92), // overlaps only a class-0 instance
        ],
    ];
    let thresholds = standard_thresholds();
    let report = evaluate(&dets, &gts, &thresholds).map_err(err)?;
    let want = (
        reference_map(&dets, &gts, &thresholds),
        reference_map(&dets, &gts, &[0.5]),
        reference_map(&dets, &gts, &[0.25]),
    );
    let got = (report.map, report.map50, report.map25);
    ensure(got == want, || {
        format!("fixture: library {got:?} vs reference {want:?}")
    })?;
    ensure(want.0 < want.1 && want.1 < want.2, || {
        format!("fixture not discriminative: {want:?}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let runs = 300;
    for run in 0..runs {
        let n_scenes = rng.gen_range(1..4);
        let mut d = Vec::new();
        let mut g = Vec::new();
        for _ in 0..n_scenes {
            let n = rng.gen_range(8..24);
            let n_gt = rng.gen_range(1..5);
            let n_det = rng.gen_range(0..8);
            let rand_mask =
                |rng: &mut ChaCha8Rng| -> Vec<bool> { (0..n).map(|_| rng.gen_bool(0.4)).collect() };
            g.push(SceneInstances {
                masks: (0..n_gt).map(|_| rand_mask(&mut rng)).collect(),
                classes: (0..n_gt).map(|_| rng.gen_range(0..3)).collect(),
            });
            d.push(
                (0..n_det)
                    .map(|_| Detection {
                        mask: rand_mask(&mut rng),
                        class_id: rng.gen_range(0..3),
                        confidence: rng.gen_range(0.0..1.0),
                    })
                    .collect(),
            );
        }
        let r = evaluate(&d, &g, &thresholds).map_err(err)?;
        ensure(r.map25 >= r.map50 && r.map50 >= r.map, || {
            format!(
                "run {run}: mAP25 {} mAP50 {} mAP {}",
                r.map25, r.map50, r.map
            )
        })?;
    }
    Ok(format!(
        "fixture mAP {:.6} / mAP50 {:.6} / mAP25 {:.6} equal the reference exactly; monotone on {runs} random runs",
        got.0, got.1, got.2
    ))
}

// ---------------------------------------------------------------- 8, 9

fn overfit_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.scene.max_instances = 6;
    cfg
}

fn criterion_8() -> Outcome {
    let mut scores = Vec::new();
    let mut times = Vec::new();
    for seed in 0..3u64 {
        let mut cfg = overfit_config();
        cfg.train.seed = seed;
        let start = Instant::now();
        let scenes: Vec<Prepared> =
            prepare(&cfg, generate_scenes(&cfg, 100 * seed, 4).map_err(err)?).map_err(err)?;
        let model = train(&cfg, &scenes, |_, _| Ok(())).map_err(err)?;
        let report = evaluate_model(&model, &scenes, &cfg).map_err(err)?;
        let secs = start.elapsed().as_secs_f64();
        eprintln!(
            "  overfit seed {seed}: mAP {:.3} mAP50 {:.3} mAP25 {:.3} in {secs:.0}s",
            report.map, report.map50, report.map25
        );
        scores.push(report.map50);
        times.push(secs);
    }
    let m = median(&scores);
    let slowest = times.iter().cloned().fold(0.0, f64::max);
    let detail = format!("mAP50 per seed {scores:.3?}, median {m:.3}; slowest run {slowest:.0}s");
    ensure(m >= 0.9, || detail.clone())?;
    ensure(slowest < 900.0, || detail.clone())?;
    Ok(detail)
}

const ABLATION_STEPS: usize = 3000;

fn criterion_9() -> Outcome {
    let base = overfit_config();
    let scenes: Vec<Prepared> =
        prepare(&base, generate_scenes(&base, 1000, 16).map_err(err)?).map_err(err)?;
    let mut table: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (name, mode) in [("full", ScaleMode::Twin), ("low-only", ScaleMode::LowOnly)] {
        for seed in 0..3u64 {
            let mut cfg = base.clone();
            cfg.model.scale_mode = mode;
            cfg.train.seed = seed;
            cfg.train.steps = ABLATION_STEPS;
            let start = Instant::now();
            let model = train(&cfg, &scenes, |_, _| Ok(())).map_err(err)?;
            let r = evaluate_model(&model, &scenes, &cfg).map_err(err)?;
            eprintln!(
                "  ablation {name} seed {seed}: mAP {:.3} mAP50 {:.3} mAP25 {:.3} in {:.0}s",
                r.map,
                r.map50,
                r.map25,
                start.elapsed().as_secs_f64()
            );
            table.entry(name).or_default().push(r.map50);
        }
    }
    let (full, low) = (median(&table["full"]), median(&table["low-only"]));
    let detail = format!(
        "{ABLATION_STEPS} steps each; mAP50 full {:.3?} (median {full:.3}), low-only {:.3?} (median {low:.3}); direction reported, not guaranteed",
        table["full"], table["low-only"]
    );
    ensure(full >= low, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 10

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_twinattn"))
        .args(args)
        .output()
        .map_err(err)?;
    ensure(out.status.success(), || {
        format!(
            "twinattn {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn pipeline(root: &Path, config: &Path) -> Result<(), String> {
    let (data, run, eval) = (root.join("data"), root.join("run"), root.join("eval"));
    let s = |p: &Path| p.to_str().unwrap().to_string();
    run_cli(&[
        "gen",
        "--config",
        &s(config),
        "--seed",
        "11",
        "--count",
        "2",
        "--out",
        &s(&data),
    ])?;
    run_cli(&[
        "train",
        "--config",
        &s(config),
        "--seed",
        "5",
        "--data",
        &s(&data),
        "--out",
        &s(&run),
    ])?;
    run_cli(&[
        "eval",
        "--checkpoint",
        &s(&run.join("model.ckpt")),
        "--data",
        &s(&data),
        "--out",
        &s(&eval),
    ])
}

/// Every file under `root`, relative path to bytes. Wall-clock fields are
/// dropped from the training log.
fn snapshot(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for sub in ["data", "run", "eval"] {
        for e in fs::read_dir(root.join(sub)).map_err(err)? {
            let path = e.map_err(err)?.path();
            let name = format!("{sub}/{}", path.file_name().unwrap().to_string_lossy());
            let mut bytes = fs::read(&path).map_err(err)?;
            if name.ends_with("train_log.jsonl") {
                let text = String::from_utf8(bytes).map_err(err)?;
                let lines: Vec<String> = text
                    .lines()
                    .map(|l| {
                        let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                        v.as_object_mut().unwrap().remove("wall_ms");
                        v.to_string()
                    })
                    .collect();
                bytes = lines.join("\n").into_bytes();
            }
            files.insert(name, bytes);
        }
    }
    Ok(files)
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut cfg = RunConfig::default();
    cfg.scene.points = 1024;
    cfg.scene.min_points_per_instance = 48;
    cfg.train.steps = 12;
    cfg.train.checkpoint_every = 4;
    let config = tmp.path().join("run.toml");
    fs::write(&config, cfg.to_toml()).map_err(err)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a, &config)?;
    pipeline(&b, &config)?;
    let (sa, sb) = (snapshot(&a)?, snapshot(&b)?);
    let names: Vec<&String> = sa.keys().collect();
    ensure(sa.keys().eq(sb.keys()), || {
        format!("file sets differ: {names:?} vs {:?}", sb.keys())
    })?;
    for (name, bytes) in &sa {
        ensure(bytes == &sb[name], || {
            format!("{name} differs between runs")
        })?;
    }
    let ckpts = names.iter().filter(|n| n.ends_with(".ckpt")).count();
    let scenes = names.iter().filter(|n| n.contains("scene-")).count();
    ensure(ckpts >= 3 && scenes == 2, || {
        format!("unexpected outputs {names:?}")
    })?;
    Ok(format!(
        "{} files identical across two runs ({scenes} scenes, {ckpts} checkpoints, logs, reports)",
        sa.len()
    ))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "gradient correctness", criterion_1),
        (2, "matching exactness", criterion_2),
        (3, "masked attention exactness", criterion_3),
        (4, "twin weight sharing", criterion_4),
        (5, "relative position and mask oracles", criterion_5),
        (6, "loss algebra", criterion_6),
        (7, "evaluation oracle", criterion_7),
        (10, "reproducibility", criterion_10),
        (8, "desk-scale overfit", criterion_8),
        (9, "ablation direction", criterion_9),
    ];
    // numeric arguments select criteria; anything else is ignored
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
