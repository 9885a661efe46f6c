use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, UnitSphere};

use super::{Scene, SceneConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Primitive {
    /// Cuboid surface with the given half extents.
    Cuboid([f64; 3]),
    Sphere(f64),
    /// Thin horizontal slab (half extents, z half thickness).
    Slab([f64; 3]),
}

impl Primitive {
    fn half_extents(&self) -> [f64; 3] {
        match *self {
            Primitive::Cuboid(h) | Primitive::Slab(h) => h,
            Primitive::Sphere(r) => [r, r, r],
        }
    }

    fn area(&self) -> f64 {
        match *self {
            Primitive::Cuboid([a, b, c]) => 8.0 * (a * b + b * c + a * c),
            Primitive::Sphere(r) => 4.0 * std::f64::consts::PI * r * r,
            Primitive::Slab([a, b, _]) => 8.0 * a * b,
        }
    }

    /// Point on the surface relative to the centre.
    fn sample<R: Rng>(&self, rng: &mut R) -> [f64; 3] {
        match *self {
            Primitive::Cuboid(h) => {
                let faces = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let axis = WeightedIndex::new(faces).unwrap().sample(rng);
                let mut p = [0.0; 3];
                for (a, v) in p.iter_mut().enumerate() {
                    *v = rng.gen_range(-h[a]..=h[a]);
                }
                p[axis] = if rng.gen_bool(0.5) { h[axis] } else { -h[axis] };
                p
            }
            Primitive::Sphere(r) => {
                let d: [f64; 3] = UnitSphere.sample(rng);
                [d[0] * r, d[1] * r, d[2] * r]
            }
            Primitive::Slab(h) => [
                rng.gen_range(-h[0]..=h[0]),
                rng.gen_range(-h[1]..=h[1]),
                rng.gen_range(-h[2]..=h[2]),
            ],
        }
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn class_color(class: usize, classes: usize) -> [f64; 3] {
    hsv(class as f64 / classes as f64, 0.75, 0.85)
}

struct Placed {
    centre: [f64; 3],
    shape: Primitive,
    class: usize,
    color: [f64; 3],
}

fn random_primitive<R: Rng>(rng: &mut R, kind: usize) -> Primitive {
    match kind {
        0 => Primitive::Cuboid([
            rng.gen_range(0.2..0.5),
            rng.gen_range(0.2..0.5),
            rng.gen_range(0.15..0.45),
        ]),
        1 => Primitive::Sphere(rng.gen_range(0.2..0.45)),
        _ => Primitive::Slab([rng.gen_range(0.3..0.6), rng.gen_range(0.3..0.6), 0.02]),
    }
}

/// Footprints must be separated by `gap` along x or y.
fn overlaps(a: &Placed, b: &Placed, gap: f64) -> bool {
    let (ha, hb) = (a.shape.half_extents(), b.shape.half_extents());
    (0..2).all(|k| (a.centre[k] - b.centre[k]).abs() < ha[k] + hb[k] + gap)
}

/// Deterministic synthetic room: a floor and two walls labelled background,
/// plus separated primitive instances floating above the floor.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rng.gen_range(cfg.min_instances..=cfg.max_instances);
    let mix = WeightedIndex::new(cfg.primitive_mix).map_err(|e| Error::Config(e.to_string()))?;

    let mut placed: Vec<Placed> = Vec::new();
    let mut attempts = 0;
    while placed.len() < target && attempts < 2000 {
        attempts += 1;
        let kind = mix.sample(&mut rng);
        let shape = random_primitive(&mut rng, kind);
        let h = shape.half_extents();
        let lo = [cfg.gap + h[0], cfg.gap + h[1]];
        let hi = [cfg.room[0] - cfg.gap - h[0], cfg.room[1] - cfg.gap - h[1]];
        if lo[0] >= hi[0] || lo[1] >= hi[1] {
            continue;
        }
        let z = cfg.gap + h[2] + rng.gen_range(0.0..0.4);
        if z + h[2] > cfg.room[2] {
            continue;
        }
        let class = rng.gen_range(0..cfg.classes);
        let base = class_color(class, cfg.classes);
        let color = base.map(|c| (c + rng.gen_range(-0.06..0.06)).clamp(0.0, 1.0));
        let cand = Placed {
            centre: [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1]), z],
            shape,
            class,
            color,
        };
        if placed.iter().all(|p| !overlaps(p, &cand, cfg.gap)) {
            placed.push(cand);
        }
    }
    if placed.len() < cfg.min_instances {
        return Err(Error::Config(format!(
            "could only place {} of at least {} instances in the room",
            placed.len(),
            cfg.min_instances
        )));
    }

    // split the instance budget by surface area on top of the per-instance floor
    let bg = cfg.background_points();
    let budget = cfg.points - bg;
    let floor = cfg.min_points_per_instance.max(1);
    let spare = budget - floor * placed.len();
    let areas: Vec<f64> = placed.iter().map(|p| p.shape.area()).collect();
    let total_area: f64 = areas.iter().sum();
    let mut counts: Vec<usize> = areas
        .iter()
        .map(|a| floor + (spare as f64 * a / total_area).floor() as usize)
        .collect();
    let mut leftover = budget - counts.iter().sum::<usize>();
    let n_placed = counts.len();
    let mut k = 0;
    while leftover > 0 {
        counts[k % n_placed] += 1;
        leftover -= 1;
        k += 1;
    }

    let noise = Normal::new(0.0, cfg.color_noise.max(1e-12)).unwrap();
    let mut points = Vec::with_capacity(cfg.points);
    let mut instance_of = Vec::with_capacity(cfg.points);

    let [w, d, h] = cfg.room;
    let shell = [w * d, w * h, d * h];
    let shell_pick = WeightedIndex::new(shell).unwrap();
    for _ in 0..bg {
        let xyz = match shell_pick.sample(&mut rng) {
            0 => [rng.gen_range(0.0..w), rng.gen_range(0.0..d), 0.0],
            1 => [rng.gen_range(0.0..w), 0.0, rng.gen_range(0.0..h)],
            _ => [0.0, rng.gen_range(0.0..d), rng.gen_range(0.0..h)],
        };
        let g = (0.55 + noise.sample(&mut rng)).clamp(0.0, 1.0);
        points.push([xyz[0], xyz[1], xyz[2], g, g, g]);
        instance_of.push(None);
    }
    for (i, (p, &n)) in placed.iter().zip(&counts).enumerate() {
        for _ in 0..n {
            let o = p.shape.sample(&mut rng);
            let mut pt = [0.0; 6];
            for a in 0..3 {
                pt[a] = p.centre[a] + o[a];
                pt[a + 3] = (p.color[a] + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            points.push(pt);
            instance_of.push(Some(i));
        }
    }

    let scene = Scene {
        points,
        instance_of,
        class_of_instance: placed.iter().map(|p| p.class).collect(),
        seed,
        config: cfg.clone(),
    };
    debug_assert!(scene.validate().is_ok());
    Ok(scene)
}
