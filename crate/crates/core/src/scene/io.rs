//! Text scene files.
//!
//! ```text
//! twinattn-scene/1
//! seed 7
//! config {"points":4096,...}
//! points 4096
//! x y z r g b instance      (instance is -1 for background)
//! ...
//! classes 5
//! c0 c1 c2 c3 c4
//! ```
//!
//! Floats are written in shortest round-trip form, so a write/read cycle is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{Scene, SceneConfig};
use crate::error::{Error, Result};

pub const HEADER: &str = "twinattn-scene/1";

pub fn to_string(scene: &Scene) -> String {
    let mut out = String::with_capacity(scene.len() * 64);
    let config = serde_json::to_string(&scene.config).expect("config serializes");
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "seed {}", scene.seed);
    let _ = writeln!(out, "config {config}");
    let _ = writeln!(out, "points {}", scene.len());
    for (p, inst) in scene.points.iter().zip(&scene.instance_of) {
        let id = inst.map_or(-1, |i| i as i64);
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            p[0], p[1], p[2], p[3], p[4], p[5], id
        );
    }
    let _ = writeln!(out, "classes {}", scene.num_instances());
    let classes: Vec<String> = scene
        .class_of_instance
        .iter()
        .map(|c| c.to_string())
        .collect();
    let _ = writeln!(out, "{}", classes.join(" "));
    out
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::SceneFormat(format!("line {line}: {}", msg.into()))
}

fn keyed<'a>(line: Option<(usize, &'a str)>, key: &str) -> Result<(usize, &'a str)> {
    let (n, l) = line.ok_or_else(|| Error::SceneFormat(format!("missing '{key}' line")))?;
    l.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .map(|rest| (n, rest))
        .ok_or_else(|| bad(n, format!("expected '{key}'")))
}

pub fn from_str(text: &str) -> Result<Scene> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, HEADER)) => {}
        Some((n, other)) => return Err(bad(n, format!("unsupported header '{other}'"))),
        None => return Err(Error::SceneFormat("empty file".into())),
    }
    let (n, seed) = keyed(lines.next(), "seed")?;
    let seed: u64 = seed.parse().map_err(|_| bad(n, "bad seed"))?;
    let (n, config) = keyed(lines.next(), "config")?;
    let config: SceneConfig = serde_json::from_str(config).map_err(|e| bad(n, e.to_string()))?;
    let (n, count) = keyed(lines.next(), "points")?;
    let count: usize = count.parse().map_err(|_| bad(n, "bad point count"))?;

    let mut points = Vec::with_capacity(count);
    let mut instance_of = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, l) = lines
            .next()
            .ok_or_else(|| Error::SceneFormat("truncated point list".into()))?;
        let fields: Vec<&str> = l.split_ascii_whitespace().collect();
        if fields.len() != 7 {
            return Err(bad(n, "expected 7 fields"));
        }
        let mut p = [0.0; 6];
        for (v, f) in p.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| bad(n, format!("bad number '{f}'")))?;
        }
        let id: i64 = fields[6].parse().map_err(|_| bad(n, "bad instance id"))?;
        instance_of.push(match id {
            -1 => None,
            i if i >= 0 => Some(i as usize),
            _ => return Err(bad(n, "instance id below -1")),
        });
        points.push(p);
    }
    let (n, n_inst) = keyed(lines.next(), "classes")?;
    let n_inst: usize = n_inst.parse().map_err(|_| bad(n, "bad class count"))?;
    let (n, l) = lines.next().unwrap_or((n + 1, ""));
    let class_of_instance = l
        .split_ascii_whitespace()
        .map(|c| c.parse().map_err(|_| bad(n, format!("bad class '{c}'"))))
        .collect::<Result<Vec<usize>>>()?;
    if class_of_instance.len() != n_inst {
        return Err(bad(n, "class count mismatch"));
    }
    let scene = Scene {
        points,
        instance_of,
        class_of_instance,
        seed,
        config,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn write(scene: &Scene, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(scene))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Scene> {
    from_str(&std::fs::read_to_string(path)?)
}
