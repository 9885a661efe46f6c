//! Parameter counts grouped by decoder subcomponent.

use std::fmt::Write as _;

use serde::Serialize;

use crate::numerics::ParamStore;
use crate::scalar::Scalar;

pub const GROUPS: [&str; 6] = [
    "Input Projection",
    "Query-related",
    "Cross-attention",
    "Self-attention",
    "Feedforward",
    "Prediction Head",
];
pub const OTHERS: &str = "Others";

/// Row of a decoder parameter, `None` for parameters outside the decoder.
pub fn group_of(name: &str) -> Option<&'static str> {
    if name.starts_with("encoder.") {
        return None;
    }
    let group = if name.starts_with("decoder.input_") {
        GROUPS[0]
    } else if name == "decoder.query" {
        GROUPS[1]
    } else if name.starts_with("decoder.head.") {
        GROUPS[5]
    } else if let Some(rest) = name.strip_prefix("decoder.block") {
        let part = rest.split_once('.').map_or("", |(_, p)| p);
        if part.starts_with("cross_attn") {
            GROUPS[2]
        } else if part.starts_with("self_attn") {
            GROUPS[3]
        } else if part.starts_with("ffn") {
            GROUPS[4]
        } else {
            OTHERS
        }
    } else {
        OTHERS
    };
    Some(group)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    /// Decoder rows in table order, `Others` last.
    pub rows: Vec<(String, usize)>,
    pub total: usize,
    /// Point encoder, reported outside the decoder total.
    pub encoder: usize,
}

impl ParamReport {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Self {
        let mut counts = vec![0usize; GROUPS.len() + 1];
        let mut encoder = 0;
        for (_, p) in store.iter() {
            let n = p.tensor.len();
            match group_of(&p.name) {
                None => encoder += n,
                Some(g) => {
                    let k = GROUPS.iter().position(|&x| x == g).unwrap_or(GROUPS.len());
                    counts[k] += n;
                }
            }
        }
        let names = GROUPS.iter().copied().chain([OTHERS]);
        let rows: Vec<(String, usize)> =
            names.zip(counts).map(|(n, c)| (n.to_string(), c)).collect();
        let total = rows.iter().map(|r| r.1).sum();
        Self {
            rows,
            total,
            encoder,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, n) in &self.rows {
            let _ = writeln!(out, "{name:<20} {n:>10}");
        }
        let _ = writeln!(out, "{:<20} {:>10}", "Total parameters", self.total);
        let _ = writeln!(out, "{:<20} {:>10}", "Point encoder", self.encoder);
        out
    }
}
