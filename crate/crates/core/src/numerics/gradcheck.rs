//! Central finite-difference check of analytic parameter gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor: relative error is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Entries probed per parameter tensor; `None` probes every entry.
    pub max_entries: Option<usize>,
    pub seed: u64,
}

impl GradCheck {
    pub fn new(tolerance: f64) -> Self {
        Self {
            step: 1e-5,
            tolerance,
            floor: 1e-6,
            max_entries: None,
            seed: 0,
        }
    }

    pub fn sampled(mut self, per_param: usize, seed: u64) -> Self {
        self.max_entries = Some(per_param);
        self.seed = seed;
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
    pub passed: bool,
}

/// Compares the tape gradient of `loss_fn` against central differences.
///
/// `loss_fn` builds a scalar loss on a fresh graph from the current parameter
/// values. Frozen parameters are skipped; their analytic gradient stays zero.
pub fn grad_check<T, F>(
    store: &mut ParamStore<T>,
    loss_fn: F,
    cfg: &GradCheck,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    store.zero_grads();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    g.backward(loss)?.accumulate_into(store)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| !p.frozen)
        .map(|(id, _)| id)
        .collect();
    let eval = |s: &ParamStore<T>, name: &str, k: usize| -> Result<f64> {
        let mut g = Graph::new();
        let v = loss_fn(&mut g, s)?;
        let l = g.scalar(v).as_f64();
        if !l.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss while perturbing {name}[{k}]"
            )));
        }
        Ok(l)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
        passed: true,
    };
    for id in ids {
        let n = store.get(id).tensor.len();
        let entries: Vec<usize> = match cfg.max_entries {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for k in entries {
            let name = store.get(id).name.clone();
            let orig = store.get(id).tensor.data()[k];
            let h = T::of(cfg.step);
            store.get_mut(id).tensor.data_mut()[k] = orig + h;
            let plus = eval(store, &name, k)?;
            store.get_mut(id).tensor.data_mut()[k] = orig - h;
            let minus = eval(store, &name, k)?;
            store.get_mut(id).tensor.data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let analytic = store.get(id).grad.data()[k].as_f64();
            let denom = analytic.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (analytic - numeric).abs() / denom;
            report.entries_checked += 1;
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = Some((name, k));
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tolerance;
    Ok(report)
}
