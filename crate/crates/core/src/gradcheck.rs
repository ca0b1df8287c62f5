//! Central finite-difference gradient checking.
//!
//! Every input of the function under test lives in a [`ParamStore`]; the
//! function maps a graph and a store to a scalar loss. Analytic gradients
//! come from one tracked pass, numeric ones from untracked re-evaluations
//! at `±h` around each probed entry.

use rand::Rng;

use crate::blocks::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};

/// Default step for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`
/// so entries whose true gradient is near zero are judged by absolute error.
pub const REL_FLOOR: f64 = 1e-4;

/// One probed scalar: parameter name and flat index.
pub type Probe = (String, usize);

#[derive(Clone, Debug)]
pub struct Report {
    pub checked: usize,
    pub max_rel_err: f64,
    /// The probe with the largest error, with its analytic and numeric values.
    pub worst: Option<(Probe, f64, f64)>,
}

impl Report {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Every scalar of every tensor in the store.
pub fn all_probes(store: &ParamStore) -> Vec<Probe> {
    store
        .iter()
        .flat_map(|(name, t)| (0..t.numel()).map(move |i| (name.to_string(), i)))
        .collect()
}

/// Up to `per_tensor` random entries from each tensor (all entries if fewer).
pub fn sampled_probes(store: &ParamStore, per_tensor: usize, rng: &mut impl Rng) -> Vec<Probe> {
    let mut out = Vec::new();
    for (name, t) in store.iter() {
        if t.numel() <= per_tensor {
            out.extend((0..t.numel()).map(|i| (name.to_string(), i)));
        } else {
            out.extend(
                rand::seq::index::sample(rng, t.numel(), per_tensor)
                    .into_iter()
                    .map(|i| (name.to_string(), i)),
            );
        }
    }
    out
}

/// `count` probes drawn uniformly over all scalars of the store.
pub fn random_probes(store: &ParamStore, count: usize, rng: &mut impl Rng) -> Vec<Probe> {
    let sizes: Vec<(String, usize)> = store.iter().map(|(n, t)| (n.to_string(), t.numel())).collect();
    let total: usize = sizes.iter().map(|s| s.1).sum();
    rand::seq::index::sample(rng, total, count.min(total))
        .into_iter()
        .map(|mut flat| {
            for (name, len) in &sizes {
                if flat < *len {
                    return (name.clone(), flat);
                }
                flat -= len;
            }
            unreachable!("index within total")
        })
        .collect()
}

fn perturbed(store: &ParamStore, name: &str, index: usize, delta: f64) -> Result<ParamStore> {
    let mut out = store.clone();
    let t = store.get(name)?;
    let mut data = t.to_vec();
    data[index] += delta;
    out.set(name, Tensor::new(t.shape(), data)?)?;
    Ok(out)
}

/// Compares analytic and numeric gradients of `f` at the probed entries.
pub fn check<F>(store: &ParamStore, probes: &[Probe], h: f64, f: F) -> Result<Report>
where
    F: Fn(&Graph, &ParamStore) -> Result<Tensor>,
{
    let g = Graph::new();
    let tracked = store.track(&g);
    let loss = f(&g, &tracked)?;
    let grads = tracked.gradients(&g.backward(&loss)?)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let v = f(&Graph::new(), s)?;
        if v.numel() != 1 {
            return Err(Error::contract("gradient check needs a scalar loss"));
        }
        Ok(v.item())
    };

    let mut report = Report {
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for (name, index) in probes {
        let analytic = grads
            .get(name)
            .and_then(|g| g.get(*index).copied())
            .ok_or_else(|| Error::contract(format!("no gradient entry {name}[{index}]")))?;
        let plus = eval(&perturbed(store, name, *index, h)?)?;
        let minus = eval(&perturbed(store, name, *index, -h)?)?;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some(((name.clone(), *index), analytic, numeric));
        }
    }
    Ok(report)
}

/// Loss `Σ out ⊙ weights` with a fixed random weighting, giving every output
/// element a distinct, order-one influence.
pub fn weighted_sum(g: &Graph, out: &Tensor, weights: &Tensor) -> Result<Tensor> {
    g.sum(&g.mul(out, weights)?)
}
