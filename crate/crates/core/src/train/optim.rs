use indexmap::IndexMap;

use crate::blocks::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: IndexMap<String, Vec<f64>>,
    pub v: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: IndexMap<String, Vec<f64>> = params.iter().map(|(k, t)| (k.to_string(), vec![0.0; t.numel()])).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn bitwise_eq(&self, other: &AdamState) -> bool {
        let same = |a: &IndexMap<String, Vec<f64>>, b: &IndexMap<String, Vec<f64>>| {
            a.len() == b.len()
                && a.iter().zip(b).all(|((ka, va), (kb, vb))| {
                    ka == kb && va.len() == vb.len() && va.iter().zip(vb).all(|(x, y)| x.to_bits() == y.to_bits())
                })
        };
        self.step == other.step && same(&self.m, &other.m) && same(&self.v, &other.v)
    }
}

/// One bias-corrected Adam update. All gradients are validated before any
/// parameter changes, so a rejected step leaves `params` and `state` intact.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &IndexMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, value) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::contract(format!("no gradient for parameter {name}")))?;
        let (m, v) = (state.m.get(name), state.v.get(name));
        if g.len() != value.numel() || m.map(Vec::len) != Some(value.numel()) || v.map(Vec::len) != Some(value.numel()) {
            return Err(Error::contract(format!("optimizer state does not match parameter {name}")));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient for parameter {name}")));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let g = &grads[&name];
        let m = state.m.get_mut(&name).expect("validated");
        let v = state.v.get_mut(&name).expect("validated");
        let p = params.get(&name)?;
        let mut data = p.to_vec();
        for i in 0..data.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
        }
        let updated = Tensor::new(p.shape(), data)?;
        params.set(&name, updated)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::new(Shape::new(1, 1, 1, 3), vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut p = store();
        let mut state = AdamState::new(&p);
        let grads = IndexMap::from([("w".to_string(), vec![0.3, -7.0, 1e-3])]);
        adam_step(&mut p, &grads, &mut state, 0.01, &AdamConfig::default()).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((w[1] - (-2.0 + 0.01)).abs() < 1e-6);
        assert!((w[2] - (0.5 - 0.01)).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = store();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let grads = IndexMap::from([("w".to_string(), vec![0.0; 3])]);
        for _ in 0..3 {
            adam_step(&mut p, &grads, &mut state, 0.1, &AdamConfig::default()).unwrap();
        }
        assert!(p.bitwise_eq(&before));
    }

    #[test]
    fn nan_gradient_names_the_parameter_and_changes_nothing() {
        let mut p = store();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let grads = IndexMap::from([("w".to_string(), vec![0.0, f64::NAN, 0.0])]);
        let err = adam_step(&mut p, &grads, &mut state, 0.1, &AdamConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Training(m) if m.contains('w')), "{err}");
        assert!(p.bitwise_eq(&before));
        assert_eq!(state.step, 0);
    }
}
