//! Named parameter store with Adam state.
//!
//! Batch-norm running statistics live here too, under `.running_mean` /
//! `.running_var` suffixes; they are buffers, not trainable parameters, so
//! Adam never touches them and backward never produces gradients for them.

use super::tape::BnBatchStats;
use super::tensor::Tensor;
use crate::error::{Result, UdcError};
use rand::Rng;
use std::collections::BTreeMap;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
    adam_m: BTreeMap<String, Tensor>,
    adam_v: BTreeMap<String, Tensor>,
    pub step: u64,
    pub lr: f64,
}

pub fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

impl ParamStore {
    pub fn new(lr: f64) -> ParamStore {
        ParamStore {
            tensors: BTreeMap::new(),
            adam_m: BTreeMap::new(),
            adam_v: BTreeMap::new(),
            step: 0,
            lr,
        }
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        if !is_buffer(name) {
            self.adam_m.insert(name.to_string(), Tensor::zeros(t.rows, t.cols));
            self.adam_v.insert(name.to_string(), Tensor::zeros(t.rows, t.cols));
        }
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.names().filter(|n| !is_buffer(n))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn adam_state(&self, name: &str) -> (&Tensor, &Tensor) {
        (&self.adam_m[name], &self.adam_v[name])
    }

    pub(crate) fn set_adam_state(&mut self, name: &str, m: Tensor, v: Tensor) {
        self.adam_m.insert(name.to_string(), m);
        self.adam_v.insert(name.to_string(), v);
    }

    /// Linear layer initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init_linear<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Tensor::from_vec(
            fan_in,
            fan_out,
            (0..fan_in * fan_out)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                .collect(),
        );
        let b = Tensor::from_vec(
            1,
            fan_out,
            (0..fan_out)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                .collect(),
        );
        self.insert(&format!("{prefix}.w"), w);
        self.insert(&format!("{prefix}.b"), b);
    }

    /// Square matrix initialization without bias (message-passing weights).
    pub fn init_matrix<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) {
        let bound = 1.0 / (rows as f64).sqrt();
        let w = Tensor::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
                .collect(),
        );
        self.insert(name, w);
    }

    /// Batch-norm block: unit gamma, zero beta, zero/unit running stats.
    pub fn init_batch_norm(&mut self, prefix: &str, width: usize) {
        self.insert(&format!("{prefix}.gamma"), Tensor::filled(1, width, 1.0));
        self.insert(&format!("{prefix}.beta"), Tensor::zeros(1, width));
        self.insert(&format!("{prefix}.running_mean"), Tensor::zeros(1, width));
        self.insert(&format!("{prefix}.running_var"), Tensor::filled(1, width, 1.0));
    }

    pub fn running_stats(&self, prefix: &str) -> (&[f64], &[f64]) {
        (
            &self.get(&format!("{prefix}.running_mean")).data,
            &self.get(&format!("{prefix}.running_var")).data,
        )
    }

    /// Fold train-mode batch statistics into the running buffers.
    pub fn apply_bn_updates(&mut self, updates: &[BnBatchStats]) {
        for u in updates {
            let rm = self.get_mut(&format!("{}.running_mean", u.prefix));
            for (r, &m) in rm.data.iter_mut().zip(&u.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
            let rv = self.get_mut(&format!("{}.running_var", u.prefix));
            for (r, &v) in rv.data.iter_mut().zip(&u.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            }
        }
    }

    /// One Adam update over the provided gradients with the store's uniform
    /// learning rate. Missing entries are treated as zero gradients; a NaN
    /// gradient aborts the whole step and names the offending parameter.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        let lr = self.lr;
        self.adam_step_with(grads, |_| lr)
    }

    /// Adam update with a per-parameter learning rate (the dividing and
    /// conquering policies may train at different rates).
    pub fn adam_step_with<F: Fn(&str) -> f64>(
        &mut self,
        grads: &BTreeMap<String, Tensor>,
        lr_for: F,
    ) -> Result<()> {
        for (name, g) in grads {
            if !self.tensors.contains_key(name) {
                return Err(UdcError::InvalidParams(format!(
                    "gradient for unknown parameter `{name}`"
                )));
            }
            if is_buffer(name) {
                return Err(UdcError::InvalidParams(format!(
                    "gradient for buffer `{name}`"
                )));
            }
            if g.has_nan() {
                return Err(UdcError::NanGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let names: Vec<String> = self.trainable_names().map(String::from).collect();
        for name in names {
            let zero = Tensor::zeros(
                self.tensors[&name].rows,
                self.tensors[&name].cols,
            );
            let g = grads.get(&name).unwrap_or(&zero);
            let m = self.adam_m.get_mut(&name).unwrap();
            for (mi, &gi) in m.data.iter_mut().zip(&g.data) {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            }
            let v = self.adam_v.get_mut(&name).unwrap();
            for (vi, &gi) in v.data.iter_mut().zip(&g.data) {
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            }
            let lr = lr_for(&name);
            let (m, v) = (&self.adam_m[&name], &self.adam_v[&name]);
            let theta = self.tensors.get_mut(&name).unwrap();
            for i in 0..theta.data.len() {
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                theta.data[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// L2 norm over a gradient map.
pub fn grad_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().map(Tensor::sq_l2).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> ParamStore {
        let mut s = ParamStore::new(0.01);
        s.insert(name, t);
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = store_with("w", Tensor::from_vec(1, 2, vec![1.0, -2.0]));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::zeros(1, 2));
        s.adam_step(&grads).unwrap();
        assert_eq!(s.get("w").data, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn single_step_matches_hand_evaluated_recurrence() {
        let g = 3.0;
        let mut s = store_with("w", Tensor::scalar(1.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(g));
        s.adam_step(&grads).unwrap();
        // t=1: mhat = g, vhat = g^2, update = lr*g/(|g| + eps).
        let expected = 1.0 - 0.01 * g / (g.abs() + ADAM_EPS);
        assert!((s.get("w").item() - expected).abs() < 1e-15);
        // Bias-corrected first step is essentially -lr*sign(g).
        assert!((s.get("w").item() - (1.0 - 0.01)).abs() < 1e-8);
    }

    #[test]
    fn nan_gradient_aborts_and_names_parameter() {
        let mut s = store_with("w", Tensor::scalar(1.0));
        s.insert("ok", Tensor::scalar(2.0));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::scalar(f64::NAN));
        match s.adam_step(&grads) {
            Err(UdcError::NanGradient(name)) => assert_eq!(name, "w"),
            other => panic!("expected NaN gradient error, got {other:?}"),
        }
        assert_eq!(s.step, 0);
        assert_eq!(s.get("w").item(), 1.0);
    }

    #[test]
    fn buffers_are_not_trainable() {
        let mut s = ParamStore::new(0.01);
        s.init_batch_norm("bn", 3);
        assert!(s.trainable_names().all(|n| !n.contains("running")));
        let mut grads = BTreeMap::new();
        grads.insert("bn.running_mean".to_string(), Tensor::zeros(1, 3));
        assert!(s.adam_step(&grads).is_err());
    }

    #[test]
    fn bn_update_uses_momentum() {
        let mut s = ParamStore::new(0.01);
        s.init_batch_norm("bn", 2);
        s.apply_bn_updates(&[BnBatchStats {
            prefix: "bn".into(),
            mean: vec![1.0, 2.0],
            var: vec![4.0, 9.0],
        }]);
        let (rm, rv) = s.running_stats("bn");
        assert!((rm[0] - 0.1).abs() < 1e-12);
        assert!((rv[1] - (0.9 + 0.1 * 9.0)).abs() < 1e-12);
    }
}
