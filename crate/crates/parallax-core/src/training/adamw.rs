//! AdamW: adaptive moments with decoupled weight decay.

use super::TrainConfig;
use crate::model::Params;
use ndarray::ArrayD;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub t: u64,
    pub m: BTreeMap<String, ArrayD<f32>>,
    pub v: BTreeMap<String, ArrayD<f32>>,
}

impl AdamW {
    pub fn new(lr: f32, weight_decay: f32, beta1: f32, beta2: f32, eps: f32) -> Self {
        Self {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(
            cfg.learning_rate,
            cfg.weight_decay,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
        )
    }

    /// One update over every parameter that has a gradient.
    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, ArrayD<f32>>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, grad) in grads {
            let w = params.get_mut(name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            ndarray::Zip::from(w)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|w, m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= self.lr * (mhat / (vhat.sqrt() + self.eps)) + self.lr * self.weight_decay * *w;
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn params_with(name: &str, vals: &[f32]) -> Params {
        let mut p = Params::new();
        p.insert(name, ArrayD::from_shape_vec(IxDyn(&[vals.len()]), vals.to_vec()).unwrap());
        p
    }

    #[test]
    fn zero_learning_rate_leaves_weights_bitwise_unchanged() {
        let mut p = params_with("w", &[1.5, -2.25, 0.0, -0.0]);
        let before = p.get("w").clone();
        let mut opt = AdamW::new(0.0, 0.01, 0.9, 0.999, 1e-8);
        let mut grads = BTreeMap::new();
        grads.insert(
            "w".to_string(),
            ArrayD::from_shape_vec(IxDyn(&[4]), vec![0.3, -0.7, 2.0, 1.0]).unwrap(),
        );
        for _ in 0..3 {
            opt.step(&mut p, &grads);
        }
        let after = p.get("w");
        for (a, b) in before.iter().zip(after.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn consistent_gradient_moves_weight_by_about_lr() {
        let mut p = params_with("w", &[0.0]);
        let mut opt = AdamW::new(1e-3, 0.0, 0.9, 0.999, 1e-8);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), ArrayD::from_elem(IxDyn(&[1]), 1.0f32));
        opt.step(&mut p, &grads);
        // bias-corrected first step moves by exactly lr (up to eps)
        let w = p.get("w")[[0]];
        assert!((w + 1e-3).abs() < 1e-6, "w = {}", w);
    }

    #[test]
    fn weight_decay_shrinks_weights_without_gradient_signal() {
        let mut p = params_with("w", &[100.0]);
        let mut opt = AdamW::new(1e-2, 0.1, 0.9, 0.999, 1e-8);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), ArrayD::from_elem(IxDyn(&[1]), 0.0f32));
        opt.step(&mut p, &grads);
        let w = p.get("w")[[0]];
        assert!((w - (100.0 - 1e-2 * 0.1 * 100.0)).abs() < 1e-4);
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut p = params_with("w", &[0.5, -0.5]);
            let mut opt = AdamW::new(3e-5, 0.01, 0.9, 0.999, 1e-8);
            let mut grads = BTreeMap::new();
            grads.insert(
                "w".to_string(),
                ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.25, -1.5]).unwrap(),
            );
            for _ in 0..10 {
                opt.step(&mut p, &grads);
            }
            p.get("w").as_slice().unwrap().to_vec()
        };
        assert_eq!(run(), run());
    }
}
