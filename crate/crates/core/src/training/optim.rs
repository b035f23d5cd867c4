use std::collections::BTreeMap;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::Gradients;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: i32,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update. Every gradient must name a trainable tensor of
    /// `ckpt`; nothing is modified when one does not.
    pub fn step(&mut self, ckpt: &mut Checkpoint, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let entry = ckpt.entry(name)?;
            if !entry.trainable {
                return Err(Error::FrozenGradient(name.clone()));
            }
            if entry.tensor.shape() != g.shape() {
                return Err(crate::error::shape_err(
                    "optimizer_step",
                    format!("gradient of `{name}` has shape {:?}", g.shape()),
                ));
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (name, g) in grads.iter() {
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let p = ckpt.tensor_mut(name)?.data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One Adam step on a fresh optimizer.
pub fn optimizer_step(grads: &Gradients, ckpt: &mut Checkpoint, lr: f32) -> Result<()> {
    Adam::new(lr).step(ckpt, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::tensor::Tensor;

    fn one_param(trainable: bool) -> Checkpoint {
        let mut c = Checkpoint::empty(ModelConfig::micro());
        c.insert("w", Tensor::new(vec![1], vec![2.0]).unwrap(), trainable);
        c
    }

    fn grad(v: f32) -> Gradients {
        let mut g = Gradients::default();
        g.insert("w", Tensor::new(vec![1], vec![v]).unwrap());
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut c = one_param(true);
        optimizer_step(&grad(0.0), &mut c, 0.1).unwrap();
        assert_eq!(c.tensor("w").unwrap().data(), &[2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g and v̂ = g² at t = 1, so the step is lr·g/(|g| + ε).
        for g in [3.0f32, -0.5] {
            let mut c = one_param(true);
            optimizer_step(&grad(g), &mut c, 0.01).unwrap();
            let expect = 2.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((c.tensor("w").unwrap().data()[0] - expect).abs() < 1e-7);
        }
    }

    #[test]
    fn frozen_gradient_rejected() {
        let mut c = one_param(false);
        assert!(matches!(
            optimizer_step(&grad(1.0), &mut c, 0.1),
            Err(Error::FrozenGradient(n)) if n == "w"
        ));
        assert_eq!(c.tensor("w").unwrap().data(), &[2.0]);
    }
}
