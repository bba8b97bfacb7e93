use super::{Gradients, MlpModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One Nesterov momentum update: `v <- mu v + g`, `theta <- theta - lr (g + mu v)`.
pub fn sgd_step<T: Scalar>(params: &mut [T], grads: &[T], velocity: &mut [T], lr: T, momentum: T) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * (g + momentum * *v);
    }
}

/// Learning rate of `epoch` (zero-based) under step decay.
pub fn lr_at(lr0: f64, gamma: f64, step: usize, epoch: usize) -> f64 {
    lr0 * gamma.powi((epoch / step.max(1)) as i32)
}

#[derive(Debug, Clone)]
pub struct NesterovSgd<T> {
    momentum: T,
    weight_decay: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> NesterovSgd<T> {
    pub fn new(model: &mut MlpModel<T>, momentum: f64, weight_decay: f64) -> Self {
        let velocity = model
            .parameters_mut()
            .iter()
            .map(|p| vec![T::zero(); p.len()])
            .collect();
        NesterovSgd {
            momentum: T::of(momentum),
            weight_decay: T::of(weight_decay),
            velocity,
        }
    }

    pub fn step(&mut self, model: &mut MlpModel<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        let lr = T::of(lr);
        let flat = grads.flat();
        let mut params = model.parameters_mut();
        if flat.len() != params.len() || params.len() != self.velocity.len() {
            return Err(Error::Shape("gradient layout does not match the model".into()));
        }
        for ((p, g), v) in params.iter_mut().zip(flat).zip(self.velocity.iter_mut()) {
            if self.weight_decay == T::zero() {
                sgd_step(p, g, v, lr, self.momentum);
            } else {
                let decayed: Vec<T> = g
                    .iter()
                    .zip(p.iter())
                    .map(|(&g, &w)| g + self.weight_decay * w)
                    .collect();
                sgd_step(p, &decayed, v, lr, self.momentum);
            }
        }
        Ok(())
    }
}
