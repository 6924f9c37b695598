use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← μ·v + grad`, `p ← p − lr·v`, then the gradient is zeroed.
///
/// One velocity buffer per parameter slot, in the order the parameters are
/// passed to [`SgdMomentum::step`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdMomentum {
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Self {
            momentum,
            velocity: Vec::new(),
        })
    }

    /// Restore an optimizer from saved velocity buffers.
    pub fn with_velocity(momentum: f64, velocity: Vec<Vec<f64>>) -> Result<Self> {
        let mut o = Self::new(momentum)?;
        o.velocity = velocity;
        Ok(o)
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Update every parameter with its own learning rate.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (&'a mut Tensor, f64)>) -> Result<()> {
        for (slot, (p, lr)) in params.into_iter().enumerate() {
            if lr <= 0.0 {
                return Err(Error::Config(format!("learning rate {lr} must be positive")));
            }
            if slot == self.velocity.len() {
                self.velocity.push(vec![0.0; p.numel()]);
            }
            let v = &mut self.velocity[slot];
            if v.len() != p.numel() {
                return Err(Error::Dimension(format!(
                    "velocity slot {slot} holds {} values, parameter has {}",
                    v.len(),
                    p.numel()
                )));
            }
            let Tensor { values, grad, .. } = p;
            for ((vi, gi), pi) in v.iter_mut().zip(grad.iter_mut()).zip(values.iter_mut()) {
                *vi = self.momentum * *vi + *gi;
                *pi -= lr * *vi;
                *gi = 0.0;
            }
        }
        Ok(())
    }
}
