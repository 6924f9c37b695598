use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Which part of the network a parameter belongs to. Determines its
/// learning rate and which training phase may update it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    /// Colour-stream residual stages 1–3.
    ColourStream,
    /// Infrared-stream residual stages 1–3.
    InfraredStream,
    /// Residual stage 4, shared by both streams.
    SharedStage,
    /// Part embedding blocks and identity classifiers.
    Heads,
    /// Domain classifiers.
    Discriminator,
}

impl Group {
    pub const ALL: [Group; 5] = [
        Group::ColourStream,
        Group::InfraredStream,
        Group::SharedStage,
        Group::Heads,
        Group::Discriminator,
    ];

    pub fn is_extractor(self) -> bool {
        self != Group::Discriminator
    }

    pub fn is_backbone(self) -> bool {
        matches!(
            self,
            Group::ColourStream | Group::InfraredStream | Group::SharedStage
        )
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub tensor: Tensor,
}

/// Batch-norm running statistics for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Ordered, named parameters plus non-trainable buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    buffers: Vec<RunningStats>,
}

/// Graph handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub(crate) fn add(&mut self, name: String, group: Group, shape: Vec<usize>, values: Vec<f64>) -> usize {
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        let tensor = Tensor::param(shape, values).expect("parameter shape");
        self.params.push(Param { name, group, tensor });
        self.params.len() - 1
    }

    pub(crate) fn add_buffer(&mut self, name: String, channels: usize) -> usize {
        self.buffers.push(RunningStats {
            name,
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        });
        self.buffers.len() - 1
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[RunningStats] {
        &self.buffers
    }

    pub(crate) fn buffer(&self, idx: usize) -> &RunningStats {
        &self.buffers[idx]
    }

    pub(crate) fn buffer_mut(&mut self, idx: usize) -> &mut RunningStats {
        &mut self.buffers[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub(crate) fn tensor(&self, idx: usize) -> &Tensor {
        &self.params[idx].tensor
    }

    pub(crate) fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].tensor
    }

    /// Bind every parameter onto `g`; only groups accepted by `trainable`
    /// receive gradients.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(Group) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable(p.group) {
                    g.leaf(&p.tensor)
                } else {
                    g.frozen(&p.tensor)
                }
            })
            .collect();
        Bound { vars }
    }

    /// Pull leaf gradients from `g` into the parameters' grad buffers.
    pub fn collect_grads(&mut self, g: &Graph, bound: &Bound) -> Result<()> {
        for (p, v) in self.params.iter_mut().zip(&bound.vars) {
            g.accumulate_grad_into(*v, &mut p.tensor)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn count(&self, group: Group) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Hash of the exact bit patterns of every parameter in the selected groups.
    pub fn checksum(&self, groups: impl Fn(Group) -> bool) -> u64 {
        let mut h = DefaultHasher::new();
        for p in self.params.iter().filter(|p| groups(p.group)) {
            p.name.hash(&mut h);
            for v in p.tensor.values() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Names of parameters with any nonzero gradient entry.
    pub fn nonzero_grad_groups(&self) -> Vec<Group> {
        let mut out = Vec::new();
        for p in &self.params {
            if p.tensor.grad().iter().any(|g| *g != 0.0) && !out.contains(&p.group) {
                out.push(p.group);
            }
        }
        out
    }

    pub(crate) fn load_values(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has unknown parameter {name}")))?;
        if p.tensor.shape() != shape {
            return Err(Error::Config(format!(
                "parameter {name} has shape {:?} in the checkpoint but {:?} in the model",
                shape,
                p.tensor.shape()
            )));
        }
        p.tensor.values_mut().copy_from_slice(values);
        Ok(())
    }
}
