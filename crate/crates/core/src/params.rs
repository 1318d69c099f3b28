//! Named trainable parameters stored in `f32`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::{Gradients, RealTensor, Tape, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Ordered collection of named parameters. The order is the registration
/// order and is what checkpoints and optimizers iterate over.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!("param {name}: shape {:?} needs {n} values, got {}", shape, data.len()));
        }
        if self.find(name).is_some() {
            return Err(Error::Config(alloc::format!("duplicate parameter name {name}")));
        }
        self.params.push(Param { name: name.to_string(), shape: shape.to_vec(), data });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, shape, alloc::vec![0.0; n])
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], v: f32) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, shape, alloc::vec![v; n])
    }

    /// Uniform `±1/sqrt(fan_in)` initialization.
    pub fn uniform<R: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) -> Result<ParamId> {
        let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect();
        self.add(name, shape, data)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.find(name).ok_or_else(|| Error::Config(alloc::format!("missing parameter {name}")))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    /// Number of scalars whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|p| p.name.starts_with(prefix)).map(Param::numel).sum()
    }

    /// Places every parameter on the tape as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let t = RealTensor::new(p.shape.clone(), p.data.iter().map(|&v| v as f64).collect())
                    .expect("parameter shapes are validated on insert");
                tape.param(t)
            })
            .collect();
        Bound { vars }
    }

    /// Overwrites parameter values, checking names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::Config(alloc::format!("checkpoint lacks parameter {}", p.name)))?;
            if src.shape != p.shape {
                return Err(shape_err!("parameter {}: checkpoint shape {:?}, model {:?}", p.name, src.shape, p.shape));
            }
            p.data.clone_from(&src.data);
        }
        Ok(())
    }
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles given explicitly, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradient buffers in store order.
    pub fn collect(&self, grads: &mut Gradients) -> Vec<Vec<f64>> {
        self.vars.iter().map(|&v| grads.take(v).unwrap_or_default()).collect()
    }
}

/// Elementwise sum of per-sample gradient sets, in order.
pub fn accumulate(into: &mut Vec<Vec<f64>>, other: &[Vec<f64>]) {
    if into.is_empty() {
        into.extend(other.iter().cloned());
        return;
    }
    for (a, b) in into.iter_mut().zip(other) {
        if a.is_empty() {
            a.clone_from(b);
        } else {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}
