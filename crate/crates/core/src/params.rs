//! Named, ordered parameter storage shared by the model and the optimizer.

use std::collections::HashMap;
use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Accumulates across backward passes until [`ParamStore::clear_grads`].
    pub grad: Option<Tensor<T>>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, usize>,
}

/// Parameters recorded on one tape, indexable by [`ParamId`].
pub struct Bound<'t, T: Real>(Vec<Var<'t, T>>);

impl<'t, T: Real> Index<ParamId> for Bound<'t, T> {
    type Output = Var<'t, T>;

    fn index(&self, id: ParamId) -> &Var<'t, T> {
        &self.0[id.0]
    }
}

impl<'t, T: Real> Bound<'t, T> {
    /// Wraps vars already on a tape, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var<'t, T>>) -> Self {
        Bound(vars)
    }

    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.0[id.0]
    }

    /// Removes each parameter's gradient from `grads`, in store order.
    pub fn take_grads(&self, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.0.iter().map(|&v| grads.take(v)).collect()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, grad: None });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Overwrites every value; shapes must match one-to-one.
    pub fn set_values(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} values for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::dim(
                    "set_values",
                    format!("{}: {:?} vs {:?}", p.name, p.value.shape(), v.shape()),
                ));
            }
            p.value = v;
        }
        Ok(())
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound(self.params.iter().map(|p| tape.param(p.value.clone())).collect())
    }

    /// Records every parameter as a constant (no gradients).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound(self.params.iter().map(|p| tape.constant(p.value.clone())).collect())
    }

    /// Adds the gradients of a finished backward pass into the stored grads.
    pub fn accumulate(&mut self, bound: &Bound<'_, T>, grads: &mut Gradients<T>) -> Result<()> {
        self.accumulate_tensors(bound.take_grads(grads))
    }

    /// Adds per-parameter gradient tensors (in store order) into the stored grads.
    pub fn accumulate_tensors(&mut self, grads: Vec<Option<Tensor<T>>>) -> Result<()> {
        for (p, g) in self.params.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            match p.grad.as_mut() {
                Some(acc) => acc.add_assign(&g)?,
                None => p.grad = Some(g),
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

/// Normal(0, std) truncated to ±2·std by resampling.
pub fn trunc_normal<T: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = dist.sample(rng);
        if v.abs() <= 2.0 * std {
            break T::lit(v);
        }
    })
}
