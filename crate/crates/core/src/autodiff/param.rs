use std::collections::HashMap;

use indexmap::IndexMap;

use crate::element::Element;
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

use super::tape::{Tape, Var};

/// Named learnable tensor with a gradient slot of identical shape.
#[derive(Debug, Clone)]
pub struct Parameter<T: Element> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter { name: name.into(), value, grad }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Element> {
    params: IndexMap<String, Parameter<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: IndexMap::new() }
    }

    /// Adds a parameter; names must be unique.
    pub fn insert(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.params.insert(name.to_owned(), Parameter::new(name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name:?}")))
    }

    /// Replaces a value, keeping the shape fixed.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name:?}")))?;
        if p.value.shape() != value.shape() {
            return Err(contract!(
                "parameter {name:?} has shape {} but the new value is {}",
                p.value.shape(),
                value.shape()
            ));
        }
        p.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name:?}")))
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, g: &Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Usage(format!("gradient for unknown parameter {name:?}")))?;
        if p.grad.shape() != g.shape() {
            return Err(contract!("gradient for {name:?} has shape {}, expected {}", g.shape(), p.grad.shape()));
        }
        for (a, &b) in p.grad.data_mut().iter_mut().zip(g.data()) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Parameter::zero_grad);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.values()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Registers every parameter as a gradient-tracked leaf of `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        let vars = self.params.iter().map(|(k, p)| (k.clone(), tape.param(k, p.value.clone()))).collect();
        Bound { vars }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        let params = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), Parameter { name: k.clone(), value: p.value.cast(), grad: p.grad.cast() }))
            .collect();
        ParamStore { params }
    }
}

/// Parameters registered on one tape, looked up by name during a forward pass.
pub struct Bound<'t, T: Element> {
    vars: HashMap<String, Var<'t, T>>,
}

impl<'t, T: Element> Bound<'t, T> {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var<'t, T>)>) -> Self {
        Bound { vars: pairs.into_iter().collect() }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("parameter {name:?} is not bound")))
    }
}
