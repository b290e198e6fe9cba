//! Named parameter storage with trainable/frozen flags.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
    /// Accumulated gradient, same length as `value`.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ParameterRegistry {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParameterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::contract(format!("parameter {name} registered twice")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            grad: vec![0.0; value.len()],
            value,
            trainable,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Parameters whose name starts with `prefix`, in registration order.
    pub fn group<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Parameter> + 'a {
        self.params.iter().filter(move |p| p.name.starts_with(prefix))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `scale · grad` into the gradient buffer of a trainable parameter.
    /// Frozen parameters are never written.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64], scale: f64) {
        let p = &mut self.params[id.0];
        if !p.trainable {
            return;
        }
        for (a, g) in p.grad.iter_mut().zip(grad) {
            *a += scale * g;
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Little-endian value bytes of every parameter in a group, for bit-exact comparison.
    pub fn group_bytes(&self, prefix: &str) -> Vec<u8> {
        self.group(prefix).flat_map(|p| p.value.to_le_bytes()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut r = ParameterRegistry::new();
        r.register("a", Tensor::scalar(1.0), true).unwrap();
        assert!(r.register("a", Tensor::scalar(2.0), true).is_err());
    }

    #[test]
    fn frozen_grad_never_written() {
        let mut r = ParameterRegistry::new();
        let f = r.register("enc.w", Tensor::zeros(&[2]), false).unwrap();
        let t = r.register("dec.w", Tensor::zeros(&[2]), true).unwrap();
        r.accumulate_grad(f, &[1.0, 1.0], 1.0);
        r.accumulate_grad(t, &[1.0, 2.0], 0.5);
        assert_eq!(r.get(f).grad, vec![0.0, 0.0]);
        assert_eq!(r.get(t).grad, vec![0.5, 1.0]);
        assert_eq!(r.group("enc").count(), 1);
    }
}
