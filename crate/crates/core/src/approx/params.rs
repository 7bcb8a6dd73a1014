use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Index of a tensor inside a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named array with its gradient and Adam moment buffers.
///
/// Non-trainable tensors (batch-norm running statistics) only use `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    params: Vec<Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], trainable: bool, init: Vec<f64>) -> ParamId {
        let len: usize = shape.iter().product();
        assert_eq!(init.len(), len, "initial value does not match shape");
        let zeros = |on: bool| if on { vec![0.0; len] } else { Vec::new() };
        self.params.push(Param {
            name: name.into(),
            shape: shape.to_vec(),
            trainable,
            value: init,
            grad: zeros(trainable),
            m: zeros(trainable),
            v: zeros(trainable),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
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

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(Param::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Copy values (not optimizer state) from another set with the same layout.
    pub fn copy_values_from(&mut self, other: &ParameterSet) -> Result<()> {
        self.check_layout(other)?;
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value.copy_from_slice(&src.value);
        }
        Ok(())
    }

    pub fn check_layout(&self, other: &ParameterSet) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Spec(format!(
                "parameter count mismatch: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.shape != b.shape || a.trainable != b.trainable {
                return Err(Error::Spec(format!("parameter `{}` {:?} does not match `{}` {:?}", a.name, a.shape, b.name, b.shape)));
            }
        }
        Ok(())
    }

    /// Shapes consistent and all entries finite.
    pub fn validate(&self) -> Result<()> {
        for p in &self.params {
            let len: usize = p.shape.iter().product();
            let buffers_ok = if p.trainable {
                p.grad.len() == len && p.m.len() == len && p.v.len() == len
            } else {
                p.grad.is_empty() && p.m.is_empty() && p.v.is_empty()
            };
            if p.value.len() != len || !buffers_ok {
                return Err(Error::Spec(format!("buffer shape mismatch in `{}`", p.name)));
            }
            let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
            if !finite(&p.value) || !finite(&p.grad) || !finite(&p.m) || !finite(&p.v) {
                return Err(Error::Numerics(format!("non-finite entry in `{}`", p.name)));
            }
        }
        Ok(())
    }
}
