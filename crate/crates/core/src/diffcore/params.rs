use std::collections::HashMap;

use crate::diffcore::complex::ComplexTensor;
use crate::diffcore::container::{Container, Payload};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Real(Tensor),
    /// Complex weights; real and imaginary parts are optimised as independent reals.
    Complex(ComplexTensor),
}

impl ParamValue {
    pub fn shape(&self) -> &[usize] {
        match self {
            ParamValue::Real(t) => t.shape(),
            ParamValue::Complex(c) => c.shape(),
        }
    }

    /// Flat view of the stored reals (interleaved for complex values).
    pub fn flat(&self) -> &[f64] {
        match self {
            ParamValue::Real(t) => t.data(),
            ParamValue::Complex(c) => c.interleaved(),
        }
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        match self {
            ParamValue::Real(t) => t.data_mut(),
            ParamValue::Complex(c) => c.interleaved_mut(),
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, ParamValue::Complex(_))
    }
}

/// A named trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: ParamValue,
    /// Same layout as `value.flat()`.
    pub grad: Vec<f64>,
    /// Frozen parameters are read by the forward pass but never updated.
    pub frozen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which part of a parameter a tape leaf reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Part {
    Whole,
    Re,
    Im,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: ParamValue) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let n = value.flat().len();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: vec![0.0; n],
            frozen: false,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn add_real(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, ParamValue::Real(value))
    }

    pub fn add_complex(&mut self, name: &str, value: ComplexTensor) -> ParamId {
        self.insert(name, ParamValue::Complex(value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
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

    pub fn real(&self, id: ParamId) -> &Tensor {
        match &self.params[id.0].value {
            ParamValue::Real(t) => t,
            ParamValue::Complex(_) => panic!("parameter {} is complex", self.params[id.0].name),
        }
    }

    pub fn complex(&self, id: ParamId) -> &ComplexTensor {
        match &self.params[id.0].value {
            ParamValue::Complex(c) => c,
            ParamValue::Real(_) => panic!("parameter {} is real", self.params[id.0].name),
        }
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.grad.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, part: Part, grad: &Tensor) {
        let p = &mut self.params[id.0];
        match part {
            Part::Whole => {
                for (g, v) in p.grad.iter_mut().zip(grad.data()) {
                    *g += v;
                }
            }
            Part::Re => {
                for (g, v) in p.grad.iter_mut().step_by(2).zip(grad.data()) {
                    *g += v;
                }
            }
            Part::Im => {
                for (g, v) in p.grad.iter_mut().skip(1).step_by(2).zip(grad.data()) {
                    *g += v;
                }
            }
        }
    }

    /// Copies values (not gradients) from another store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::Input("parameter store layout differs".into()));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Input(format!(
                    "parameter {} layout differs",
                    dst.name
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

impl ParamStore {
    /// Appends every parameter value to a checkpoint container as `param/<name>`.
    pub fn write_to(&self, container: &mut Container) {
        for p in &self.params {
            let payload = match &p.value {
                ParamValue::Real(t) => Payload::F64(t.data().to_vec()),
                ParamValue::Complex(c) => Payload::C64(c.interleaved().to_vec()),
            };
            container.push(
                format!("param/{}", p.name),
                p.value.shape().to_vec(),
                payload,
            );
        }
    }

    /// Overwrites values from a container written by [`write_to`](Self::write_to).
    pub fn read_from(&mut self, container: &Container) -> Result<()> {
        for p in &mut self.params {
            let key = format!("param/{}", p.name);
            let entry = container
                .get(&key)
                .ok_or_else(|| Error::Input(format!("checkpoint lacks {key}")))?;
            if entry.shape != p.value.shape() {
                return Err(Error::shape("checkpoint", &entry.shape, p.value.shape()));
            }
            let src = match (&entry.payload, &p.value) {
                (Payload::F64(v), ParamValue::Real(_)) => v,
                (Payload::C64(v), ParamValue::Complex(_)) => v,
                _ => return Err(Error::Input(format!("checkpoint dtype mismatch for {key}"))),
            };
            if src.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(key));
            }
            p.value.flat_mut().copy_from_slice(src);
        }
        Ok(())
    }
}
