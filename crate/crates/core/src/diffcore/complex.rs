use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// Complex tensor with interleaved `(re, im)` storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ComplexTensor {
    pub fn new(shape: Vec<usize>, interleaved: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product::<usize>() * 2;
        if expected != interleaved.len() {
            return Err(Error::shape("complex tensor", &shape, &[interleaved.len()]));
        }
        if interleaved.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("complex tensor".into()));
        }
        Ok(Self {
            shape,
            data: interleaved,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product::<usize>() * 2],
        }
    }

    /// Combines separate real and imaginary parts of identical shape.
    pub fn from_parts(re: &Tensor, im: &Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::shape("complex from_parts", re.shape(), im.shape()));
        }
        let data = re
            .data()
            .iter()
            .zip(im.data())
            .flat_map(|(&r, &i)| [r, i])
            .collect();
        Ok(Self {
            shape: re.shape().to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of complex entries.
    pub fn len(&self) -> usize {
        self.data.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn interleaved(&self) -> &[f64] {
        &self.data
    }

    pub fn interleaved_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn re(&self) -> Tensor {
        let v = self.data.iter().step_by(2).copied().collect();
        Tensor::new(self.shape.clone(), v).expect("shape preserved")
    }

    pub fn im(&self) -> Tensor {
        let v = self.data.iter().skip(1).step_by(2).copied().collect();
        Tensor::new(self.shape.clone(), v).expect("shape preserved")
    }

    pub fn get(&self, idx: usize) -> (f64, f64) {
        (self.data[2 * idx], self.data[2 * idx + 1])
    }
}
