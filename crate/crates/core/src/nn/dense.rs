use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Fully connected layer, `y = x W^T + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone)]
pub struct Dense<T: Scalar = f32> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    inputs: usize,
    outputs: usize,
    pub(crate) grad_weight: Vec<T>,
    pub(crate) grad_bias: Vec<T>,
    cache: Option<Tensor<T>>,
}

/// Uniform in `±1/sqrt(fan_in)`.
fn init_row<T: Scalar, R: Rng + ?Sized>(
    fan_in: usize,
    rng: &mut R,
) -> impl Iterator<Item = T> + '_ {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..fan_in).map(move |_| T::of(rng.random_range(-bound..bound)))
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut weight = Vec::with_capacity(inputs * outputs);
        for _ in 0..outputs {
            weight.extend(init_row::<T, R>(inputs, rng));
        }
        Self::from_parts(inputs, outputs, weight, vec![T::zero(); outputs])
            .expect("freshly initialized shapes agree")
    }

    pub fn from_parts(inputs: usize, outputs: usize, weight: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::Shape(format!(
                "dense {inputs}->{outputs} with {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            grad_weight: vec![T::zero(); weight.len()],
            grad_bias: vec![T::zero(); outputs],
            weight,
            bias,
            inputs,
            outputs,
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.dims().len() != 2 || x.dims()[1] != self.inputs {
            return Err(Error::Shape(format!(
                "dense layer expects [batch, {}], got {:?}",
                self.inputs,
                x.dims()
            )));
        }
        let n = x.rows();
        let mut out = Vec::with_capacity(n * self.outputs);
        for i in 0..n {
            let row = x.row(i);
            for o in 0..self.outputs {
                let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                let dot = row
                    .iter()
                    .zip(w)
                    .fold(self.bias[o], |acc, (&a, &b)| acc + a * b);
                out.push(dot);
            }
        }
        Tensor::new(vec![n, self.outputs], out)
    }

    pub(crate) fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub(crate) fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("dense backward without forward".into()))?;
        let n = x.rows();
        if dy.dims() != [n, self.outputs] {
            return Err(Error::Shape("dense gradient shape".into()));
        }
        self.grad_weight.iter_mut().for_each(|g| *g = T::zero());
        self.grad_bias.iter_mut().for_each(|g| *g = T::zero());
        let mut dx = vec![T::zero(); n * self.inputs];
        for i in 0..n {
            let xi = x.row(i);
            let dxi = &mut dx[i * self.inputs..(i + 1) * self.inputs];
            for o in 0..self.outputs {
                let g = dy.data()[i * self.outputs + o];
                self.grad_bias[o] = self.grad_bias[o] + g;
                let gw = &mut self.grad_weight[o * self.inputs..(o + 1) * self.inputs];
                let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                for j in 0..self.inputs {
                    gw[j] = gw[j] + g * xi[j];
                    dxi[j] = dxi[j] + g * w[j];
                }
            }
        }
        Tensor::new(vec![n, self.inputs], dx)
    }

    /// Appends `extra` freshly initialized output rows with zero bias.
    pub(crate) fn add_outputs<R: Rng + ?Sized>(&mut self, extra: usize, rng: &mut R) {
        for _ in 0..extra {
            self.weight.extend(init_row::<T, R>(self.inputs, rng));
            self.bias.push(T::zero());
        }
        self.outputs += extra;
        self.grad_weight.resize(self.weight.len(), T::zero());
        self.grad_bias.resize(self.outputs, T::zero());
        self.cache = None;
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        y
    }

    pub(crate) fn forward_train<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        self.infer(x)
    }

    pub(crate) fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| Error::InvalidArgument("relu backward without forward".into()))?;
        let mut dx = dy.clone();
        for (v, keep) in dx.data_mut().iter_mut().zip(mask) {
            if !keep {
                *v = T::zero();
            }
        }
        Ok(dx)
    }
}
