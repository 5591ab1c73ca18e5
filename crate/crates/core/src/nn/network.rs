use std::collections::HashSet;

use rand::Rng;

use crate::bnt::{self, NamedTensor};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::loss::softmax_cross_entropy;
use super::optim::SgdOptimizer;
use super::trace::{ActivationTrace, TraceLayer};
use super::{BatchNorm, Dense, Mode, Relu};

#[derive(Debug, Clone)]
pub enum Layer<T: Scalar = f32> {
    Dense(Dense<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu),
}

impl<T: Scalar> Layer<T> {
    fn code(&self) -> u32 {
        match self {
            Layer::Dense(_) => 0,
            Layer::BatchNorm(_) => 1,
            Layer::Relu(_) => 2,
        }
    }
}

/// Feed-forward classifier: a body of dense / batch-norm / ReLU layers and a
/// dense output head whose rows are tagged with class ids.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    layers: Vec<Layer<T>>,
    head: Dense<T>,
    classes: Vec<u32>,
    mode: Mode,
}

/// A trainable parameter tensor and its most recent gradient.
pub struct ParamMut<'a, T> {
    pub name: String,
    pub value: &'a mut [T],
    pub grad: &'a [T],
}

impl<T: Scalar> Network<T> {
    /// `Dense -> BatchNorm -> ReLU` for each hidden width, then the head.
    pub fn mlp<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        classes: &[u32],
        rng: &mut R,
    ) -> Result<Self> {
        Self::mlp_with_bn(input_dim, hidden, &vec![true; hidden.len()], classes, rng)
    }

    /// Like [`Network::mlp`], with batch norm only after the hidden layers
    /// flagged in `batch_norm`.
    pub fn mlp_with_bn<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        batch_norm: &[bool],
        classes: &[u32],
        rng: &mut R,
    ) -> Result<Self> {
        if batch_norm.len() != hidden.len() {
            return Err(Error::Shape(format!(
                "{} batch-norm flags for {} hidden layers",
                batch_norm.len(),
                hidden.len()
            )));
        }
        let mut layers = Vec::with_capacity(hidden.len() * 3);
        let mut width = input_dim;
        for (&h, &bn) in hidden.iter().zip(batch_norm) {
            layers.push(Layer::Dense(Dense::new(width, h, rng)));
            if bn {
                layers.push(Layer::BatchNorm(BatchNorm::new(h)));
            }
            layers.push(Layer::Relu(Relu::default()));
            width = h;
        }
        let head = Dense::new(width, classes.len(), rng);
        Self::from_layers(layers, head, classes.to_vec())
    }

    pub fn from_layers(layers: Vec<Layer<T>>, head: Dense<T>, classes: Vec<u32>) -> Result<Self> {
        let mut width: Option<usize> = None;
        let mut has_bn = false;
        for (i, layer) in layers.iter().enumerate() {
            let (inp, out) = match layer {
                Layer::Dense(d) => (Some(d.inputs()), Some(d.outputs())),
                Layer::BatchNorm(b) => {
                    has_bn = true;
                    (Some(b.channels()), Some(b.channels()))
                }
                Layer::Relu(_) => (None, None),
            };
            if let (Some(w), Some(inp)) = (width, inp) {
                if w != inp {
                    return Err(Error::Shape(format!(
                        "layer {i} expects width {inp}, gets {w}"
                    )));
                }
            }
            width = out.or(width);
        }
        if let Some(w) = width {
            if w != head.inputs() {
                return Err(Error::Shape(format!(
                    "head expects width {}, gets {w}",
                    head.inputs()
                )));
            }
        }
        if !has_bn {
            return Err(Error::InvalidArgument(
                "network needs at least one batch norm layer".into(),
            ));
        }
        if classes.len() != head.outputs() {
            return Err(Error::Shape(format!(
                "{} class ids for {} head outputs",
                classes.len(),
                head.outputs()
            )));
        }
        if classes.iter().collect::<HashSet<_>>().len() != classes.len() {
            return Err(Error::InvalidArgument("duplicate class ids in head".into()));
        }
        Ok(Self {
            layers,
            head,
            classes,
            mode: Mode::Train,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn head(&self) -> &Dense<T> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Dense<T> {
        &mut self.head
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Class id of each head output.
    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_position(&self, class: u32) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Dense(d) => Some(d.inputs()),
                Layer::BatchNorm(b) => Some(b.channels()),
                Layer::Relu(_) => None,
            })
            .unwrap_or(self.head.inputs())
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(b) => Some(b),
            _ => None,
        })
    }

    pub fn param_count(&self) -> usize {
        let body: usize = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.weight.len() + d.bias.len(),
                Layer::BatchNorm(b) => 2 * b.channels(),
                Layer::Relu(_) => 0,
            })
            .sum();
        body + self.head.weight.len() + self.head.bias.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.dims().len() < 2 || x.row_len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects [batch, {}], got {:?}",
                self.input_dim(),
                x.dims()
            )));
        }
        Ok(x.clone().flatten_rows())
    }

    /// Eval-mode forward pass. Pure: reads parameters and running statistics
    /// only, so it can run on a shared snapshot.
    pub fn infer(
        &self,
        x: &Tensor<T>,
        capture: bool,
    ) -> Result<(Tensor<T>, Option<ActivationTrace>)> {
        let mut h = self.check_input(x)?;
        let n = h.rows();
        let mut trace = Vec::new();
        for layer in &self.layers {
            h = match layer {
                Layer::Dense(d) => d.infer(&h)?,
                Layer::Relu(r) => r.infer(&h),
                Layer::BatchNorm(b) if capture => {
                    let (z, out) = b.infer_with_standardized(&h)?;
                    trace.push(trace_layer(n, b.channels(), &z, &out));
                    out
                }
                Layer::BatchNorm(b) => b.infer(&h)?,
            };
        }
        let logits = self.head.infer(&h)?;
        let trace = if capture {
            Some(ActivationTrace::new(n, trace)?)
        } else {
            None
        };
        Ok((logits, trace))
    }

    /// Forward pass in the network's current mode. In train mode batch norm
    /// layers use batch statistics, update their running statistics and keep
    /// what the backward pass needs; a single-sample batch is normalized with
    /// the frozen running statistics instead.
    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        capture: bool,
    ) -> Result<(Tensor<T>, Option<ActivationTrace>)> {
        if self.mode == Mode::Eval {
            return self.infer(x, capture);
        }
        let mut h = self.check_input(x)?;
        let n = h.rows();
        let mut trace = Vec::new();
        for layer in &mut self.layers {
            h = match layer {
                Layer::Dense(d) => d.forward_train(&h)?,
                Layer::Relu(r) => r.forward_train(&h),
                Layer::BatchNorm(b) => {
                    let out = if n >= 2 {
                        b.forward(&h, Mode::Train)?
                    } else {
                        b.forward_frozen(&h)?
                    };
                    if capture {
                        let z = b.cached_standardized().expect("cache set by forward");
                        let z = Tensor::new(out.dims().to_vec(), z.to_vec())?;
                        trace.push(trace_layer(n, b.channels(), &z, &out));
                    }
                    out
                }
            };
        }
        let logits = self.head.forward_train(&h)?;
        let trace = if capture {
            Some(ActivationTrace::new(n, trace)?)
        } else {
            None
        };
        Ok((logits, trace))
    }

    /// Train-mode forward and backward. Leaves gradients in the layers and
    /// returns the mean cross-entropy. `targets` are head output positions.
    pub fn loss_and_grad(&mut self, x: &Tensor<T>, targets: &[usize]) -> Result<f64> {
        if self.mode != Mode::Train {
            return Err(Error::InvalidArgument(
                "gradient requested in eval mode".into(),
            ));
        }
        let (logits, _) = self.forward(x, false)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, targets)?;
        let mut g = self.head.backward(&dlogits)?;
        for layer in self.layers.iter_mut().rev() {
            g = match layer {
                Layer::Dense(d) => d.backward(&g)?,
                Layer::BatchNorm(b) => b.backward(&g)?,
                Layer::Relu(r) => r.backward(&g)?,
            };
        }
        Ok(loss)
    }

    /// One optimizer step on a labelled minibatch; returns the loss measured
    /// before the step.
    pub fn backward_and_step(
        &mut self,
        x: &Tensor<T>,
        targets: &[usize],
        opt: &mut SgdOptimizer<T>,
    ) -> Result<f64> {
        let loss = self.loss_and_grad(x, targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: opt.steps() });
        }
        opt.step(self);
        Ok(loss)
    }

    /// Parameters in a fixed order: body layers front to back, then the head.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    out.push(ParamMut {
                        name: format!("layer.{i}.weight"),
                        value: &mut d.weight,
                        grad: &d.grad_weight,
                    });
                    out.push(ParamMut {
                        name: format!("layer.{i}.bias"),
                        value: &mut d.bias,
                        grad: &d.grad_bias,
                    });
                }
                Layer::BatchNorm(b) => {
                    out.push(ParamMut {
                        name: format!("layer.{i}.gamma"),
                        value: &mut b.gamma,
                        grad: &b.grad_gamma,
                    });
                    out.push(ParamMut {
                        name: format!("layer.{i}.beta"),
                        value: &mut b.beta,
                        grad: &b.grad_beta,
                    });
                }
                Layer::Relu(_) => {}
            }
        }
        let head = &mut self.head;
        out.push(ParamMut {
            name: "head.weight".into(),
            value: &mut head.weight,
            grad: &head.grad_weight,
        });
        out.push(ParamMut {
            name: "head.bias".into(),
            value: &mut head.bias,
            grad: &head.grad_bias,
        });
        out
    }

    /// Adds one head output per new class id. Existing rows are untouched, so
    /// logits of known classes do not change for any input.
    pub fn expand_head<R: Rng + ?Sized>(&mut self, new_classes: &[u32], rng: &mut R) -> Result<()> {
        if new_classes.is_empty() {
            return Err(Error::InvalidArgument(
                "head expansion by zero classes".into(),
            ));
        }
        let mut seen: HashSet<u32> = self.classes.iter().copied().collect();
        for c in new_classes {
            if !seen.insert(*c) {
                return Err(Error::InvalidArgument(format!(
                    "class {c} already has a head output"
                )));
            }
        }
        self.head.add_outputs(new_classes.len(), rng);
        self.classes.extend_from_slice(new_classes);
        Ok(())
    }

    /// Predicted class id per row (eval mode; ties go to the earlier output).
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<u32>> {
        let (logits, _) = self.infer(x, false)?;
        let k = self.n_classes();
        Ok((0..logits.rows())
            .map(|i| {
                let row = &logits.data()[i * k..(i + 1) * k];
                let best = row
                    .iter()
                    .enumerate()
                    .fold(0, |best, (j, v)| if *v > row[best] { j } else { best });
                self.classes[best]
            })
            .collect())
    }
}

fn trace_layer<T: Scalar>(n: usize, channels: usize, z: &Tensor<T>, out: &Tensor<T>) -> TraceLayer {
    let width = z.len() / n.max(1);
    TraceLayer {
        channels,
        spatial: width / channels,
        standardized: z.data().iter().map(|v| v.as_f64()).collect(),
        activated: out.data().iter().map(|v| v.as_f64()).collect(),
    }
}

impl Network<f32> {
    /// Serializes parameters, running statistics and head metadata.
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = vec![NamedTensor::u32(
            "meta.layers",
            &[self.layers.len().max(1)],
            if self.layers.is_empty() {
                vec![u32::MAX]
            } else {
                self.layers.iter().map(Layer::code).collect()
            },
        )];
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(d) => {
                    out.push(NamedTensor::f32(
                        format!("layer.{i}.weight"),
                        &[d.outputs(), d.inputs()],
                        d.weight.clone(),
                    ));
                    out.push(NamedTensor::f32(
                        format!("layer.{i}.bias"),
                        &[d.outputs()],
                        d.bias.clone(),
                    ));
                }
                Layer::BatchNorm(b) => {
                    let c = b.channels();
                    out.push(NamedTensor::f32(
                        format!("layer.{i}.gamma"),
                        &[c],
                        b.gamma.clone(),
                    ));
                    out.push(NamedTensor::f32(
                        format!("layer.{i}.beta"),
                        &[c],
                        b.beta.clone(),
                    ));
                    out.push(NamedTensor::f32(
                        format!("layer.{i}.running_mean"),
                        &[c],
                        b.running_mean.clone(),
                    ));
                    out.push(NamedTensor::f32(
                        format!("layer.{i}.running_var"),
                        &[c],
                        b.running_var.clone(),
                    ));
                    out.push(NamedTensor::f32(
                        format!("layer.{i}.config"),
                        &[2],
                        vec![b.eps, b.momentum],
                    ));
                }
                Layer::Relu(_) => {}
            }
        }
        let h = &self.head;
        out.push(NamedTensor::f32(
            "head.weight",
            &[h.outputs(), h.inputs()],
            h.weight.clone(),
        ));
        out.push(NamedTensor::f32(
            "head.bias",
            &[h.outputs()],
            h.bias.clone(),
        ));
        out.push(NamedTensor::u32(
            "head.classes",
            &[self.classes.len()],
            self.classes.clone(),
        ));
        out
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<Self> {
        let f32s =
            |name: &str| -> Result<Vec<f32>> { Ok(bnt::find(tensors, name)?.as_f32()?.to_vec()) };
        let codes = bnt::find(tensors, "meta.layers")?.as_u32()?;
        let mut layers = Vec::new();
        for (i, &code) in codes.iter().enumerate() {
            match code {
                0 => {
                    let w = bnt::find(tensors, &format!("layer.{i}.weight"))?;
                    let dims = w.dims_usize();
                    if dims.len() != 2 {
                        return Err(Error::Format(format!("layer.{i}.weight must be rank 2")));
                    }
                    let d = Dense::from_parts(
                        dims[1],
                        dims[0],
                        w.as_f32()?.to_vec(),
                        f32s(&format!("layer.{i}.bias"))?,
                    )?;
                    layers.push(Layer::Dense(d));
                }
                1 => {
                    let gamma = f32s(&format!("layer.{i}.gamma"))?;
                    let cfg = f32s(&format!("layer.{i}.config"))?;
                    if cfg.len() != 2 {
                        return Err(Error::Format(format!(
                            "layer.{i}.config must hold eps and momentum"
                        )));
                    }
                    let mut b = BatchNorm::with_config(gamma.len(), cfg[0] as f64, cfg[1] as f64);
                    b.gamma = gamma;
                    b.beta = f32s(&format!("layer.{i}.beta"))?;
                    b.running_mean = f32s(&format!("layer.{i}.running_mean"))?;
                    b.running_var = f32s(&format!("layer.{i}.running_var"))?;
                    let c = b.channels();
                    if [b.beta.len(), b.running_mean.len(), b.running_var.len()] != [c; 3] {
                        return Err(Error::Format(format!(
                            "layer.{i} batch norm tensors disagree"
                        )));
                    }
                    layers.push(Layer::BatchNorm(b));
                }
                2 => layers.push(Layer::Relu(Relu::default())),
                u32::MAX if codes.len() == 1 => {}
                other => return Err(Error::Format(format!("unknown layer code {other}"))),
            }
        }
        let hw = bnt::find(tensors, "head.weight")?;
        let dims = hw.dims_usize();
        if dims.len() != 2 {
            return Err(Error::Format("head.weight must be rank 2".into()));
        }
        let head = Dense::from_parts(dims[1], dims[0], hw.as_f32()?.to_vec(), f32s("head.bias")?)?;
        let classes = bnt::find(tensors, "head.classes")?.as_u32()?.to_vec();
        let mut net = Self::from_layers(layers, head, classes)?;
        net.mode = Mode::Eval;
        Ok(net)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        bnt::save(path, &self.to_tensors())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_tensors(&bnt::load(path)?)
    }
}
