//! Small deterministic reverse-mode network engine.
//!
//! A [`Network`] is an ordered list of layers mapping an image tensor to class
//! logits. Gradients are computed by a hand-written backward pass over a
//! recorded [`Trace`]; there is no general graph and no double backprop.

mod check;
mod layers;
mod smooth;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, SeedRng};
use crate::tensor::Tensor;

pub use check::{finite_difference_check, relative_error, GradCheck};
pub use smooth::{operator_norm_bound, smoothness_bound};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Softplus,
}

/// Fully connected layer; `weights` is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// 2-d convolution over `[channels, height, width]`; `kernels` is
/// `[out_channels, in_channels, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Activation(ActivationKind),
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Activation(ActivationKind::Relu) => "relu",
            Layer::Activation(ActivationKind::Softplus) => "softplus",
            Layer::Flatten => "flatten",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Dense(_) | Layer::Conv2d(_))
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense {
                out: d.weights.shape()[0],
            },
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                out_channels: c.kernels.shape()[0],
                kernel: c.kernels.shape()[2],
                stride: c.stride,
                padding: c.padding,
            },
            Layer::Activation(k) => LayerSpec::Activation(*k),
            Layer::Flatten => LayerSpec::Flatten,
        }
    }

    fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Dense(d) => Some((&d.weights, &d.bias)),
            Layer::Conv2d(c) => Some((&c.kernels, &c.bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Dense(d) => Some((&mut d.weights, &mut d.bias)),
            Layer::Conv2d(c) => Some((&mut c.kernels, &mut c.bias)),
            _ => None,
        }
    }

    /// Output shape for `input`, or a message describing the mismatch.
    fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            Layer::Dense(d) => {
                let (out, inp) = (d.weights.shape()[0], d.weights.shape()[1]);
                if input.len() != 1 || input[0] != inp {
                    return Err(format!("expected input [{inp}], got {input:?}"));
                }
                Ok(vec![out])
            }
            Layer::Conv2d(c) => {
                let ks = c.kernels.shape();
                if input.len() != 3 || input[0] != ks[1] {
                    return Err(format!(
                        "expected input [{}, H, W], got {input:?}",
                        ks[1]
                    ));
                }
                let (h, w) = (
                    conv_out_dim(input[1], ks[2], c.stride, c.padding),
                    conv_out_dim(input[2], ks[2], c.stride, c.padding),
                );
                match (h, w) {
                    (Some(h), Some(w)) => Ok(vec![ks[0], h, w]),
                    _ => Err(format!("kernel {} does not fit input {input:?}", ks[2])),
                }
            }
            Layer::Activation(_) => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

pub(crate) fn conv_pad(kernel: usize, padding: Padding) -> usize {
    match padding {
        Padding::Valid => 0,
        Padding::Same => kernel / 2,
    }
}

fn conv_out_dim(len: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    let padded = len + 2 * conv_pad(kernel, padding);
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Parameter-free description of a layer, used for construction and file headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        out: usize,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Activation(ActivationKind),
    Flatten,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { out } => write!(f, "dense:{out}"),
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let pad = match padding {
                    Padding::Valid => "valid",
                    Padding::Same => "same",
                };
                write!(f, "conv:{out_channels}:{kernel}:{stride}:{pad}")
            }
            LayerSpec::Activation(ActivationKind::Relu) => f.write_str("relu"),
            LayerSpec::Activation(ActivationKind::Softplus) => f.write_str("softplus"),
            LayerSpec::Flatten => f.write_str("flatten"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| -> Result<usize> {
            parts
                .get(i)
                .and_then(|p| p.parse().ok())
                .filter(|&n: &usize| n > 0)
                .ok_or_else(|| Error::invalid(format!("bad layer token '{s}'")))
        };
        match parts[0] {
            "dense" if parts.len() == 2 => Ok(LayerSpec::Dense { out: num(1)? }),
            "conv" if parts.len() == 4 || parts.len() == 5 => {
                let padding = match parts.get(4).copied().unwrap_or("same") {
                    "same" => Padding::Same,
                    "valid" => Padding::Valid,
                    other => return Err(Error::invalid(format!("unknown padding '{other}'"))),
                };
                Ok(LayerSpec::Conv2d {
                    out_channels: num(1)?,
                    kernel: num(2)?,
                    stride: num(3)?,
                    padding,
                })
            }
            "relu" => Ok(LayerSpec::Activation(ActivationKind::Relu)),
            "softplus" => Ok(LayerSpec::Activation(ActivationKind::Softplus)),
            "flatten" => Ok(LayerSpec::Flatten),
            _ => Err(Error::invalid(format!("bad layer token '{s}'"))),
        }
    }
}

/// Parses a `-`-separated architecture string such as
/// `conv:8:3:2:same-relu-flatten-dense:4`.
pub fn parse_arch(arch: &str) -> Result<Vec<LayerSpec>> {
    arch.split('-')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    class_count: usize,
}

/// Gradient of one parameterized layer; shapes match the layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Per-layer parameter gradients (`None` for parameter-free layers).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Option<ParamGrad>>);

impl ParamGrads {
    pub fn zeros_like(net: &Network) -> Self {
        ParamGrads(
            net.layers
                .iter()
                .map(|l| {
                    l.params().map(|(w, b)| ParamGrad {
                        weights: Tensor::zeros(w.shape()),
                        bias: Tensor::zeros(b.shape()),
                    })
                })
                .collect(),
        )
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.0
            .iter()
            .flatten()
            .flat_map(|g| [g.weights.data(), g.bias.data()])
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.0
            .iter_mut()
            .flatten()
            .flat_map(|g| [g.weights.data_mut(), g.bias.data_mut()])
            .collect()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

/// Loss value together with parameter and input gradients.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub loss: f64,
    pub logits: Tensor,
    pub probs: Tensor,
    pub param_grads: ParamGrads,
    pub input_grad: Tensor,
}

/// Which scalar output a saliency map differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputMode {
    /// Post-softmax probability of the target class.
    #[default]
    Probability,
    /// Pre-softmax logit of the target class.
    Logit,
}

/// Intermediate values of a forward pass; `inputs[i]` is the input of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub inputs: Vec<Tensor>,
    pub logits: Tensor,
    pub probs: Tensor,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[y]` computed via log-sum-exp.
pub fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[y]
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, class_count: usize) -> Result<Self> {
        let net = Self {
            input_shape,
            layers,
            class_count,
        };
        net.validate()?;
        Ok(net)
    }

    /// Builds a network from layer specs with uniform Glorot initialization
    /// drawn from `seed`.
    pub fn init(
        input_shape: &[usize],
        specs: &[LayerSpec],
        class_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = rng::stream(seed, "init");
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Dense { out } => {
                    if shape.len() != 1 {
                        return Err(Error::Layer {
                            layer: i,
                            kind: "dense",
                            message: format!("expected flat input, got {shape:?}"),
                        });
                    }
                    let inp = shape[0];
                    Layer::Dense(Dense {
                        weights: glorot(&mut rng, &[out, inp], inp, out),
                        bias: Tensor::zeros(&[out]),
                    })
                }
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if shape.len() != 3 {
                        return Err(Error::Layer {
                            layer: i,
                            kind: "conv2d",
                            message: format!("expected [C, H, W] input, got {shape:?}"),
                        });
                    }
                    let cin = shape[0];
                    let k2 = kernel * kernel;
                    Layer::Conv2d(Conv2d {
                        kernels: glorot(
                            &mut rng,
                            &[out_channels, cin, kernel, kernel],
                            cin * k2,
                            out_channels * k2,
                        ),
                        bias: Tensor::zeros(&[out_channels]),
                        stride,
                        padding,
                    })
                }
                LayerSpec::Activation(kind) => Layer::Activation(kind),
                LayerSpec::Flatten => Layer::Flatten,
            };
            shape = layer.output_shape(&shape).map_err(|message| Error::Layer {
                layer: i,
                kind: layer.kind(),
                message,
            })?;
            layers.push(layer);
        }
        Self::new(input_shape.to_vec(), layers, class_count)
    }

    fn validate(&self) -> Result<()> {
        let mut shape = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Conv2d(c) = layer {
                if c.kernels.shape().len() != 4 || c.kernels.shape()[2] != c.kernels.shape()[3] {
                    return Err(Error::Layer {
                        layer: i,
                        kind: "conv2d",
                        message: "kernels must be [out, in, k, k]".into(),
                    });
                }
            }
            if let Some((w, b)) = layer.params() {
                if b.len() != w.shape()[0] {
                    return Err(Error::Layer {
                        layer: i,
                        kind: layer.kind(),
                        message: format!("bias length {} != {}", b.len(), w.shape()[0]),
                    });
                }
            }
            shape = layer.output_shape(&shape).map_err(|message| Error::Layer {
                layer: i,
                kind: layer.kind(),
                message,
            })?;
        }
        if shape != [self.class_count] {
            return Err(Error::Shape(format!(
                "network output {shape:?} does not match {} classes",
                self.class_count
            )));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|(w, b)| [w.data(), b.data()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .flat_map(|(w, b)| [w.data_mut(), b.data_mut()])
            .collect()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn uses_relu(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, Layer::Activation(ActivationKind::Relu)))
    }

    /// Re-draws the parameters of layer `index` (no-op for parameter-free layers).
    pub fn reinit_layer(&mut self, index: usize, seed: u64) -> Result<()> {
        let layer = self
            .layers
            .get_mut(index)
            .ok_or_else(|| Error::invalid(format!("no layer {index}")))?;
        let mut rng = rng::stream(seed, &format!("reinit-{index}"));
        match layer {
            Layer::Dense(d) => {
                let (out, inp) = (d.weights.shape()[0], d.weights.shape()[1]);
                d.weights = glorot(&mut rng, &[out, inp], inp, out);
                d.bias = Tensor::zeros(&[out]);
            }
            Layer::Conv2d(c) => {
                let s = c.kernels.shape().to_vec();
                let k2 = s[2] * s[3];
                c.kernels = glorot(&mut rng, &s, s[1] * k2, s[0] * k2);
                c.bias = Tensor::zeros(&[s[0]]);
            }
            _ => {}
        }
        Ok(())
    }

    /// 64-bit FNV-1a digest over architecture and parameter bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3);
            }
        };
        for spec in self.specs() {
            feed(spec.to_string().as_bytes());
        }
        for s in self.param_slices() {
            for v in s {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            let kind = self.layers.first().map_or("input", Layer::kind);
            return Err(Error::Layer {
                layer: 0,
                kind,
                message: format!(
                    "expected input {:?}, got {:?}",
                    self.input_shape,
                    x.shape()
                ),
            });
        }
        Ok(())
    }

    pub fn check_class(&self, c: usize) -> Result<()> {
        if c >= self.class_count {
            return Err(Error::ClassOutOfRange {
                index: c,
                classes: self.class_count,
            });
        }
        Ok(())
    }

    pub fn trace(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let next = layers::forward(layer, &cur);
            inputs.push(cur);
            cur = next;
        }
        let probs = Tensor::vector(softmax(cur.data()));
        Ok(Trace {
            inputs,
            logits: cur,
            probs,
        })
    }

    /// Logits and post-softmax probabilities.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let t = self.trace(x)?;
        Ok((t.logits, t.probs))
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.0.argmax())
    }

    /// Backpropagates `dlogits` through a recorded trace.
    pub fn backprop(
        &self,
        trace: &Trace,
        dlogits: &[f64],
        with_params: bool,
    ) -> (Option<ParamGrads>, Tensor) {
        self.backprop_inner(trace, dlogits, with_params, true)
    }

    fn backprop_inner(
        &self,
        trace: &Trace,
        dlogits: &[f64],
        with_params: bool,
        need_input: bool,
    ) -> (Option<ParamGrads>, Tensor) {
        let mut grads = with_params.then(|| ParamGrads(vec![None; self.layers.len()]));
        let mut g = Tensor::vector(dlogits.to_vec());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (gin, pg) = layers::backward(layer, &trace.inputs[i], &g, with_params, need_input || i > 0);
            if let Some(grads) = grads.as_mut() {
                grads.0[i] = pg;
            }
            g = gin;
        }
        (grads, g)
    }

    /// Loss, probabilities and parameter gradients, skipping the input gradient.
    pub fn param_gradients(&self, x: &Tensor, y: usize) -> Result<(f64, Tensor, ParamGrads)> {
        self.check_class(y)?;
        let trace = self.trace(x)?;
        let dlogits = loss_seed(trace.probs.data(), y);
        let (pg, _) = self.backprop_inner(&trace, &dlogits, true, false);
        Ok((
            cross_entropy(trace.logits.data(), y),
            trace.probs,
            pg.expect("requested parameter gradients"),
        ))
    }

    /// Cross-entropy loss with exact parameter and input gradients.
    pub fn backward(&self, x: &Tensor, y: usize) -> Result<LossGradients> {
        self.check_class(y)?;
        let trace = self.trace(x)?;
        let dlogits = loss_seed(trace.probs.data(), y);
        let (pg, ig) = self.backprop(&trace, &dlogits, true);
        Ok(LossGradients {
            loss: cross_entropy(trace.logits.data(), y),
            logits: trace.logits,
            probs: trace.probs,
            param_grads: pg.expect("requested parameter gradients"),
            input_grad: ig,
        })
    }

    /// Loss, probabilities and input gradient without parameter gradients.
    pub fn loss_input_grad(&self, x: &Tensor, y: usize) -> Result<(f64, Tensor, Tensor)> {
        self.check_class(y)?;
        let trace = self.trace(x)?;
        let dlogits = loss_seed(trace.probs.data(), y);
        let (_, ig) = self.backprop(&trace, &dlogits, false);
        Ok((cross_entropy(trace.logits.data(), y), trace.probs, ig))
    }

    pub fn loss(&self, x: &Tensor, y: usize) -> Result<f64> {
        self.check_class(y)?;
        Ok(cross_entropy(self.forward(x)?.0.data(), y))
    }

    /// Gradient of output `c` with respect to the input.
    pub fn input_saliency(&self, x: &Tensor, c: usize, mode: OutputMode) -> Result<Tensor> {
        self.check_class(c)?;
        let trace = self.trace(x)?;
        let p = trace.probs.data();
        let seed: Vec<f64> = match mode {
            // d p_c / d z_j = p_c (1[j = c] - p_j)
            OutputMode::Probability => (0..p.len())
                .map(|j| p[c] * (f64::from(u8::from(j == c)) - p[j]))
                .collect(),
            OutputMode::Logit => (0..p.len()).map(|j| f64::from(u8::from(j == c))).collect(),
        };
        Ok(self.backprop(&trace, &seed, false).1)
    }

    /// `p <- p - lr * g` for every parameter.
    pub fn apply_sgd(&mut self, grads: &ParamGrads, lr: f64) {
        for (p, g) in self.param_slices_mut().into_iter().zip(grads.slices()) {
            for (w, d) in p.iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
    }
}

fn loss_seed(probs: &[f64], y: usize) -> Vec<f64> {
    let mut d = probs.to_vec();
    d[y] -= 1.0;
    d
}

pub fn sgd_step(mut net: Network, grads: &ParamGrads, lr: f64) -> Result<Network> {
    if lr.is_nan() || lr < 0.0 {
        return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
    }
    net.apply_sgd(grads, lr);
    Ok(net)
}

fn glorot(rng: &mut SeedRng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("glorot shape")
}
