use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::layers::{self, Padding};
use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel: usize,
}

/// Architecture description. Every conv stage is conv → ReLU → 2×2 max
/// pool; every hidden FC layer is followed by a ReLU; the output layer feeds
/// a softmax. `dropout[j]` is applied to the input of the `j`-th of the last
/// `dropout.len()` weight layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub input_size: usize,
    pub conv: Vec<ConvStage>,
    pub fc: Vec<usize>,
    pub classes: usize,
    pub dropout: Vec<f64>,
    pub width_multiplier: f64,
}

fn scaled(base: usize, rho: f64) -> usize {
    ((base as f64 * rho).round() as usize).max(1)
}

impl NetworkSpec {
    /// The five-stage 96×96 design (80 filters, +80 per stage; FC 480 and
    /// 512; dropout 0.3/0.4/0.5/0.5) with every width scaled by `rho`.
    pub fn standard(input_channels: usize, classes: usize, rho: f64) -> Self {
        NetworkSpec {
            input_channels,
            input_size: crate::GRID_SIZE,
            conv: (1..=5)
                .map(|i| ConvStage {
                    filters: scaled(80 * i, rho),
                    kernel: if i == 1 { 3 } else { 2 },
                })
                .collect(),
            fc: vec![scaled(480, rho), scaled(512, rho)],
            classes,
            dropout: vec![0.3, 0.4, 0.5, 0.5],
            width_multiplier: rho,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(format!("network spec: {m}")));
        if self.input_channels == 0 || self.classes == 0 {
            return err("need at least one input channel and one class".into());
        }
        if self.conv.is_empty() {
            return err("need at least one conv stage".into());
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(1 << self.conv.len()) {
            return err(format!(
                "input size {} not divisible by 2^{}",
                self.input_size,
                self.conv.len()
            ));
        }
        if let Some(s) = self
            .conv
            .iter()
            .find(|s| !(2..=3).contains(&s.kernel) || s.filters == 0)
        {
            return err(format!("unsupported conv stage {s:?}"));
        }
        if self.fc.contains(&0) {
            return err("zero-width FC layer".into());
        }
        if self.dropout.len() > self.weight_layers() {
            return err("more dropout rates than weight layers".into());
        }
        if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return err(format!(
                "dropout rates must lie in [0, 1): {:?}",
                self.dropout
            ));
        }
        Ok(())
    }

    pub fn weight_layers(&self) -> usize {
        self.conv.len() + self.fc.len() + 1
    }

    /// Compact architecture string, e.g.
    /// `7×96×96 Input-16C3-MP2-32C2-MP2-…-96FC-102FC-Output`.
    pub fn describe(&self) -> String {
        let mut s = format!(
            "{}×{}×{} Input",
            self.input_channels, self.input_size, self.input_size
        );
        for c in &self.conv {
            s.push_str(&format!("-{}C{}-MP2", c.filters, c.kernel));
        }
        for f in &self.fc {
            s.push_str(&format!("-{f}FC"));
        }
        s.push_str("-Output");
        s
    }

    /// Output shape `(channels, height, width)` and parameter count of every
    /// layer, input first.
    pub fn shape_trace(&self) -> Vec<LayerShape> {
        let mut out = vec![LayerShape {
            name: "input".into(),
            shape: [self.input_channels, self.input_size, self.input_size],
            params: 0,
        }];
        let (mut c, mut s) = (self.input_channels, self.input_size);
        for (i, stage) in self.conv.iter().enumerate() {
            out.push(LayerShape {
                name: format!("conv{}", i + 1),
                shape: [stage.filters, s, s],
                params: stage.filters * (c * stage.kernel * stage.kernel + 1),
            });
            c = stage.filters;
            s /= 2;
            out.push(LayerShape {
                name: format!("pool{}", i + 1),
                shape: [c, s, s],
                params: 0,
            });
        }
        let mut width = c * s * s;
        for (i, &f) in self.fc.iter().enumerate() {
            out.push(LayerShape {
                name: format!("fc{}", i + 1),
                shape: [f, 1, 1],
                params: f * (width + 1),
            });
            width = f;
        }
        out.push(LayerShape {
            name: "output".into(),
            shape: [self.classes, 1, 1],
            params: self.classes * (width + 1),
        });
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub shape: [usize; 3],
    pub params: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
enum Layer<T> {
    Conv {
        weights: Tensor4<T>,
        bias: Vec<T>,
        pad: Padding,
        first: bool,
    },
    Relu,
    Pool,
    Dropout(f64),
    Dense {
        weights: Vec<T>,
        bias: Vec<T>,
        outputs: usize,
    },
}

enum Cache<T> {
    Input(Tensor4<T>),
    Output(Tensor4<T>),
    Pool([usize; 4], Vec<u32>),
    Mask(Vec<T>),
    Nothing,
}

/// Per-parameter-tensor gradients, in [`Network::params`] order.
pub type Gradients<T> = Vec<Vec<T>>;

#[derive(Clone, Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
    velocity: Vec<Vec<T>>,
    /// Skip all-zero input regions in convolutions (same results).
    pub sparse: bool,
}

impl<T: Real> Network<T> {
    /// He-initialized network; identical seeds give identical weights.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, Purpose::Init, 0);
        Self::build(spec, |fan_in, len| {
            let std = (2.0 / fan_in as f64).sqrt();
            (0..len)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::from_f64(z * std)
                })
                .collect()
        })
    }

    /// All weights and biases zero.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        Self::build(spec, |_, len| vec![T::zero(); len])
    }

    fn build(spec: NetworkSpec, mut init: impl FnMut(usize, usize) -> Vec<T>) -> Result<Self> {
        spec.validate()?;
        let total = spec.weight_layers();
        let first_dropout = total - spec.dropout.len();
        let mut layers = Vec::new();
        let mut weight_index = 0;
        let push_dropout = |layers: &mut Vec<Layer<T>>, wi: usize| {
            if wi >= first_dropout {
                layers.push(Layer::Dropout(spec.dropout[wi - first_dropout]));
            }
        };
        let (mut c, mut s) = (spec.input_channels, spec.input_size);
        for (i, stage) in spec.conv.iter().enumerate() {
            push_dropout(&mut layers, weight_index);
            weight_index += 1;
            let k = stage.kernel;
            let fan_in = c * k * k;
            layers.push(Layer::Conv {
                weights: Tensor4::from_vec(
                    [stage.filters, c, k, k],
                    init(fan_in, stage.filters * fan_in),
                )?,
                bias: vec![T::zero(); stage.filters],
                pad: Padding::same(k),
                first: i == 0,
            });
            layers.push(Layer::Relu);
            layers.push(Layer::Pool);
            c = stage.filters;
            s /= 2;
        }
        let mut width = c * s * s;
        let widths: Vec<usize> = spec.fc.iter().copied().chain([spec.classes]).collect();
        for (i, &outputs) in widths.iter().enumerate() {
            push_dropout(&mut layers, weight_index);
            weight_index += 1;
            layers.push(Layer::Dense {
                weights: init(width, outputs * width),
                bias: vec![T::zero(); outputs],
                outputs,
            });
            if i + 1 < widths.len() {
                layers.push(Layer::Relu);
            }
            width = outputs;
        }
        let mut net = Network {
            spec,
            layers,
            velocity: Vec::new(),
            sparse: true,
        };
        net.velocity = net
            .params()
            .iter()
            .map(|p| vec![T::zero(); p.len()])
            .collect();
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    /// Parameter tensors in layer order (weights then bias per layer).
    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { weights, bias, .. } => {
                    out.push(weights.data());
                    out.push(bias.as_slice());
                }
                Layer::Dense { weights, bias, .. } => {
                    out.push(weights.as_slice());
                    out.push(bias.as_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { weights, bias, .. } => {
                    out.push(weights.data_mut());
                    out.push(bias.as_mut_slice());
                }
                Layer::Dense { weights, bias, .. } => {
                    out.push(weights.as_mut_slice());
                    out.push(bias.as_mut_slice());
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let s = &self.spec;
        let expected = [x.batch(), s.input_channels, s.input_size, s.input_size];
        if x.shape() != expected || x.batch() == 0 {
            return Err(Error::Shape {
                layer: "input".into(),
                detail: format!("got {:?}, expected {:?}", x.shape(), expected),
            });
        }
        Ok(())
    }

    fn run(
        &self,
        x: &Tensor4<T>,
        mut rng: Option<&mut dyn RngCore>,
        keep: bool,
    ) -> Result<(Tensor4<T>, Vec<Cache<T>>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut h = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let cache = match layer {
                Layer::Conv {
                    weights, bias, pad, ..
                } => {
                    let out = layers::conv_forward_opts(&h, weights, bias, *pad, self.sparse)
                        .map_err(|e| relabel(e, li))?;
                    Cache::Input(std::mem::replace(&mut h, out))
                }
                Layer::Relu => {
                    layers::relu_forward(&mut h);
                    if keep {
                        Cache::Output(h.clone())
                    } else {
                        Cache::Nothing
                    }
                }
                Layer::Pool => {
                    let shape = h.shape();
                    let (out, arg) = layers::maxpool_forward(&h).map_err(|e| relabel(e, li))?;
                    h = out;
                    Cache::Pool(shape, arg)
                }
                Layer::Dropout(p) => match rng.as_deref_mut() {
                    Some(r) if *p > 0.0 => {
                        let mask = layers::dropout_mask(h.data().len(), *p, r);
                        layers::apply_mask(h.data_mut(), &mask);
                        Cache::Mask(mask)
                    }
                    _ => Cache::Nothing,
                },
                Layer::Dense {
                    weights,
                    bias,
                    outputs,
                } => {
                    let out = layers::dense_forward(&h, weights, bias, *outputs)
                        .map_err(|e| relabel(e, li))?;
                    Cache::Input(std::mem::replace(&mut h, out))
                }
            };
            if keep {
                caches.push(cache);
            }
        }
        Ok((h, caches))
    }

    /// Class probabilities, `batch × classes` row-major. In `Train` mode the
    /// dropout masks are drawn from `rng`; in `Eval` mode dropout is the
    /// identity (inverted scaling happens at training time).
    pub fn forward(&self, x: &Tensor4<T>, mode: Mode, rng: &mut dyn RngCore) -> Result<Vec<T>> {
        let rng = (mode == Mode::Train).then_some(rng);
        let (logits, _) = self.run(x, rng, false)?;
        Ok(layers::softmax(logits.data(), self.spec.classes))
    }

    /// Eval-mode probabilities.
    pub fn predict(&self, x: &Tensor4<T>) -> Result<Vec<T>> {
        let (logits, _) = self.run(x, None, false)?;
        Ok(layers::softmax(logits.data(), self.spec.classes))
    }

    /// Mean cross-entropy of a batch (train-mode dropout drawn from `rng`)
    /// and the gradient of every parameter tensor.
    pub fn gradients(
        &self,
        x: &Tensor4<T>,
        labels: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<(T, Gradients<T>)> {
        if labels.len() != x.batch() {
            return Err(Error::Shape {
                layer: "labels".into(),
                detail: format!("{} labels for batch {}", labels.len(), x.batch()),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= self.spec.classes) {
            return Err(Error::Config(format!(
                "label {l} outside 0..{}",
                self.spec.classes
            )));
        }
        let (logits, caches) = self.run(x, Some(rng), true)?;
        let (loss, dlogits) =
            layers::softmax_cross_entropy(logits.data(), labels, self.spec.classes);
        let mut g = Tensor4::from_vec(logits.shape(), dlogits)?;
        let mut grads: Vec<Vec<T>> = Vec::new();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            match (layer, cache) {
                (
                    Layer::Conv {
                        weights,
                        pad,
                        first,
                        ..
                    },
                    Cache::Input(input),
                ) => {
                    let cg = layers::conv_backward(&input, weights, *pad, &g, !first)?;
                    grads.push(cg.bias);
                    grads.push(cg.weights);
                    if let Some(dx) = cg.input {
                        g = dx;
                    }
                }
                (Layer::Relu, Cache::Output(out)) => layers::relu_backward(&out, &mut g),
                (Layer::Pool, Cache::Pool(shape, arg)) => {
                    g = layers::maxpool_backward(shape, &arg, &g);
                }
                (Layer::Dropout(_), Cache::Mask(mask)) => layers::apply_mask(g.data_mut(), &mask),
                (Layer::Dropout(_), Cache::Nothing) => {}
                (Layer::Dense { weights, .. }, Cache::Input(input)) => {
                    let dg = layers::dense_backward(&input, weights, &g, true);
                    grads.push(dg.bias);
                    grads.push(dg.weights);
                    let shape = input.shape();
                    g = dg.input.expect("requested").reshaped(shape);
                }
                _ => unreachable!("cache does not match layer"),
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }

    /// SGD with momentum: `v = momentum·v − lr·g; p += v`.
    pub fn apply_update(&mut self, grads: &Gradients<T>, lr: T, momentum: T) {
        let mut velocity = std::mem::take(&mut self.velocity);
        for ((p, v), g) in self.params_mut().into_iter().zip(&mut velocity).zip(grads) {
            for ((w, vel), &gr) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                *vel = momentum * *vel - lr * gr;
                *w = *w + *vel;
            }
        }
        self.velocity = velocity;
    }

    /// One training step on a batch. Returns the loss before the update.
    pub fn train_step(
        &mut self,
        x: &Tensor4<T>,
        labels: &[usize],
        lr: T,
        momentum: T,
        rng: &mut dyn RngCore,
    ) -> Result<T> {
        let (loss, grads) = self.gradients(x, labels, rng)?;
        if !loss.is_finite() {
            let bad = grads.iter().flatten().filter(|g| !g.is_finite()).count();
            return Err(Error::NonFiniteLoss {
                iteration: 0,
                detail: format!(
                    "loss {:?}, {bad} non-finite gradient values, input finite: {}",
                    loss,
                    x.is_finite()
                ),
            });
        }
        self.apply_update(&grads, lr, momentum);
        Ok(loss)
    }

    /// Clears the momentum buffers.
    pub fn reset_velocity(&mut self) {
        for v in &mut self.velocity {
            v.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub(crate) fn from_params(spec: NetworkSpec, values: &[T]) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let expected = net.param_count();
        if values.len() != expected {
            return Err(Error::ModelFormat(format!(
                "{} parameters for a network with {expected}",
                values.len()
            )));
        }
        let mut offset = 0;
        for p in net.params_mut() {
            let n = p.len();
            p.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(net)
    }
}

fn relabel(e: Error, layer: usize) -> Error {
    match e {
        Error::Shape {
            layer: name,
            detail,
        } => Error::Shape {
            layer: format!("layer {layer} ({name})"),
            detail,
        },
        other => other,
    }
}
