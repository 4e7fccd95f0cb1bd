//! Residual StyleGAN2-style discriminator with named taps.
//!
//! The graph is a small DAG:
//!
//! ```text
//! x -> b{R}.fromrgb -> [block R] -> [block R/2] -> ... -> [block 8] -> head
//! block r:  skip  = conv1x1(down(x))                (no bias, linear)
//!           conv0 = lrelu(conv3x3(x) + b)
//!           conv1 = lrelu(down(conv3x3(conv0)) + b)
//!           out   = (skip + conv1) / sqrt(2)
//! head:     mbstd -> conv3x3 -> fc (flatten -> latent_dim) -> out (-> 1)
//! ```
//!
//! Only the ancestors of the requested taps are evaluated, so a forward
//! pass never runs past the deepest tap.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::arch::{ArchConfig, ArchError, LayerName, TapSet};
use crate::dream::NormMode;
use crate::ops::{self, Activation, ConvSpec};
use crate::tensor::{Tensor, TensorError};

const RESIDUAL_SCALE: f32 = std::f32::consts::FRAC_1_SQRT_2;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(
        "input {height}x{width} too small or misaligned for the requested taps: \
         need at least {min} and a multiple of {granule}"
    )]
    InputSize {
        height: usize,
        width: usize,
        min: usize,
        granule: usize,
    },
    #[error("taps reaching the 4x4 head need a {required}x{required} input, got {height}x{width}")]
    HeadSize {
        height: usize,
        width: usize,
        required: usize,
    },
    #[error("input has {got} channels, graph expects {expected}")]
    InputChannels { expected: usize, got: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Resample {
    None,
    /// ×2 FIR reduction on the input (skip path).
    DownBefore,
    /// ×2 FIR reduction between correlation and bias (conv1).
    DownAfter,
}

#[derive(Debug, Clone)]
struct ConvLayer {
    spec: ConvSpec,
    resample: Resample,
    weight: Tensor,
    bias: Option<Tensor>,
}

#[derive(Debug, Clone)]
struct DenseLayer {
    activation: Activation,
    gain: f32,
    weight: Tensor,
    bias: Tensor,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Conv(ConvLayer),
    Dense(DenseLayer),
    Mbstd {
        group: usize,
    },
    /// `(skip + main) / sqrt(2)`.
    Residual,
}

#[derive(Debug, Clone)]
struct Node {
    name: Option<LayerName>,
    inputs: Vec<usize>,
    op: Op,
}

/// Shape and initialisation scale of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorGraph {
    arch: ArchConfig,
    nodes: Vec<Node>,
}

/// Builds the graph for `cfg` with every parameter set to zero.
pub fn build_discriminator(cfg: &ArchConfig) -> std::result::Result<DiscriminatorGraph, ArchError> {
    cfg.validate()?;
    let conv = |ci, co, k, act: Activation, bias: bool, resample| -> ConvLayer {
        let spec = ConvSpec::new(ci, co, k, 1)
            .expect("kernel and stride are fixed")
            .with_bias(bias)
            .with_activation(act, act.default_gain());
        ConvLayer {
            weight: Tensor::zeros(&spec.weight_shape()),
            bias: bias.then(|| Tensor::zeros(&[co])),
            spec,
            resample,
        }
    };
    let dense = |d, o, act: Activation| DenseLayer {
        activation: act,
        gain: act.default_gain(),
        weight: Tensor::zeros(&[o, d]),
        bias: Tensor::zeros(&[o]),
    };

    let mut nodes = vec![Node {
        name: None,
        inputs: vec![],
        op: Op::Input,
    }];
    let mut push = |name: Option<LayerName>, inputs: Vec<usize>, op: Op| {
        nodes.push(Node { name, inputs, op });
        nodes.len() - 1
    };

    let top = cfg.img_resolution;
    let mut x = push(
        Some(LayerName::FromRgb(top)),
        vec![0],
        Op::Conv(conv(
            cfg.img_channels,
            cfg.channels(top),
            1,
            Activation::Lrelu,
            true,
            Resample::None,
        )),
    );
    for r in cfg.block_resolutions() {
        let (tmp, out) = (cfg.channels(r), cfg.channels(r / 2));
        let skip = push(
            Some(LayerName::Skip(r)),
            vec![x],
            Op::Conv(conv(
                tmp,
                out,
                1,
                Activation::Linear,
                false,
                Resample::DownBefore,
            )),
        );
        let c0 = push(
            Some(LayerName::Conv0(r)),
            vec![x],
            Op::Conv(conv(tmp, tmp, 3, Activation::Lrelu, true, Resample::None)),
        );
        let c1 = push(
            Some(LayerName::Conv1(r)),
            vec![c0],
            Op::Conv(conv(
                tmp,
                out,
                3,
                Activation::Lrelu,
                true,
                Resample::DownAfter,
            )),
        );
        x = push(None, vec![skip, c1], Op::Residual);
    }
    let c4 = cfg.channels(4);
    let mb = push(
        Some(LayerName::Mbstd),
        vec![x],
        Op::Mbstd {
            group: cfg.mbstd_group,
        },
    );
    let hc = push(
        Some(LayerName::HeadConv),
        vec![mb],
        Op::Conv(conv(c4 + 1, c4, 3, Activation::Lrelu, true, Resample::None)),
    );
    let fc = push(
        Some(LayerName::Fc),
        vec![hc],
        Op::Dense(dense(c4 * 16, cfg.latent_dim, Activation::Lrelu)),
    );
    push(
        Some(LayerName::Out),
        vec![fc],
        Op::Dense(dense(cfg.latent_dim, 1, Activation::Linear)),
    );
    Ok(DiscriminatorGraph { arch: *cfg, nodes })
}

/// Parameter tensors `build_discriminator(cfg)` allocates, in graph order,
/// computed without allocating them.
pub fn parameter_specs(cfg: &ArchConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut add = |layer: LayerName, weight: Vec<usize>, fan_in: usize, bias: Option<usize>| {
        specs.push(ParamSpec {
            name: format!("{layer}.weight"),
            shape: weight,
            fan_in,
        });
        if let Some(o) = bias {
            specs.push(ParamSpec {
                name: format!("{layer}.bias"),
                shape: vec![o],
                fan_in,
            });
        }
    };
    let top = cfg.img_resolution;
    let ct = cfg.channels(top);
    add(
        LayerName::FromRgb(top),
        vec![ct, cfg.img_channels, 1, 1],
        cfg.img_channels,
        Some(ct),
    );
    for r in cfg.block_resolutions() {
        let (tmp, out) = (cfg.channels(r), cfg.channels(r / 2));
        add(LayerName::Skip(r), vec![out, tmp, 1, 1], tmp, None);
        add(
            LayerName::Conv0(r),
            vec![tmp, tmp, 3, 3],
            tmp * 9,
            Some(tmp),
        );
        add(
            LayerName::Conv1(r),
            vec![out, tmp, 3, 3],
            tmp * 9,
            Some(out),
        );
    }
    let c4 = cfg.channels(4);
    add(
        LayerName::HeadConv,
        vec![c4, c4 + 1, 3, 3],
        (c4 + 1) * 9,
        Some(c4),
    );
    add(
        LayerName::Fc,
        vec![cfg.latent_dim, c4 * 16],
        c4 * 16,
        Some(cfg.latent_dim),
    );
    add(
        LayerName::Out,
        vec![1, cfg.latent_dim],
        cfg.latent_dim,
        Some(1),
    );
    specs
}

/// Output of a tapped forward pass, plus what the reverse pass needs.
struct Evaluation {
    /// Per node: output (None when not evaluated).
    outputs: Vec<Option<Tensor>>,
    /// Per node: saved pre-activation for leaky-ReLU layers.
    preacts: Vec<Option<Tensor>>,
    order: Vec<usize>,
}

impl DiscriminatorGraph {
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    fn node_index(&self, name: LayerName) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.name == Some(name))
            .ok_or_else(|| {
                GraphError::Arch(ArchError::LayerNotInGraph {
                    layer: name.to_string(),
                    resolution: self.arch.img_resolution,
                })
            })
    }

    /// Parameters in graph order as `(name, tensor)`.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let Some(name) = node.name else { continue };
            match &node.op {
                Op::Conv(c) => {
                    out.push((format!("{name}.weight"), &c.weight));
                    if let Some(b) = &c.bias {
                        out.push((format!("{name}.bias"), b));
                    }
                }
                Op::Dense(d) => {
                    out.push((format!("{name}.weight"), &d.weight));
                    out.push((format!("{name}.bias"), &d.bias));
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    fn parameter_slot(&mut self, name: &str) -> Option<&mut Tensor> {
        let (layer, kind) = name.rsplit_once('.')?;
        let layer: LayerName = layer.parse().ok()?;
        let node = self.nodes.iter_mut().find(|n| n.name == Some(layer))?;
        match (&mut node.op, kind) {
            (Op::Conv(c), "weight") => Some(&mut c.weight),
            (Op::Conv(c), "bias") => c.bias.as_mut(),
            (Op::Dense(d), "weight") => Some(&mut d.weight),
            (Op::Dense(d), "bias") => Some(&mut d.bias),
            _ => None,
        }
    }

    /// Replaces one parameter tensor; the shape must match.
    pub fn set_parameter(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .parameter_slot(name)
            .ok_or_else(|| GraphError::UnknownParameter(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(GraphError::ParameterShape {
                name: name.to_string(),
                expected: slot.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.parameter_slot(name)
    }

    /// Output shape of `layer` for a square input of side `size`.
    pub fn layer_output_shape(&self, layer: LayerName, size: usize) -> Vec<usize> {
        let a = &self.arch;
        let spatial = |stages: usize| size >> stages;
        match layer {
            LayerName::FromRgb(r) => vec![1, a.channels(r), size, size],
            LayerName::Conv0(r) => {
                let s = spatial(a.downsample_stages(layer));
                vec![1, a.channels(r), s, s]
            }
            LayerName::Conv1(r) | LayerName::Skip(r) => {
                let s = spatial(a.downsample_stages(layer));
                vec![1, a.channels(r / 2), s, s]
            }
            LayerName::Mbstd => vec![1, a.channels(4) + 1, 4, 4],
            LayerName::HeadConv => vec![1, a.channels(4), 4, 4],
            LayerName::Fc => vec![1, a.latent_dim],
            LayerName::Out => vec![1, 1],
        }
    }

    fn check_input(&self, x: &Tensor, taps: &TapSet) -> Result<()> {
        taps.validate_for(&self.arch)?;
        let (_, c, h, w) = x.dims4("discriminator input")?;
        if c != self.arch.img_channels {
            return Err(GraphError::InputChannels {
                expected: self.arch.img_channels,
                got: c,
            });
        }
        let r = self.arch.img_resolution;
        if taps.needs_head() {
            if h != r || w != r {
                return Err(GraphError::HeadSize {
                    height: h,
                    width: w,
                    required: r,
                });
            }
            return Ok(());
        }
        let min = taps.min_input_size(&self.arch);
        let granule = taps.size_granule(&self.arch);
        if h < min || w < min || h % granule != 0 || w % granule != 0 {
            return Err(GraphError::InputSize {
                height: h,
                width: w,
                min,
                granule,
            });
        }
        Ok(())
    }

    /// Nodes that must run to produce every tap, ascending.
    fn needed(&self, targets: &[usize]) -> Vec<usize> {
        let mut mark = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = targets.to_vec();
        while let Some(i) = stack.pop() {
            if !mark[i] {
                mark[i] = true;
                stack.extend(&self.nodes[i].inputs);
            }
        }
        (0..self.nodes.len()).filter(|&i| mark[i]).collect()
    }

    fn evaluate(&self, x: &Tensor, taps: &TapSet) -> Result<(Evaluation, Vec<usize>)> {
        self.check_input(x, taps)?;
        let targets = taps
            .layers()
            .map(|l| self.node_index(l))
            .collect::<Result<Vec<_>>>()?;
        let order = self.needed(&targets);
        let mut outputs: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut preacts: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for &i in &order {
            let node = &self.nodes[i];
            let input = |k: usize| outputs[node.inputs[k]].as_ref().expect("topological order");
            let (out, pre) = match &node.op {
                Op::Input => (x.clone(), None),
                Op::Conv(c) => conv_forward(c, input(0))?,
                Op::Dense(d) => dense_forward(d, input(0))?,
                Op::Mbstd { group } => (ops::minibatch_stddev(input(0), *group)?, None),
                Op::Residual => {
                    let mut y = input(0).clone();
                    y.add_assign(input(1))?;
                    (y.scale(RESIDUAL_SCALE), None)
                }
            };
            outputs[i] = Some(out);
            preacts[i] = pre;
        }
        Ok((
            Evaluation {
                outputs,
                preacts,
                order,
            },
            targets,
        ))
    }

    /// Activations of every tapped layer (post-activation outputs).
    pub fn forward_with_taps(
        &self,
        x: &Tensor,
        taps: &TapSet,
    ) -> Result<BTreeMap<LayerName, Tensor>> {
        let (mut eval, targets) = self.evaluate(x, taps)?;
        Ok(taps
            .layers()
            .zip(targets)
            .map(|(l, i)| (l, eval.outputs[i].take().expect("tapped node evaluated")))
            .collect())
    }

    /// Named layers a tapped forward pass evaluates, in order.
    pub fn evaluation_trace(&self, x: &Tensor, taps: &TapSet) -> Result<Vec<LayerName>> {
        let (eval, _) = self.evaluate(x, taps)?;
        Ok(eval
            .order
            .iter()
            .filter_map(|&i| self.nodes[i].name)
            .collect())
    }

    /// Dreaming loss `sum_t weight_t * norm(E_t) * sum(a_t^2)` and its
    /// gradient with respect to `x`.
    pub fn input_gradient(
        &self,
        x: &Tensor,
        taps: &TapSet,
        norm: NormMode,
    ) -> Result<(f64, Tensor)> {
        let (eval, targets) = self.evaluate(x, taps)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut loss = 0.0f64;
        for (tap, &i) in taps.iter().zip(&targets) {
            let act = eval.outputs[i].as_ref().expect("tapped node evaluated");
            let factor = tap.weight * norm.factor(act.len());
            loss += f64::from(factor) * act.sum_squares();
            accumulate(&mut grads[i], act.scale(2.0 * factor))?;
        }

        for &i in eval.order.iter().rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let input = |k: usize| eval.outputs[node.inputs[k]].as_ref().expect("evaluated");
            match &node.op {
                Op::Input => {
                    grads[i] = Some(dy);
                    break;
                }
                Op::Conv(c) => {
                    let pre = eval.preacts[i].as_ref();
                    let dx = conv_backward(c, &dy, pre, input(0))?;
                    accumulate(&mut grads[node.inputs[0]], dx)?;
                }
                Op::Dense(d) => {
                    let pre = eval.preacts[i].as_ref();
                    let dx = dense_backward(d, &dy, pre, input(0))?;
                    accumulate(&mut grads[node.inputs[0]], dx)?;
                }
                Op::Mbstd { group } => {
                    let dx = ops::minibatch_stddev_grad(&dy, input(0), *group)?;
                    accumulate(&mut grads[node.inputs[0]], dx)?;
                }
                Op::Residual => {
                    let scaled = dy.scale(RESIDUAL_SCALE);
                    accumulate(&mut grads[node.inputs[0]], scaled.clone())?;
                    accumulate(&mut grads[node.inputs[1]], scaled)?;
                }
            }
        }
        let grad = grads[0].take().unwrap_or_else(|| Tensor::zeros_like(x));
        Ok((loss, grad))
    }

    /// Final logit for each image in the batch.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f32>> {
        let taps = TapSet::single(LayerName::Out);
        let mut acts = self.forward_with_taps(x, &taps)?;
        Ok(acts
            .remove(&LayerName::Out)
            .expect("tap present")
            .into_data())
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g)?,
        None => *slot = Some(g),
    }
    Ok(())
}

fn activate(act: Activation, gain: f32, pre: Tensor) -> (Tensor, Option<Tensor>) {
    match act {
        Activation::Linear => (act.forward(&pre, gain), None),
        Activation::Lrelu => (act.forward(&pre, gain), Some(pre)),
    }
}

fn add_bias(t: &mut Tensor, bias: &Tensor) {
    let channels = bias.len();
    let plane = t.len() / t.shape()[0] / channels;
    for (i, chunk) in t.data_mut().chunks_exact_mut(plane).enumerate() {
        let b = bias.data()[i % channels];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn conv_forward(c: &ConvLayer, x: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
    let pre = match c.resample {
        Resample::None => ops::conv2d_forward(x, &c.weight, c.bias.as_ref(), &c.spec)?,
        Resample::DownBefore => {
            let xd = ops::fir_downsample2x(x)?;
            ops::conv2d_forward(&xd, &c.weight, c.bias.as_ref(), &c.spec)?
        }
        Resample::DownAfter => {
            let z = ops::conv2d_forward(x, &c.weight, None, &c.spec)?;
            let mut zd = ops::fir_downsample2x(&z)?;
            if let Some(b) = &c.bias {
                add_bias(&mut zd, b);
            }
            zd
        }
    };
    Ok(activate(c.spec.activation, c.spec.gain, pre))
}

fn conv_backward(c: &ConvLayer, dy: &Tensor, pre: Option<&Tensor>, x: &Tensor) -> Result<Tensor> {
    let dpre = match pre {
        Some(p) => c.spec.activation.backward(dy, p, c.spec.gain)?,
        None => Activation::Linear.backward(dy, dy, c.spec.gain)?,
    };
    let (_, _, h, w) = x.dims4("conv backward")?;
    let dx = match c.resample {
        Resample::None => ops::conv2d_input_grad(&dpre, &c.weight, &c.spec, h, w)?,
        Resample::DownBefore => {
            let dxd = ops::conv2d_input_grad(&dpre, &c.weight, &c.spec, h / 2, w / 2)?;
            ops::fir_downsample2x_grad(&dxd, h, w)?
        }
        Resample::DownAfter => {
            let dz = ops::fir_downsample2x_grad(&dpre, h, w)?;
            ops::conv2d_input_grad(&dz, &c.weight, &c.spec, h, w)?
        }
    };
    Ok(dx)
}

fn flatten(x: &Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    Ok(x.clone().reshape(vec![n, x.len() / n])?)
}

fn dense_forward(d: &DenseLayer, x: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
    let pre = ops::linear_preact(&flatten(x)?, &d.weight, &d.bias)?;
    Ok(activate(d.activation, d.gain, pre))
}

fn dense_backward(d: &DenseLayer, dy: &Tensor, pre: Option<&Tensor>, x: &Tensor) -> Result<Tensor> {
    let dx = match pre {
        Some(p) => ops::linear_input_grad(dy, p, &d.weight, d.activation, d.gain)?,
        None => ops::linear_input_grad(dy, dy, &d.weight, Activation::Linear, d.gain)?,
    };
    Ok(dx.reshape(x.shape().to_vec())?)
}
