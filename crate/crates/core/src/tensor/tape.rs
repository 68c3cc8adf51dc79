use super::kernels;
use super::params::{ParamId, ParamStore};
use super::{ConvSpec, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Train,
    /// Normalize with the running estimates.
    Eval,
}

/// Result of [`Tape::softmax_cross_entropy`].
#[derive(Clone, Copy, Debug)]
pub struct CrossEntropy {
    pub loss: Var,
    /// Every pixel carried the ignore label; the loss is defined as zero.
    pub all_ignored: bool,
}

enum Op {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
        cols: Vec<f32>,
        ho: usize,
        wo: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        mode: BnMode,
    },
    Relu(Var),
    Add(Var, Var),
    Scale(Var, f32),
    Concat(Vec<Var>),
    AvgPool(Var, usize),
    Upsample(Var, usize),
    CrossEntropy {
        logits: Var,
        probs: Vec<f32>,
        labels: Vec<u16>,
        ignore_index: u16,
        count: usize,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run autodiff graph. Nodes are appended in evaluation order, so
/// reverse insertion order is a valid topological order for the backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable leaf (its gradient is kept after `backward`).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let requires = store.is_trainable(id);
        self.push(store.value(id).clone(), requires, Op::Param(id))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        spec.validate()?;
        let dims = self.value(input).dims4("conv2d")?;
        let [n, c, h, w] = dims;
        if c != spec.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input channels: expected {}, got {c}", spec.in_channels),
            ));
        }
        let wshape = spec.weight_shape();
        if self.value(weight).shape() != wshape {
            return Err(Error::shape(
                "conv2d",
                format!("weight: expected {:?}, got {:?}", wshape, self.value(weight).shape()),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [spec.out_channels] {
                return Err(Error::shape(
                    "conv2d",
                    format!(
                        "bias: expected [{}], got {:?}",
                        spec.out_channels,
                        self.value(b).shape()
                    ),
                ));
            }
        }
        let (ho, wo) = spec
            .output_size(h, w)
            .ok_or_else(|| Error::shape("conv2d", format!("height/width {h}x{w} too small for {spec:?}")))?;
        let fwd = kernels::conv2d_forward(
            self.value(input).data(),
            dims,
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &spec,
            ho,
            wo,
        );
        let out = Tensor::new(&[n, spec.out_channels, ho, wo], fwd.out)?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        let req = self.needs(&parents);
        Ok(self.push(
            out,
            req,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
                cols: fwd.cols,
                ho,
                wo,
            },
        ))
    }

    /// Batch normalization over N, H and W. `running` holds the per-channel
    /// running mean and variance; they are updated in [`BnMode::Train`].
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: (&mut Tensor, &mut Tensor),
        mode: BnMode,
    ) -> Result<Var> {
        let dims = self.value(input).dims4("batch_norm")?;
        let [n, c, h, w] = dims;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{name}: expected [{c}], got {:?}", self.value(v).shape()),
                ));
            }
        }
        let (rmean, rvar) = running;
        if rmean.numel() != c || rvar.numel() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("running stats must have {c} channels"),
            ));
        }
        let plane = h * w;
        let (mean, inv_std) = match mode {
            BnMode::Train => {
                let m = n * plane;
                if m < 2 {
                    return Err(Error::shape(
                        "batch_norm",
                        "train mode needs at least 2 values per channel",
                    ));
                }
                let (mean, var) = kernels::channel_mean_var(self.value(input).data(), dims);
                let unbias = m as f32 / (m - 1) as f32;
                for ch in 0..c {
                    let rm = &mut rmean.data_mut()[ch];
                    *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean[ch];
                    let rv = &mut rvar.data_mut()[ch];
                    *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * var[ch] * unbias;
                }
                let inv: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                (mean, inv)
            }
            BnMode::Eval => (
                rmean.data().to_vec(),
                rvar.data().iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect(),
            ),
        };
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for i in off..off + plane {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        let out = Tensor::new(&dims, out)?;
        let req = self.needs(&[input, gamma, beta]);
        Ok(self.push(
            out,
            req,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        let req = self.needs(&[input]);
        self.push(out, req, Op::Relu(input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect(),
        };
        let req = self.needs(&[a, b]);
        Ok(self.push(out, req, Op::Add(a, b)))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let x = self.value(input);
        let out = Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|v| v * factor).collect(),
        };
        let req = self.needs(&[input]);
        self.push(out, req, Op::Scale(input, factor))
    }

    /// Concatenate NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let [n, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut total_c = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.value(v).dims4("concat_channels")?;
            if (vn, vh, vw) != (n, h, w) {
                let dim = if vn != n {
                    "batch"
                } else if vh != h {
                    "height"
                } else {
                    "width"
                };
                return Err(Error::shape(
                    "concat_channels",
                    format!(
                        "{dim} differs: {:?} vs {:?}",
                        self.value(first).shape(),
                        self.value(v).shape()
                    ),
                ));
            }
            total_c += vc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total_c * plane);
        for s in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[s * c * plane..(s + 1) * c * plane]);
            }
        }
        let out = Tensor::new(&[n, total_c, h, w], data)?;
        let req = self.needs(inputs);
        Ok(self.push(out, req, Op::Concat(inputs.to_vec())))
    }

    /// Non-overlapping `kernel`×`kernel` average pooling (ceil mode).
    pub fn avg_pool2d(&mut self, input: Var, kernel: usize) -> Result<Var> {
        if kernel == 0 {
            return Err(Error::InvalidArgument("avg_pool2d kernel must be >= 1".into()));
        }
        let dims = self.value(input).dims4("avg_pool2d")?;
        let (out, oh, ow) = kernels::avg_pool_forward(self.value(input).data(), dims, kernel);
        let out = Tensor::new(&[dims[0], dims[1], oh, ow], out)?;
        let req = self.needs(&[input]);
        Ok(self.push(out, req, Op::AvgPool(input, kernel)))
    }

    /// Bilinear upsampling with half-pixel centres (align-corners = false).
    pub fn upsample_bilinear(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
        }
        let dims = self.value(input).dims4("upsample_bilinear")?;
        let [n, c, h, w] = dims;
        let out = if factor == 1 {
            self.value(input).data().to_vec()
        } else {
            kernels::upsample_bilinear_forward(self.value(input).data(), dims, factor)
        };
        let out = Tensor::new(&[n, c, h * factor, w * factor], out)?;
        let req = self.needs(&[input]);
        Ok(self.push(out, req, Op::Upsample(input, factor)))
    }

    /// Mean pixel-wise softmax cross-entropy over pixels whose label is not
    /// `ignore_index`. `labels` is N×H×W in row-major order.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u16], ignore_index: u16) -> Result<CrossEntropy> {
        let [n, k, h, w] = self.value(logits).dims4("softmax_cross_entropy")?;
        let plane = h * w;
        if labels.len() != n * plane {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("labels hold {} pixels, logits {}", labels.len(), n * plane),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != ignore_index && l as usize >= k) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: k,
            });
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0f32; x.len()];
        let mut total = 0.0f64;
        let mut count = 0usize;
        for s in 0..n {
            let base = s * k * plane;
            for p in 0..plane {
                let mut max = f32::NEG_INFINITY;
                for c in 0..k {
                    max = max.max(x[base + c * plane + p]);
                }
                let mut z = 0.0f64;
                for c in 0..k {
                    z += ((x[base + c * plane + p] - max) as f64).exp();
                }
                for c in 0..k {
                    let i = base + c * plane + p;
                    probs[i] = (((x[i] - max) as f64).exp() / z) as f32;
                }
                let label = labels[s * plane + p];
                if label != ignore_index {
                    let xl = x[base + label as usize * plane + p];
                    total += z.ln() - (xl - max) as f64;
                    count += 1;
                }
            }
        }
        let loss = if count == 0 { 0.0 } else { (total / count as f64) as f32 };
        let req = self.needs(&[logits]);
        let var = self.push(
            Tensor::scalar(loss),
            req,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
                ignore_index,
                count,
            },
        );
        Ok(CrossEntropy {
            loss: var,
            all_ignored: count == 0,
        })
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        self.backward_with(loss, vec![1.0])
    }

    /// Reverse pass seeding `output` with an arbitrary upstream gradient.
    pub fn backward_with(&mut self, output: Var, seed: Vec<f32>) -> Result<()> {
        if seed.len() != self.value(output).numel() {
            return Err(Error::shape(
                "backward",
                format!("seed has {} values, output {}", seed.len(), self.value(output).numel()),
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[output.0].grad = Some(seed);
        for i in (0..=output.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = node.grad.as_ref() else {
                continue;
            };
            backprop_node(node, g, before);
        }
        Ok(())
    }

    /// Add the gradients of every parameter node into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let (Op::Param(id), Some(g)) = (&node.op, &node.grad) {
                for (acc, v) in store.grad_mut(*id).iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }
}

fn accumulate(nodes: &mut [Node], v: Var, g: &[f32]) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    match &mut node.grad {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => node.grad = Some(g.to_vec()),
    }
}

fn backprop_node(node: &Node, g: &[f32], parents: &mut [Node]) {
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            spec,
            cols,
            ho,
            wo,
        } => {
            let x = &parents[input.0].value;
            let dims = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
            let grads = kernels::conv2d_backward(
                g,
                x.data(),
                cols,
                dims,
                parents[weight.0].value.data(),
                spec,
                *ho,
                *wo,
                parents[input.0].requires_grad,
            );
            accumulate(parents, *input, &grads.input);
            accumulate(parents, *weight, &grads.weight);
            if let Some(b) = bias {
                accumulate(parents, *b, &grads.bias);
            }
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            mode,
        } => {
            let shape = &node.value.shape;
            let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
            let gam = parents[gamma.0].value.data().to_vec();
            let mut dgamma = vec![0.0f32; c];
            let mut dbeta = vec![0.0f32; c];
            let mut dx = vec![0.0f32; g.len()];
            let m = (n * plane) as f64;
            for ch in 0..c {
                let mut sum_g = 0.0f64;
                let mut sum_gx = 0.0f64;
                for s in 0..n {
                    let off = (s * c + ch) * plane;
                    for i in off..off + plane {
                        sum_g += g[i] as f64;
                        sum_gx += (g[i] * xhat[i]) as f64;
                    }
                }
                dgamma[ch] = sum_gx as f32;
                dbeta[ch] = sum_g as f32;
                let scale = gam[ch] * inv_std[ch];
                for s in 0..n {
                    let off = (s * c + ch) * plane;
                    for i in off..off + plane {
                        dx[i] = match mode {
                            BnMode::Eval => g[i] * scale,
                            BnMode::Train => {
                                (scale as f64 * (g[i] as f64 - sum_g / m - xhat[i] as f64 * sum_gx / m)) as f32
                            }
                        };
                    }
                }
            }
            accumulate(parents, *input, &dx);
            accumulate(parents, *gamma, &dgamma);
            accumulate(parents, *beta, &dbeta);
        }
        Op::Relu(input) => {
            let dx: Vec<f32> = node
                .value
                .data
                .iter()
                .zip(g)
                .map(|(&y, &gv)| if y > 0.0 { gv } else { 0.0 })
                .collect();
            accumulate(parents, *input, &dx);
        }
        Op::Add(a, b) => {
            accumulate(parents, *a, g);
            accumulate(parents, *b, g);
        }
        Op::Scale(input, factor) => {
            let dx: Vec<f32> = g.iter().map(|v| v * factor).collect();
            accumulate(parents, *input, &dx);
        }
        Op::Concat(inputs) => {
            let shape = &node.value.shape;
            let (n, total_c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
            let mut c_off = 0;
            for v in inputs {
                let c = parents[v.0].value.shape[1];
                if parents[v.0].requires_grad {
                    let mut dx = Vec::with_capacity(n * c * plane);
                    for s in 0..n {
                        let start = (s * total_c + c_off) * plane;
                        dx.extend_from_slice(&g[start..start + c * plane]);
                    }
                    accumulate(parents, *v, &dx);
                }
                c_off += c;
            }
        }
        Op::AvgPool(input, k) => {
            let x = &parents[input.0].value;
            let dims = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
            let dx = kernels::avg_pool_backward(g, dims, *k);
            accumulate(parents, *input, &dx);
        }
        Op::Upsample(input, factor) => {
            let x = &parents[input.0].value;
            let dims = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
            if *factor == 1 {
                accumulate(parents, *input, g);
            } else {
                let dx = kernels::upsample_bilinear_backward(g, dims, *factor);
                accumulate(parents, *input, &dx);
            }
        }
        Op::CrossEntropy {
            logits,
            probs,
            labels,
            ignore_index,
            count,
        } => {
            let shape = &parents[logits.0].value.shape;
            let (n, k, plane) = (shape[0], shape[1], shape[2] * shape[3]);
            let mut dx = vec![0.0f32; probs.len()];
            if *count > 0 {
                let scale = g[0] / *count as f32;
                for s in 0..n {
                    for p in 0..plane {
                        let label = labels[s * plane + p];
                        if label == *ignore_index {
                            continue;
                        }
                        for c in 0..k {
                            let i = (s * k + c) * plane + p;
                            let onehot = if c == label as usize { 1.0 } else { 0.0 };
                            dx[i] = scale * (probs[i] - onehot);
                        }
                    }
                }
            }
            accumulate(parents, *logits, &dx);
        }
    }
}
