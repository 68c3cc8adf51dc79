//! Two-stack coarse-to-fine segmentation network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BnMode, ConvSpec, ParamId, ParamStore, Tape, Tensor, Var};

/// Label value excluded from the loss.
pub const IGNORE_LABEL: u16 = 255;

pub const OUTPUT_STRIDE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(skip)]
    pub num_classes: usize,
    /// Output widths of the stem+stage1, stage2, stage3 and stage4.
    pub backbone_widths: [usize; 4],
    pub pah_channels: usize,
    pub stack1_channels: usize,
    pub stack2_channels: usize,
    /// Length of the histogram feature fed to the projection branches.
    #[serde(skip)]
    pub histogram_bins: usize,
    /// Feed projected histograms into both stacks.
    pub use_histogram: bool,
    /// Add the Stack II refinement on top of the coarse prediction.
    pub use_stack2: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            backbone_widths: [16, 32, 64, 64],
            pah_channels: 16,
            stack1_channels: 64,
            stack2_channels: 32,
            histogram_bins: 32,
            use_histogram: true,
            use_stack2: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("network needs at least 2 classes".into()));
        }
        let widths = [self.pah_channels, self.stack1_channels, self.stack2_channels];
        if self.backbone_widths.iter().chain(&widths).any(|&w| w == 0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if self.use_histogram && self.histogram_bins == 0 {
            return Err(Error::Config("histogram branch needs histogram_bins > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    spec: ConvSpec,
}

#[derive(Clone, Copy, Debug)]
struct Bn {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct ConvBn {
    conv: Conv,
    bn: Bn,
}

/// `shortcut(x) + relu(bn(conv(relu(bn(conv(x))))))`
#[derive(Clone, Copy, Debug)]
struct ResBlock {
    a: ConvBn,
    b: ConvBn,
    shortcut: Option<Conv>,
}

#[derive(Clone, Copy, Debug)]
struct Projection {
    a: ConvBn,
    b: ConvBn,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    He,
    /// Small normal, for classifier heads.
    Normal(f64),
    Zero,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, spec: ConvSpec, bias: bool, init: Init) -> Conv {
        let shape = spec.weight_shape();
        let fan_in = shape[1] * shape[2] * shape[3];
        let mut w = Tensor::zeros(&shape);
        let std = match init {
            Init::He => (2.0 / fan_in as f64).sqrt(),
            Init::Normal(s) => s,
            Init::Zero => 0.0,
        };
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in w.data_mut() {
                *v = normal.sample(&mut self.rng) as f32;
            }
        }
        let weight = self.store.add(&format!("{name}.weight"), w);
        let bias = bias.then(|| {
            self.store
                .add(&format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]))
        });
        Conv { weight, bias, spec }
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        Bn {
            gamma: self.store.add(&format!("{name}.gamma"), Tensor::full(&[c], 1.0)),
            beta: self.store.add(&format!("{name}.beta"), Tensor::zeros(&[c])),
            mean: self
                .store
                .add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c])),
            var: self
                .store
                .add_buffer(&format!("{name}.running_var"), Tensor::full(&[c], 1.0)),
        }
    }

    fn conv_bn(&mut self, name: &str, spec: ConvSpec) -> ConvBn {
        ConvBn {
            conv: self.conv(&format!("{name}.conv"), spec, false, Init::He),
            bn: self.bn(&format!("{name}.bn"), spec.out_channels),
        }
    }

    fn res_block(&mut self, name: &str, cin: usize, cout: usize, stride: usize, dilation: usize) -> ResBlock {
        let first = if stride > 1 {
            ConvSpec::new(cin, cout, 3).stride(stride).padding(1)
        } else {
            ConvSpec::new(cin, cout, 3).dilation(dilation).same()
        };
        let second = ConvSpec::new(cout, cout, 3).dilation(dilation).same();
        let shortcut = (cin != cout || stride != 1).then(|| {
            self.conv(
                &format!("{name}.shortcut"),
                ConvSpec::new(cin, cout, 1).stride(stride),
                true,
                Init::He,
            )
        });
        ResBlock {
            a: self.conv_bn(&format!("{name}.a"), first),
            b: self.conv_bn(&format!("{name}.b"), second),
            shortcut,
        }
    }

    fn projection(&mut self, name: &str, bins: usize, width: usize) -> Projection {
        Projection {
            a: self.conv_bn(&format!("{name}.a"), ConvSpec::new(bins, width, 1)),
            b: self.conv_bn(&format!("{name}.b"), ConvSpec::new(width, width, 1)),
        }
    }
}

/// Every intermediate named in the architecture, as tape handles.
#[derive(Clone, Copy, Debug)]
pub struct NetworkActivations {
    /// Shallow features at stride 8.
    pub sf1: Var,
    /// Shallow features at stride 4.
    pub sf2: Var,
    pub backbone_out: Var,
    pub pah1: Option<Var>,
    pub pah2: Option<Var>,
    /// Group features entering Stack I.
    pub gf: Var,
    pub mfm1: Var,
    /// Coarse logits at input resolution.
    pub cp: Var,
    pub mfm2: Option<Var>,
    pub refinement: Option<Var>,
    /// `cp + refinement`, or `cp` when Stack II is disabled.
    pub fine: Var,
}

#[derive(Clone, Debug)]
pub struct AnglNet {
    cfg: NetworkConfig,
    store: ParamStore,
    stem: ConvBn,
    stages: [ResBlock; 4],
    pah1: Option<Projection>,
    pah2: Option<Projection>,
    stack1: ResBlock,
    classifier1: Conv,
    stack2: Option<(ResBlock, Conv)>,
}

impl AnglNet {
    pub fn new(cfg: NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let [w0, w1, w2, w3] = cfg.backbone_widths;
        let stem = b.conv_bn("stem", ConvSpec::new(1, w0, 3).stride(2).padding(1));
        let stages = [
            b.res_block("stage1", w0, w0, 2, 1),
            b.res_block("stage2", w0, w1, 2, 1),
            b.res_block("stage3", w1, w2, 1, 2),
            b.res_block("stage4", w2, w3, 1, 4),
        ];
        let (pah1, pah2, pah_w) = if cfg.use_histogram {
            (
                Some(b.projection("pah1", cfg.histogram_bins, cfg.pah_channels)),
                Some(b.projection("pah2", cfg.histogram_bins, cfg.pah_channels)),
                cfg.pah_channels,
            )
        } else {
            (None, None, 0)
        };
        let k = cfg.num_classes;
        let stack1 = b.res_block("stack1", w1 + w3 + pah_w, cfg.stack1_channels, 1, 1);
        let classifier1 = b.conv(
            "stack1.classifier",
            ConvSpec::new(cfg.stack1_channels, k, 1),
            true,
            Init::Normal(0.01),
        );
        let stack2 = cfg.use_stack2.then(|| {
            let block = b.res_block("stack2", cfg.stack1_channels + w0 + pah_w, cfg.stack2_channels, 1, 1);
            let cls = b.conv(
                "stack2.classifier",
                ConvSpec::new(cfg.stack2_channels, k, 1),
                true,
                Init::Zero,
            );
            (block, cls)
        });
        Ok(Self {
            cfg,
            store,
            stem,
            stages,
            pah1,
            pah2,
            stack1,
            classifier1,
            stack2,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn conv(&self, tape: &mut Tape, c: &Conv, x: Var) -> Result<Var> {
        let w = tape.param(&self.store, c.weight);
        let b = c.bias.map(|b| tape.param(&self.store, b));
        tape.conv2d(x, w, b, c.spec)
    }

    fn conv_bn_relu(&mut self, tape: &mut Tape, l: &ConvBn, x: Var, mode: BnMode) -> Result<Var> {
        let y = self.conv(tape, &l.conv, x)?;
        let g = tape.param(&self.store, l.bn.gamma);
        let b = tape.param(&self.store, l.bn.beta);
        let y = tape.batch_norm(y, g, b, self.store.pair_mut(l.bn.mean, l.bn.var), mode)?;
        Ok(tape.relu(y))
    }

    fn res_block(&mut self, tape: &mut Tape, r: &ResBlock, x: Var, mode: BnMode) -> Result<Var> {
        let h = self.conv_bn_relu(tape, &r.a, x, mode)?;
        let h = self.conv_bn_relu(tape, &r.b, h, mode)?;
        let s = match &r.shortcut {
            Some(c) => self.conv(tape, c, x)?,
            None => x,
        };
        tape.add(s, h)
    }

    /// Stem and four residual stages: `(SF1, SF2, backbone_out)`.
    pub fn backbone_forward(&mut self, tape: &mut Tape, image: Var, mode: BnMode) -> Result<(Var, Var, Var)> {
        let [_, c, h, w] = tape.value(image).dims4("backbone_forward")?;
        if c != 1 {
            return Err(Error::shape(
                "backbone_forward",
                format!("expected 1 input channel, got {c}"),
            ));
        }
        if h % OUTPUT_STRIDE != 0 || w % OUTPUT_STRIDE != 0 {
            return Err(Error::shape(
                "backbone_forward",
                format!("input {h}x{w} is not a multiple of {OUTPUT_STRIDE}"),
            ));
        }
        let stem = self.stem;
        let stages = self.stages;
        let x = self.conv_bn_relu(tape, &stem, image, mode)?;
        let sf2 = self.res_block(tape, &stages[0], x, mode)?;
        let sf1 = self.res_block(tape, &stages[1], sf2, mode)?;
        let x = self.res_block(tape, &stages[2], sf1, mode)?;
        let out = self.res_block(tape, &stages[3], x, mode)?;
        Ok((sf1, sf2, out))
    }

    /// Area-average the dense histogram to `stride`, then two 1x1 conv-BN-relu
    /// layers. `level` 1 targets stride 8, level 2 stride 4.
    pub fn project_histogram(&mut self, tape: &mut Tape, dense: Var, level: u8, mode: BnMode) -> Result<Var> {
        let (proj, stride) = match level {
            1 => (self.pah1, OUTPUT_STRIDE),
            2 => (self.pah2, OUTPUT_STRIDE / 2),
            _ => return Err(Error::InvalidArgument(format!("no projection level {level}"))),
        };
        let proj = proj.ok_or_else(|| Error::Config("histogram branch disabled".into()))?;
        let pooled = tape.avg_pool2d(dense, stride)?;
        let h = self.conv_bn_relu(tape, &proj.a, pooled, mode)?;
        self.conv_bn_relu(tape, &proj.b, h, mode)
    }

    /// `(GF, MFM1, CP)`.
    pub fn stack1_forward(
        &mut self,
        tape: &mut Tape,
        sf1: Var,
        backbone_out: Var,
        pah1: Option<Var>,
        out_size: (usize, usize),
        mode: BnMode,
    ) -> Result<(Var, Var, Var)> {
        let mut parts = vec![sf1, backbone_out];
        parts.extend(pah1);
        let gf = tape.concat_channels(&parts)?;
        let block = self.stack1;
        let mfm1 = self.res_block(tape, &block, gf, mode)?;
        let cls = self.classifier1;
        let logits = self.conv(tape, &cls, mfm1)?;
        let cp = tape.upsample_bilinear(logits, OUTPUT_STRIDE)?;
        check_size("stack1_forward", tape, cp, out_size)?;
        Ok((gf, mfm1, cp))
    }

    /// `(MFM2, refinement)`.
    pub fn stack2_forward(
        &mut self,
        tape: &mut Tape,
        mfm1: Var,
        sf2: Var,
        pah2: Option<Var>,
        out_size: (usize, usize),
        mode: BnMode,
    ) -> Result<(Var, Var)> {
        let (block, cls) = self.stack2.ok_or_else(|| Error::Config("stack II disabled".into()))?;
        let up = tape.upsample_bilinear(mfm1, 2)?;
        let mut parts = vec![up, sf2];
        parts.extend(pah2);
        let x = tape.concat_channels(&parts)?;
        let mfm2 = self.res_block(tape, &block, x, mode)?;
        let logits = self.conv(tape, &cls, mfm2)?;
        let refinement = tape.upsample_bilinear(logits, OUTPUT_STRIDE / 2)?;
        check_size("stack2_forward", tape, refinement, out_size)?;
        Ok((mfm2, refinement))
    }

    /// Full forward pass. `histogram` is `N x b x H x W` and is required only
    /// when the histogram branch is enabled; otherwise it is ignored.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        image: &Tensor,
        histogram: Option<&Tensor>,
        mode: BnMode,
    ) -> Result<NetworkActivations> {
        let [n, _, h, w] = image.dims4("forward")?;
        let x = tape.constant(image.clone());
        let (sf1, sf2, backbone_out) = self.backbone_forward(tape, x, mode)?;
        let (pah1, pah2) = if self.cfg.use_histogram {
            let hist = histogram.ok_or_else(|| Error::InvalidArgument("histogram input required".into()))?;
            let want = [n, self.cfg.histogram_bins, h, w];
            if hist.shape() != want {
                return Err(Error::shape(
                    "forward",
                    format!("histogram {:?}, expected {want:?}", hist.shape()),
                ));
            }
            let d = tape.constant(hist.clone());
            (
                Some(self.project_histogram(tape, d, 1, mode)?),
                Some(self.project_histogram(tape, d, 2, mode)?),
            )
        } else {
            (None, None)
        };
        let (gf, mfm1, cp) = self.stack1_forward(tape, sf1, backbone_out, pah1, (h, w), mode)?;
        let (mfm2, refinement, fine) = if self.stack2.is_some() {
            let (mfm2, r) = self.stack2_forward(tape, mfm1, sf2, pah2, (h, w), mode)?;
            (Some(mfm2), Some(r), tape.add(cp, r)?)
        } else {
            (None, None, cp)
        };
        Ok(NetworkActivations {
            sf1,
            sf2,
            backbone_out,
            pah1,
            pah2,
            gf,
            mfm1,
            cp,
            mfm2,
            refinement,
            fine,
        })
    }

    /// Fine logits in eval mode.
    pub fn predict(&mut self, image: &Tensor, histogram: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let acts = self.forward(&mut tape, image, histogram, BnMode::Eval)?;
        Ok(tape.value(acts.fine).clone())
    }
}

fn check_size(op: &'static str, tape: &Tape, v: Var, (h, w): (usize, usize)) -> Result<()> {
    let [_, _, vh, vw] = tape.value(v).dims4(op)?;
    if (vh, vw) != (h, w) {
        return Err(Error::shape(op, format!("logits {vh}x{vw}, expected {h}x{w}")));
    }
    Ok(())
}

/// `CE(fine) + alpha * CE(cp)`.
pub fn combined_loss(tape: &mut Tape, acts: &NetworkActivations, labels: &[u16], alpha: f32) -> Result<Var> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::InvalidArgument(format!("loss weight {alpha} must be >= 0")));
    }
    let fine = tape.softmax_cross_entropy(acts.fine, labels, IGNORE_LABEL)?.loss;
    let coarse = tape.softmax_cross_entropy(acts.cp, labels, IGNORE_LABEL)?.loss;
    let coarse = tape.scale(coarse, alpha);
    tape.add(fine, coarse)
}

/// Per-pixel argmax over the class axis of `N x K x H x W` logits; ties to the lowest class.
pub fn argmax_labels(logits: &Tensor) -> Result<Vec<u16>> {
    let [n, k, h, w] = logits.dims4("argmax_labels")?;
    let plane = h * w;
    let d = logits.data();
    let mut out = Vec::with_capacity(n * plane);
    for b in 0..n {
        for p in 0..plane {
            let mut best = (f32::NEG_INFINITY, 0u16);
            for c in 0..k {
                let v = d[(b * k + c) * plane + p];
                if v > best.0 {
                    best = (v, c as u16);
                }
            }
            out.push(best.1);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig {
            num_classes: 3,
            backbone_widths: [4, 6, 8, 8],
            pah_channels: 4,
            stack1_channels: 8,
            stack2_channels: 6,
            histogram_bins: 5,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn stage_shapes_follow_the_strides() {
        let mut net = AnglNet::new(NetworkConfig::default(), 0).unwrap();
        let img = Tensor::full(&[1, 1, 64, 64], 0.3);
        let hist = Tensor::full(&[1, 32, 64, 64], 1.0 / 16.0);
        let mut tape = Tape::new();
        let a = net.forward(&mut tape, &img, Some(&hist), BnMode::Eval).unwrap();
        assert_eq!(tape.value(a.sf2).shape(), &[1, 16, 16, 16]);
        assert_eq!(tape.value(a.sf1).shape(), &[1, 32, 8, 8]);
        assert_eq!(tape.value(a.backbone_out).shape(), &[1, 64, 8, 8]);
        assert_eq!(tape.value(a.pah1.unwrap()).shape(), &[1, 16, 8, 8]);
        assert_eq!(tape.value(a.pah2.unwrap()).shape(), &[1, 16, 16, 16]);
        assert_eq!(tape.value(a.gf).shape(), &[1, 112, 8, 8]);
        assert_eq!(tape.value(a.cp).shape(), &[1, 10, 64, 64]);
        assert_eq!(tape.value(a.fine).shape(), &[1, 10, 64, 64]);
    }

    #[test]
    fn rejects_sizes_off_the_stride() {
        let mut net = AnglNet::new(small(), 0).unwrap();
        let mut tape = Tape::new();
        let img = Tensor::zeros(&[1, 1, 20, 16]);
        let hist = Tensor::zeros(&[1, 5, 20, 16]);
        assert!(net.forward(&mut tape, &img, Some(&hist), BnMode::Eval).is_err());
    }

    #[test]
    fn histogram_required_when_enabled() {
        let mut net = AnglNet::new(small(), 0).unwrap();
        let mut tape = Tape::new();
        let img = Tensor::zeros(&[1, 1, 16, 16]);
        assert!(net.forward(&mut tape, &img, None, BnMode::Eval).is_err());
        let bad = Tensor::zeros(&[1, 4, 16, 16]);
        assert!(net.forward(&mut tape, &img, Some(&bad), BnMode::Eval).is_err());
    }

    #[test]
    fn zero_input_gives_zero_activations() {
        let mut net = AnglNet::new(small(), 1).unwrap();
        let mut tape = Tape::new();
        let img = Tensor::zeros(&[2, 1, 16, 16]);
        let hist = Tensor::zeros(&[2, 5, 16, 16]);
        let a = net.forward(&mut tape, &img, Some(&hist), BnMode::Eval).unwrap();
        for v in [
            a.sf1,
            a.sf2,
            a.backbone_out,
            a.pah1.unwrap(),
            a.gf,
            a.mfm1,
            a.cp,
            a.fine,
        ] {
            assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn ablation_flags_remove_parameters() {
        let full = AnglNet::new(small(), 0).unwrap();
        let bare = AnglNet::new(
            NetworkConfig {
                use_histogram: false,
                use_stack2: false,
                ..small()
            },
            0,
        )
        .unwrap();
        assert!(full.params().find("pah1.a.conv.weight").is_some());
        assert!(bare.params().find("pah1.a.conv.weight").is_none());
        assert!(bare.params().find("stack2.classifier.weight").is_none());
        assert!(bare.params().num_trainable() < full.params().num_trainable());
    }

    #[test]
    fn loss_weight_endpoints() {
        let mut net = AnglNet::new(small(), 2).unwrap();
        let img = Tensor::new(&[1, 1, 16, 16], (0..256).map(|i| (i % 17) as f32 / 17.0).collect()).unwrap();
        let hist = Tensor::full(&[1, 5, 16, 16], 0.2);
        let labels: Vec<u16> = (0..256).map(|i| (i % 3) as u16).collect();
        let mut tape = Tape::new();
        let a = net.forward(&mut tape, &img, Some(&hist), BnMode::Eval).unwrap();
        let ce = tape.softmax_cross_entropy(a.fine, &labels, IGNORE_LABEL).unwrap().loss;
        let ce = tape.value(ce).item();
        let l0 = combined_loss(&mut tape, &a, &labels, 0.0).unwrap();
        assert_eq!(tape.value(l0).item(), ce);
        // fine == cp at initialization, so alpha = 1 doubles the loss
        let l1 = combined_loss(&mut tape, &a, &labels, 1.0).unwrap();
        assert_eq!(tape.value(l1).item(), 2.0 * ce);
        assert!(combined_loss(&mut tape, &a, &labels, -1.0).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        let t = Tensor::new(&[1, 3, 1, 2], vec![0.5, 0.1, 0.5, 0.9, 0.2, 0.9]).unwrap();
        assert_eq!(argmax_labels(&t).unwrap(), vec![0, 1]);
    }
}
