//! Training loop and evaluation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::fuse_logits;
use crate::histogram::AngularHistogramFeature;
use crate::metrics::{ConfusionMatrix, Metrics};
use crate::model::{argmax_labels, combined_loss, AnglNet, IGNORE_LABEL, OUTPUT_STRIDE};
use crate::scene::IntensityStack;
use crate::tensor::{sgd_step, write_checkpoint, BnMode, SgdConfig, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub poly_power: f32,
    /// Weight of the coarse-prediction loss.
    pub alpha: f32,
    /// Square crop side; must be a multiple of 8.
    pub crop: usize,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 10,
            batch_size: 8,
            poly_power: 0.9,
            alpha: 0.2,
            crop: 64,
            flip_horizontal: true,
            flip_vertical: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.base_lr, self.poly_power];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("base_lr and poly_power must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.alpha < 0.0 {
            return Err(Error::Config("momentum in [0,1), weight_decay and alpha >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(OUTPUT_STRIDE) {
            return Err(Error::Config(format!(
                "crop {} must be a positive multiple of 8",
                self.crop
            )));
        }
        Ok(())
    }
}

/// `base * (1 - iter / total)^power`, clamped to zero past the end.
pub fn poly_lr(base: f32, iter: usize, total: usize, power: f32) -> f32 {
    if total == 0 || iter >= total {
        return 0.0;
    }
    base * (1.0 - iter as f32 / total as f32).powf(power)
}

/// One scene prepared for the network: every view, the dense histogram and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneData {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub views: Vec<Vec<f32>>,
    pub bins: usize,
    /// Dense histogram, `bins x H x W`; empty when `bins == 0`.
    pub histogram: Vec<f32>,
    pub labels: Vec<u16>,
}

impl SceneData {
    pub fn from_stack(name: &str, stack: &IntensityStack, feature: Option<&AngularHistogramFeature>) -> Result<Self> {
        let (bins, histogram) = match feature {
            Some(f) => {
                if (f.height, f.width) != (stack.height, stack.width) {
                    return Err(Error::shape(
                        "scene_data",
                        "histogram and stack sizes differ".to_string(),
                    ));
                }
                (f.bins, f.dense_planar())
            }
            None => (0, Vec::new()),
        };
        Ok(Self {
            name: name.to_owned(),
            height: stack.height,
            width: stack.width,
            views: (0..stack.views).map(|j| stack.view(j).to_vec()).collect(),
            bins,
            histogram,
            labels: stack.labels.clone(),
        })
    }
}

/// Image, histogram and labels for one training example, already cropped and flipped.
struct Example {
    image: Vec<f32>,
    hist: Vec<f32>,
    labels: Vec<u16>,
}

fn crop_flip(scene: &SceneData, view: usize, side: usize, rng: &mut ChaCha8Rng, cfg: &TrainConfig) -> Example {
    let (h, w) = (scene.height, scene.width);
    let (ch, cw) = (side.min(h), side.min(w));
    let y0 = rng.random_range(0..=h - ch);
    let x0 = rng.random_range(0..=w - cw);
    let fh = cfg.flip_horizontal && rng.random_bool(0.5);
    let fv = cfg.flip_vertical && rng.random_bool(0.5);
    let src = |y: usize, x: usize| {
        let sy = if fv { ch - 1 - y } else { y };
        let sx = if fh { cw - 1 - x } else { x };
        (y0 + sy) * w + x0 + sx
    };
    let mut image = Vec::with_capacity(ch * cw);
    let mut labels = Vec::with_capacity(ch * cw);
    for y in 0..ch {
        for x in 0..cw {
            image.push(scene.views[view][src(y, x)]);
            labels.push(scene.labels[src(y, x)]);
        }
    }
    let mut hist = Vec::with_capacity(scene.bins * ch * cw);
    for b in 0..scene.bins {
        let plane = &scene.histogram[b * h * w..(b + 1) * h * w];
        for y in 0..ch {
            for x in 0..cw {
                hist.push(plane[src(y, x)]);
            }
        }
    }
    Example { image, hist, labels }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub last_lr: f32,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub iterations: usize,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    /// `epoch,mean_loss,lr` rows.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,lr\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:.6},{:.6e}\n", e.epoch, e.mean_loss, e.last_lr));
        }
        s
    }
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.angw"))
}

/// Momentum SGD with poly decay over every `(scene, view)` pair.
pub fn train(
    net: &mut AnglNet,
    scenes: &[SceneData],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let uses_hist = net.config().use_histogram;
    let mut pairs = Vec::new();
    for (s, scene) in scenes.iter().enumerate() {
        if uses_hist && scene.bins != net.config().histogram_bins {
            return Err(Error::InvalidArgument(format!(
                "scene {} has {} histogram bins, network expects {}",
                scene.name,
                scene.bins,
                net.config().histogram_bins
            )));
        }
        if scene.height < OUTPUT_STRIDE || scene.width < OUTPUT_STRIDE {
            return Err(Error::InvalidArgument(format!(
                "scene {} is smaller than 8x8",
                scene.name
            )));
        }
        pairs.extend((0..scene.views.len()).map(|v| (s, v)));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let per_epoch = pairs.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport::default();
    let mut iter = 0usize;
    for epoch in 1..=cfg.epochs {
        pairs.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut lr = cfg.base_lr;
        for batch in pairs.chunks(cfg.batch_size) {
            // every example in a batch shares one crop size so the tensors stack
            let side = batch
                .iter()
                .map(|&(s, _)| scenes[s].height.min(scenes[s].width))
                .min()
                .unwrap_or(cfg.crop)
                .min(cfg.crop)
                / OUTPUT_STRIDE
                * OUTPUT_STRIDE;
            let examples: Vec<Example> = batch
                .iter()
                .map(|&(s, v)| crop_flip(&scenes[s], v, side, &mut rng, cfg))
                .collect();
            let n = examples.len();
            let image = Tensor::new(
                &[n, 1, side, side],
                examples.iter().flat_map(|e| e.image.iter().copied()).collect(),
            )?;
            let labels: Vec<u16> = examples.iter().flat_map(|e| e.labels.iter().copied()).collect();
            let hist = if uses_hist {
                let b = net.config().histogram_bins;
                Some(Tensor::new(
                    &[n, b, side, side],
                    examples.iter().flat_map(|e| e.hist.iter().copied()).collect(),
                )?)
            } else {
                None
            };

            lr = poly_lr(cfg.base_lr, iter, total, cfg.poly_power);
            let mut tape = Tape::new();
            let acts = net.forward(&mut tape, &image, hist.as_ref(), BnMode::Train)?;
            let loss = combined_loss(&mut tape, &acts, &labels, cfg.alpha)?;
            tape.backward(loss)?;
            tape.accumulate_param_grads(net.params_mut());
            let value = tape.value(loss).item();
            let grad_norm = net.params().grad_norm();
            if !value.is_finite() || !grad_norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: iter,
                    lr,
                    grad_norm,
                });
            }
            sgd_step(
                net.params_mut(),
                &SgdConfig {
                    lr,
                    momentum: cfg.momentum,
                    weight_decay: cfg.weight_decay,
                },
            )?;
            loss_sum += value as f64;
            iter += 1;
        }
        report.epochs.push(EpochStats {
            epoch,
            mean_loss: loss_sum / per_epoch as f64,
            last_lr: lr,
        });
        if let Some(dir) = checkpoint_dir {
            let path = checkpoint_path(dir, epoch);
            write_checkpoint(&path, net.params())?;
            report.checkpoints.push(path);
        }
    }
    report.iterations = iter;
    Ok(report)
}

/// Edge-replicates `c` planes of `h x w` up to `ph x pw`.
fn pad_planes(data: &[f32], c: usize, h: usize, w: usize, ph: usize, pw: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            let row = &data[(ch * h + y.min(h - 1)) * w..][..w];
            out.extend((0..pw).map(|x| row[x.min(w - 1)]));
        }
    }
    out
}

/// Fine logits `1 x K x H x W` for every view of a scene, in eval mode.
/// Inputs are edge-padded to a multiple of 8 and the logits cropped back.
pub fn predict_scene(net: &mut AnglNet, scene: &SceneData) -> Result<Vec<Tensor>> {
    let (h, w) = (scene.height, scene.width);
    let ph = h.div_ceil(OUTPUT_STRIDE) * OUTPUT_STRIDE;
    let pw = w.div_ceil(OUTPUT_STRIDE) * OUTPUT_STRIDE;
    let v = scene.views.len();
    let image = Tensor::new(
        &[v, 1, ph, pw],
        scene
            .views
            .iter()
            .flat_map(|img| pad_planes(img, 1, h, w, ph, pw))
            .collect(),
    )?;
    let hist = if net.config().use_histogram {
        let b = net.config().histogram_bins;
        if scene.bins != b {
            return Err(Error::InvalidArgument(format!(
                "scene {} has {} histogram bins, network expects {b}",
                scene.name, scene.bins
            )));
        }
        Some(Tensor::new(
            &[v, b, ph, pw],
            pad_planes(&scene.histogram, b, h, w, ph, pw).repeat(v),
        )?)
    } else {
        None
    };
    let logits = net.predict(&image, hist.as_ref())?;
    let k = net.config().num_classes;
    let d = logits.data();
    (0..v)
        .map(|j| {
            let mut out = Vec::with_capacity(k * h * w);
            for c in 0..k {
                for y in 0..h {
                    out.extend_from_slice(&d[((j * k + c) * ph + y) * pw..][..w]);
                }
            }
            Tensor::new(&[1, k, h, w], out)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    /// Every view of every scene in one confusion matrix.
    pub per_view: Metrics,
    /// One entry per view index, pooled over scenes.
    pub by_view_index: Vec<Metrics>,
    /// Pixel-wise vote across each scene's views.
    pub fused: Metrics,
}

impl EvalReport {
    pub fn best_single_view_miou(&self) -> f64 {
        self.by_view_index
            .iter()
            .map(|m| m.mean_iou)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_single_view_miou(&self) -> f64 {
        self.by_view_index.iter().map(|m| m.mean_iou).sum::<f64>() / self.by_view_index.len().max(1) as f64
    }
}

/// Metrics from the fine logits only.
pub fn evaluate(net: &mut AnglNet, scenes: &[SceneData]) -> Result<EvalReport> {
    let k = net.config().num_classes;
    let num_views = scenes.iter().map(|s| s.views.len()).min().unwrap_or(0);
    let mut pooled = ConfusionMatrix::new(k);
    let mut by_view = vec![ConfusionMatrix::new(k); num_views];
    let mut fused = ConfusionMatrix::new(k);
    for scene in scenes {
        let logits = predict_scene(net, scene)?;
        for (j, l) in logits.iter().enumerate() {
            let pred = argmax_labels(l)?;
            pooled.update(&scene.labels, &pred, Some(IGNORE_LABEL))?;
            if j < num_views {
                by_view[j].update(&scene.labels, &pred, Some(IGNORE_LABEL))?;
            }
        }
        let fused_pred = fuse_logits(&logits)?;
        fused.update(&scene.labels, &fused_pred, Some(IGNORE_LABEL))?;
    }
    Ok(EvalReport {
        per_view: pooled.metrics(),
        by_view_index: by_view.into_iter().map(|c| c.metrics()).collect(),
        fused: fused.metrics(),
    })
}
