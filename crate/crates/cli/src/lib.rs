//! Subcommands behind the `anglseg` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anglseg::brdf::default_material_table;
use anglseg::dataset::scene_seeds;
use anglseg::fusion::fuse_logits;
use anglseg::histogram::{extract_features, AngularHistogramFeature};
use anglseg::io::png_io::{gray_to_rgb, side_by_side};
use anglseg::io::{read_ahis, read_scene_dir, write_ahis, write_rgb_png, write_scene_dir, LoadedScene};
use anglseg::model::argmax_labels;
use anglseg::scene::render_stack;
use anglseg::tensor::read_checkpoint;
use anglseg::train::{evaluate, predict_scene, train, TrainReport};
use anglseg::{run_ablation, AnglNet, ColorLegend, Error, ExperimentConfig, Result, SceneData, SceneSpec};
use rayon::prelude::*;

/// Which views a command looks at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ViewSelection {
    #[default]
    All,
    Index(usize),
}

impl std::str::FromStr for ViewSelection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(Self::All),
            _ => s
                .parse()
                .map(Self::Index)
                .map_err(|_| format!("expected `all` or a view index, got `{s}`")),
        }
    }
}

impl ViewSelection {
    fn indices(self, num_views: usize) -> Result<Vec<usize>> {
        match self {
            Self::All => Ok((0..num_views).collect()),
            Self::Index(j) if j < num_views => Ok(vec![j]),
            Self::Index(j) => Err(Error::InvalidArgument(format!(
                "view {j} out of range for {num_views} views"
            ))),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_owned(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

/// Material names from the default table, used for legends.
pub fn legend_for(cfg: &ExperimentConfig) -> Result<ColorLegend> {
    let table = default_material_table(cfg.scene.num_classes)?;
    Ok(ColorLegend::new(
        &table.iter().map(|m| m.name.clone()).collect::<Vec<_>>(),
    ))
}

/// Scene directories matched by `pattern` (a glob, or a directory of scenes), sorted.
pub fn resolve_scenes(pattern: &str) -> Result<Vec<PathBuf>> {
    let p = Path::new(pattern);
    let pattern = if p.is_dir() && !p.join("scene.toml").exists() {
        format!("{}/*", pattern.trim_end_matches('/'))
    } else {
        pattern.to_owned()
    };
    let paths = glob::glob(&pattern).map_err(|e| Error::InvalidArgument(format!("bad scene glob `{pattern}`: {e}")))?;
    let mut dirs: Vec<PathBuf> = paths
        .filter_map(|p| p.ok())
        .filter(|p| p.join("scene.toml").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no scene directories match `{pattern}`"
        )));
    }
    Ok(dirs)
}

pub fn cache_path(features_dir: &Path, scene_name: &str) -> PathBuf {
    features_dir.join(format!("{scene_name}.ahis"))
}

#[derive(Clone, Debug)]
pub struct GeneratedScene {
    pub dir: PathBuf,
    pub seed: u64,
    pub class_counts: Vec<usize>,
}

/// Renders `experiment.scene_count` scenes into `out/scene_####`.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<GeneratedScene>> {
    cfg.validate()?;
    create_dir(out)?;
    let table = default_material_table(cfg.scene.num_classes)?;
    let legend = legend_for(cfg)?;
    let seeds = scene_seeds(cfg.experiment.seed, cfg.experiment.scene_count);
    let scenes = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let spec = SceneSpec::generate(&cfg.scene, seed)?;
            let stack = render_stack(&spec, &table)?;
            let dir = out.join(format!("scene_{i:04}"));
            write_scene_dir(&dir, &spec, &stack, &legend)?;
            Ok(GeneratedScene {
                dir,
                seed,
                class_counts: spec.class_counts(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_text(&out.join("legend.txt"), &legend.to_text())?;
    Ok(scenes)
}

pub fn format_class_counts(scenes: &[GeneratedScene]) -> String {
    let mut s = String::new();
    for g in scenes {
        let name = g
            .dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let counts: Vec<String> = g.class_counts.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "{name} seed={} counts={}", g.seed, counts.join(","));
    }
    s
}

#[derive(Clone, Debug)]
pub struct FeatureSummary {
    pub scene: String,
    pub cache: PathBuf,
    pub superpixels: usize,
    pub target: usize,
}

fn features_for(cfg: &ExperimentConfig, scene: &LoadedScene) -> Result<AngularHistogramFeature> {
    let slic = cfg.slic_for(scene.stack.height, scene.stack.width);
    Ok(extract_features(&scene.stack, &slic, &cfg.histogram)?.feature)
}

/// Runs SLIC and the histogram extraction per scene and writes `out/<scene>.ahis`.
pub fn cmd_features(cfg: &ExperimentConfig, scenes: &[PathBuf], out: &Path) -> Result<Vec<FeatureSummary>> {
    cfg.validate()?;
    create_dir(out)?;
    let hash = cfg.feature_hash();
    scenes
        .par_iter()
        .map(|dir| {
            let scene = read_scene_dir(dir)?;
            let feature = features_for(cfg, &scene)?;
            let cache = cache_path(out, &scene.name);
            write_ahis(&cache, &feature, &hash)?;
            Ok(FeatureSummary {
                scene: scene.name.clone(),
                cache,
                superpixels: feature.num_superpixels(),
                target: cfg.slic_for(scene.stack.height, scene.stack.width).num_superpixels,
            })
        })
        .collect()
}

/// Reads scenes and, when the network uses them, their cached histograms.
pub fn load_scene_data(cfg: &ExperimentConfig, scenes: &[PathBuf]) -> Result<Vec<SceneData>> {
    let use_hist = cfg.network.use_histogram;
    let hash = cfg.feature_hash();
    scenes
        .par_iter()
        .map(|dir| {
            let scene = read_scene_dir(dir)?;
            if use_hist {
                let cache = cache_path(&cfg.paths.features, &scene.name);
                if !cache.is_file() {
                    return Err(Error::InvalidArgument(format!(
                        "missing feature cache {}; run `anglseg features` first",
                        cache.display()
                    )));
                }
                let feature = read_ahis(&cache, cfg.histogram.coarse_bins, &hash)?;
                SceneData::from_stack(&scene.name, &scene.stack, Some(&feature))
            } else {
                SceneData::from_stack(&scene.name, &scene.stack, None)
            }
        })
        .collect()
}

/// Trains from the experiment seed, writing `epoch_###.angw`, `loss.csv` and `config.txt` to `out`.
pub fn cmd_train(cfg: &ExperimentConfig, scenes: &[PathBuf], out: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let data = load_scene_data(cfg, scenes)?;
    create_dir(out)?;
    write_text(&out.join("config.txt"), &cfg.to_text()?)?;
    let mut net = AnglNet::new(cfg.network_config(), cfg.experiment.seed)?;
    let report = train(&mut net, &data, &cfg.train_config(), Some(out))?;
    write_text(&out.join("loss.csv"), &report.loss_csv())?;
    Ok(report)
}

pub fn load_network(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<AnglNet> {
    let tensors = read_checkpoint(checkpoint)?;
    let mut net = AnglNet::new(cfg.network_config(), cfg.experiment.seed)?;
    net.params_mut().load_tensors(tensors).map_err(|e| Error::Format {
        path: checkpoint.to_owned(),
        msg: format!("does not fit the configured network ({e})"),
    })?;
    Ok(net)
}

fn select_views(data: Vec<SceneData>, views: ViewSelection) -> Result<Vec<SceneData>> {
    data.into_iter()
        .map(|mut s| {
            let keep = views.indices(s.views.len())?;
            s.views = keep.iter().map(|&j| s.views[j].clone()).collect();
            Ok(s)
        })
        .collect()
}

/// `pixAcc / mIoU` lines; writes `metrics.csv` to `out`.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    scenes: &[PathBuf],
    checkpoint: &Path,
    views: ViewSelection,
    fuse: bool,
    out: &Path,
) -> Result<String> {
    cfg.validate()?;
    let mut net = load_network(cfg, checkpoint)?;
    let data = select_views(load_scene_data(cfg, scenes)?, views)?;
    let report = evaluate(&mut net, &data)?;
    let mut text = format!("per-view {}\n", report.per_view);
    let mut csv = String::from("setting,pix_acc,mean_iou\n");
    let _ = writeln!(
        csv,
        "per_view,{:.6},{:.6}",
        report.per_view.pix_acc, report.per_view.mean_iou
    );
    if fuse {
        let _ = writeln!(text, "fused {}", report.fused);
        let _ = writeln!(csv, "fused,{:.6},{:.6}", report.fused.pix_acc, report.fused.mean_iou);
    }
    create_dir(out)?;
    write_text(&out.join("metrics.csv"), &csv)?;
    Ok(text)
}

/// Splits scenes (last `experiment.test_scenes` held out) and writes `ablation.txt` / `ablation.csv`.
pub fn cmd_ablate(cfg: &ExperimentConfig, scenes: &[PathBuf], out: &Path) -> Result<String> {
    cfg.validate()?;
    let test = cfg.experiment.test_scenes;
    if test == 0 || test >= scenes.len() {
        return Err(Error::InvalidArgument(format!(
            "need more than experiment.test_scenes={test} scenes, found {}",
            scenes.len()
        )));
    }
    let mut with_hist = cfg.clone();
    with_hist.network.use_histogram = true;
    let data = load_scene_data(&with_hist, scenes)?;
    let (train_set, test_set) = data.split_at(data.len() - test);
    let table = run_ablation(
        train_set,
        test_set,
        &with_hist.network_config(),
        &cfg.train_config(),
        &cfg.experiment.ablation_seeds,
    )?;
    create_dir(out)?;
    let text = table.to_text();
    write_text(&out.join("ablation.txt"), &text)?;
    write_text(&out.join("ablation.csv"), &table.to_csv())?;
    Ok(text)
}

/// Writes color-mapped predictions under `out/<scene>/`, plus `legend.png` and `legend.txt` in `out`.
/// Returns every PNG written.
pub fn cmd_segment(
    cfg: &ExperimentConfig,
    scenes: &[PathBuf],
    checkpoint: &Path,
    views: ViewSelection,
    panel: bool,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut net = load_network(cfg, checkpoint)?;
    let legend = legend_for(cfg)?;
    create_dir(out)?;
    let (lw, lh, strip) = legend.strip(16);
    let mut written = vec![out.join("legend.png")];
    write_rgb_png(&written[0], lw, lh, &strip)?;
    write_text(&out.join("legend.txt"), &legend.to_text())?;

    for mut scene in load_scene_data(cfg, scenes)? {
        let chosen = views.indices(scene.views.len())?;
        scene.views = chosen.iter().map(|&j| scene.views[j].clone()).collect();
        let (h, w) = (scene.height, scene.width);
        let dir = out.join(&scene.name);
        create_dir(&dir)?;
        let logits = predict_scene(&mut net, &scene)?;
        let gt = legend.colorize(&scene.labels);
        let max = scene.views.iter().flatten().fold(0.0f32, |m, &v| m.max(v));
        let mut emit = |name: String, pred: &[u16], image: &[f32]| -> Result<()> {
            let color = legend.colorize(pred);
            let path = dir.join(format!("{name}.png"));
            write_rgb_png(&path, w, h, &color)?;
            written.push(path);
            if panel {
                let gray = gray_to_rgb(image, max);
                let (pw, rgb) = side_by_side(w, h, &[&gray, &gt, &color], 4);
                let path = dir.join(format!("panel_{name}.png"));
                write_rgb_png(&path, pw, h, &rgb)?;
                written.push(path);
            }
            Ok(())
        };
        for ((l, &j), image) in logits.iter().zip(&chosen).zip(&scene.views) {
            emit(format!("view_{j:03}_pred"), &argmax_labels(l)?, image)?;
        }
        let mean: Vec<f32> = (0..h * w)
            .map(|p| scene.views.iter().map(|v| v[p]).sum::<f32>() / scene.views.len() as f32)
            .collect();
        emit("fused_pred".into(), &fuse_logits(&logits)?, &mean)?;
    }
    Ok(written)
}
