//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fail.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anglseg::ablation::AblationTable;
use anglseg::brdf::{default_material_table, integrate_radiance, BrdfModel, Direction};
use anglseg::dataset::synthetic_dataset;
use anglseg::histogram::{
    bin_samples, extract_features, nearest_candidate_classify, normalize_counts, reference_histograms,
    superpixel_majority_labels,
};
use anglseg::scene::render_stack;
use anglseg::superpixel::pool_over_superpixels;
use anglseg::tensor::gradcheck::{check_gradients, random_tensor, GradCheckReport};
use anglseg::tensor::{BnMode, ConvSpec, Tape, Tensor, Var};
use anglseg::{
    run_ablation, AblationVariant, AnglNet, ConfusionMatrix, ExperimentConfig, HistogramConfig, NetworkConfig,
    SceneParams, SceneSpec, SlicConfig, TrainConfig,
};
use anglseg_cli::{cmd_features, cmd_generate, cmd_train, resolve_scenes};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_STEP: f32 = 1e-3;
const GRAD_TOL: f64 = 1e-3;
const GRAD_TRIALS: usize = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(30);

const QUAD_TOL: f64 = 1e-3;
const QUAD_GRID: (usize, usize) = (64, 128);
const QUAD_BUDGET: Duration = Duration::from_secs(5);

const HIST_FIXTURES: u64 = 50;
const HIST_NORM_TOL: f64 = 1e-6;

const SEP_CLEAN: f64 = 0.99;
const SEP_NOISY: f64 = 0.90;
const SEP_SIGMA: f64 = 0.02;
const SEP_BUDGET: Duration = Duration::from_secs(60);

const METRIC_PAIRS: usize = 20;
const RESIDUAL_FIXTURES: u64 = 5;

const BENCH_TRAIN: usize = 30;
const BENCH_TEST: usize = 10;
const BENCH_SEEDS: [u64; 3] = [0, 1, 2];
const BENCH_EPOCHS: usize = 10;
const MIN_HIST_GAIN: f64 = 1.0;
const FUSION_SLACK: f64 = 0.5;
const BENCH_BUDGET: Duration = Duration::from_secs(30 * 60);

type Check = std::result::Result<String, String>;

fn run(id: u32, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} criterion {id} ({name}): {detail} [{secs:.1}s]");
    outcome.is_ok()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1 ------------------------------------------------------------------------

type Builder = Box<dyn Fn(&mut ChaCha8Rng) -> (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> anglseg::Result<Var>>)>;

fn gradient_cases() -> Vec<(&'static str, Builder)> {
    let mut cases: Vec<(&'static str, Builder)> = Vec::new();
    cases.push((
        "conv2d",
        Box::new(|rng| {
            let specs = [
                ConvSpec::new(2, 3, 3).same(),
                ConvSpec::new(2, 2, 3).stride(2).padding(1),
                ConvSpec::new(2, 2, 3).dilation(2).same(),
                ConvSpec::new(3, 2, 1),
            ];
            let spec = specs[rng.random_range(0..specs.len())];
            let x = random_tensor(rng, &[2, spec.in_channels, 5, 4], -1.0, 1.0, 0.0);
            let w = random_tensor(rng, &spec.weight_shape(), -1.0, 1.0, 0.0);
            let b = random_tensor(rng, &[spec.out_channels], -1.0, 1.0, 0.0);
            (
                vec![x, w, b],
                Box::new(move |t: &mut Tape, v: &[Var]| t.conv2d(v[0], v[1], Some(v[2]), spec)),
            )
        }),
    ));
    for (name, mode) in [("batch_norm/train", BnMode::Train), ("batch_norm/eval", BnMode::Eval)] {
        cases.push((
            name,
            Box::new(move |rng| {
                let c = rng.random_range(1..=3);
                let x = random_tensor(rng, &[2, c, 3, 3], -1.0, 1.0, 0.0);
                let g = random_tensor(rng, &[c], 0.5, 1.5, 0.0);
                let b = random_tensor(rng, &[c], -0.5, 0.5, 0.0);
                let rm = random_tensor(rng, &[c], -0.2, 0.2, 0.0);
                let rv = random_tensor(rng, &[c], 0.5, 1.5, 0.0);
                (
                    vec![x, g, b],
                    Box::new(move |t: &mut Tape, v: &[Var]| {
                        let (mut m, mut s) = (rm.clone(), rv.clone());
                        t.batch_norm(v[0], v[1], v[2], (&mut m, &mut s), mode)
                    }),
                )
            }),
        ));
    }
    cases.push((
        "relu",
        Box::new(|rng| {
            let x = random_tensor(rng, &[1, 2, 3, 4], -1.0, 1.0, 0.05);
            (vec![x], Box::new(|t: &mut Tape, v: &[Var]| Ok(t.relu(v[0]))))
        }),
    ));
    cases.push((
        "add",
        Box::new(|rng| {
            let a = random_tensor(rng, &[1, 2, 3, 3], -1.0, 1.0, 0.0);
            let b = random_tensor(rng, &[1, 2, 3, 3], -1.0, 1.0, 0.0);
            (vec![a, b], Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1])))
        }),
    ));
    cases.push((
        "scale",
        Box::new(|rng| {
            let a = random_tensor(rng, &[1, 2, 3, 3], -1.0, 1.0, 0.0);
            let f = rng.random_range(-2.0f32..2.0);
            (vec![a], Box::new(move |t: &mut Tape, v: &[Var]| Ok(t.scale(v[0], f))))
        }),
    ));
    cases.push((
        "concat_channels",
        Box::new(|rng| {
            let a = random_tensor(rng, &[2, 1, 3, 2], -1.0, 1.0, 0.0);
            let b = random_tensor(rng, &[2, 3, 3, 2], -1.0, 1.0, 0.0);
            (
                vec![a, b],
                Box::new(|t: &mut Tape, v: &[Var]| t.concat_channels(&[v[0], v[1]])),
            )
        }),
    ));
    cases.push((
        "avg_pool2d",
        Box::new(|rng| {
            let k = rng.random_range(2..=3);
            let x = random_tensor(rng, &[1, 2, 6, 6], -1.0, 1.0, 0.0);
            (vec![x], Box::new(move |t: &mut Tape, v: &[Var]| t.avg_pool2d(v[0], k)))
        }),
    ));
    cases.push((
        "upsample_bilinear",
        Box::new(|rng| {
            let f = rng.random_range(2..=4);
            let x = random_tensor(rng, &[1, 2, 3, 3], -1.0, 1.0, 0.0);
            (
                vec![x],
                Box::new(move |t: &mut Tape, v: &[Var]| t.upsample_bilinear(v[0], f)),
            )
        }),
    ));
    cases.push((
        "softmax_cross_entropy",
        Box::new(|rng| {
            let k = rng.random_range(2..=5);
            let x = random_tensor(rng, &[2, k, 3, 3], -2.0, 2.0, 0.0);
            let labels: Vec<u16> = (0..18)
                .map(|_| {
                    if rng.random_bool(0.15) {
                        255
                    } else {
                        rng.random_range(0..k) as u16
                    }
                })
                .collect();
            (
                vec![x],
                Box::new(move |t: &mut Tape, v: &[Var]| Ok(t.softmax_cross_entropy(v[0], &labels, 255)?.loss)),
            )
        }),
    ));
    cases
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = (0.0f64, "");
    let cases = gradient_cases();
    for (name, build) in &cases {
        for trial in 0..GRAD_TRIALS {
            let (inputs, f) = build(&mut rng);
            let r: GradCheckReport =
                check_gradients(&inputs, GRAD_STEP, trial as u64, |t, v| f(t, v)).map_err(|e| e.to_string())?;
            ensure(r.passes(GRAD_TOL), || format!("{name} trial {trial}: {r:?}"))?;
            if r.max_rel_error > worst.0 {
                worst = (r.max_rel_error, name);
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < GRAD_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} ops x {GRAD_TRIALS} tensors, worst rel err {:.2e} ({})",
        cases.len(),
        worst.0,
        worst.1
    ))
}

// 2 ------------------------------------------------------------------------

fn quadrature_oracle() -> Check {
    let start = Instant::now();
    let l0 = 1.7;
    let v = Direction::from_degrees(35.0, 40.0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for rho in [0.2, 0.5, 0.9] {
        let m = BrdfModel::lambertian(0, "lambert", rho);
        let got = integrate_radiance(&m, |_| l0, &v, QUAD_GRID.0, QUAD_GRID.1).map_err(|e| e.to_string())?;
        let rel = (got - rho * l0).abs() / (rho * l0);
        ensure(rel <= QUAD_TOL, || format!("rho {rho}: {got} vs {}", rho * l0))?;
        worst = worst.max(rel);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < QUAD_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "worst rel err {worst:.2e} on a {}x{} grid",
        QUAD_GRID.0, QUAD_GRID.1
    ))
}

// 3 ------------------------------------------------------------------------

fn histogram_invariants() -> Check {
    let cfg = HistogramConfig::default();
    for seed in 0..HIST_FIXTURES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..=6);
        let params = SceneParams {
            height: rng.random_range(16..=40),
            width: rng.random_range(16..=40),
            num_views: rng.random_range(2..=8),
            num_classes: k,
            noise_sigma: rng.random_range(0.0..0.05),
            invalid_fraction: rng.random_range(0.0..0.4),
            ..SceneParams::default()
        };
        let spec = SceneSpec::generate(&params, seed).map_err(|e| e.to_string())?;
        let stack = render_stack(&spec, &default_material_table(k).unwrap()).map_err(|e| e.to_string())?;
        let slic = SlicConfig {
            num_superpixels: (stack.plane() / 25).max(1),
            ..SlicConfig::default()
        };
        let ext = extract_features(&stack, &slic, &cfg).map_err(|e| e.to_string())?;
        let f = &ext.feature;
        let cb = cfg.coarse_bins;

        for s in 0..f.num_superpixels() {
            let row = f.row(s);
            for block in [&row[..cb], &row[cb..]] {
                let sum: f64 = block.iter().map(|&v| v as f64).sum();
                ensure((sum - 1.0).abs() <= HIST_NORM_TOL, || {
                    format!("fixture {seed}: block sum {sum}")
                })?;
            }
        }

        let planar = f.dense_planar();
        let n = stack.plane();
        for p in 0..n {
            let want = f.row(ext.map.ids[p] as usize);
            ensure(f.at(p) == want, || format!("fixture {seed}: dense row at {p}"))?;
            ensure((0..f.bins).all(|c| planar[c * n + p] == want[c]), || {
                format!("fixture {seed}: planar at {p}")
            })?;
        }

        let mut order: Vec<usize> = (0..stack.views).collect();
        order.shuffle(&mut rng);
        let permuted = extract_features(&stack.permute_views(&order), &slic, &cfg).map_err(|e| e.to_string())?;
        ensure(permuted.feature.per_superpixel == f.per_superpixel, || {
            format!("fixture {seed}: view order changed histograms")
        })?;

        let pooled = pool_over_superpixels(&stack, &ext.map).map_err(|e| e.to_string())?;
        if pooled.len() >= 2 {
            let (a, b) = (&pooled[0], &pooled[pooled.len() - 1]);
            let (ca, cbn) = (bin_samples(a, &cfg, &ext.ranges), bin_samples(b, &cfg, &ext.ranges));
            let union: Vec<f32> = a.iter().chain(b).copied().collect();
            let cu = bin_samples(&union, &cfg, &ext.ranges);
            ensure(
                cu.iter().zip(ca.iter().zip(&cbn)).all(|(u, (x, y))| *u == x + y),
                || format!("fixture {seed}: counts not additive"),
            )?;
            if !a.is_empty() && !b.is_empty() {
                let (ha, hb, hu) = (
                    normalize_counts(&ca, cb),
                    normalize_counts(&cbn, cb),
                    normalize_counts(&cu, cb),
                );
                let (na, nb) = (a.len() as f64, b.len() as f64);
                for i in 0..cfg.bins() {
                    let w = (na * ha[i] as f64 + nb * hb[i] as f64) / (na + nb);
                    ensure((hu[i] as f64 - w).abs() <= HIST_NORM_TOL, || {
                        format!("fixture {seed}: merged bin {i}")
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "{HIST_FIXTURES} fixtures: normalization, dense consistency, view permutation, additivity"
    ))
}

// 4 ------------------------------------------------------------------------

fn two_class(seed: u64, sigma: f64) -> SceneSpec {
    let params = SceneParams {
        num_classes: 2,
        noise_sigma: sigma,
        ..SceneParams::default()
    };
    SceneSpec::generate(&params, seed).unwrap()
}

fn separability_accuracy(seed: u64, sigma: f64) -> f64 {
    let table = vec![
        BrdfModel::lambertian(0, "matte", 0.5),
        BrdfModel::phong(1, "gloss", 0.1, 0.2, 6.0),
    ];
    let spec = two_class(seed, sigma);
    let stack = render_stack(&spec, &table).unwrap();
    let mut held = two_class(seed + 10_000, sigma);
    held.sun = spec.sun;
    held.view_angles = spec.view_angles.clone();
    let held_stack = render_stack(&held, &table).unwrap();
    let cfg = HistogramConfig::default();
    let ext = extract_features(&stack, &SlicConfig::for_image(stack.height, stack.width), &cfg).unwrap();
    let refs = reference_histograms(&held_stack, 2, &cfg, &ext.ranges).unwrap();
    let pred = nearest_candidate_classify(&ext.feature, &refs).unwrap();
    let truth = superpixel_majority_labels(&ext.map, &stack.labels, 2);
    pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

fn separability() -> Check {
    let start = Instant::now();
    let (mut clean, mut noisy) = (1.0f64, 1.0f64);
    for seed in 0..4 {
        clean = clean.min(separability_accuracy(seed, 0.0));
        noisy = noisy.min(separability_accuracy(seed, SEP_SIGMA));
    }
    ensure(clean >= SEP_CLEAN, || {
        format!("noiseless accuracy {clean:.3} < {SEP_CLEAN}")
    })?;
    ensure(noisy >= SEP_NOISY, || {
        format!("noisy accuracy {noisy:.3} < {SEP_NOISY}")
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < SEP_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "min superpixel accuracy {clean:.3} noiseless, {noisy:.3} at sigma {SEP_SIGMA} over 4 scenes"
    ))
}

// 5 ------------------------------------------------------------------------

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for pair in 0..METRIC_PAIRS {
        let (h, w) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let gt: Vec<u16> = (0..h * w).map(|_| rng.random_range(0..10)).collect();
        let pred: Vec<u16> = (0..h * w).map(|_| rng.random_range(0..10)).collect();
        let mut cm = ConfusionMatrix::new(10);
        cm.update(&gt, &pred, None).map_err(|e| e.to_string())?;
        let m = cm.metrics();
        let acc = gt.iter().zip(&pred).filter(|(g, p)| g == p).count() as f64 / gt.len() as f64;
        let mut ious = Vec::new();
        for c in 0..10u16 {
            let a: HashSet<usize> = (0..gt.len()).filter(|&i| gt[i] == c).collect();
            let b: HashSet<usize> = (0..gt.len()).filter(|&i| pred[i] == c).collect();
            let union = a.union(&b).count();
            if union > 0 {
                ious.push(a.intersection(&b).count() as f64 / union as f64);
            }
        }
        let miou = ious.iter().sum::<f64>() / ious.len() as f64;
        ensure(m.pix_acc == acc && (m.mean_iou - miou).abs() < 1e-12, || {
            format!("pair {pair}: {} / {} vs {acc} / {miou}", m.pix_acc, m.mean_iou)
        })?;
    }
    Ok(format!("{METRIC_PAIRS} random pairs up to 32x32, K=10"))
}

// 6 ------------------------------------------------------------------------

fn residual_invariant() -> Check {
    let cfg = NetworkConfig {
        num_classes: 6,
        ..NetworkConfig::default()
    };
    for seed in 0..RESIDUAL_FIXTURES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (h, w) = (8 * rng.random_range(2..=5), 8 * rng.random_range(2..=5));
        let img = random_tensor(&mut rng, &[2, 1, h, w], 0.0, 1.0, 0.0);
        let hist = random_tensor(&mut rng, &[2, cfg.histogram_bins, h, w], 0.0, 0.2, 0.0);
        let mut net = AnglNet::new(cfg.clone(), seed).map_err(|e| e.to_string())?;
        for mode in [BnMode::Train, BnMode::Eval] {
            let mut tape = Tape::new();
            let a = net
                .forward(&mut tape, &img, Some(&hist), mode)
                .map_err(|e| e.to_string())?;
            let bits = |v: Var| tape.value(v).data().iter().map(|x| x.to_bits()).collect::<Vec<u32>>();
            ensure(bits(a.fine) == bits(a.cp), || {
                format!("fixture {seed} {mode:?}: fine differs from CP")
            })?;
        }
    }
    Ok(format!("{RESIDUAL_FIXTURES} fixtures, train and eval mode"))
}

// 7 and 8 ------------------------------------------------------------------

fn benchmark() -> std::result::Result<(AblationTable, Duration), String> {
    let start = Instant::now();
    let params = SceneParams {
        height: 64,
        width: 64,
        num_views: 8,
        num_classes: 6,
        ..SceneParams::default()
    };
    let table = default_material_table(6).map_err(|e| e.to_string())?;
    let hist = HistogramConfig::default();
    let train_set = synthetic_dataset(&params, &table, &hist, 0, BENCH_TRAIN).map_err(|e| e.to_string())?;
    let test_set = synthetic_dataset(&params, &table, &hist, 1000, BENCH_TEST).map_err(|e| e.to_string())?;
    let net = NetworkConfig {
        num_classes: 6,
        histogram_bins: hist.bins(),
        ..NetworkConfig::default()
    };
    let train = TrainConfig {
        epochs: BENCH_EPOCHS,
        ..TrainConfig::default()
    };
    let t = run_ablation(&train_set, &test_set, &net, &train, &BENCH_SEEDS).map_err(|e| e.to_string())?;
    Ok((t, start.elapsed()))
}

fn ablation_order(bench: &std::result::Result<(AblationTable, Duration), String>) -> Check {
    let (t, elapsed) = bench.as_ref().map_err(Clone::clone)?;
    let miou = |v| 100.0 * t.row(v).unwrap().mean_miou();
    let (b, h, s) = (
        miou(AblationVariant::Baseline),
        miou(AblationVariant::Histogram),
        miou(AblationVariant::Stacking),
    );
    let summary = format!("mIoU baseline {b:.1}, +histogram {h:.1}, +stacking {s:.1}");
    ensure(b <= h && h <= s, || format!("order violated: {summary}"))?;
    ensure(h - b >= MIN_HIST_GAIN, || {
        format!("histogram gain {:.2} < {MIN_HIST_GAIN}: {summary}", h - b)
    })?;
    ensure(*elapsed < BENCH_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{summary} ({} seeds)", BENCH_SEEDS.len()))
}

fn fusion_benefit(bench: &std::result::Result<(AblationTable, Duration), String>) -> Check {
    let (t, _) = bench.as_ref().map_err(Clone::clone)?;
    let mut lines = Vec::new();
    for row in &t.rows {
        for (seed, r) in row.seeds.iter().zip(&row.per_seed) {
            let (fused, best, mean) = (
                100.0 * r.fused.mean_iou,
                100.0 * r.best_single_view_miou(),
                100.0 * r.mean_single_view_miou(),
            );
            ensure(fused >= best - FUSION_SLACK && fused >= mean, || {
                format!(
                    "{} seed {seed}: fused {fused:.2}, best view {best:.2}, view mean {mean:.2}",
                    row.variant.name()
                )
            })?;
            lines.push(fused - best);
        }
    }
    let min_gap = lines.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "{} runs, smallest fused - best-view gap {min_gap:+.2} points",
        lines.len()
    ))
}

// 9 ------------------------------------------------------------------------

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Check {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for root in &runs {
        let mut cfg = ExperimentConfig::parse("experiment.scene_count = 4\nscene.num_classes = 6\ntrain.epochs = 1\n")
            .map_err(|e| e.to_string())?;
        cfg.experiment.seed = 17;
        cfg.paths.scenes = root.path().join("scenes");
        cfg.paths.features = root.path().join("features");
        cmd_generate(&cfg, &cfg.paths.scenes).map_err(|e| e.to_string())?;
        let scenes = resolve_scenes(cfg.paths.scenes.to_str().unwrap()).map_err(|e| e.to_string())?;
        cmd_features(&cfg, &scenes, &cfg.paths.features).map_err(|e| e.to_string())?;
        cmd_train(&cfg, &scenes, &root.path().join("train")).map_err(|e| e.to_string())?;
    }
    let mut files = 0;
    for sub in ["scenes", "features"] {
        let (a, b) = (snapshot(&runs[0].path().join(sub)), snapshot(&runs[1].path().join(sub)));
        ensure(!a.is_empty() && a == b, || format!("{sub} differ between runs"))?;
        files += a.len();
    }
    let ckpt = |r: &tempfile::TempDir| std::fs::read(r.path().join("train/epoch_001.angw")).unwrap();
    ensure(ckpt(&runs[0]) == ckpt(&runs[1]), || "epoch-1 checkpoints differ".into())?;
    Ok(format!(
        "{files} generated/feature files and the epoch-1 checkpoint byte-identical"
    ))
}

fn main() {
    let mut ok = true;
    ok &= run(1, "gradient suite", gradient_suite);
    ok &= run(2, "BRDF quadrature oracle", quadrature_oracle);
    ok &= run(3, "histogram invariants", histogram_invariants);
    ok &= run(4, "separability", separability);
    ok &= run(5, "metric oracle", metric_oracle);
    ok &= run(6, "residual-learning invariant", residual_invariant);
    let bench = benchmark();
    ok &= run(7, "ablation ordering", || ablation_order(&bench));
    ok &= run(8, "fusion benefit", || fusion_benefit(&bench));
    ok &= run(9, "determinism", determinism);
    if let Ok((t, elapsed)) = &bench {
        println!("\nbenchmark table ({:.0}s):\n{}", elapsed.as_secs_f64(), t.to_text());
    }
    if !ok {
        std::process::exit(1);
    }
}
