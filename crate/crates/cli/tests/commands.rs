use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use anglseg::histogram::extract_features;
use anglseg::io::ahis::read_config_hash;
use anglseg::io::{read_ahis, read_scene_dir};
use anglseg::ExperimentConfig;
use anglseg_cli::{
    cache_path, cmd_ablate, cmd_eval, cmd_features, cmd_generate, cmd_segment, cmd_train, resolve_scenes, ViewSelection,
};

fn small_config(root: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(
        "experiment.scene_count = 5\n\
         experiment.test_scenes = 2\n\
         experiment.ablation_seeds = [3]\n\
         scene.num_classes = 4\n\
         scene.height = 32\n\
         scene.width = 40\n\
         scene.num_views = 3\n\
         train.epochs = 2\n\
         train.batch_size = 4\n\
         train.crop = 32\n",
    )
    .unwrap();
    cfg.paths.scenes = root.join("scenes");
    cfg.paths.features = root.join("features");
    cfg.paths.output = root.join("out");
    cfg
}

/// Relative path -> bytes for every file under `dir`.
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

fn prepared(root: &Path) -> (ExperimentConfig, Vec<PathBuf>) {
    let cfg = small_config(root);
    cmd_generate(&cfg, &cfg.paths.scenes).unwrap();
    let scenes = resolve_scenes(cfg.paths.scenes.to_str().unwrap()).unwrap();
    cmd_features(&cfg, &scenes, &cfg.paths.features).unwrap();
    (cfg, scenes)
}

type Env<'a> = Vec<(&'a str, &'a str)>;

#[test]
fn generate_is_reproducible_and_consistent() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_config(a.path());
    let scenes = cmd_generate(&cfg, &a.path().join("s")).unwrap();
    cmd_generate(&cfg, &b.path().join("s")).unwrap();
    assert_eq!(snapshot(&a.path().join("s")), snapshot(&b.path().join("s")));
    assert_eq!(scenes.len(), 5);
    for g in &scenes {
        assert_eq!(g.class_counts.iter().sum::<usize>(), 32 * 40);
        let angles = std::fs::read_to_string(g.dir.join("angles.csv")).unwrap();
        let pgms = std::fs::read_dir(&g.dir)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".pgm"))
            .count();
        assert_eq!(angles.lines().count() - 1, pgms);
    }
    let mut other = cfg.clone();
    other.experiment.seed = 1;
    cmd_generate(&other, &b.path().join("t")).unwrap();
    assert_ne!(snapshot(&a.path().join("s")), snapshot(&b.path().join("t")));
}

#[test]
fn feature_cache_matches_memory_and_checks_hash() {
    let root = tempfile::tempdir().unwrap();
    let (cfg, scenes) = prepared(root.path());
    let before = snapshot(&cfg.paths.scenes);
    let summaries = cmd_features(&cfg, &scenes, &cfg.paths.features).unwrap();
    assert_eq!(snapshot(&cfg.paths.scenes), before);
    for s in &summaries {
        let n = s.target as f64;
        assert!((0.8 * n..=1.2 * n).contains(&(s.superpixels as f64)), "{s:?}");
    }
    let scene = read_scene_dir(&scenes[0]).unwrap();
    let slic = cfg.slic_for(scene.stack.height, scene.stack.width);
    let mem = extract_features(&scene.stack, &slic, &cfg.histogram).unwrap().feature;
    let cache = cache_path(&cfg.paths.features, &scene.name);
    let disk = read_ahis(&cache, cfg.histogram.coarse_bins, &cfg.feature_hash()).unwrap();
    assert_eq!(disk.per_superpixel, mem.per_superpixel);
    assert_eq!(disk.ids, mem.ids);
    assert_eq!(read_config_hash(&cache).unwrap(), cfg.feature_hash());

    let mut changed = cfg.clone();
    changed.histogram.fine_bins = 8;
    let err = cmd_train(&changed, &scenes, &root.path().join("x"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("rerun"), "{err}");
}

#[test]
fn train_eval_segment_and_ablate() {
    let root = tempfile::tempdir().unwrap();
    let (cfg, scenes) = prepared(root.path());
    let before = snapshot(root.path());
    let out = cfg.paths.output.clone();
    let report = cmd_train(&cfg, &scenes, &out).unwrap();
    assert_eq!(report.epochs.len(), 2);
    let ckpt = out.join("epoch_002.angw");
    assert!(ckpt.is_file() && out.join("epoch_001.angw").is_file());
    let loss = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    assert_eq!(ExperimentConfig::load(&out.join("config.txt")).unwrap(), cfg);

    let text = cmd_eval(&cfg, &scenes, &ckpt, ViewSelection::All, true, &out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    for l in &lines {
        let metric = l.split_once(' ').unwrap().1;
        let (a, b) = metric.split_once(" / ").unwrap();
        for v in [a, b] {
            assert_eq!(v.split_once('.').unwrap().1.len(), 1, "{l}");
            assert!(v.parse::<f64>().unwrap() <= 100.0);
        }
    }
    assert!(cmd_eval(&cfg, &scenes, &ckpt, ViewSelection::Index(7), false, &out).is_err());

    let seg = root.path().join("seg");
    let written = cmd_segment(&cfg, &scenes[..2], &ckpt, ViewSelection::All, false, &seg).unwrap();
    // legend + per scene (3 views + fused)
    assert_eq!(written.len(), 1 + 2 * 4);
    assert!(written.iter().all(|p| p.is_file()));
    let one = cmd_segment(
        &cfg,
        &scenes[..1],
        &ckpt,
        ViewSelection::Index(2),
        true,
        &root.path().join("seg1"),
    )
    .unwrap();
    let names: Vec<String> = one
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        [
            "legend.png",
            "view_002_pred.png",
            "panel_view_002_pred.png",
            "fused_pred.png",
            "panel_fused_pred.png"
        ]
    );

    let mut no_stack2 = cfg.clone();
    no_stack2.network.use_stack2 = false;
    let err = cmd_eval(&no_stack2, &scenes, &ckpt, ViewSelection::All, false, &out)
        .unwrap_err()
        .to_string();
    assert!(err.contains("epoch_002.angw"), "{err}");

    let table = cmd_ablate(&cfg, &scenes, &root.path().join("abl")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (row, name) in rows.iter().zip(["baseline", "+histogram", "+stacking"]) {
        assert!(row.starts_with(name), "{row}");
    }
    assert_eq!(
        std::fs::read_to_string(root.path().join("abl/ablation.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 3 * 2
    );

    // inputs are untouched by downstream commands
    let after = snapshot(root.path());
    for (k, v) in &before {
        assert_eq!(after.get(k), Some(v), "{}", k.display());
    }
}

#[test]
fn missing_cache_and_checkpoint_are_diagnosed() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small_config(root.path());
    cmd_generate(&cfg, &cfg.paths.scenes).unwrap();
    let scenes = resolve_scenes(cfg.paths.scenes.to_str().unwrap()).unwrap();
    let err = cmd_train(&cfg, &scenes, &root.path().join("o"))
        .unwrap_err()
        .to_string();
    assert!(
        err.contains("missing feature cache") && err.contains("scene_0000.ahis"),
        "{err}"
    );
    let err = cmd_eval(
        &cfg,
        &scenes,
        &root.path().join("none.angw"),
        ViewSelection::All,
        false,
        root.path(),
    )
    .unwrap_err()
    .to_string();
    assert!(err.contains("none.angw"), "{err}");
    assert!(resolve_scenes(root.path().join("nothing*").to_str().unwrap()).is_err());
}

#[test]
fn binary_reports_one_line_errors() {
    let exe = env!("CARGO_BIN_EXE_anglseg");
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "train.epoch = 2\n").unwrap();
    let cases: Vec<(Vec<&str>, Env)> = vec![
        (vec!["train", "--config", bad.to_str().unwrap()], vec![]),
        (vec!["eval", "--scenes", dir.path().to_str().unwrap()], vec![]),
        (
            vec!["generate", "--out", dir.path().to_str().unwrap()],
            vec![("ANGLSEG_THREADS", "0")],
        ),
    ];
    for (args, env) in cases {
        let out = Command::new(exe).args(&args).envs(env).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "), "{err}");
    }

    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(
        &cfg,
        "experiment.scene_count = 2\nscene.height = 16\nscene.width = 16\nscene.num_views = 2\n",
    )
    .unwrap();
    let out = Command::new(exe)
        .args(["generate", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out"])
        .arg(dir.path().join("g"))
        .env("ANGLSEG_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 2);
    assert!(stdout.contains("counts="));
}
