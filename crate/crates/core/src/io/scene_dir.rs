//! Scene directories: `view_###.pgm`, `labels.png`, `angles.csv`, `scene.toml`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::{read_view_pgm, write_view_pgm};
use super::png_io::{read_label_png, write_label_png};
use crate::brdf::Direction;
use crate::error::{Error, Result};
use crate::legend::ColorLegend;
use crate::scene::{IntensityStack, SceneSpec};

pub const LABELS_FILE: &str = "labels.png";
pub const ANGLES_FILE: &str = "angles.csv";
pub const SCENE_FILE: &str = "scene.toml";

pub fn view_file_name(j: usize) -> String {
    format!("view_{j:03}.pgm")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub seed: u64,
    pub noise_sigma: f64,
    pub num_classes: usize,
    pub num_views: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub name: String,
    pub meta: SceneMeta,
    pub sun: Direction,
    pub light_intensity: f64,
    pub view_angles: Vec<Direction>,
    pub stack: IntensityStack,
}

pub fn write_scene_dir(dir: &Path, spec: &SceneSpec, stack: &IntensityStack, legend: &ColorLegend) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = (stack.height, stack.width);
    for j in 0..stack.views {
        write_view_pgm(&dir.join(view_file_name(j)), w, h, stack.view(j), stack.view_valid(j))?;
    }
    write_label_png(&dir.join(LABELS_FILE), w, h, &stack.labels, legend)?;

    let mut csv = String::new();
    let _ = writeln!(
        csv,
        "{},{},{}",
        spec.sun.theta().to_degrees(),
        spec.sun.phi().to_degrees(),
        spec.light_intensity
    );
    for (j, v) in spec.view_angles.iter().enumerate() {
        let _ = writeln!(csv, "{j},{},{}", v.theta().to_degrees(), v.phi().to_degrees());
    }
    let angles = dir.join(ANGLES_FILE);
    std::fs::write(&angles, csv).map_err(|e| Error::io(&angles, e))?;

    let meta = SceneMeta {
        seed: spec.seed,
        noise_sigma: spec.noise_sigma,
        num_classes: spec.num_classes,
        num_views: stack.views,
        height: h,
        width: w,
    };
    let toml_path = dir.join(SCENE_FILE);
    let text = toml::to_string(&meta).map_err(|e| Error::format(&toml_path, e.to_string()))?;
    std::fs::write(&toml_path, text).map_err(|e| Error::io(&toml_path, e))
}

fn parse_angles(path: &Path) -> Result<(Direction, f64, Vec<Direction>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, m: &str| Error::format(path, format!("line {line}: {m}"));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let nums = |line: usize, l: &str| -> Result<Vec<f64>> {
        l.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(line, &format!("`{}` is not a number", t.trim())))
            })
            .collect()
    };
    let (i, header) = lines.next().ok_or_else(|| bad(1, "missing sun header"))?;
    let sun_row = nums(i + 1, header)?;
    let [st, sp, irr] = sun_row[..] else {
        return Err(bad(i + 1, "header must be sun theta, sun phi, irradiance"));
    };
    let sun = Direction::from_degrees(st, sp).map_err(|e| bad(i + 1, &e.to_string()))?;
    let mut views = Vec::new();
    for (i, l) in lines {
        let row = nums(i + 1, l)?;
        let [idx, t, p] = row[..] else {
            return Err(bad(i + 1, "rows must be view index, theta, phi"));
        };
        if idx != views.len() as f64 {
            return Err(bad(i + 1, &format!("expected view index {}", views.len())));
        }
        views.push(Direction::from_degrees(t, p).map_err(|e| bad(i + 1, &e.to_string()))?);
    }
    Ok((sun, irr, views))
}

fn view_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("view_") && n.ends_with(".pgm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_scene_dir(dir: &Path) -> Result<LoadedScene> {
    let toml_path = dir.join(SCENE_FILE);
    let text = std::fs::read_to_string(&toml_path).map_err(|e| Error::io(&toml_path, e))?;
    let meta: SceneMeta = toml::from_str(&text).map_err(|e| Error::format(&toml_path, e.message().to_owned()))?;
    let angles_path = dir.join(ANGLES_FILE);
    let (sun, light_intensity, view_angles) = parse_angles(&angles_path)?;
    let files = view_files(dir)?;
    if files.len() != view_angles.len() {
        return Err(Error::format(
            &angles_path,
            format!("{} view rows but {} view_###.pgm files", view_angles.len(), files.len()),
        ));
    }
    if meta.num_views != files.len() {
        return Err(Error::format(
            &toml_path,
            format!("num_views {} but {} views on disk", meta.num_views, files.len()),
        ));
    }
    let (mut data, mut valid) = (Vec::new(), Vec::new());
    for (j, f) in files.iter().enumerate() {
        if f.file_name().and_then(|n| n.to_str()) != Some(view_file_name(j).as_str()) {
            return Err(Error::format(f, format!("expected {}", view_file_name(j))));
        }
        let (w, h, d, v) = read_view_pgm(f)?;
        if (h, w) != (meta.height, meta.width) {
            return Err(Error::format(
                f,
                format!("{w}x{h} view in a {}x{} scene", meta.width, meta.height),
            ));
        }
        data.extend(d);
        valid.extend(v);
    }
    let labels_path = dir.join(LABELS_FILE);
    let (w, h, labels) = read_label_png(&labels_path)?;
    if (h, w) != (meta.height, meta.width) {
        return Err(Error::format(
            &labels_path,
            format!("{w}x{h} labels in a {}x{} scene", meta.width, meta.height),
        ));
    }
    let stack = IntensityStack::new(files.len(), h, w, data, valid, labels)?;
    let name = dir
        .file_name()
        .map_or_else(|| "scene".into(), |n| n.to_string_lossy().into_owned());
    Ok(LoadedScene {
        name,
        meta,
        sun,
        light_intensity,
        view_angles,
        stack,
    })
}
