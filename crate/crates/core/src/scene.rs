//! Synthetic multiview scenes: a Voronoi material layout observed from several
//! view directions under a single distant sun.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use serde::{Deserialize, Serialize};

use crate::brdf::{integrate_radiance, BrdfModel, Direction};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub num_views: usize,
    pub num_classes: usize,
    /// Sun irradiance `I_i`.
    pub light_intensity: f64,
    /// Uniform sky radiance added on top of the sun; 0 disables it.
    pub ambient: f64,
    pub noise_sigma: f64,
    /// Fraction of (view, pixel) samples marked invalid to emulate occlusion.
    pub invalid_fraction: f64,
    pub min_cells: usize,
    pub max_cells: usize,
    pub view_theta_min_deg: f64,
    pub view_theta_max_deg: f64,
    pub sun_theta_min_deg: f64,
    pub sun_theta_max_deg: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            height: 64,
            width: 64,
            num_views: 8,
            num_classes: 10,
            light_intensity: std::f64::consts::PI,
            ambient: 0.0,
            noise_sigma: 0.02,
            invalid_fraction: 0.0,
            min_cells: 20,
            max_cells: 60,
            view_theta_min_deg: 5.0,
            view_theta_max_deg: 50.0,
            sun_theta_min_deg: 20.0,
            sun_theta_max_deg: 40.0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("scene: {msg}")));
        if self.height == 0 || self.width == 0 {
            return bad("height and width must be positive");
        }
        if self.num_views == 0 {
            return bad("need at least one view");
        }
        if self.num_classes == 0 || self.num_classes > u16::MAX as usize {
            return bad("num_classes out of range");
        }
        if self.light_intensity.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("light_intensity must be positive");
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 || self.ambient.is_nan() || self.ambient < 0.0 {
            return bad("noise_sigma and ambient must be >= 0");
        }
        if !(0.0..1.0).contains(&self.invalid_fraction) {
            return bad("invalid_fraction must lie in [0, 1)");
        }
        if self.min_cells == 0 || self.min_cells > self.max_cells {
            return bad("cell range must satisfy 1 <= min_cells <= max_cells");
        }
        for (lo, hi) in [
            (self.view_theta_min_deg, self.view_theta_max_deg),
            (self.sun_theta_min_deg, self.sun_theta_max_deg),
        ] {
            if !(0.0 <= lo && lo <= hi && hi <= 90.0) {
                return bad("polar angle ranges must satisfy 0 <= min <= max <= 90");
            }
        }
        Ok(())
    }
}

/// A fully specified scene: layout, geometry of the observations, and noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// H×W material class ids.
    pub material_map: Vec<u16>,
    pub view_angles: Vec<Direction>,
    pub sun: Direction,
    pub light_intensity: f64,
    pub ambient: f64,
    pub noise_sigma: f64,
    pub invalid_fraction: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Random layout and viewing geometry. Views are stratified in azimuth so
    /// they spread around the scene.
    pub fn generate(params: &SceneParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (params.height, params.width);
        let cells = rng.random_range(params.min_cells..=params.max_cells);
        let sites: Vec<(f64, f64, u16)> = (0..cells)
            .map(|_| {
                (
                    rng.random_range(0.0..h as f64),
                    rng.random_range(0.0..w as f64),
                    rng.random_range(0..params.num_classes) as u16,
                )
            })
            .collect();
        let mut material_map = vec![0u16; h * w];
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let mut best = (f64::INFINITY, 0u16);
                for &(sy, sx, class) in &sites {
                    let d = (sy - py).powi(2) + (sx - px).powi(2);
                    if d < best.0 {
                        best = (d, class);
                    }
                }
                material_map[y * w + x] = best.1;
            }
        }
        let v = params.num_views;
        let phase = rng.random_range(0.0..TAU);
        let view_angles = (0..v)
            .map(|j| {
                let phi = phase + TAU * (j as f64 + rng.random_range(0.0..1.0)) / v as f64;
                let theta = rng.random_range(params.view_theta_min_deg..=params.view_theta_max_deg);
                Direction::new(theta.to_radians(), phi)
            })
            .collect::<Result<Vec<_>>>()?;
        let sun = Direction::new(
            rng.random_range(params.sun_theta_min_deg..=params.sun_theta_max_deg)
                .to_radians(),
            rng.random_range(0.0..TAU),
        )?;
        Ok(SceneSpec {
            height: h,
            width: w,
            num_classes: params.num_classes,
            material_map,
            view_angles,
            sun,
            light_intensity: params.light_intensity,
            ambient: params.ambient,
            noise_sigma: params.noise_sigma,
            invalid_fraction: params.invalid_fraction,
            seed,
        })
    }

    pub fn num_views(&self) -> usize {
        self.view_angles.len()
    }

    /// Pixel count per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &c in &self.material_map {
            counts[c as usize] += 1;
        }
        counts
    }
}

/// Aligned per-pixel luminance samples across views.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityStack {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    /// V×H×W samples; invalid entries hold 0 and carry no information.
    pub data: Vec<f32>,
    pub valid: Vec<bool>,
    /// H×W ground-truth class ids.
    pub labels: Vec<u16>,
    /// H×W number of valid views per pixel.
    pub valid_count: Vec<u16>,
}

impl IntensityStack {
    pub fn new(
        views: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
        valid: Vec<bool>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        let plane = height * width;
        if data.len() != views * plane || valid.len() != views * plane || labels.len() != plane {
            return Err(Error::shape(
                "intensity_stack",
                format!("expected {views}x{height}x{width} samples and {plane} labels"),
            ));
        }
        let mut stack = IntensityStack {
            views,
            height,
            width,
            data,
            valid,
            labels,
            valid_count: vec![0; plane],
        };
        for (i, (d, &ok)) in stack.data.iter_mut().zip(&stack.valid).enumerate() {
            if ok {
                stack.valid_count[i % plane] += 1;
            } else {
                *d = 0.0;
            }
        }
        Ok(stack)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn view(&self, j: usize) -> &[f32] {
        &self.data[j * self.plane()..(j + 1) * self.plane()]
    }

    pub fn view_valid(&self, j: usize) -> &[bool] {
        &self.valid[j * self.plane()..(j + 1) * self.plane()]
    }

    pub fn total_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Per-pixel mean over valid views (0 where no view is valid).
    pub fn mean_image(&self) -> Vec<f32> {
        let plane = self.plane();
        let mut sum = vec![0.0f64; plane];
        for j in 0..self.views {
            for (p, (&d, &ok)) in self.view(j).iter().zip(self.view_valid(j)).enumerate() {
                if ok {
                    sum[p] += d as f64;
                }
            }
        }
        sum.iter()
            .zip(&self.valid_count)
            .map(|(&s, &n)| if n == 0 { 0.0 } else { (s / n as f64) as f32 })
            .collect()
    }

    /// Same scene with the view axis permuted: view `j` of the result is view
    /// `order[j]` of `self`.
    pub fn permute_views(&self, order: &[usize]) -> Self {
        let plane = self.plane();
        let mut data = Vec::with_capacity(self.data.len());
        let mut valid = Vec::with_capacity(self.valid.len());
        for &j in order {
            data.extend_from_slice(&self.data[j * plane..(j + 1) * plane]);
            valid.extend_from_slice(&self.valid[j * plane..(j + 1) * plane]);
        }
        IntensityStack {
            data,
            valid,
            ..self.clone()
        }
    }
}

/// Noise-free reflected intensity of one material toward one view.
pub fn shade(model: &BrdfModel, spec: &SceneSpec, view: &Direction) -> Result<f64> {
    let mut value = spec.light_intensity * model.eval(&spec.sun, view) * spec.sun.cos_theta();
    if spec.ambient > 0.0 {
        value += integrate_radiance(model, |_| spec.ambient, view, 32, 64)?;
    }
    Ok(value)
}

/// Render every view of the scene: `I_i * f(sun, view) * cos(sun theta)` per
/// pixel plus Gaussian noise, clamped at zero.
pub fn render_stack(spec: &SceneSpec, table: &[BrdfModel]) -> Result<IntensityStack> {
    let mut present = vec![false; spec.num_classes.max(1)];
    for &c in &spec.material_map {
        if c as usize >= spec.num_classes {
            return Err(Error::LabelOutOfRange {
                label: c,
                num_classes: spec.num_classes,
            });
        }
        present[c as usize] = true;
    }
    let mut models: Vec<Option<&BrdfModel>> = vec![None; spec.num_classes];
    for (c, slot) in models.iter_mut().enumerate() {
        *slot = table.iter().find(|m| m.class_id as usize == c);
        if present[c] && slot.is_none() {
            return Err(Error::MissingBrdf(c as u16));
        }
    }
    let v = spec.num_views();
    // shading[j][c]
    let mut shading = vec![vec![0.0f64; spec.num_classes]; v];
    for (j, view) in spec.view_angles.iter().enumerate() {
        for (c, m) in models.iter().enumerate() {
            if let Some(m) = m {
                shading[j][c] = shade(m, spec, view)?;
            }
        }
    }
    let plane = spec.height * spec.width;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    mask_rng.set_stream(2);
    let normal =
        Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
    let mut data = Vec::with_capacity(v * plane);
    let mut valid = Vec::with_capacity(v * plane);
    for row in &shading {
        for &c in &spec.material_map {
            let mut value = row[c as usize];
            if spec.noise_sigma > 0.0 {
                value += normal.sample(&mut noise_rng);
            }
            data.push(value.max(0.0) as f32);
            valid.push(spec.invalid_fraction == 0.0 || mask_rng.random::<f64>() >= spec.invalid_fraction);
        }
    }
    IntensityStack::new(v, spec.height, spec.width, data, valid, spec.material_map.clone())
}
