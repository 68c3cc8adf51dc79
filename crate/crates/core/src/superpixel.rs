//! SLIC superpixels on a single-channel reference image.

use std::collections::BTreeSet;

use rayon::prelude::*;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::IntensityStack;

/// Superpixel count used at full resolution (500 x 500).
pub const FULL_RES_SUPERPIXELS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicConfig {
    pub num_superpixels: usize,
    /// Spatial weight against intensity on a [0, 255] scale.
    pub compactness: f64,
    pub max_iters: usize,
    /// Connected fragments smaller than this fraction of the mean region size
    /// are absorbed by a neighbour.
    pub min_region_frac: f64,
}

impl Default for SlicConfig {
    fn default() -> Self {
        Self {
            num_superpixels: FULL_RES_SUPERPIXELS,
            compactness: 10.0,
            max_iters: 10,
            min_region_frac: 0.25,
        }
    }
}

impl SlicConfig {
    /// Default config with the target count scaled to an `height x width` image.
    pub fn for_image(height: usize, width: usize) -> Self {
        Self {
            num_superpixels: scaled_superpixel_count(height, width),
            ..Self::default()
        }
    }

    pub fn validate(&self, pixels: usize) -> Result<()> {
        if self.num_superpixels == 0 {
            return Err(Error::InvalidArgument("num_superpixels must be >= 1".into()));
        }
        if self.num_superpixels > pixels {
            return Err(Error::InvalidArgument(format!(
                "num_superpixels {} exceeds pixel count {pixels}",
                self.num_superpixels
            )));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(Error::InvalidArgument("compactness must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.min_region_frac) {
            return Err(Error::InvalidArgument("min_region_frac must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Superpixel density of the full-resolution setting applied to a smaller image.
pub fn scaled_superpixel_count(height: usize, width: usize) -> usize {
    scale_superpixel_count(FULL_RES_SUPERPIXELS, height, width)
}

/// `full_res` superpixels per 500 x 500 image, rescaled to `height x width`.
pub fn scale_superpixel_count(full_res: usize, height: usize, width: usize) -> usize {
    let n = (full_res as f64 * (height * width) as f64 / 250_000.0).round() as usize;
    n.clamp(1, (height * width).max(1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Centroid {
    pub row: f64,
    pub col: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelMap {
    pub height: usize,
    pub width: usize,
    /// Row-major superpixel id per pixel.
    pub ids: Vec<u32>,
    /// Row-major pixel indices of each superpixel, ascending.
    pub members: Vec<Vec<u32>>,
    pub centroids: Vec<Centroid>,
}

impl SuperpixelMap {
    /// Builds members and centroids from an id map whose ids are dense in `0..count`.
    pub fn from_ids(height: usize, width: usize, ids: Vec<u32>, image: &[f32]) -> Result<Self> {
        if ids.len() != height * width || image.len() != ids.len() {
            return Err(Error::shape(
                "superpixel_map",
                format!("{height}x{width} needs {} ids and pixels", height * width),
            ));
        }
        let count = ids.iter().map(|&i| i as usize + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); count];
        for (p, &id) in ids.iter().enumerate() {
            members[id as usize].push(p as u32);
        }
        if members.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("superpixel ids are not dense".into()));
        }
        let centroids = members
            .iter()
            .map(|m| {
                let (mut r, mut c, mut v) = (0.0, 0.0, 0.0);
                for &p in m {
                    let p = p as usize;
                    r += (p / width) as f64;
                    c += (p % width) as f64;
                    v += image[p] as f64;
                }
                let n = m.len() as f64;
                Centroid {
                    row: r / n,
                    col: c / n,
                    intensity: v / n,
                }
            })
            .collect();
        Ok(Self {
            height,
            width,
            ids,
            members,
            centroids,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Result of a SLIC run including the per-iteration centre movement.
#[derive(Clone, Debug)]
pub struct SlicOutput {
    pub map: SuperpixelMap,
    /// Summed Euclidean centre displacement (pixels) after each iteration.
    pub residuals: Vec<f64>,
}

pub fn slic_segment(image: &[f32], height: usize, width: usize, cfg: &SlicConfig) -> Result<SuperpixelMap> {
    slic_segment_traced(image, height, width, cfg).map(|o| o.map)
}

#[derive(Clone, Copy)]
struct Center {
    y: f64,
    x: f64,
    v: f64,
}

pub fn slic_segment_traced(image: &[f32], height: usize, width: usize, cfg: &SlicConfig) -> Result<SlicOutput> {
    let n_pix = height * width;
    if n_pix == 0 || image.len() != n_pix {
        return Err(Error::shape(
            "slic_segment",
            format!("image of {} values for {height}x{width}", image.len()),
        ));
    }
    cfg.validate(n_pix)?;
    let scaled: Vec<f64> = image.iter().map(|&v| v as f64 * 255.0).collect();
    let s = (n_pix as f64 / cfg.num_superpixels as f64).sqrt();
    let mut centers = grid_centers(&scaled, height, width, cfg.num_superpixels);
    let spatial = (cfg.compactness / s).powi(2);

    let mut labels = vec![0u32; n_pix];
    let mut residuals = Vec::with_capacity(cfg.max_iters);
    for _ in 0..cfg.max_iters {
        assign(&scaled, height, width, &centers, s, spatial, &mut labels);
        let moved = update(&scaled, width, &labels, &mut centers);
        residuals.push(moved);
        if moved == 0.0 {
            break;
        }
    }
    if cfg.max_iters == 0 {
        assign(&scaled, height, width, &centers, s, spatial, &mut labels);
    }

    let mean_size = n_pix as f64 / centers.len() as f64;
    let min_size = (cfg.min_region_frac * mean_size).floor() as usize;
    let cap = ((1.2 * cfg.num_superpixels as f64).floor() as usize).max(1);
    let floor = ((0.8 * cfg.num_superpixels as f64).ceil() as usize).clamp(1, cap);
    let mut ids = enforce_connectivity(&scaled, height, width, &labels, min_size, floor, cap);
    split_until(&mut ids, height, width, floor);
    let map = SuperpixelMap::from_ids(height, width, ids, image)?;
    Ok(SlicOutput { map, residuals })
}

/// Grid seeds: `rows x cols` close to `n`, centred in each cell.
fn grid_centers(img: &[f64], height: usize, width: usize, n: usize) -> Vec<Center> {
    let rows = ((n as f64 * height as f64 / width as f64).sqrt().round() as usize).clamp(1, height);
    let cols = ((n as f64 / rows as f64).round() as usize).clamp(1, width);
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let y = (i as f64 + 0.5) * height as f64 / rows as f64 - 0.5;
        for j in 0..cols {
            let x = (j as f64 + 0.5) * width as f64 / cols as f64 - 0.5;
            let p = (y.round() as usize).min(height - 1) * width + (x.round() as usize).min(width - 1);
            out.push(Center { y, x, v: img[p] });
        }
    }
    out
}

fn assign(img: &[f64], height: usize, width: usize, centers: &[Center], s: f64, spatial: f64, labels: &mut [u32]) {
    // bucket centres on an s-sized grid so each pixel only visits nearby ones
    let by = ((height as f64 / s).ceil() as usize).max(1);
    let bx = ((width as f64 / s).ceil() as usize).max(1);
    let bucket = |v: f64, n: usize| ((v.max(0.0) / s) as usize).min(n - 1);
    let mut buckets = vec![Vec::new(); by * bx];
    for (k, c) in centers.iter().enumerate() {
        buckets[bucket(c.y, by) * bx + bucket(c.x, bx)].push(k as u32);
    }
    let dist = |c: &Center, y: f64, x: f64, v: f64| {
        let dv = v - c.v;
        let ds = (y - c.y).powi(2) + (x - c.x).powi(2);
        dv * dv + ds * spatial
    };
    labels.par_chunks_mut(width).enumerate().for_each(|(r, row)| {
        let y = r as f64;
        let ylo = bucket(y - s, by);
        let yhi = bucket(y + s, by);
        for (c, out) in row.iter_mut().enumerate() {
            let x = c as f64;
            let v = img[r * width + c];
            let mut best = (f64::INFINITY, u32::MAX);
            for bi in ylo..=yhi {
                for bj in bucket(x - s, bx)..=bucket(x + s, bx) {
                    for &k in &buckets[bi * bx + bj] {
                        let ctr = &centers[k as usize];
                        if (ctr.y - y).abs() > s || (ctr.x - x).abs() > s {
                            continue;
                        }
                        let d = dist(ctr, y, x, v);
                        if d < best.0 || (d == best.0 && k < best.1) {
                            best = (d, k);
                        }
                    }
                }
            }
            if best.1 == u32::MAX {
                for (k, ctr) in centers.iter().enumerate() {
                    let d = dist(ctr, y, x, v);
                    if d < best.0 {
                        best = (d, k as u32);
                    }
                }
            }
            *out = best.1;
        }
    });
}

fn update(img: &[f64], width: usize, labels: &[u32], centers: &mut [Center]) -> f64 {
    let mut acc = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); centers.len()];
    for (p, &k) in labels.iter().enumerate() {
        let a = &mut acc[k as usize];
        a.0 += (p / width) as f64;
        a.1 += (p % width) as f64;
        a.2 += img[p];
        a.3 += 1;
    }
    let mut moved = 0.0;
    for (c, a) in centers.iter_mut().zip(&acc) {
        if a.3 == 0 {
            continue;
        }
        let n = a.3 as f64;
        let (y, x) = (a.0 / n, a.1 / n);
        moved += ((y - c.y).powi(2) + (x - c.x).powi(2)).sqrt();
        *c = Center { y, x, v: a.2 / n };
    }
    moved
}

struct Region {
    size: usize,
    sum: f64,
    neighbours: BTreeSet<usize>,
    alive: bool,
}

impl Region {
    fn mean(&self) -> f64 {
        self.sum / self.size as f64
    }
}

/// Splits labels into 4-connected components, absorbs small fragments, then
/// merges the smallest regions until at most `cap` remain. Returns dense ids
/// numbered in raster order of first appearance.
fn enforce_connectivity(
    img: &[f64],
    height: usize,
    width: usize,
    labels: &[u32],
    min_size: usize,
    floor: usize,
    cap: usize,
) -> Vec<u32> {
    let n = height * width;
    let mut comp = vec![u32::MAX; n];
    let mut regions: Vec<Region> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = regions.len() as u32;
        let mut region = Region {
            size: 0,
            sum: 0.0,
            neighbours: BTreeSet::new(),
            alive: true,
        };
        comp[start] = id;
        stack.push(start);
        while let Some(p) = stack.pop() {
            region.size += 1;
            region.sum += img[p];
            let (r, c) = (p / width, p % width);
            let mut visit = |q: usize| {
                if labels[q] == labels[p] && comp[q] == u32::MAX {
                    comp[q] = id;
                    stack.push(q);
                }
            };
            if r > 0 {
                visit(p - width);
            }
            if r + 1 < height {
                visit(p + width);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < width {
                visit(p + 1);
            }
        }
        regions.push(region);
    }
    for p in 0..n {
        let (r, c) = (p / width, p % width);
        let a = comp[p] as usize;
        for q in [(c + 1 < width).then(|| p + 1), (r + 1 < height).then(|| p + width)]
            .into_iter()
            .flatten()
        {
            let b = comp[q] as usize;
            if a != b {
                regions[a].neighbours.insert(b);
                regions[b].neighbours.insert(a);
            }
        }
    }

    let mut parent: Vec<usize> = (0..regions.len()).collect();
    let mut alive = regions.len();
    loop {
        // small fragments survive once merging would drop below the floor
        let small = if alive > floor {
            smallest(&regions, |r| r.size < min_size)
        } else {
            None
        };
        let over = alive > cap;
        let victim = match small {
            Some(v) => v,
            None if over => match smallest(&regions, |_| true) {
                Some(v) => v,
                None => break,
            },
            None => break,
        };
        let target = most_similar_neighbour(&regions, victim);
        absorb(&mut regions, &mut parent, victim, target);
        alive -= 1;
    }

    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let mut dense = vec![u32::MAX; regions.len()];
    let mut next = 0u32;
    comp.iter()
        .map(|&c| {
            let r = root(c as usize);
            if dense[r] == u32::MAX {
                dense[r] = next;
                next += 1;
            }
            dense[r]
        })
        .collect()
}

/// Splits the largest region in two until there are `floor` regions. The cut
/// removes a subtree of a BFS spanning tree, so both halves stay connected.
/// Ids are renumbered in raster order afterwards.
fn split_until(ids: &mut [u32], height: usize, width: usize, floor: usize) {
    let mut count = ids.iter().max().map_or(0, |&m| m as usize + 1);
    if count >= floor {
        return;
    }
    while count < floor {
        let mut sizes = vec![0usize; count];
        for &i in ids.iter() {
            sizes[i as usize] += 1;
        }
        let (target, &size) = sizes
            .iter()
            .enumerate()
            .max_by_key(|(i, s)| (**s, std::cmp::Reverse(*i)))
            .unwrap();
        if size < 2 {
            break;
        }
        let target = target as u32;
        let start = ids.iter().position(|&i| i == target).unwrap();
        let mut parent = vec![usize::MAX; ids.len()];
        let mut order = vec![start];
        parent[start] = start;
        let mut head = 0;
        while head < order.len() {
            let p = order[head];
            head += 1;
            let (r, c) = (p / width, p % width);
            let nbrs = [
                (r > 0).then(|| p - width),
                (r + 1 < height).then(|| p + width),
                (c > 0).then(|| p - 1),
                (c + 1 < width).then(|| p + 1),
            ];
            for q in nbrs.into_iter().flatten() {
                if ids[q] == target && parent[q] == usize::MAX {
                    parent[q] = p;
                    order.push(q);
                }
            }
        }
        let mut subtree = vec![1usize; ids.len()];
        for &p in order.iter().skip(1).rev() {
            subtree[parent[p]] += subtree[p];
        }
        let half = order.len() / 2;
        let cut = *order[1..].iter().min_by_key(|&&p| subtree[p].abs_diff(half)).unwrap();
        let mut inside = vec![false; ids.len()];
        inside[cut] = true;
        for &p in &order[1..] {
            if inside[parent[p]] {
                inside[p] = true;
            }
        }
        for &p in &order {
            if inside[p] {
                ids[p] = count as u32;
            }
        }
        count += 1;
    }
    let mut dense = vec![u32::MAX; count];
    let mut next = 0;
    for id in ids.iter_mut() {
        let d = &mut dense[*id as usize];
        if *d == u32::MAX {
            *d = next;
            next += 1;
        }
        *id = *d;
    }
}

/// Smallest live region with at least one neighbour satisfying `pred`, ties to lowest id.
fn smallest(regions: &[Region], pred: impl Fn(&Region) -> bool) -> Option<usize> {
    regions
        .iter()
        .enumerate()
        .filter(|(_, r)| r.alive && !r.neighbours.is_empty() && pred(r))
        .min_by_key(|(i, r)| (r.size, *i))
        .map(|(i, _)| i)
}

fn most_similar_neighbour(regions: &[Region], i: usize) -> usize {
    let m = regions[i].mean();
    let mut best = (f64::INFINITY, usize::MAX);
    for &j in &regions[i].neighbours {
        let d = (regions[j].mean() - m).abs();
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

fn absorb(regions: &mut [Region], parent: &mut [usize], from: usize, into: usize) {
    let moved = std::mem::take(&mut regions[from].neighbours);
    regions[from].alive = false;
    parent[from] = into;
    let (size, sum) = (regions[from].size, regions[from].sum);
    regions[into].size += size;
    regions[into].sum += sum;
    regions[into].neighbours.remove(&from);
    for j in moved {
        if j == into {
            continue;
        }
        regions[j].neighbours.remove(&from);
        regions[j].neighbours.insert(into);
        regions[into].neighbours.insert(j);
    }
}

/// All valid samples of each superpixel, member-major then view order.
pub fn pool_over_superpixels(stack: &IntensityStack, map: &SuperpixelMap) -> Result<Vec<Vec<f32>>> {
    if stack.height != map.height || stack.width != map.width {
        return Err(Error::shape(
            "pool_over_superpixels",
            format!(
                "stack {}x{} vs map {}x{}",
                stack.height, stack.width, map.height, map.width
            ),
        ));
    }
    let plane = stack.plane();
    Ok(map
        .members
        .par_iter()
        .map(|members| {
            let mut out = Vec::new();
            for &p in members {
                for j in 0..stack.views {
                    let idx = j * plane + p as usize;
                    if stack.valid[idx] {
                        out.push(stack.data[idx]);
                    }
                }
            }
            out
        })
        .collect())
}
