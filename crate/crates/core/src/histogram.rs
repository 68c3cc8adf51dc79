//! Multi-scale angular luminance histograms pooled over superpixels.

use rayon::prelude::*;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::IntensityStack;
use crate::superpixel::{pool_over_superpixels, slic_segment, SlicConfig, SuperpixelMap};

/// Half-width used when the concentrated range collapses to a point.
pub const RANGE_EPSILON: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramConfig {
    pub coarse_bins: usize,
    pub fine_bins: usize,
    /// Fixed range of the coarse block.
    pub coarse_range: (f64, f64),
    /// Quantiles bounding the fine block, taken over the whole scene.
    pub quantiles: (f64, f64),
    /// L1-normalize each block separately.
    pub normalize: bool,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            coarse_bins: 16,
            fine_bins: 16,
            coarse_range: (0.0, 1.2),
            quantiles: (0.05, 0.95),
            normalize: true,
        }
    }
}

impl HistogramConfig {
    pub fn bins(&self) -> usize {
        self.coarse_bins + self.fine_bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.coarse_bins == 0 || self.fine_bins == 0 {
            return Err(Error::Config("histogram bin counts must be positive".into()));
        }
        let (lo, hi) = self.coarse_range;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Config(format!("bad coarse range ({lo}, {hi})")));
        }
        let (ql, qh) = self.quantiles;
        if !(0.0 <= ql && ql < qh && qh <= 1.0) {
            return Err(Error::Config(format!("bad quantiles ({ql}, {qh})")));
        }
        Ok(())
    }
}

/// Value ranges of the two blocks for one scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramRanges {
    pub coarse: (f64, f64),
    pub fine: (f64, f64),
}

impl HistogramRanges {
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            coarse: (self.coarse.0 * s, self.coarse.1 * s),
            fine: (self.fine.0 * s, self.fine.1 * s),
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (sorted[j] - sorted[i]) * (pos - i as f64)
}

/// `(q_low, q_high)` quantiles of every sample, widened when degenerate.
pub fn concentrated_range<'a, I>(samples: I, quantiles: (f64, f64)) -> Result<(f64, f64)>
where
    I: IntoIterator<Item = &'a f32>,
{
    let mut all: Vec<f64> = samples.into_iter().map(|&v| v as f64).collect();
    if all.is_empty() {
        return Err(Error::NoValidSamples("concentrated range needs samples".into()));
    }
    all.sort_unstable_by(f64::total_cmp);
    let lo = quantile_sorted(&all, quantiles.0);
    let hi = quantile_sorted(&all, quantiles.1);
    if hi - lo < 2.0 * RANGE_EPSILON {
        let mid = 0.5 * (lo + hi);
        return Ok((mid - RANGE_EPSILON, mid + RANGE_EPSILON));
    }
    Ok((lo, hi))
}

/// Ranges for a scene from its pooled superpixel samples.
pub fn scene_ranges(pooled: &[Vec<f32>], cfg: &HistogramConfig) -> Result<HistogramRanges> {
    let fine = concentrated_range(pooled.iter().flatten(), cfg.quantiles)?;
    Ok(HistogramRanges {
        coarse: cfg.coarse_range,
        fine,
    })
}

fn bin_index(v: f32, (lo, hi): (f64, f64), bins: usize) -> usize {
    let t = (v as f64 - lo) / (hi - lo) * bins as f64;
    if t <= 0.0 || t.is_nan() {
        0
    } else {
        (t as usize).min(bins - 1)
    }
}

/// Unnormalized counts: coarse block then fine block, edge-clamped.
pub fn bin_samples(samples: &[f32], cfg: &HistogramConfig, ranges: &HistogramRanges) -> Vec<u32> {
    let mut counts = vec![0u32; cfg.bins()];
    for &v in samples {
        counts[bin_index(v, ranges.coarse, cfg.coarse_bins)] += 1;
        counts[cfg.coarse_bins + bin_index(v, ranges.fine, cfg.fine_bins)] += 1;
    }
    counts
}

/// Per-block L1 normalization; an empty block becomes uniform.
pub fn normalize_counts(counts: &[u32], coarse_bins: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; counts.len()];
    for (src, dst) in [
        (&counts[..coarse_bins], 0..coarse_bins),
        (&counts[coarse_bins..], coarse_bins..counts.len()),
    ] {
        let total: u64 = src.iter().map(|&c| c as u64).sum();
        let dst = &mut out[dst];
        if total == 0 {
            dst.fill(1.0 / src.len() as f32);
        } else {
            for (d, &c) in dst.iter_mut().zip(src) {
                *d = (c as f64 / total as f64) as f32;
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngularHistogramFeature {
    pub height: usize,
    pub width: usize,
    pub coarse_bins: usize,
    pub bins: usize,
    /// Row-major `S x b`.
    pub per_superpixel: Vec<f32>,
    /// Valid samples behind each row.
    pub coverage: Vec<u32>,
    /// Rows with no samples, filled uniformly.
    pub empty: Vec<bool>,
    /// Superpixel id per pixel, shared with the segmentation.
    pub ids: Vec<u32>,
}

impl AngularHistogramFeature {
    /// Wraps precomputed rows, e.g. read back from a cache.
    pub fn from_rows(
        height: usize,
        width: usize,
        coarse_bins: usize,
        bins: usize,
        rows: Vec<f32>,
        ids: Vec<u32>,
    ) -> Result<Self> {
        if bins == 0 || coarse_bins >= bins || !rows.len().is_multiple_of(bins) {
            return Err(Error::shape(
                "histogram_rows",
                format!("{} values for b={bins}", rows.len()),
            ));
        }
        let s = rows.len() / bins;
        if ids.len() != height * width || ids.iter().any(|&i| i as usize >= s) {
            return Err(Error::shape(
                "histogram_ids",
                format!("{} ids for {height}x{width}, S={s}", ids.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            coarse_bins,
            bins,
            per_superpixel: rows,
            coverage: vec![0; s],
            empty: vec![false; s],
            ids,
        })
    }

    pub fn num_superpixels(&self) -> usize {
        self.per_superpixel.len() / self.bins
    }

    pub fn row(&self, k: usize) -> &[f32] {
        &self.per_superpixel[k * self.bins..(k + 1) * self.bins]
    }

    /// Histogram carried by pixel `p`.
    pub fn at(&self, p: usize) -> &[f32] {
        self.row(self.ids[p] as usize)
    }

    /// Dense `H x W x b` map.
    pub fn dense(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.ids.len() * self.bins);
        for p in 0..self.ids.len() {
            out.extend_from_slice(self.at(p));
        }
        out
    }

    /// Dense map laid out channel-first, `b x H x W`.
    pub fn dense_planar(&self) -> Vec<f32> {
        let n = self.ids.len();
        let mut out = vec![0.0f32; n * self.bins];
        for (p, &id) in self.ids.iter().enumerate() {
            for (c, &v) in self.row(id as usize).iter().enumerate() {
                out[c * n + p] = v;
            }
        }
        out
    }
}

pub fn build_histograms(
    pooled: &[Vec<f32>],
    map: &SuperpixelMap,
    cfg: &HistogramConfig,
    ranges: &HistogramRanges,
) -> Result<AngularHistogramFeature> {
    cfg.validate()?;
    if pooled.len() != map.len() {
        return Err(Error::shape(
            "build_histograms",
            format!("{} sample lists for {} superpixels", pooled.len(), map.len()),
        ));
    }
    let rows: Vec<Vec<f32>> = pooled
        .par_iter()
        .map(|samples| {
            let counts = bin_samples(samples, cfg, ranges);
            if cfg.normalize {
                normalize_counts(&counts, cfg.coarse_bins)
            } else {
                counts.iter().map(|&c| c as f32).collect()
            }
        })
        .collect();
    Ok(AngularHistogramFeature {
        height: map.height,
        width: map.width,
        coarse_bins: cfg.coarse_bins,
        bins: cfg.bins(),
        per_superpixel: rows.concat(),
        coverage: pooled.iter().map(|s| s.len() as u32).collect(),
        empty: pooled.iter().map(Vec::is_empty).collect(),
        ids: map.ids.clone(),
    })
}

/// Histogram of one material class used by the nearest-candidate baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceHistogram {
    pub class_id: u16,
    pub hist: Vec<f32>,
}

/// Per-class histograms from a labelled stack, binned with the given ranges.
/// Classes without valid samples are skipped.
pub fn reference_histograms(
    stack: &IntensityStack,
    num_classes: usize,
    cfg: &HistogramConfig,
    ranges: &HistogramRanges,
) -> Result<Vec<ReferenceHistogram>> {
    cfg.validate()?;
    let plane = stack.plane();
    let mut per_class = vec![Vec::new(); num_classes];
    for p in 0..plane {
        let c = stack.labels[p] as usize;
        if c >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: stack.labels[p],
                num_classes,
            });
        }
        for j in 0..stack.views {
            let i = j * plane + p;
            if stack.valid[i] {
                per_class[c].push(stack.data[i]);
            }
        }
    }
    Ok(per_class
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(c, s)| ReferenceHistogram {
            class_id: c as u16,
            hist: normalize_counts(&bin_samples(s, cfg, ranges), cfg.coarse_bins),
        })
        .collect())
}

pub fn l1_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum()
}

/// Class of the L1-closest candidate for every superpixel; ties go to the lowest class id.
pub fn nearest_candidate_classify(
    feature: &AngularHistogramFeature,
    candidates: &[ReferenceHistogram],
) -> Result<Vec<u16>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate histograms".into()));
    }
    if let Some(c) = candidates.iter().find(|c| c.hist.len() != feature.bins) {
        return Err(Error::shape(
            "nearest_candidate_classify",
            format!(
                "candidate {} has {} bins, feature {}",
                c.class_id,
                c.hist.len(),
                feature.bins
            ),
        ));
    }
    Ok((0..feature.num_superpixels())
        .map(|k| {
            let row = feature.row(k);
            candidates
                .iter()
                .map(|c| (l1_distance(row, &c.hist), c.class_id))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, id)| id)
                .unwrap_or(0)
        })
        .collect())
}

/// Broadcasts per-superpixel labels back to pixels.
pub fn superpixel_labels_to_pixels(labels: &[u16], ids: &[u32]) -> Vec<u16> {
    ids.iter().map(|&i| labels[i as usize]).collect()
}

/// Segmentation, ranges and histograms for one stack.
#[derive(Clone, Debug)]
pub struct ExtractedFeatures {
    pub map: SuperpixelMap,
    pub ranges: HistogramRanges,
    pub feature: AngularHistogramFeature,
}

/// SLIC on the mean image, pooling, scene-wide ranges, then histograms.
pub fn extract_features(stack: &IntensityStack, slic: &SlicConfig, cfg: &HistogramConfig) -> Result<ExtractedFeatures> {
    let map = slic_segment(&stack.mean_image(), stack.height, stack.width, slic)?;
    let pooled = pool_over_superpixels(stack, &map)?;
    let ranges = scene_ranges(&pooled, cfg)?;
    let feature = build_histograms(&pooled, &map, cfg, &ranges)?;
    Ok(ExtractedFeatures { map, ranges, feature })
}

/// Most frequent ground-truth label inside each superpixel, ties to the lowest id.
pub fn superpixel_majority_labels(map: &SuperpixelMap, labels: &[u16], num_classes: usize) -> Vec<u16> {
    map.members
        .iter()
        .map(|m| {
            let mut votes = vec![0usize; num_classes.max(1)];
            for &p in m {
                if let Some(v) = votes.get_mut(labels[p as usize] as usize) {
                    *v += 1;
                }
            }
            let best = votes.iter().copied().max().unwrap_or(0);
            votes.iter().position(|&v| v == best).unwrap_or(0) as u16
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranges() -> HistogramRanges {
        HistogramRanges {
            coarse: (0.0, 1.2),
            fine: (0.2, 0.6),
        }
    }

    #[test]
    fn bin_midpoint_is_one_hot() {
        let cfg = HistogramConfig::default();
        let mid = (3.5 * 1.2 / 16.0) as f32;
        let counts = bin_samples(&[mid; 7], &cfg, &ranges());
        let h = normalize_counts(&counts, 16);
        for (i, &v) in h[..16].iter().enumerate() {
            assert_eq!(v, if i == 3 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn out_of_range_samples_clamp_to_edges() {
        let cfg = HistogramConfig::default();
        let counts = bin_samples(&[-0.3, 5.0, 0.1, 0.9], &cfg, &ranges());
        assert_eq!(counts[0], 1);
        assert_eq!(counts[1], 1);
        assert_eq!(counts[15], 1);
        assert_eq!(counts[16], 2); // fine block low edge: -0.3, 0.1
        assert_eq!(counts[31], 2);
        assert_eq!(counts.iter().sum::<u32>(), 8);
    }

    #[test]
    fn empty_superpixel_is_uniform() {
        let h = normalize_counts(&[0; 32], 16);
        assert!(h.iter().all(|&v| v == 1.0 / 16.0));
    }

    #[test]
    fn degenerate_range_is_widened() {
        let (lo, hi) = concentrated_range(&[0.4f32; 10], (0.05, 0.95)).unwrap();
        assert!((lo - (0.4f32 as f64 - RANGE_EPSILON)).abs() < 1e-12);
        assert!((hi - (0.4f32 as f64 + RANGE_EPSILON)).abs() < 1e-12);
        assert!(concentrated_range(&[] as &[f32], (0.05, 0.95)).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let data: Vec<f32> = (0..=10).map(|v| v as f32).collect();
        let (lo, hi) = concentrated_range(&data, (0.05, 0.95)).unwrap();
        assert!((lo - 0.5).abs() < 1e-9 && (hi - 9.5).abs() < 1e-9);
    }

    #[test]
    fn classify_ties_go_to_lowest_class() {
        let feat = AngularHistogramFeature::from_rows(1, 1, 1, 2, vec![0.5, 0.5], vec![0]).unwrap();
        let cands = vec![
            ReferenceHistogram {
                class_id: 4,
                hist: vec![1.0, 0.0],
            },
            ReferenceHistogram {
                class_id: 2,
                hist: vec![0.0, 1.0],
            },
        ];
        assert_eq!(nearest_candidate_classify(&feat, &cands).unwrap(), vec![2]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = HistogramConfig::default();
        assert_eq!(cfg.bins(), 32);
        cfg.quantiles = (0.9, 0.1);
        assert!(cfg.validate().is_err());
        cfg = HistogramConfig {
            fine_bins: 0,
            ..HistogramConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
