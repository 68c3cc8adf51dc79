//! Class colors for rendered label maps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::IGNORE_LABEL;

const PALETTE_SEED: u64 = 0x5eed_c010;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LegendEntry {
    pub class_id: u16,
    pub name: String,
    pub rgb: [u8; 3],
}

/// `K` distinct colors, identical for every run with the same `K`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColorLegend {
    entries: Vec<LegendEntry>,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|u| ((u + m) * 255.0).round() as u8)
}

impl ColorLegend {
    /// Evenly spaced hues, shuffled by a fixed seed so neighbouring ids contrast.
    pub fn new(names: &[String]) -> Self {
        let k = names.len();
        let mut colors: Vec<[u8; 3]> = (0..k)
            .map(|i| {
                let v = [0.95, 0.75, 0.55][i % 3];
                hsv_to_rgb(360.0 * i as f64 / k as f64, 0.8, v)
            })
            .collect();
        colors.shuffle(&mut ChaCha8Rng::seed_from_u64(PALETTE_SEED));
        // very large K can round two hues onto the same triple
        for i in 1..k {
            while colors[..i].contains(&colors[i]) {
                colors[i][2] = colors[i][2].wrapping_add(1);
            }
        }
        Self {
            entries: names
                .iter()
                .zip(colors)
                .enumerate()
                .map(|(i, (name, rgb))| LegendEntry {
                    class_id: i as u16,
                    name: name.clone(),
                    rgb,
                })
                .collect(),
        }
    }

    /// Names `class_0 .. class_{k-1}`.
    pub fn with_classes(k: usize) -> Self {
        Self::new(&(0..k).map(|i| format!("class_{i}")).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LegendEntry] {
        &self.entries
    }

    /// Black for ignored or unknown ids.
    pub fn color(&self, class_id: u16) -> [u8; 3] {
        if class_id == IGNORE_LABEL {
            return [0, 0, 0];
        }
        self.entries.get(class_id as usize).map_or([0, 0, 0], |e| e.rgb)
    }

    pub fn colorize(&self, labels: &[u16]) -> Vec<u8> {
        labels.iter().flat_map(|&l| self.color(l)).collect()
    }

    /// 256-entry RGB palette for indexed PNGs.
    pub fn palette(&self) -> Vec<u8> {
        (0..=255u16).flat_map(|i| self.color(i)).collect()
    }

    /// Horizontal row of `swatch x swatch` squares, one per class: `(width, height, rgb)`.
    pub fn strip(&self, swatch: usize) -> (usize, usize, Vec<u8>) {
        let w = swatch * self.len();
        let mut rgb = Vec::with_capacity(w * swatch * 3);
        for _ in 0..swatch {
            for e in &self.entries {
                for _ in 0..swatch {
                    rgb.extend_from_slice(&e.rgb);
                }
            }
        }
        (w, swatch, rgb)
    }

    /// `class_id,name,#rrggbb` lines.
    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "{},{},#{:02x}{:02x}{:02x}\n",
                    e.class_id, e.name, e.rgb[0], e.rgb[1], e.rgb[2]
                )
            })
            .collect()
    }
}
