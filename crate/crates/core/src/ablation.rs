//! Baseline / +histogram / +stacking comparison.

use std::fmt::Write as _;

use crate::error::Result;
use crate::metrics::Metrics;
use crate::model::{AnglNet, NetworkConfig};
use crate::train::{evaluate, train, EvalReport, SceneData, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationVariant {
    Baseline,
    Histogram,
    Stacking,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 3] = [Self::Baseline, Self::Histogram, Self::Stacking];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Histogram => "+histogram",
            Self::Stacking => "+stacking",
        }
    }

    pub fn network_config(&self, base: &NetworkConfig) -> NetworkConfig {
        let (use_histogram, use_stack2) = match self {
            Self::Baseline => (false, false),
            Self::Histogram => (true, false),
            Self::Stacking => (true, true),
        };
        NetworkConfig {
            use_histogram,
            use_stack2,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<EvalReport>,
}

impl AblationRow {
    fn mean(&self, f: impl Fn(&EvalReport) -> &Metrics, g: impl Fn(&Metrics) -> f64) -> f64 {
        self.per_seed.iter().map(|r| g(f(r))).sum::<f64>() / self.per_seed.len().max(1) as f64
    }

    pub fn mean_pix_acc(&self) -> f64 {
        self.mean(|r| &r.per_view, |m| m.pix_acc)
    }

    pub fn mean_miou(&self) -> f64 {
        self.mean(|r| &r.per_view, |m| m.mean_iou)
    }

    pub fn mean_fused_miou(&self) -> f64 {
        self.mean(|r| &r.fused, |m| m.mean_iou)
    }
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: AblationVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Aligned text, one line per variant, values in percent.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let seeds = self.rows.first().map_or(&[][..], |r| &r.seeds[..]);
        let _ = write!(s, "{:<12}", "variant");
        for seed in seeds {
            let _ = write!(s, " {:>13}", format!("seed {seed}"));
        }
        let _ = writeln!(s, " {:>13} {:>10}", "mean", "fused mIoU");
        for row in &self.rows {
            let _ = write!(s, "{:<12}", row.variant.name());
            for r in &row.per_seed {
                let _ = write!(s, " {:>13}", r.per_view.to_string());
            }
            let mean = format!("{:.1} / {:.1}", 100.0 * row.mean_pix_acc(), 100.0 * row.mean_miou());
            let _ = writeln!(s, " {:>13} {:>10.1}", mean, 100.0 * row.mean_fused_miou());
        }
        s
    }

    /// `variant,seed,pix_acc,mean_iou,fused_pix_acc,fused_mean_iou` with a `mean` row per variant.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,pix_acc,mean_iou,fused_pix_acc,fused_mean_iou\n");
        for row in &self.rows {
            for (seed, r) in row.seeds.iter().zip(&row.per_seed) {
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{:.6},{:.6},{:.6}",
                    row.variant.name(),
                    seed,
                    r.per_view.pix_acc,
                    r.per_view.mean_iou,
                    r.fused.pix_acc,
                    r.fused.mean_iou
                );
            }
            let _ = writeln!(
                s,
                "{},mean,{:.6},{:.6},{:.6},{:.6}",
                row.variant.name(),
                row.mean_pix_acc(),
                row.mean_miou(),
                row.mean(|r| &r.fused, |m| m.pix_acc),
                row.mean_fused_miou()
            );
        }
        s
    }
}

/// Trains and evaluates every variant once per seed. The seed drives both
/// weight init and the data order, so variants share everything they have in common.
pub fn run_ablation(
    train_set: &[SceneData],
    test_set: &[SceneData],
    net: &NetworkConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for variant in AblationVariant::ALL {
        let cfg = variant.network_config(net);
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let mut model = AnglNet::new(cfg.clone(), seed)?;
            train(
                &mut model,
                train_set,
                &TrainConfig {
                    seed,
                    ..train_cfg.clone()
                },
                None,
            )?;
            per_seed.push(evaluate(&mut model, test_set)?);
        }
        rows.push(AblationRow {
            variant,
            seeds: seeds.to_vec(),
            per_seed,
        });
    }
    Ok(AblationTable { rows })
}
