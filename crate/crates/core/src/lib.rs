//! Multiview material segmentation from angular luminance histograms.

pub mod ablation;
pub mod brdf;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fusion;
pub mod histogram;
pub mod io;
pub mod legend;
pub mod metrics;
pub mod model;
pub mod scene;
pub mod superpixel;
pub mod tensor;
pub mod train;

pub use ablation::{run_ablation, AblationTable, AblationVariant};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use histogram::{AngularHistogramFeature, HistogramConfig};
pub use legend::ColorLegend;
pub use metrics::{ConfusionMatrix, Metrics};
pub use model::{AnglNet, NetworkConfig};
pub use scene::{IntensityStack, SceneParams, SceneSpec};
pub use superpixel::{SlicConfig, SuperpixelMap};
pub use train::{SceneData, TrainConfig};
