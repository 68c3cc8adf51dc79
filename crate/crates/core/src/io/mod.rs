//! On-disk formats.

pub(crate) mod binary;

pub mod ahis;
pub mod pgm;
pub mod png_io;
pub mod scene_dir;

pub use ahis::{read_ahis, write_ahis};
pub use pgm::{read_view_pgm, write_view_pgm};
pub use png_io::{read_label_png, write_label_png, write_rgb_png};
pub use scene_dir::{read_scene_dir, write_scene_dir, LoadedScene, SceneMeta};
