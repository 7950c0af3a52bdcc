pub mod ablation;
pub mod attention;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod heatmap;
pub mod image;
pub mod init;
pub mod localization;
pub mod model;
pub mod train;

pub use config::{Ablation, GiouCell, ModelConfig};
pub use error::{PfosError, Result};
pub use image::Image;
pub use model::{Pfos, SampleRef};
