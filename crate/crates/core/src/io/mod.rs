//! File formats: map archives, datasets, images, PLY and configuration.

pub mod archive;
pub mod config;
pub mod dataset;
pub mod ply;
pub mod raster;

pub use archive::{load_map, save_map};
pub use config::{load_config, ConfigOverrides};
pub use dataset::{load_dataset, DatasetManifest};
