//! Synthetic multi-exposure low-light captures.

pub mod capture;
pub mod dataset;
pub mod format;
pub mod noise;
pub mod scene;

pub use capture::{expose, mosaic, render_reference_at, render_reference_srgb};
pub use dataset::{
    build_dataset, Dataset, DatasetConfig, DatasetManifest, SceneRecord, Split, EXPOSURES, REFERENCE_EXPOSURE,
};
pub use noise::{sample_noisy_raw, NoiseParams};
pub use scene::{generate_scene, CleanScene, SceneStyle};
