//! Synthetic sprite corpus with exact tag and region ground truth.

mod dataset;
mod render;

pub use dataset::{
    build_dataset, mix64, record_seed, split_assignment, Dataset, DatasetManifest, ManifestEntry,
    SampleRecord, Split, DATASET_FORMAT_VERSION, MANIFEST_FILE, VOCAB_FILE,
};
pub use render::{
    region_mean, render_sprite, sample_spec, SpriteSpec, BACKGROUND_RGB, SKIN_RGB, SUPPORTED_SIZES,
};
