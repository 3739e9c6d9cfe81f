//! PNG images, the checkpoint container and multi-scale dataset preparation.

mod checkpoint;
mod dataset;
mod image;

pub use checkpoint::{Checkpoint, Manifest, TensorEntry, FORMAT_VERSION, MAGIC};
pub use dataset::{
    list_images, prepare_multiscale, scale_tag, scaled_dim, DatasetManifest, ManifestEntry, DEFAULT_SCALES,
    MANIFEST_FILE,
};
pub use image::{atomic_write, read_image, read_png, to_byte, write_image, RawImage};
