//! Dataset ingestion, annotation sidecars, model files and run configuration.

mod checkpoint;
mod config;
mod dataset;
mod sidecar;

pub use checkpoint::{decode, encode, load_model, save_model, ModelBundle, FORMAT_VERSION, MAGIC};
pub use config::{format_config, parse_config, read_config};
pub use dataset::{load_dataset, load_image, write_ppm, DatasetManifest, SampleRecord, IMAGE_EXTENSIONS};
pub use sidecar::{
    format_faces, parse_descriptors, parse_faces, read_descriptors, read_faces, sidecar_path, write_descriptors,
    write_faces, AnnotationProvider, RecordAnnotations, SidecarAnnotations, FACES_EXT, LABELS_EXT,
};
