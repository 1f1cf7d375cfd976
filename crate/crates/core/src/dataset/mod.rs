//! Annotated-sample data model, manifest ingestion and the synthetic
//! dataset generator.

mod manifest;
mod sample;
mod stats;
mod synth;

pub use manifest::{normalize_attributes, DatasetManifest, FileCheck, ManifestEntry, Split, ATTRIBUTE_SUM_RANGE};
pub use sample::{binarize, surrogate_fixation, CamouflageSample, SampleLoader, SampleWarning, FIXATION_SIGMA_FRACTION};
pub use stats::{attribute_statistics, statistics_of, AttributeStat};
pub use synth::{render_scene, synth_generate, SynthConfig, SynthScene};
