//! Continuous per-viewer valence annotations and the segment labels derived
//! from them.

mod annotation;
mod dataset;
pub mod formats;
pub mod synth;

pub use annotation::{average_viewer, binarize, segment_mean, AnnotationTrack, Label, SegmentSpec, DEFAULT_SAMPLE_PERIOD_MS};
pub use dataset::{build_dataset, target_name, Dataset, DatasetManifest, LabeledSample, MovieEntry};
pub use synth::{synth_corpus, synth_generate, GroundTruth, SynthConfig, SynthCorpus};

/// Codes of the seven movies the built-in fold protocols refer to.
pub const PROTOCOL_MOVIES: [&str; 7] = ["BMI", "CHI", "CRA", "FNE", "GLA", "DEP", "LOR"];
