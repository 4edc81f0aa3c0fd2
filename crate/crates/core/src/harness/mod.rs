//! Datasets, style-mixture experiments, drift analysis and reports.

pub mod artifacts;
pub mod config;
pub mod dataset;
pub mod drift;
pub mod pipeline;

pub use config::{DatasetSpec, ExperimentConfig, Method};
pub use dataset::{apply_styles, assign_styles, stratified_split, synth_dataset, synth_images, Dataset, MixtureMode, Split};
pub use drift::{drift_analysis, DriftReport};
pub use pipeline::{run_experiment, run_pipeline, seed_kernels, Corpus, Report, SeedResult};
