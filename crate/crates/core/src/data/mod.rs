//! Spectra, segmentation, synthetic data, storage and splitting.

mod container;
mod csv_io;
mod segment;
mod spectrum;
mod split;
pub mod synth;

pub use container::{
    dataset_from_tensor, dataset_to_tensor, read_dataset, write_dataset, TensorFile, FORMAT_VERSION,
    MAGIC,
};
pub use csv_io::{read_csv_dataset, read_csv_from};
pub use segment::{apply_permutation, segment_layout, SegmentedSpectrum, MAX_SEGMENTS, MIN_SEGMENTS};
pub use spectrum::{Dataset, LabeledSpectrum, Patch, Spectrum};
pub use split::{split_dataset, Split, STRATA};
pub use synth::{generate_synthetic, SynthConfig};
