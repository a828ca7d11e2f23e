//! Data ingestion, preprocessing and raster containers.

pub mod manifest;
pub mod preprocess;
pub mod raster;

pub use manifest::{load_stack, BandSpec, FrameSpec, StackManifest};
pub use preprocess::{
    bias_correct, crop, crop_stack, filter_frames, resample_nearest, split_dates, ReferenceRegion,
};
pub use raster::{
    decode_labels, decode_posteriors, encode_labels, encode_posteriors, read_band_file, read_labels,
    read_posteriors, write_band_file, write_labels, write_posteriors, PosteriorCube,
};
