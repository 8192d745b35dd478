//! Image and mask ingestion, dataset splitting, and a synthetic
//! nested-ellipse generator.

mod dataset;
mod image_io;
mod split;
mod synth;

pub use dataset::{load_dataset_dir, load_image_dir, load_sample, Sample};
pub use image_io::{
    class_intensity, default_thresholds, labels_from_intensity, load_and_preprocess, load_gray, mask_from_intensity,
    resize_bilinear, resize_nearest, save_gray_png, GrayImage,
};
pub use split::{split_dataset, Split, SplitMode, SplitSpec};
pub use synth::{synth_generate, write_dataset, SynthSpec};
