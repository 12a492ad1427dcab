//! Hyperspectral scene handling: cubes, label rasters, PCA, normalization,
//! patch extraction, stratified splits and synthetic scenes.

mod cube;
mod pca;
mod split;
mod synth;

pub use cube::{extract_patch, normalize, stack_patches, BandScaling, HsiCube, LabelRaster};
pub use pca::{pca_reduce, PcaModel};
pub use split::{split_counts, stratified_split, SplitAssignment, Subset};
pub use synth::{generate_synthetic, SynthParams};
