//! Tiling, splitting, augmentation and dot-label extraction for large imagery.

mod augment;
mod census;
mod dots;
mod split;
mod tiles;

pub use augment::{augment, warp_image, AffineTransform, AugmentRanges, Augmented, MAX_RESAMPLES, MIN_DETERMINANT};
pub use census::{count_table, CountTable};
pub use dots::{extract_dots, DotColor, DotColorTable, DotExtraction, DotParams};
pub use split::{split_dataset, split_sizes, SPLIT_NAMES};
pub use tiles::{read_manifest, slice_around_objects, slice_sequential, write_manifest, Mosaic, TileIndex, TileRecord};
