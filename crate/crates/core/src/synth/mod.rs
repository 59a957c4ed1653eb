//! Synthetic stereo data, augmentation, and image file I/O.

pub mod augment;
pub mod generate;
pub mod manifest;
pub mod pfm;
pub mod pgm;
