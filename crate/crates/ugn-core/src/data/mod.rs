//! Data plumbing: palettes, mask codecs, raster I/O, synthetic scenes, and
//! the on-disk dataset layout.

pub mod codec;
pub mod dataset;
pub mod io;
pub mod palette;
pub mod sample;
pub mod synth;

pub use codec::{decode_mask, encode_mask};
pub use dataset::{load_dataset, save_dataset};
pub use io::{read_rgb, write_gray, write_rgb, GrayRaster, RgbRaster};
pub use palette::{Palette, PaletteEntry, UNKNOWN_NAME};
pub use sample::SegSample;
pub use synth::{synth_generate, SynthConfig};
