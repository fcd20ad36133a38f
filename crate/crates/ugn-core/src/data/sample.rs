//! Labeled segmentation samples and resolution reduction.

use crate::data::codec::{decode_mask, encode_mask};
use crate::data::io::RgbRaster;
use crate::data::palette::Palette;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One image with its per-pixel labels.
///
/// The image is planar `[3, H, W]` with values in `[0, 1]`; the mask holds
/// palette class indices; `valid` is false exactly where the mask is the
/// palette's unknown class, and only valid pixels participate in losses and
/// metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub height: usize,
    pub width: usize,
    /// Planar RGB, `[3, H, W]` row-major, each value in `[0, 1]`.
    pub image: Vec<f32>,
    /// Row-major `[H, W]` class indices, unknown included.
    pub mask: Vec<u8>,
    /// Row-major `[H, W]`; false marks unlabeled pixels.
    pub valid: Vec<bool>,
}

impl SegSample {
    /// Wraps preassembled buffers, checking their lengths.
    pub fn new(
        height: usize,
        width: usize,
        image: Vec<f32>,
        mask: Vec<u8>,
        valid: Vec<bool>,
    ) -> Result<SegSample> {
        const OP: &str = "SegSample::new";
        if height == 0 || width == 0 {
            return Err(Error::shape(
                OP,
                format!("extents must be positive, got {height}x{width}"),
            ));
        }
        let pixels = height * width;
        if image.len() != 3 * pixels {
            return Err(Error::shape(
                OP,
                format!(
                    "image holds {} values, but [3, {height}, {width}] needs {}",
                    image.len(),
                    3 * pixels
                ),
            ));
        }
        if mask.len() != pixels {
            return Err(Error::shape(
                OP,
                format!("mask holds {} values, expected {pixels}", mask.len()),
            ));
        }
        if valid.len() != pixels {
            return Err(Error::shape(
                OP,
                format!("valid holds {} values, expected {pixels}", valid.len()),
            ));
        }
        Ok(SegSample {
            height,
            width,
            image,
            mask,
            valid,
        })
    }

    /// Builds a sample from an image raster and a color-coded mask raster.
    ///
    /// Image bytes are scaled to `[0, 1]`; the mask is decoded against the
    /// palette (see [`decode_mask`] for the `coerce` rule) and `valid` is
    /// derived as "not unknown".
    pub fn from_rasters(
        sat: &RgbRaster,
        mask: &RgbRaster,
        palette: &Palette,
        coerce: bool,
    ) -> Result<SegSample> {
        if (sat.height, sat.width) != (mask.height, mask.width) {
            return Err(Error::shape(
                "SegSample::from_rasters",
                format!(
                    "image is {}x{} but its mask is {}x{}",
                    sat.height, sat.width, mask.height, mask.width
                ),
            ));
        }
        let (h, w) = (sat.height, sat.width);
        let pixels = h * w;
        // Interleaved u8 -> planar f32 in [0, 1].
        let mut image = vec![0.0f32; 3 * pixels];
        for p in 0..pixels {
            for c in 0..3 {
                image[c * pixels + p] = sat.data[3 * p + c] as f32 / 255.0;
            }
        }
        let mask = decode_mask(mask, palette, coerce)?;
        let unknown = palette.unknown_index() as u8;
        let valid = mask.iter().map(|&m| m != unknown).collect();
        SegSample::new(h, w, image, mask, valid)
    }

    /// Renders the sample back to an image raster and a color mask raster.
    /// Image values are clamped to `[0, 1]` and quantized to 8 bits.
    pub fn to_rasters(&self, palette: &Palette) -> Result<(RgbRaster, RgbRaster)> {
        let pixels = self.height * self.width;
        let mut data = vec![0u8; 3 * pixels];
        for p in 0..pixels {
            for c in 0..3 {
                let v = self.image[c * pixels + p].clamp(0.0, 1.0);
                data[3 * p + c] = (v * 255.0).round() as u8;
            }
        }
        let sat = RgbRaster::new(self.height, self.width, data)?;
        let mask = encode_mask(&self.mask, self.height, self.width, palette)?;
        Ok((sat, mask))
    }

    /// The image as a `[1, 3, H, W]` tensor (no gradient tracking).
    pub fn image_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = self
            .image
            .iter()
            .map(|&v| T::from_f64(f64::from(v)))
            .collect();
        Tensor::from_vec(&[1, 3, self.height, self.width], data)
    }

    /// Fraction of pixels that carry a label.
    pub fn valid_fraction(&self) -> f64 {
        let n = self.valid.iter().filter(|&&v| v).count();
        n as f64 / self.valid.len() as f64
    }

    /// Reduces resolution by an integer `factor`: image channels average
    /// over each `factor`-square block, while mask and validity keep the
    /// block's top-left value (averaging class indices is meaningless).
    pub fn downscale(&self, factor: usize) -> Result<SegSample> {
        const OP: &str = "SegSample::downscale";
        if factor == 0 {
            return Err(Error::contract(OP, "factor must be positive"));
        }
        if self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::shape(
                OP,
                format!(
                    "extents {}x{} are not divisible by factor {factor}",
                    self.height, self.width
                ),
            ));
        }
        let (oh, ow) = (self.height / factor, self.width / factor);
        let (in_px, out_px) = (self.height * self.width, oh * ow);
        let norm = 1.0 / (factor * factor) as f64;
        let mut image = vec![0.0f32; 3 * out_px];
        let mut mask = vec![0u8; out_px];
        let mut valid = vec![false; out_px];
        for oy in 0..oh {
            for ox in 0..ow {
                let top_left = oy * factor * self.width + ox * factor;
                for c in 0..3 {
                    let mut acc = 0.0f64;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            let p = (oy * factor + dy) * self.width + ox * factor + dx;
                            acc += f64::from(self.image[c * in_px + p]);
                        }
                    }
                    image[c * out_px + oy * ow + ox] = (acc * norm) as f32;
                }
                mask[oy * ow + ox] = self.mask[top_left];
                valid[oy * ow + ox] = self.valid[top_left];
            }
        }
        SegSample::new(oh, ow, image, mask, valid)
    }
}
