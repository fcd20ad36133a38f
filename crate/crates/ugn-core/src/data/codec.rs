//! Conversion between color-coded mask rasters and class-index buffers.

use std::collections::HashMap;

use crate::data::io::RgbRaster;
use crate::data::palette::Palette;
use crate::error::{Error, Result};

/// Decodes a color mask into per-pixel class indices.
///
/// Every pixel color must match a palette entry exactly. With `coerce` set,
/// off-palette colors map to the unknown class instead; without it, the
/// first offending pixel (row-major order) is reported.
pub fn decode_mask(raster: &RgbRaster, palette: &Palette, coerce: bool) -> Result<Vec<u8>> {
    let lookup: HashMap<[u8; 3], u8> = palette
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| (e.rgb, i as u8))
        .collect();
    let unknown = palette.unknown_index() as u8;
    let mut mask = Vec::with_capacity(raster.height * raster.width);
    for y in 0..raster.height {
        for x in 0..raster.width {
            let rgb = raster.pixel(y, x);
            match lookup.get(&rgb) {
                Some(&class) => mask.push(class),
                None if coerce => mask.push(unknown),
                None => {
                    let [r, g, b] = rgb;
                    return Err(Error::data(format!(
                        "mask pixel at row {y}, column {x} has color ({r},{g},{b}), \
                         which is not in the palette"
                    )));
                }
            }
        }
    }
    Ok(mask)
}

/// Encodes per-pixel class indices as a color mask raster.
///
/// Indices at or beyond the palette size violate the contract.
pub fn encode_mask(
    mask: &[u8],
    height: usize,
    width: usize,
    palette: &Palette,
) -> Result<RgbRaster> {
    const OP: &str = "encode_mask";
    if mask.len() != height * width {
        return Err(Error::shape(
            OP,
            format!(
                "mask holds {} entries, but a {height}x{width} raster needs {}",
                mask.len(),
                height * width
            ),
        ));
    }
    let mut data = Vec::with_capacity(3 * height * width);
    for (at, &class) in mask.iter().enumerate() {
        let rgb = palette.color(class as usize).ok_or_else(|| {
            Error::contract(
                OP,
                format!(
                    "pixel at row {}, column {} has class {class}, but the palette \
                     has only {} entries",
                    at / width,
                    at % width,
                    palette.len()
                ),
            )
        })?;
        data.extend_from_slice(&rgb);
    }
    RgbRaster::new(height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream::derive_rng;
    use rand::Rng;

    #[test]
    fn decode_then_encode_is_identity_on_random_masks() {
        let palette = Palette::land_cover();
        let mut rng = derive_rng(11, "codec-test", &[]);
        for _ in 0..100 {
            let (h, w) = (rng.random_range(1..8), rng.random_range(1..8));
            let mask: Vec<u8> = (0..h * w)
                .map(|_| rng.random_range(0..palette.len()) as u8)
                .collect();
            let raster = encode_mask(&mask, h, w, &palette).unwrap();
            let back = decode_mask(&raster, &palette, false).unwrap();
            assert_eq!(back, mask);
        }
    }

    #[test]
    fn strict_decode_names_the_first_offending_pixel() {
        let palette = Palette::land_cover_subset(2).unwrap();
        let mut raster = encode_mask(&[0, 1, 2, 0], 2, 2, &palette).unwrap();
        // Corrupt pixels (0,1) and (1,0); the scan must report (0,1) first.
        raster.data[3..6].copy_from_slice(&[9, 9, 9]);
        raster.data[6..9].copy_from_slice(&[7, 7, 7]);
        let err = decode_mask(&raster, &palette, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 0, column 1"), "{msg}");
        assert!(msg.contains("(9,9,9)"), "{msg}");
    }

    #[test]
    fn coercion_maps_only_the_offending_pixel_to_unknown() {
        let palette = Palette::land_cover_subset(2).unwrap();
        let mut raster = encode_mask(&[0, 1, 1, 0], 2, 2, &palette).unwrap();
        raster.data[6..9].copy_from_slice(&[12, 34, 56]);
        let mask = decode_mask(&raster, &palette, true).unwrap();
        assert_eq!(mask, vec![0, 1, palette.unknown_index() as u8, 0]);
    }

    #[test]
    fn encode_rejects_out_of_range_classes() {
        let palette = Palette::land_cover_subset(2).unwrap();
        let err = encode_mask(&[0, 3, 0, 0], 2, 2, &palette).unwrap_err();
        assert!(matches!(err, Error::Contract { .. }));
        assert!(err.to_string().contains("class 3"), "{err}");
        assert!(encode_mask(&[0, 1, 2], 2, 2, &palette).is_err());
    }
}
