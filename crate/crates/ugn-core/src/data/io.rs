//! Raster image I/O: 8-bit RGB and grayscale buffers, stored as PNG or as
//! binary PPM/PGM.
//!
//! PNG is the interchange format; the Netpbm variants exist because they are
//! trivial to write byte-for-byte in tests and debuggable with a hex dump.
//! The format is picked from the file extension (`.png`, `.ppm`, `.pgm`).

use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit RGB raster with interleaved row-major pixels (`len = 3*H*W`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbRaster {
    /// Wraps an interleaved buffer, checking its length.
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<RgbRaster> {
        if height == 0 || width == 0 {
            return Err(Error::shape(
                "RgbRaster::new",
                format!("extents must be positive, got {height}x{width}"),
            ));
        }
        if data.len() != 3 * height * width {
            return Err(Error::shape(
                "RgbRaster::new",
                format!(
                    "buffer holds {} bytes, but a {height}x{width} RGB raster needs {}",
                    data.len(),
                    3 * height * width
                ),
            ));
        }
        Ok(RgbRaster {
            height,
            width,
            data,
        })
    }

    /// The `[r, g, b]` triple at row `y`, column `x`.
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let at = 3 * (y * self.width + x);
        [self.data[at], self.data[at + 1], self.data[at + 2]]
    }
}

/// An 8-bit single-channel raster, row-major (`len = H*W`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayRaster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl GrayRaster {
    /// Wraps a row-major buffer, checking its length.
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<GrayRaster> {
        if height == 0 || width == 0 {
            return Err(Error::shape(
                "GrayRaster::new",
                format!("extents must be positive, got {height}x{width}"),
            ));
        }
        if data.len() != height * width {
            return Err(Error::shape(
                "GrayRaster::new",
                format!(
                    "buffer holds {} bytes, but a {height}x{width} raster needs {}",
                    data.len(),
                    height * width
                ),
            ));
        }
        Ok(GrayRaster {
            height,
            width,
            data,
        })
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

/// Reads an RGB raster from a `.png` or `.ppm` file. PNGs in other color
/// models (gray, palette, alpha) are converted to RGB.
pub fn read_rgb(path: &Path) -> Result<RgbRaster> {
    let name = path.display().to_string();
    match extension(path).as_str() {
        "png" => {
            let img = image::open(path)
                .map_err(|e| Error::data(format!("reading `{name}`: {e}")))?
                .to_rgb8();
            RgbRaster::new(img.height() as usize, img.width() as usize, img.into_raw())
        }
        "ppm" => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(name.clone(), e))?;
            parse_ppm(&bytes).map_err(|e| Error::data(format!("reading `{name}`: {e}")))
        }
        other => Err(Error::data(format!(
            "reading `{name}`: unsupported image extension `{other}` (expected png or ppm)"
        ))),
    }
}

/// Writes an RGB raster as `.png` or binary `.ppm`, chosen by extension.
pub fn write_rgb(path: &Path, raster: &RgbRaster) -> Result<()> {
    let name = path.display().to_string();
    match extension(path).as_str() {
        "png" => image::save_buffer(
            path,
            &raster.data,
            raster.width as u32,
            raster.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| Error::data(format!("writing `{name}`: {e}"))),
        "ppm" => std::fs::write(path, ppm_bytes(raster)).map_err(|e| Error::io(name, e)),
        other => Err(Error::data(format!(
            "writing `{name}`: unsupported image extension `{other}` (expected png or ppm)"
        ))),
    }
}

/// Writes a grayscale raster as `.png` or binary `.pgm`, chosen by extension.
pub fn write_gray(path: &Path, raster: &GrayRaster) -> Result<()> {
    let name = path.display().to_string();
    match extension(path).as_str() {
        "png" => image::save_buffer(
            path,
            &raster.data,
            raster.width as u32,
            raster.height as u32,
            image::ColorType::L8,
        )
        .map_err(|e| Error::data(format!("writing `{name}`: {e}"))),
        "pgm" => std::fs::write(path, pgm_bytes(raster)).map_err(|e| Error::io(name, e)),
        other => Err(Error::data(format!(
            "writing `{name}`: unsupported image extension `{other}` (expected png or pgm)"
        ))),
    }
}

/// Serializes to binary PPM (`P6`, maxval 255).
pub fn ppm_bytes(raster: &RgbRaster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.data);
    out
}

/// Serializes to binary PGM (`P5`, maxval 255).
pub fn pgm_bytes(raster: &GrayRaster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.data);
    out
}

/// Parses binary PPM (`P6`). Header tokens may be separated by any
/// whitespace, and `#` comments are honored; the maxval must be 255.
pub fn parse_ppm(bytes: &[u8]) -> Result<RgbRaster> {
    let mut cursor = 0usize;
    let magic = header_token(bytes, &mut cursor)?;
    if magic != "P6" {
        return Err(Error::data(format!(
            "expected PPM magic `P6`, got `{magic}`"
        )));
    }
    let width: usize = parse_header_number(bytes, &mut cursor, "width")?;
    let height: usize = parse_header_number(bytes, &mut cursor, "height")?;
    let maxval: usize = parse_header_number(bytes, &mut cursor, "maxval")?;
    if maxval != 255 {
        return Err(Error::data(format!(
            "only maxval 255 is supported, got {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the pixel data.
    cursor += 1;
    let need = 3 * width * height;
    let rest = bytes.len().saturating_sub(cursor);
    if rest < need {
        return Err(Error::data(format!(
            "pixel payload holds {rest} bytes, but a {height}x{width} image needs {need}"
        )));
    }
    RgbRaster::new(height, width, bytes[cursor..cursor + need].to_vec())
}

fn header_token(bytes: &[u8], cursor: &mut usize) -> Result<String> {
    // Skip whitespace and comment lines.
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
        } else {
            break;
        }
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    if start == *cursor {
        return Err(Error::data("truncated PPM header"));
    }
    String::from_utf8(bytes[start..*cursor].to_vec())
        .map_err(|_| Error::data("PPM header is not ASCII"))
}

fn parse_header_number(bytes: &[u8], cursor: &mut usize, what: &str) -> Result<usize> {
    let token = header_token(bytes, cursor)?;
    token
        .parse()
        .map_err(|_| Error::data(format!("bad PPM {what}: `{token}`")))
}
