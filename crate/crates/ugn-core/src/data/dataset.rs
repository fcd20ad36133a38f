//! On-disk dataset layout: paired image/mask files in one directory.
//!
//! Each sample is stored as `<stem>_sat.png` (the RGB image) and
//! `<stem>_mask.png` (the palette-encoded labels); `.ppm` is accepted as an
//! alternative extension on load. Loading walks the directory, pairs files
//! by stem, and returns samples sorted by stem so the order never depends
//! on filesystem iteration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::io::{read_rgb, write_rgb};
use crate::data::palette::Palette;
use crate::data::sample::SegSample;
use crate::error::{Error, Result};

const SAT_SUFFIXES: [&str; 2] = ["_sat.png", "_sat.ppm"];
const MASK_SUFFIXES: [&str; 2] = ["_mask.png", "_mask.ppm"];

/// Writes samples as `<prefix><index>_sat.png` / `<prefix><index>_mask.png`
/// pairs, creating the directory if needed. Returns the stems in order.
pub fn save_dataset(
    dir: &Path,
    prefix: &str,
    samples: &[SegSample],
    palette: &Palette,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut stems = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let stem = format!("{prefix}{i:04}");
        let (sat, mask) = sample.to_rasters(palette)?;
        write_rgb(&dir.join(format!("{stem}_sat.png")), &sat)?;
        write_rgb(&dir.join(format!("{stem}_mask.png")), &mask)?;
        stems.push(stem);
    }
    Ok(stems)
}

/// Loads every `<stem>_sat` / `<stem>_mask` pair from a directory, sorted by
/// stem. Masks are decoded strictly (off-palette colors are errors).
///
/// All pairing problems are reported at once: stems with an image but no
/// mask, stems with a mask but no image, and stems where a file exists in
/// both extensions.
pub fn load_dataset(dir: &Path, palette: &Palette) -> Result<Vec<(String, SegSample)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut sats: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut masks: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut problems: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir.display().to_string(), e))?;
        if !entry.path().is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        for (suffixes, map) in [(&SAT_SUFFIXES, &mut sats), (&MASK_SUFFIXES, &mut masks)] {
            for suffix in suffixes {
                if let Some(stem) = name.strip_suffix(suffix) {
                    if map.insert(stem.to_string(), entry.path()).is_some() {
                        problems.push(format!(
                            "stem `{stem}` has the same role in both png and ppm form"
                        ));
                    }
                }
            }
        }
    }
    for stem in sats.keys() {
        if !masks.contains_key(stem) {
            problems.push(format!("stem `{stem}` has an image but no mask"));
        }
    }
    for stem in masks.keys() {
        if !sats.contains_key(stem) {
            problems.push(format!("stem `{stem}` has a mask but no image"));
        }
    }
    if !problems.is_empty() {
        problems.sort();
        return Err(Error::data(format!(
            "dataset at `{}` is inconsistent: {}",
            dir.display(),
            problems.join("; ")
        )));
    }
    let mut out = Vec::with_capacity(sats.len());
    for (stem, sat_path) in &sats {
        let sat = read_rgb(sat_path)?;
        let mask = read_rgb(&masks[stem])?;
        if (sat.height, sat.width) != (mask.height, mask.width) {
            return Err(Error::data(format!(
                "stem `{stem}`: image is {}x{} but its mask is {}x{}",
                sat.height, sat.width, mask.height, mask.width
            )));
        }
        let sample = SegSample::from_rasters(&sat, &mask, palette, false)
            .map_err(|e| Error::data(format!("stem `{stem}`: {e}")))?;
        out.push((stem.clone(), sample));
    }
    Ok(out)
}
