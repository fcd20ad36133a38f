//! `ugn infer`: segments every image of a split and writes the predicted
//! masks plus per-level γ heatmaps.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use ugn_core::data::{encode_mask, read_rgb, write_gray, write_rgb};

use crate::config::RunConfig;

use super::{gamma_raster, list_sat_stems, predict_sample, raster_tensor, restore_model};

/// Runs the final checkpoint over every `*_sat` image in the validation
/// split (masks not required) and writes, under `<output_dir>/infer/`, a
/// palette-encoded `<stem>_pred.png` plus one grayscale
/// `<stem>_gamma_l<level>.png` per pyramid level.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let val_dir = cfg.val_dir();
    let palette = cfg.load_palette(&val_dir)?;
    let (model, classes) = restore_model(cfg, &palette)?;

    let stems = list_sat_stems(&val_dir)?;
    if stems.is_empty() {
        bail!("no `*_sat` images found in {}", val_dir.display());
    }
    let out_dir = cfg.output_dir.join("infer");
    std::fs::create_dir_all(&out_dir)?;
    let unc = cfg.uncertainty();
    for stem in &stems {
        let raster = read_rgb(&sat_path(&val_dir, stem)?)?;
        let x = raster_tensor(&raster)?;
        let pred = predict_sample(&model, &x, &unc, cfg.seed, stem)?;
        let mask = encode_mask(&pred.class_map, pred.height, pred.width, &palette)?;
        write_rgb(&out_dir.join(format!("{stem}_pred.png")), &mask)?;
        for (level, gamma) in &pred.gamma_levels {
            let raster = gamma_raster(gamma, classes)?;
            write_gray(&out_dir.join(format!("{stem}_gamma_l{level}.png")), &raster)?;
        }
    }
    println!("wrote {} predictions to {}", stems.len(), out_dir.display());
    Ok(())
}

/// The image file behind a stem, whichever extension it was stored with.
fn sat_path(dir: &Path, stem: &str) -> Result<PathBuf> {
    for suffix in ["_sat.png", "_sat.ppm"] {
        let path = dir.join(format!("{stem}{suffix}"));
        if path.is_file() {
            return Ok(path);
        }
    }
    bail!("image for stem `{stem}` disappeared from {}", dir.display());
}
