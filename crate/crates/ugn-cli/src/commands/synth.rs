//! `ugn synth`: writes a deterministic synthetic dataset to disk.

use anyhow::{bail, Result};
use std::path::Path;
use ugn_core::data::{save_dataset, synth_generate, SynthConfig};
use ugn_core::{derive_seed, Palette};

use crate::config::RunConfig;

/// Generates the train and validation splits under the output directory and
/// stores the palette next to each split (and at the top level).
///
/// The two splits draw from disjoint seed streams, so resizing one never
/// changes the other.
pub fn run(cfg: &RunConfig) -> Result<()> {
    if cfg.synth_count == 0 {
        bail!("synth_count must be positive");
    }
    let palette = if cfg.palette.is_empty() {
        Palette::land_cover_subset(cfg.classes)?
    } else {
        Palette::read_file(Path::new(&cfg.palette))?
    };
    let scfg = SynthConfig {
        height: cfg.image_size,
        width: cfg.image_size,
        classes: cfg.classes,
        unknown_fraction: cfg.unknown_fraction,
    };

    std::fs::create_dir_all(&cfg.output_dir)?;
    palette.write_file(&cfg.output_dir.join("palette.txt"))?;

    let train_dir = cfg.train_dir();
    let train_seed = derive_seed(cfg.seed, "synth-split", &[0]);
    let samples = synth_generate(cfg.synth_count, &scfg, &palette, train_seed)?;
    save_dataset(&train_dir, "train_", &samples, &palette)?;
    palette.write_file(&train_dir.join("palette.txt"))?;
    println!(
        "wrote {} training samples ({}x{}, {} classes) to {}",
        cfg.synth_count,
        cfg.image_size,
        cfg.image_size,
        cfg.classes,
        train_dir.display()
    );

    if cfg.synth_val_count > 0 {
        let val_dir = cfg.val_dir();
        let val_seed = derive_seed(cfg.seed, "synth-split", &[1]);
        let samples = synth_generate(cfg.synth_val_count, &scfg, &palette, val_seed)?;
        save_dataset(&val_dir, "val_", &samples, &palette)?;
        palette.write_file(&val_dir.join("palette.txt"))?;
        println!(
            "wrote {} validation samples to {}",
            cfg.synth_val_count,
            val_dir.display()
        );
    }
    Ok(())
}
