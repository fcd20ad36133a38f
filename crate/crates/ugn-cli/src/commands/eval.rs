//! `ugn eval`: scores a checkpoint against a labeled split.

use anyhow::{bail, Result};
use ugn_core::data::load_dataset;

use crate::config::RunConfig;

use super::{evaluate_samples, restore_model};

/// Re-runs whole-image prediction over the validation split (the same
/// stem-keyed noise streams `train` and `infer` use, so the numbers agree
/// bit for bit), prints the per-class IoU report, and stores it as
/// `<output_dir>/eval_report.txt`.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let val_dir = cfg.val_dir();
    let palette = cfg.load_palette(&val_dir)?;
    let (model, classes) = restore_model(cfg, &palette)?;

    let samples = load_dataset(&val_dir, &palette)?;
    if samples.is_empty() {
        bail!("no labeled samples in {}", val_dir.display());
    }
    let cm = evaluate_samples(&model, &samples, classes, &cfg.uncertainty(), cfg.seed)?;
    let report = cm.report(&palette)?;
    print!("{report}");

    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("eval_report.txt");
    std::fs::write(&path, &report)?;
    println!("report stored at {}", path.display());
    Ok(())
}
