//! `ugn train`: optimizes a model on a dataset, logging one line per epoch
//! and checkpointing after every epoch.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ugn_core::data::load_dataset;
use ugn_core::{train_epoch, EpochStats, WnAdam};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;

use super::{build_model, class_count, evaluate_samples};

/// Trains for `epochs` total epochs (continuing from a resume checkpoint if
/// one is given), appending to `train.log` and writing
/// `checkpoint_<NNNN>.ugn` per epoch plus `checkpoint_final.ugn` at the end.
/// When a validation split exists its mIoU is appended as a final
/// `final_miou=<value>` line.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let train_dir = cfg.train_dir();
    let palette = cfg.load_palette(&train_dir)?;
    let classes = class_count(cfg, &palette)?;
    let dataset = load_dataset(&train_dir, &palette)?;
    if dataset.is_empty() {
        bail!("no training samples in {}", train_dir.display());
    }
    let samples: Vec<_> = dataset.into_iter().map(|(_, s)| s).collect();

    let model = build_model(cfg, classes)?;
    let mut opt = WnAdam::new(cfg.beta1)?;
    let mut epochs_done = 0usize;
    let mut global_step = 0usize;
    if !cfg.resume.is_empty() {
        let ckpt = Checkpoint::load(Path::new(&cfg.resume))?;
        (epochs_done, global_step) = checkpoint::restore(&ckpt, &model, &mut opt, cfg, classes)?;
        println!(
            "resumed from {} after epoch {epochs_done}, step {global_step}",
            cfg.resume
        );
        if epochs_done >= cfg.epochs {
            bail!(
                "resume checkpoint already covers {epochs_done} of {} epochs; \
                 raise `epochs` to continue training",
                cfg.epochs
            );
        }
    }

    let tcfg = cfg.train_config();
    std::fs::create_dir_all(&cfg.output_dir)?;
    let log_path = cfg.output_dir.join("train.log");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| format!("cannot open metric log {}", log_path.display()))?;

    println!(
        "training {} samples, {} classes, {} parameters",
        samples.len(),
        classes,
        model.param_count()
    );
    let first_epoch = epochs_done;
    for epoch in first_epoch..tcfg.epochs {
        if tcfg.max_steps.is_some_and(|cap| global_step >= cap) {
            break;
        }
        let stats = train_epoch(&model, &samples, &tcfg, &mut opt, epoch, &mut global_step)?;
        let line = log_line(&stats);
        print!("{line}");
        log.write_all(line.as_bytes())?;
        log.flush()?;

        epochs_done = epoch + 1;
        let ckpt = checkpoint::snapshot(&model, &opt, cfg, classes, epochs_done, global_step)?;
        ckpt.save(&cfg.output_dir.join(format!("checkpoint_{epochs_done:04}.ugn")))?;
    }

    let final_path = cfg.output_dir.join("checkpoint_final.ugn");
    checkpoint::snapshot(&model, &opt, cfg, classes, epochs_done, global_step)?
        .save(&final_path)?;
    println!("saved {final_path}", final_path = final_path.display());

    let val_dir = cfg.val_dir();
    if val_dir.is_dir() {
        let val = load_dataset(&val_dir, &palette)?;
        if !val.is_empty() {
            let cm = evaluate_samples(&model, &val, classes, &cfg.uncertainty(), cfg.seed)?;
            let line = format!("final_miou={:.6}\n", cm.miou(false)?);
            print!("{line}");
            log.write_all(line.as_bytes())?;
            log.flush()?;
        }
    }
    Ok(())
}

/// One metric-log line: `epoch=<n> loss=<f> gamma_l0=<f> … lr=<f>`.
fn log_line(stats: &EpochStats) -> String {
    let mut line = format!("epoch={} loss={:.6}", stats.epoch, stats.mean_loss);
    for (level, gamma) in stats.mean_gamma.iter().enumerate() {
        line.push_str(&format!(" gamma_l{level}={gamma:.6}"));
    }
    line.push_str(&format!(" lr={:.6}\n", stats.lr));
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_line_matches_the_documented_format() {
        let stats = EpochStats {
            epoch: 3,
            lr: 0.001,
            steps: 12,
            mean_loss: 1.25,
            mean_gamma: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        };
        assert_eq!(
            log_line(&stats),
            "epoch=3 loss=1.250000 gamma_l0=0.100000 gamma_l1=0.200000 \
             gamma_l2=0.300000 gamma_l3=0.400000 gamma_l4=0.500000 lr=0.001000\n"
        );
    }
}
