//! Checkpoint container: every tensor a run needs to continue, in one file.
//!
//! The layout is deliberately dumb — magic `UGN1`, an entry count, then
//! `(name, extents, raw 32-bit little-endian values)` records — so a hex
//! dump plus this comment is enough to recover the contents. A snapshot
//! holds the model parameters, the batchnorm running statistics, the
//! optimizer slots and step counter, the training progress counters, and a
//! snapshot of the settings that shaped those tensors; restore refuses to
//! load a checkpoint whose settings disagree with the current run.
//!
//! Counters are 64-bit and would not survive an f32 round trip, so they are
//! split into four 16-bit halves (each exactly representable) and stored as
//! a `[4]` entry, least significant half first.

use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ugn_core::net::UgnModel;
use ugn_core::{GammaClassMode, WnAdam};

use crate::config::RunConfig;

/// File magic, also the format version.
const MAGIC: &[u8; 4] = b"UGN1";

/// One named tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub extents: Vec<usize>,
    pub values: Vec<f32>,
}

/// An ordered collection of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new() -> Checkpoint {
        Checkpoint::default()
    }

    /// Appends an entry; names must be unique and the value count must
    /// match the extents.
    pub fn push(
        &mut self,
        name: impl Into<String>,
        extents: Vec<usize>,
        values: Vec<f32>,
    ) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            bail!("checkpoint entry `{name}` pushed twice");
        }
        let numel: usize = extents.iter().product();
        if values.len() != numel {
            bail!(
                "checkpoint entry `{name}`: extents {extents:?} call for {numel} \
                 values, got {}",
                values.len()
            );
        }
        self.entries.push(Entry {
            name,
            extents,
            values,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Serializes to the `UGN1` wire format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        fn u32_of(what: &str, v: usize) -> Result<u32> {
            u32::try_from(v).map_err(|_| anyhow!("checkpoint {what} {v} exceeds u32"))
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&u32_of("entry count", self.entries.len())?.to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&u32_of("name length", e.name.len())?.to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&u32_of("rank", e.extents.len())?.to_le_bytes());
            for &x in &e.extents {
                out.extend_from_slice(&u32_of("extent", x)?.to_le_bytes());
            }
            for &v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses the `UGN1` wire format, checking structure and uniqueness.
    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != MAGIC {
            bail!("not a UGN1 checkpoint (magic {magic:02x?})");
        }
        let count = cur.u32("entry count")?;
        let mut ckpt = Checkpoint::new();
        let mut seen = BTreeSet::new();
        for i in 0..count {
            let ctx = format!("entry {i}");
            let name_len = cur.u32(&format!("{ctx} name length"))? as usize;
            let name = std::str::from_utf8(cur.take(name_len, &format!("{ctx} name"))?)
                .with_context(|| format!("{ctx}: name is not UTF-8"))?
                .to_string();
            if !seen.insert(name.clone()) {
                bail!("duplicate checkpoint entry `{name}`");
            }
            let rank = cur.u32(&format!("{ctx} rank"))? as usize;
            let mut extents = Vec::with_capacity(rank);
            for _ in 0..rank {
                extents.push(cur.u32(&format!("{ctx} extent"))? as usize);
            }
            let numel: usize = extents.iter().product();
            let raw = cur.take(4 * numel, &format!("{ctx} values"))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ckpt.entries.push(Entry {
                name,
                extents,
                values,
            });
        }
        if cur.pos != bytes.len() {
            bail!(
                "checkpoint has {} trailing bytes after the last entry",
                bytes.len() - cur.pos
            );
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes)
            .with_context(|| format!("cannot write checkpoint {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot read checkpoint {}", path.display()))?;
        Checkpoint::from_bytes(&bytes)
            .with_context(|| format!("corrupt checkpoint {}", path.display()))
    }
}

/// Bounds-checked reader over the wire bytes.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            anyhow!(
                "checkpoint truncated reading {what} ({n} bytes at offset {})",
                self.pos
            )
        })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Splits a counter into four 16-bit halves, least significant first; every
/// half is exactly representable as f32.
fn encode_u64(v: u64) -> Vec<f32> {
    (0..4).map(|i| ((v >> (16 * i)) & 0xFFFF) as f32).collect()
}

fn decode_u64(entry: &Entry) -> Result<u64> {
    if entry.values.len() != 4 {
        bail!(
            "checkpoint entry `{}` should hold 4 counter halves, holds {}",
            entry.name,
            entry.values.len()
        );
    }
    let mut out = 0u64;
    for (i, &v) in entry.values.iter().enumerate() {
        if !(v.is_finite() && v.fract() == 0.0 && (0.0..=65535.0).contains(&v)) {
            bail!(
                "checkpoint entry `{}` half {i} is {v}, not a 16-bit integer",
                entry.name
            );
        }
        out |= (v as u64) << (16 * i);
    }
    Ok(out)
}

/// The settings a checkpoint pins: everything that shapes the stored
/// tensors or their meaning. Restore requires an exact match.
fn config_entries(cfg: &RunConfig, classes: usize) -> Vec<(&'static str, Vec<f32>)> {
    let gamma_mode = match cfg.gamma_mode {
        GammaClassMode::Winner => 0.0,
        GammaClassMode::Label => 1.0,
    };
    vec![
        ("cfg/classes", vec![classes as f32]),
        (
            "cfg/widths",
            cfg.widths.iter().map(|&w| w as f32).collect(),
        ),
        ("cfg/gate_width", vec![cfg.gate_width as f32]),
        ("cfg/bn_momentum", vec![cfg.bn_momentum as f32]),
        ("cfg/bn_eps", vec![cfg.bn_eps as f32]),
        ("cfg/log_var_bias", vec![cfg.log_var_bias as f32]),
        ("cfg/beta1", vec![cfg.beta1 as f32]),
        ("cfg/samples", vec![cfg.samples as f32]),
        ("cfg/gamma_mode", vec![gamma_mode]),
        ("cfg/clamp_fusion", vec![if cfg.clamp_fusion { 1.0 } else { 0.0 }]),
    ]
}

/// Captures the full training state after `epochs_done` finished epochs and
/// `global_step` optimizer steps.
pub fn snapshot(
    model: &UgnModel<f32>,
    opt: &WnAdam<f32>,
    cfg: &RunConfig,
    classes: usize,
    epochs_done: usize,
    global_step: usize,
) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::new();
    for p in model.parameters() {
        ckpt.push(format!("param/{}", p.name()), p.shape(), p.data())?;
    }
    for (name, buf) in model.buffers() {
        let values = buf.borrow().clone();
        ckpt.push(format!("buffer/{name}"), vec![values.len()], values)?;
    }
    // Parameters the optimizer has not touched yet get the slot's initial
    // state, so a restored optimizer behaves exactly like a fresh one.
    for p in model.parameters() {
        let n = p.numel();
        let (m, b) = match opt.slot(p.name()) {
            Some(slot) => (slot.m.clone(), slot.b.clone()),
            None => (vec![0.0; n], vec![1.0; n]),
        };
        ckpt.push(format!("opt/m/{}", p.name()), vec![n], m)?;
        ckpt.push(format!("opt/b/{}", p.name()), vec![n], b)?;
    }
    ckpt.push("opt/steps", vec![4], encode_u64(opt.steps()))?;
    ckpt.push("state/epochs", vec![1], vec![epochs_done as f32])?;
    ckpt.push("state/global_step", vec![4], encode_u64(global_step as u64))?;
    for (name, values) in config_entries(cfg, classes) {
        let len = values.len();
        ckpt.push(name, vec![len], values)?;
    }
    Ok(ckpt)
}

/// Loads a snapshot back into a freshly built model and optimizer,
/// returning `(epochs_done, global_step)`.
///
/// The checkpoint's config snapshot must match the current settings
/// exactly; a disagreement means the stored tensors belong to a different
/// model and is reported as an error naming the offending key.
pub fn restore(
    ckpt: &Checkpoint,
    model: &UgnModel<f32>,
    opt: &mut WnAdam<f32>,
    cfg: &RunConfig,
    classes: usize,
) -> Result<(usize, usize)> {
    for (name, expected) in config_entries(cfg, classes) {
        let entry = required(ckpt, name)?;
        if entry.values != expected {
            bail!(
                "checkpoint `{name}` is {:?}, but the current run uses {expected:?}; \
                 refusing to mix settings",
                entry.values
            );
        }
    }
    for p in model.parameters() {
        let entry = required(ckpt, &format!("param/{}", p.name()))?;
        if entry.extents != p.shape() {
            bail!(
                "checkpoint `{}` has extents {:?}, model expects {:?}",
                entry.name,
                entry.extents,
                p.shape()
            );
        }
        p.set_data(entry.values.clone())
            .map_err(|e| anyhow!("restoring `{}`: {e}", entry.name))?;
    }
    for (name, buf) in model.buffers() {
        let entry = required(ckpt, &format!("buffer/{name}"))?;
        let mut dst = buf.borrow_mut();
        if entry.values.len() != dst.len() {
            bail!(
                "checkpoint `{}` holds {} values, model expects {}",
                entry.name,
                entry.values.len(),
                dst.len()
            );
        }
        dst.copy_from_slice(&entry.values);
    }
    for p in model.parameters() {
        let m = required(ckpt, &format!("opt/m/{}", p.name()))?;
        let b = required(ckpt, &format!("opt/b/{}", p.name()))?;
        opt.restore_slot(p.name(), m.values.clone(), b.values.clone())
            .map_err(|e| anyhow!("restoring optimizer slot `{}`: {e}", p.name()))?;
    }
    opt.restore_steps(decode_u64(required(ckpt, "opt/steps")?)?);
    let epochs_entry = required(ckpt, "state/epochs")?;
    let epochs = match epochs_entry.values.as_slice() {
        [v] if v.is_finite() && v.fract() == 0.0 && *v >= 0.0 => *v as usize,
        other => bail!("checkpoint `state/epochs` is {other:?}, expected one whole number"),
    };
    let global_step = decode_u64(required(ckpt, "state/global_step")?)? as usize;
    Ok((epochs, global_step))
}

fn required<'a>(ckpt: &'a Checkpoint, name: &str) -> Result<&'a Entry> {
    ckpt.get(name)
        .ok_or_else(|| anyhow!("checkpoint is missing entry `{name}`"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ugn_core::derive_rng;

    fn tiny_model(seed: u64) -> (UgnModel<f32>, RunConfig) {
        let cfg = RunConfig {
            widths: [4, 4, 4, 4, 4],
            gate_width: 4,
            classes: 2,
            ..RunConfig::default()
        };
        let model = UgnModel::new(&cfg.model_config(2), &mut derive_rng(seed, "init", &[]))
            .unwrap();
        (model, cfg)
    }

    #[test]
    fn wire_format_round_trips_byte_identically() {
        let mut ckpt = Checkpoint::new();
        ckpt.push("a/b", vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, f32::MIN, f32::MAX])
            .unwrap();
        ckpt.push("c", vec![1], vec![42.0]).unwrap();
        ckpt.push("scalarish", vec![], vec![7.0]).unwrap();
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn duplicate_names_and_bad_lengths_are_rejected() {
        let mut ckpt = Checkpoint::new();
        ckpt.push("x", vec![1], vec![1.0]).unwrap();
        assert!(ckpt.push("x", vec![1], vec![2.0]).is_err());
        assert!(ckpt.push("y", vec![2], vec![1.0]).is_err());
    }

    #[test]
    fn truncated_and_foreign_bytes_are_rejected() {
        let mut ckpt = Checkpoint::new();
        ckpt.push("x", vec![2], vec![1.0, 2.0]).unwrap();
        let bytes = ckpt.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"PNG0....").is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(Checkpoint::from_bytes(&trailing).is_err());
    }

    #[test]
    fn counter_halves_round_trip_large_values() {
        for v in [0u64, 1, 65535, 65536, u32::MAX as u64 + 7, u64::MAX] {
            let entry = Entry {
                name: "t".into(),
                extents: vec![4],
                values: encode_u64(v),
            };
            assert_eq!(decode_u64(&entry).unwrap(), v);
        }
    }

    #[test]
    fn snapshot_restore_reproduces_model_and_optimizer_state() {
        let (model, cfg) = tiny_model(9);
        let mut opt = WnAdam::new(cfg.beta1).unwrap();
        let stem = model.parameter("stem.conv.weight").unwrap();
        opt.restore_slot(stem.name(), vec![0.5; stem.numel()], vec![2.0; stem.numel()])
            .unwrap();
        opt.restore_steps(70000);
        let ckpt = snapshot(&model, &opt, &cfg, 2, 3, 70001).unwrap();

        let (fresh, _) = tiny_model(1234);
        let mut fresh_opt = WnAdam::new(cfg.beta1).unwrap();
        let (epochs, step) = restore(&ckpt, &fresh, &mut fresh_opt, &cfg, 2).unwrap();
        assert_eq!((epochs, step), (3, 70001));
        assert_eq!(fresh_opt.steps(), 70000);
        for (p, q) in model.parameters().iter().zip(fresh.parameters().iter()) {
            assert_eq!(p.name(), q.name());
            assert_eq!(p.data(), q.data());
        }
        let slot = fresh_opt.slot("stem.conv.weight").unwrap();
        assert!(slot.m.iter().all(|&v| v == 0.5));
        assert!(slot.b.iter().all(|&v| v == 2.0));

        // Untouched parameters restore to the optimizer's initial state.
        let other = fresh.parameters();
        let untouched = other.iter().find(|p| p.name() != "stem.conv.weight").unwrap();
        let slot = fresh_opt.slot(untouched.name()).unwrap();
        assert!(slot.m.iter().all(|&v| v == 0.0));
        assert!(slot.b.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn restore_rejects_mismatched_settings() {
        let (model, cfg) = tiny_model(9);
        let opt = WnAdam::new(cfg.beta1).unwrap();
        let ckpt = snapshot(&model, &opt, &cfg, 2, 0, 0).unwrap();

        let mut other = cfg.clone();
        other.samples = 99;
        let mut fresh_opt = WnAdam::new(cfg.beta1).unwrap();
        let err = restore(&ckpt, &model, &mut fresh_opt, &other, 2)
            .unwrap_err()
            .to_string();
        assert!(err.contains("cfg/samples"), "{err}");

        let err = restore(&ckpt, &model, &mut fresh_opt, &cfg, 3)
            .unwrap_err()
            .to_string();
        assert!(err.contains("cfg/classes"), "{err}");
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (model, cfg) = tiny_model(5);
        let opt = WnAdam::new(cfg.beta1).unwrap();
        let ckpt = snapshot(&model, &opt, &cfg, 2, 1, 16).unwrap();
        let a = dir.path().join("a.ugn");
        let b = dir.path().join("b.ugn");
        ckpt.save(&a).unwrap();
        Checkpoint::load(&a).unwrap().save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = Checkpoint::load(&dir.path().join("absent.ugn")).unwrap_err();
        assert!(err.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some()));
    }
}
