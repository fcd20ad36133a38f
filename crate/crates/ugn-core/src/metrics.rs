//! Segmentation quality metrics: confusion matrices and mean IoU.
//!
//! Counts accumulate only over valid (labeled) pixels. Intersection-over-
//! union for class `c` is `diag(c) / (row(c) + col(c) - diag(c))`; classes
//! that never appear in either prediction or ground truth have an undefined
//! IoU and are excluded from the mean by default (a flag counts them as
//! zero instead, which penalizes models for classes they never attempt).

use crate::data::palette::Palette;
use crate::error::{Error, Result};

/// A `K x K` confusion matrix over active classes; rows index ground truth,
/// columns index predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// An empty matrix over `classes` active classes.
    pub fn new(classes: usize) -> Result<ConfusionMatrix> {
        if classes == 0 {
            return Err(Error::contract(
                "ConfusionMatrix::new",
                "need at least one class",
            ));
        }
        Ok(ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        })
    }

    /// Number of active classes `K`.
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Count of pixels with ground truth `gt` predicted as `pred`.
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    /// Total number of counted pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image's worth of per-pixel predictions.
    ///
    /// The three slices must have equal length; pixels with `valid = false`
    /// are skipped, and any counted pixel whose class is out of range
    /// violates the contract.
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8], valid: &[bool]) -> Result<()> {
        const OP: &str = "ConfusionMatrix::accumulate";
        if pred.len() != gt.len() || pred.len() != valid.len() {
            return Err(Error::shape(
                OP,
                format!(
                    "length mismatch: {} predictions, {} labels, {} validity flags",
                    pred.len(),
                    gt.len(),
                    valid.len()
                ),
            ));
        }
        // Validate before mutating so a rejected call leaves no partial counts.
        for (at, ((&p, &g), &v)) in pred.iter().zip(gt).zip(valid).enumerate() {
            if v && (p as usize >= self.classes || g as usize >= self.classes) {
                return Err(Error::contract(
                    OP,
                    format!(
                        "pixel {at}: prediction {p} / label {g} outside the {} active classes \
                         (unknown labels must carry valid = false)",
                        self.classes
                    ),
                ));
            }
        }
        for ((&p, &g), &v) in pred.iter().zip(gt).zip(valid) {
            if v {
                self.counts[g as usize * self.classes + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Adds another matrix's counts; the class counts must agree.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::shape(
                "ConfusionMatrix::merge",
                format!("{} classes vs {}", self.classes, other.classes),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU; `None` marks classes absent from both predictions and
    /// ground truth, whose IoU is undefined.
    pub fn iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let inter = self.count(c, c);
                let row: u64 = (0..self.classes).map(|p| self.count(c, p)).sum();
                let col: u64 = (0..self.classes).map(|g| self.count(g, c)).sum();
                let union = row + col - inter;
                (union > 0).then(|| inter as f64 / union as f64)
            })
            .collect()
    }

    /// Mean IoU over the observed classes.
    ///
    /// Classes with undefined IoU are excluded from the mean, or counted as
    /// zero when `absent_as_zero` is set. When no class was observed at all
    /// the mean is undefined either way.
    pub fn miou(&self, absent_as_zero: bool) -> Result<f64> {
        let ious = self.iou();
        let observed: Vec<f64> = ious.iter().flatten().copied().collect();
        if observed.is_empty() {
            return Err(Error::domain(
                "ConfusionMatrix::miou",
                "no active classes observed",
            ));
        }
        let (sum, denom) = if absent_as_zero {
            (observed.iter().sum::<f64>(), ious.len())
        } else {
            (observed.iter().sum::<f64>(), observed.len())
        };
        Ok(sum / denom as f64)
    }

    /// Renders a `class,name,iou` line per class followed by `miou,<value>`.
    /// Classes with undefined IoU print `n/a`.
    pub fn report(&self, palette: &Palette) -> Result<String> {
        if palette.active_classes() != self.classes {
            return Err(Error::shape(
                "ConfusionMatrix::report",
                format!(
                    "matrix covers {} classes, palette has {} active",
                    self.classes,
                    palette.active_classes()
                ),
            ));
        }
        let mut out = String::from("class,name,iou\n");
        for (c, iou) in self.iou().into_iter().enumerate() {
            let name = palette.name(c).expect("class within palette");
            match iou {
                Some(v) => out.push_str(&format!("{c},{name},{v:.6}\n")),
                None => out.push_str(&format!("{c},{name},n/a\n")),
            }
        }
        out.push_str(&format!("miou,{:.6}\n", self.miou(false)?));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream::derive_rng;
    use rand::Rng;

    #[test]
    fn hand_checked_two_class_case() {
        let mut m = ConfusionMatrix::new(2).unwrap();
        m.accumulate(&[0, 0, 1, 1], &[0, 1, 1, 1], &[true; 4]).unwrap();
        let iou = m.iou();
        assert_eq!(iou[0], Some(0.5));
        assert_eq!(iou[1], Some(2.0 / 3.0));
        let miou = m.miou(false).unwrap();
        assert!((miou - 7.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let mut m = ConfusionMatrix::new(3).unwrap();
        m.accumulate(&[0, 1, 2, 1], &[0, 1, 2, 1], &[true; 4]).unwrap();
        assert_eq!(m.miou(false).unwrap(), 1.0);
        assert_eq!(m.miou(true).unwrap(), 1.0);
    }

    #[test]
    fn matches_a_set_based_reference_on_random_trials() {
        let mut rng = derive_rng(3, "metrics-test", &[]);
        for trial in 0..1000 {
            let k = rng.random_range(2..6usize);
            let n = rng.random_range(1..40usize);
            let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..k) as u8).collect();
            let gt: Vec<u8> = (0..n).map(|_| rng.random_range(0..k) as u8).collect();
            let valid: Vec<bool> = (0..n).map(|_| rng.random_range(0..4usize) > 0).collect();

            let mut m = ConfusionMatrix::new(k).unwrap();
            m.accumulate(&pred, &gt, &valid).unwrap();

            // Reference: count intersection and union per class by direct
            // pixel scans, no matrix involved.
            let mut expected = Vec::with_capacity(k);
            for c in 0..k as u8 {
                let inter = (0..n)
                    .filter(|&p| valid[p] && pred[p] == c && gt[p] == c)
                    .count() as f64;
                let union = (0..n)
                    .filter(|&p| valid[p] && (pred[p] == c || gt[p] == c))
                    .count() as f64;
                expected.push((union > 0.0).then(|| inter / union));
            }
            assert_eq!(m.iou(), expected, "trial {trial}");

            let observed: Vec<f64> = expected.iter().flatten().copied().collect();
            match m.miou(false) {
                Ok(miou) => {
                    let want = observed.iter().sum::<f64>() / observed.len() as f64;
                    assert!((miou - want).abs() < 1e-12, "trial {trial}");
                }
                Err(_) => assert!(observed.is_empty(), "trial {trial}"),
            }
            if !observed.is_empty() {
                let as_zero = m.miou(true).unwrap();
                let want = observed.iter().sum::<f64>() / k as f64;
                assert!((as_zero - want).abs() < 1e-12, "trial {trial}");
            }
        }
    }

    #[test]
    fn unobserved_classes_are_excluded_unless_flagged() {
        let mut m = ConfusionMatrix::new(3).unwrap();
        // Class 2 never appears on either side.
        m.accumulate(&[0, 1], &[0, 0], &[true; 2]).unwrap();
        let iou = m.iou();
        assert_eq!(iou[2], None);
        let excluded = m.miou(false).unwrap();
        let zeroed = m.miou(true).unwrap();
        assert!((excluded - (0.5 + 0.0) / 2.0).abs() < 1e-12);
        assert!((zeroed - (0.5 + 0.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_has_no_mean() {
        let mut m = ConfusionMatrix::new(4).unwrap();
        m.accumulate(&[0, 1], &[0, 1], &[false, false]).unwrap();
        let err = m.miou(false).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
        assert!(err.to_string().contains("no active classes observed"));
        assert!(m.miou(true).is_err());
    }

    #[test]
    fn merge_equals_joint_accumulation() {
        let mut rng = derive_rng(8, "metrics-merge", &[]);
        for _ in 0..50 {
            let k = rng.random_range(2..5usize);
            let make = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
                let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..k) as u8).collect();
                let gt: Vec<u8> = (0..n).map(|_| rng.random_range(0..k) as u8).collect();
                let valid: Vec<bool> = (0..n).map(|_| rng.random_range(0..3usize) > 0).collect();
                (pred, gt, valid)
            };
            let (p1, g1, v1) = make(&mut rng, 17);
            let (p2, g2, v2) = make(&mut rng, 9);

            let mut split_a = ConfusionMatrix::new(k).unwrap();
            split_a.accumulate(&p1, &g1, &v1).unwrap();
            let mut split_b = ConfusionMatrix::new(k).unwrap();
            split_b.accumulate(&p2, &g2, &v2).unwrap();
            split_a.merge(&split_b).unwrap();

            let mut joint = ConfusionMatrix::new(k).unwrap();
            joint.accumulate(&p1, &g1, &v1).unwrap();
            joint.accumulate(&p2, &g2, &v2).unwrap();
            assert_eq!(split_a, joint);
        }
    }

    #[test]
    fn miou_is_invariant_under_class_relabeling() {
        let mut rng = derive_rng(12, "metrics-perm", &[]);
        let k = 4usize;
        let n = 60usize;
        let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..k) as u8).collect();
        let gt: Vec<u8> = (0..n).map(|_| rng.random_range(0..k) as u8).collect();
        let valid = vec![true; n];
        let mut base = ConfusionMatrix::new(k).unwrap();
        base.accumulate(&pred, &gt, &valid).unwrap();
        let want = base.miou(false).unwrap();

        let perm = [2u8, 0, 3, 1];
        let pp: Vec<u8> = pred.iter().map(|&c| perm[c as usize]).collect();
        let pg: Vec<u8> = gt.iter().map(|&c| perm[c as usize]).collect();
        let mut permuted = ConfusionMatrix::new(k).unwrap();
        permuted.accumulate(&pp, &pg, &valid).unwrap();
        assert!((permuted.miou(false).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let mut m = ConfusionMatrix::new(2).unwrap();
        assert!(m.accumulate(&[0, 1], &[0], &[true, true]).is_err());
        let err = m.accumulate(&[0, 2], &[0, 0], &[true, true]).unwrap_err();
        assert!(matches!(err, Error::Contract { .. }));
        // The rejected call must not leave partial counts behind.
        assert_eq!(m.total(), 0);
        // Out-of-range entries behind valid = false are fine.
        m.accumulate(&[0, 9], &[0, 9], &[true, false]).unwrap();
        assert_eq!(m.total(), 1);
        let other = ConfusionMatrix::new(3).unwrap();
        assert!(m.merge(&other).is_err());
        assert!(ConfusionMatrix::new(0).is_err());
    }

    #[test]
    fn report_lists_classes_then_miou() {
        let palette = Palette::land_cover_subset(2).unwrap();
        let mut m = ConfusionMatrix::new(2).unwrap();
        m.accumulate(&[0, 0, 1, 1], &[0, 1, 1, 1], &[true; 4]).unwrap();
        let report = m.report(&palette).unwrap();
        let lines: Vec<&str> = report.lines().collect();
        assert_eq!(lines[0], "class,name,iou");
        assert_eq!(lines[1], "0,urban,0.500000");
        assert_eq!(lines[2], "1,agriculture,0.666667");
        assert_eq!(lines[3], "miou,0.583333");

        let wrong = Palette::land_cover_subset(3).unwrap();
        assert!(m.report(&wrong).is_err());
    }
}
