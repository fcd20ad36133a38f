//! Cross-entropy from raw logits with a validity mask.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Cross-entropy with the class axis at an arbitrary position.
///
/// `labels` holds one class index per lane (row-major order of the shape
/// with `axis` dropped); `valid` marks the lanes that enter the mean.
/// Invalid lanes contribute nothing, to the numerator or the denominator.
pub fn crossentropy_axis<T: Scalar>(
    logits: &Tensor<T>,
    axis: usize,
    labels: &[usize],
    valid: &[bool],
) -> Result<Tensor<T>> {
    if axis >= logits.rank() {
        return Err(Error::shape(
            "crossentropy",
            format!("axis {axis} out of range for shape {:?}", logits.shape()),
        ));
    }
    let classes = logits.shape()[axis];
    let lanes = logits.numel() / classes;
    if labels.len() != lanes || valid.len() != lanes {
        return Err(Error::shape(
            "crossentropy",
            format!(
                "need {lanes} labels/valid flags, got {} labels and {} flags",
                labels.len(),
                valid.len()
            ),
        ));
    }
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::domain("crossentropy", "no valid pixels"));
    }
    if let Some(pos) = (0..lanes).find(|&i| valid[i] && labels[i] >= classes) {
        return Err(Error::contract(
            "crossentropy",
            format!(
                "label {} at lane {pos} exceeds class count {classes}",
                labels[pos]
            ),
        ));
    }
    // Invalid lanes get a placeholder class 0; the mask zeroes them out.
    let picked: Vec<usize> = labels
        .iter()
        .zip(valid)
        .map(|(&l, &v)| if v { l } else { 0 })
        .collect();
    let mask: Vec<T> = valid
        .iter()
        .map(|&v| if v { T::ONE } else { T::ZERO })
        .collect();

    let lse = logits.logsumexp(axis, true)?;
    let sel = logits.gather_axis(axis, &picked)?;
    let per_lane = lse.sub(&sel)?;
    let mask_t = Tensor::from_vec(per_lane.shape(), mask)?;
    per_lane
        .mul(&mask_t)?
        .sum_all()?
        .affine(T::ONE / T::from_usize(count), T::ZERO)
}

/// Cross-entropy of `logits: [N,C,H,W]` against `labels`/`valid` of length
/// `N*H*W`: the mean over valid pixels of `logsumexp(logits) - logit_label`.
pub fn crossentropy_from_logits<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    valid: &[bool],
) -> Result<Tensor<T>> {
    if logits.rank() != 4 {
        return Err(Error::shape(
            "crossentropy",
            format!("logits must be [N,C,H,W], got {:?}", logits.shape()),
        ));
    }
    crossentropy_axis(logits, 1, labels, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_two_class_case_is_ln2() {
        let logits = Tensor::<f64>::zeros(&[1, 2, 1, 1]).unwrap();
        let loss = crossentropy_from_logits(&logits, &[0], &[true]).unwrap();
        assert!((loss.item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_is_near_zero() {
        let logits = Tensor::<f64>::from_vec(&[1, 2, 1, 1], vec![30.0, 0.0]).unwrap();
        let loss = crossentropy_from_logits(&logits, &[0], &[true]).unwrap();
        assert!(loss.item().unwrap() < 1e-12);
    }

    #[test]
    fn matches_softmax_negative_log_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let logits: Vec<f64> = (0..1 * 3 * 2 * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels = [0usize, 2, 1, 0];
        let valid = [true, true, false, true];
        let lt = Tensor::from_vec(&[1, 3, 2, 2], logits.clone()).unwrap();
        let loss = crossentropy_from_logits(&lt, &labels, &valid).unwrap();

        let mut want = 0.0;
        let mut count = 0;
        for pix in 0..4 {
            if !valid[pix] {
                continue;
            }
            let ch: Vec<f64> = (0..3).map(|c| logits[c * 4 + pix]).collect();
            let m = ch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = ch.iter().map(|v| (v - m).exp()).sum();
            let p = (ch[labels[pix]] - m).exp() / z;
            want += -p.ln();
            count += 1;
        }
        want /= count as f64;
        assert!((loss.item().unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn all_invalid_is_domain_error() {
        let logits = Tensor::<f64>::zeros(&[1, 2, 1, 2]).unwrap();
        assert!(matches!(
            crossentropy_from_logits(&logits, &[0, 1], &[false, false]),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn out_of_range_label_on_valid_pixel_errors() {
        let logits = Tensor::<f64>::zeros(&[1, 2, 1, 2]).unwrap();
        assert!(crossentropy_from_logits(&logits, &[0, 2], &[true, true]).is_err());
        // Same label is fine when the pixel is invalid.
        assert!(crossentropy_from_logits(&logits, &[0, 2], &[true, false]).is_ok());
    }

    #[test]
    fn gradient_checks_out_with_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = Tensor::<f64>::leaf(
            &[2, 3, 2, 2],
            (0..24).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let labels = [0usize, 1, 2, 0, 1, 1, 0, 2];
        let valid = [true, true, true, false, true, false, true, true];
        let err = gradient_check(
            |t| crossentropy_from_logits(t, &labels, &valid),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "crossentropy rel error {err}");
    }

    #[test]
    fn rank5_class_axis_matches_mean_of_per_sample_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let base: Vec<f64> = (0..2 * 1 * 3 * 2 * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t5 = Tensor::from_vec(&[2, 1, 3, 2, 2], base.clone()).unwrap();
        let labels4 = [0usize, 2, 1, 1];
        let valid4 = [true, false, true, true];
        let labels5: Vec<usize> = labels4.repeat(2);
        let valid5: Vec<bool> = valid4.repeat(2);
        let joint = crossentropy_axis(&t5, 2, &labels5, &valid5).unwrap();

        let mut acc = 0.0;
        for t in 0..2 {
            let slice = Tensor::from_vec(&[1, 3, 2, 2], base[t * 12..(t + 1) * 12].to_vec()).unwrap();
            acc += crossentropy_from_logits(&slice, &labels4, &valid4)
                .unwrap()
                .item()
                .unwrap();
        }
        assert!((joint.item().unwrap() - acc / 2.0).abs() < 1e-12);
    }
}
