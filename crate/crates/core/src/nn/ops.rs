use super::NnError;
use crate::scalar::Scalar;
use crate::tensor::ProbVector;

/// Probabilities below this floor are clamped before taking the logarithm,
/// which bounds the per-sample loss by `-ln(1e-12) ≈ 27.63`.
pub const LOSS_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (the maximum logit is subtracted first).
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<ProbVector<T>, NnError> {
    if logits.len() < 2 {
        return Err(NnError::InvalidInput(format!("softmax needs at least 2 logits, got {}", logits.len())));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NnError::InvalidInput("non-finite logit".into()));
    }
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs);
    Ok(ProbVector::from_softmax(probs))
}

/// In-place softmax over a row of finite logits.
pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `-ln(prob[label])`, with the probability clamped below by [`LOSS_FLOOR`].
pub fn cross_entropy<T: Scalar>(prob: &ProbVector<T>, label: usize) -> Result<T, NnError> {
    let p = prob
        .as_slice()
        .get(label)
        .ok_or(NnError::InvalidLabel { label, classes: prob.len() })?;
    Ok(clamped_nll(*p))
}

#[inline]
pub(crate) fn clamped_nll<T: Scalar>(p: T) -> T {
    -p.max(T::of(LOSS_FLOOR)).ln()
}

/// Multiplies every logit by a positive factor.
pub fn scale_logits<T: Scalar>(logits: &[T], factor: T) -> Result<Vec<T>, NnError> {
    if !(factor > T::zero()) || !factor.is_finite() {
        return Err(NnError::InvalidArgument(format!("scale factor must be positive and finite, got {factor}")));
    }
    Ok(logits.iter().map(|v| *v * factor).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOY: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

    fn assert_close(got: &[f64], want: &[f64], tol: f64) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= tol, "got {got:?}, want {want:?}");
        }
    }

    /// The published figures are four-decimal displays; 0.12925005 is shown
    /// as 0.1292, so each one must equal the rounded or truncated value.
    fn assert_displayed(got: &[f64], shown: &[f64]) {
        for (g, s) in got.iter().zip(shown) {
            let scaled = g * 1e4;
            let candidates = [scaled.round() / 1e4, scaled.floor() / 1e4];
            assert!(candidates.iter().any(|c| (c - s).abs() < 1e-12), "{g} is not displayed as {s}");
        }
    }

    #[test]
    fn toy_logits_match_published_probabilities() {
        let p = softmax(&TOY).unwrap();
        assert_displayed(p.as_slice(), &[0.0784, 0.1292, 0.2131, 0.5793]);
        assert_close(p.as_slice(), &[0.0784, 0.1292, 0.2131, 0.5793], 1e-4);
        let scaled = scale_logits(&TOY, 1.25).unwrap();
        assert_eq!(scaled, vec![0.0, 0.625, 1.25, 2.5]);
        let q = softmax(&scaled).unwrap();
        assert_displayed(q.as_slice(), &[0.0539, 0.1008, 0.1882, 0.6571]);
        assert_close(q.as_slice(), &[0.0539, 0.1008, 0.1882, 0.6571], 5e-5);
    }

    #[test]
    fn toy_losses_move_in_opposite_directions() {
        let p = softmax(&TOY).unwrap();
        let q = softmax(&scale_logits(&TOY, 1.25).unwrap()).unwrap();
        // zero-based: the "fourth" class is index 3, the "first" is index 0
        assert!((cross_entropy(&p, 3).unwrap() - 0.5460).abs() < 5e-4);
        assert!((cross_entropy(&q, 3).unwrap() - 0.4200).abs() < 5e-4);
        assert!((cross_entropy(&p, 0).unwrap() - 2.5460).abs() < 5e-4);
        assert!((cross_entropy(&q, 0).unwrap() - 2.9200).abs() < 5e-4);
    }

    #[test]
    fn constant_logits_give_uniform() {
        for c in [-3.0, 0.0, 1e3] {
            let p = softmax(&[c, c, c]).unwrap();
            assert_close(p.as_slice(), &[1.0 / 3.0; 3], 1e-15);
        }
    }

    #[test]
    fn doubling_sharpens_the_peak() {
        let before = softmax(&TOY).unwrap();
        let after = softmax(&scale_logits(&TOY, 2.0).unwrap()).unwrap();
        assert!(after.as_slice()[3] > before.as_slice()[3]);
    }

    #[test]
    fn unit_scale_is_identity() {
        assert_eq!(scale_logits(&TOY, 1.0).unwrap(), TOY.to_vec());
    }

    #[test]
    fn error_paths() {
        assert!(matches!(softmax(&[1.0f64]), Err(NnError::InvalidInput(_))));
        assert!(matches!(softmax(&[1.0, f64::NAN]), Err(NnError::InvalidInput(_))));
        assert!(matches!(softmax(&[1.0, f64::INFINITY]), Err(NnError::InvalidInput(_))));
        let p = softmax(&TOY).unwrap();
        assert_eq!(cross_entropy(&p, 4), Err(NnError::InvalidLabel { label: 4, classes: 4 }));
        assert!(matches!(scale_logits(&TOY, 0.0), Err(NnError::InvalidArgument(_))));
        assert!(matches!(scale_logits(&TOY, -1.0), Err(NnError::InvalidArgument(_))));
    }

    #[test]
    fn certain_prediction_has_zero_loss_and_floor_caps_the_rest() {
        let p = ProbVector::new(vec![0.0f64, 1.0]).unwrap();
        assert_eq!(cross_entropy(&p, 1).unwrap(), 0.0);
        let cap = cross_entropy(&p, 0).unwrap();
        assert!(cap.is_finite());
        assert!((cap + LOSS_FLOOR.ln()).abs() < 1e-12);
    }

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 2..12)
    }

    fn has_unique_max(l: &[f64]) -> bool {
        let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        l.iter().filter(|v| (m - **v).abs() < 1e-9).count() == 1
    }

    proptest! {
        #[test]
        fn softmax_is_always_a_distribution(l in logits()) {
            let p = softmax(&l).unwrap();
            let sum: f64 = p.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6);
            prop_assert!(p.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(ProbVector::new(p.as_slice().to_vec()).is_ok());
        }

        #[test]
        fn shift_invariance(l in prop::collection::vec(-50f64..50.0, 2..8), shift in -100f64..100.0) {
            let a = softmax(&l).unwrap();
            let shifted: Vec<f64> = l.iter().map(|v| v + shift).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn scaling_preserves_argmax(l in prop::collection::vec(-20f64..20.0, 2..10), lambda in 0.01f64..20.0) {
            prop_assume!(has_unique_max(&l));
            let a = softmax(&l).unwrap().argmax();
            let b = softmax(&scale_logits(&l, lambda).unwrap()).unwrap().argmax();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn upscaling_lowers_loss_on_the_argmax_label(l in prop::collection::vec(-5f64..5.0, 2..10), lambda in 1.01f64..4.0) {
            prop_assume!(has_unique_max(&l));
            let top = softmax(&l).unwrap().argmax();
            let before = cross_entropy(&softmax(&l).unwrap(), top).unwrap();
            let after = cross_entropy(&softmax(&scale_logits(&l, lambda).unwrap()).unwrap(), top).unwrap();
            prop_assert!(after < before);
        }

        // Off-argmax labels: the loss rises whenever the label's logit lies
        // below the softmax-weighted mean logit, as in the toy example.
        #[test]
        fn upscaling_raises_loss_on_low_logit_labels(l in prop::collection::vec(-5f64..5.0, 3..10), lambda in 1.01f64..4.0) {
            prop_assume!(has_unique_max(&l));
            let p = softmax(&l).unwrap();
            prop_assume!(p.as_slice()[p.argmax()] > 1.0 / l.len() as f64);
            let mean: f64 = l.iter().zip(p.as_slice()).map(|(z, q)| z * q).sum();
            let low = (0..l.len()).filter(|&i| l[i] < mean - 1e-6).min_by(|&a, &b| l[a].partial_cmp(&l[b]).unwrap());
            prop_assume!(low.is_some());
            let label = low.unwrap();
            let before = cross_entropy(&p, label).unwrap();
            let after = cross_entropy(&softmax(&scale_logits(&l, lambda).unwrap()).unwrap(), label).unwrap();
            prop_assert!(after > before);
        }
    }
}
