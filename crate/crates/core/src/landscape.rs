//! Linear interpolation between two trained parameter vectors.

use rayon::prelude::*;

use crate::data::LabeledDataset;
use crate::nn::{ArchitectureSpec, NnError, ParameterVector};
use crate::scalar::Scalar;
use crate::train::evaluate;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterpolationPoint {
    pub alpha: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

/// 61 evenly spaced values over [-1.5, 1.5]; 0 and 1 are hit exactly.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..61).map(|i| (i as f64 - 30.0) / 20.0).collect()
}

/// `alpha * w1 + (1 - alpha) * w2`, computed in f64. The endpoints are
/// returned bit-for-bit.
pub fn interpolate_params<T: Scalar>(
    w1: &ParameterVector<T>,
    w2: &ParameterVector<T>,
    alpha: f64,
) -> Result<ParameterVector<T>, NnError> {
    w1.check_same_layout(w2)?;
    if !alpha.is_finite() {
        return Err(NnError::InvalidArgument(format!("alpha must be finite, got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(w1.clone());
    }
    if alpha == 0.0 {
        return Ok(w2.clone());
    }
    let beta = 1.0 - alpha;
    let mut out = w1.clone();
    for (o, b) in out.values_mut().iter_mut().zip(w2.values()) {
        *o = T::of(alpha * o.as_f64() + beta * b.as_f64());
    }
    Ok(out)
}

/// Evaluates the interpolated model (eval mode) at every alpha.
pub fn interpolation_sweep<T: Scalar>(
    w1: &ParameterVector<T>,
    w2: &ParameterVector<T>,
    alphas: &[f64],
    arch: &ArchitectureSpec,
    data: &LabeledDataset<T>,
) -> Result<Vec<InterpolationPoint>, NnError> {
    if alphas.is_empty() {
        return Err(NnError::InvalidArgument("alpha grid is empty".into()));
    }
    w1.check_arch(arch)?;
    w2.check_arch(arch)?;
    alphas
        .par_iter()
        .map(|&alpha| {
            let w = interpolate_params(w1, w2, alpha)?;
            let ev = evaluate(arch, &w, data)?;
            Ok(InterpolationPoint { alpha, test_loss: ev.mean_loss, test_accuracy: ev.accuracy })
        })
        .collect()
}

/// Widest run of consecutive grid points whose accuracy is at least
/// `floor`, as `(alpha_start, alpha_end)`. Points must be sorted by alpha.
pub fn widest_band(points: &[InterpolationPoint], floor: f64) -> Option<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    let mut start: Option<f64> = None;
    for (i, p) in points.iter().enumerate() {
        if p.test_accuracy >= floor {
            let s = *start.get_or_insert(p.alpha);
            let wider = best.is_none_or(|(a, b)| p.alpha - s > b - a);
            if wider {
                best = Some((s, p.alpha));
            }
        } else {
            start = None;
        }
        debug_assert!(i == 0 || points[i - 1].alpha <= p.alpha);
    }
    best
}

pub const INTERPOLATION_HEADER: &str = "alpha,test_loss,test_accuracy";

pub fn interpolation_csv(points: &[InterpolationPoint]) -> String {
    let mut s = format!("{INTERPOLATION_HEADER}\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.alpha, p.test_loss, p.test_accuracy));
    }
    s
}
