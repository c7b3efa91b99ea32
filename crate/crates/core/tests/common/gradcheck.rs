//! Central finite-difference oracle for the backward pass.

use concord::nn::{backward, cross_entropy, forward, init_params, layer_inputs, ArchitectureSpec, LOSS_FLOOR, LayerSpec, Mode, Shape3};
use concord::{ParameterVector, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub struct Case {
    pub arch: ArchitectureSpec,
    pub params: ParameterVector<f64>,
    pub batch: Tensor<f64>,
    pub labels: Vec<usize>,
    pub mode: Mode,
    pub mask_seed: u64,
}

pub struct Report {
    pub max_rel_error: f64,
    /// Gradient magnitude below which the stencil cannot resolve `TARGET`.
    pub resolution: f64,
    pub smooth: bool,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Step of the five-point stencil. Its truncation error is O(STEP^4), so the
/// step can stay large enough to keep rounding noise near 1e-12.
pub const STEP: f64 = 1e-4;
/// Target relative accuracy; fixes the denominator floor below.
pub const TARGET: f64 = 1e-4;
/// Smallest denominator ever used for the relative error.
pub const REL_FLOOR: f64 = 1e-8;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn candidate(rng: &mut ChaCha8Rng) -> Option<(ArchitectureSpec, Mode)> {
    let classes = rng.random_range(2..5);
    let arch = match rng.random_range(0..3) {
        0 => {
            let input = Shape3::new(rng.random_range(1..3), rng.random_range(5..8), rng.random_range(5..8));
            let k = rng.random_range(2..4);
            ArchitectureSpec::new(
                input,
                vec![
                    LayerSpec::Conv2d { filters: rng.random_range(1..4), kernel_h: k, kernel_w: rng.random_range(2..4) },
                    LayerSpec::MaxPool { pool_h: 2, pool_w: 2 },
                    LayerSpec::Relu,
                    LayerSpec::Dense { units: rng.random_range(2..7) },
                    LayerSpec::Relu,
                    LayerSpec::SoftmaxOutput { classes },
                ],
            )
        }
        1 => {
            let input = Shape3::new(rng.random_range(1..3), rng.random_range(5..8), rng.random_range(5..8));
            ArchitectureSpec::new(
                input,
                vec![
                    LayerSpec::Conv2d { filters: rng.random_range(1..4), kernel_h: 2, kernel_w: 2 },
                    LayerSpec::Relu,
                    LayerSpec::Conv2d { filters: rng.random_range(1..3), kernel_h: 2, kernel_w: 2 },
                    LayerSpec::MaxPool { pool_h: 2, pool_w: 3 },
                    LayerSpec::Dropout { rate: 0.3 },
                    LayerSpec::SoftmaxOutput { classes },
                ],
            )
        }
        _ => ArchitectureSpec::new(
            Shape3::flat(rng.random_range(2..12)),
            vec![
                LayerSpec::Dense { units: rng.random_range(2..10) },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.25 },
                LayerSpec::Dense { units: rng.random_range(2..8) },
                LayerSpec::Relu,
                LayerSpec::SoftmaxOutput { classes },
            ],
        ),
    }
    .ok()?;
    if arch.param_count() > 500 {
        return None;
    }
    let mode = if arch.has_dropout() && rng.random_bool(0.5) { Mode::Train } else { Mode::Eval };
    Some((arch, mode))
}

/// A random network of at most 500 parameters with a random batch.
pub fn random_network(rng: &mut ChaCha8Rng) -> Case {
    let (arch, mode) = loop {
        if let Some(found) = candidate(rng) {
            break found;
        }
    };
    let mut params = init_params::<f64>(&arch, rng.random());
    for v in params.values_mut() {
        *v += 0.1 * normal(rng);
    }
    let n = rng.random_range(1..4);
    let len = arch.input().len();
    let batch = Tensor::new(vec![n, len], (0..n * len).map(|_| normal(rng)).collect()).unwrap();
    let labels = (0..n).map(|_| rng.random_range(0..arch.classes())).collect();
    Case { arch, params, batch, labels, mode, mask_seed: rng.random() }
}

/// Mean cross-entropy computed from forward probabilities only.
pub fn loss_at(case: &Case, params: &ParameterVector<f64>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(case.mask_seed);
    let out = forward(&case.arch, params, &case.batch, case.mode, &mut rng).unwrap();
    let total: f64 = out.probs.iter().zip(&case.labels).map(|(p, &l)| cross_entropy(p, l).unwrap()).sum();
    total / case.labels.len() as f64
}

/// Which side of every ReLU each input lies on, which element wins every
/// pooling window, and whether the loss clamp is active for each sample.
/// The loss is smooth wherever this pattern is constant. Inside the clamp the
/// reported loss is flat while the gradient is that of the unclamped loss, so
/// finite differences cannot check it there.
pub fn activation_pattern(case: &Case, params: &ParameterVector<f64>) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(case.mask_seed);
    let acts = layer_inputs(&case.arch, params, &case.batch, case.mode, &mut rng).unwrap();
    let mut pattern = Vec::new();
    for (layer, x) in case.arch.layers().iter().zip(&acts) {
        match *layer {
            LayerSpec::Relu => pattern.extend(x.values().iter().map(|v| u32::from(*v > 0.0))),
            LayerSpec::MaxPool { pool_h, pool_w } => {
                let [n, c, h, w] = *x.shape() else { unreachable!() };
                let v = x.values();
                for plane in 0..n * c {
                    for oy in 0..h / pool_h {
                        for ox in 0..w / pool_w {
                            let mut best = (f64::NEG_INFINITY, 0);
                            for dy in 0..pool_h {
                                for dx in 0..pool_w {
                                    let idx = plane * h * w + (oy * pool_h + dy) * w + ox * pool_w + dx;
                                    if v[idx] > best.0 {
                                        best = (v[idx], (dy * pool_w + dx) as u32);
                                    }
                                }
                            }
                            pattern.push(best.1);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(case.mask_seed);
    let out = forward(&case.arch, params, &case.batch, case.mode, &mut rng).unwrap();
    pattern.extend(out.probs.iter().zip(&case.labels).map(|(p, &l)| u32::from(p.as_slice()[l] < LOSS_FLOOR)));
    pattern
}

/// Compares every coordinate of the backward gradient with a five-point
/// central difference. `smooth` is false when the loss clamp is active or
/// some stencil crosses a ReLU or pooling boundary; the finite difference is
/// then not a valid oracle.
pub fn check_gradient(case: &Case) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(case.mask_seed);
    let (loss, grad) = backward(&case.arch, &case.params, &case.batch, &case.labels, case.mode, &mut rng).unwrap();
    assert!((loss - loss_at(case, &case.params)).abs() < 1e-12);
    let base = activation_pattern(case, &case.params);
    // Rounding in each loss evaluation is about eps * |loss|; the stencil
    // weights sum to 18/12, divided by the step.
    let noise = 2.0 * f64::EPSILON * loss.abs().max(1.0) * 1.5 / STEP;
    let resolution = (noise / TARGET).max(REL_FLOOR);
    let mut smooth = base.iter().rev().take(case.labels.len()).all(|&clamped| clamped == 0);
    let mut probe = case.params.clone();
    let mut worst = (0.0, 0);
    for i in 0..probe.len() {
        let orig = probe.values()[i];
        let mut at = |offset: f64| {
            probe.values_mut()[i] = orig + offset * STEP;
            smooth &= activation_pattern(case, &probe) == base;
            loss_at(case, &probe)
        };
        let (m2, m1, p1, p2) = (at(-2.0), at(-1.0), at(1.0), at(2.0));
        probe.values_mut()[i] = orig;
        let numeric = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * STEP);
        let analytic = grad.values()[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(resolution);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Report { max_rel_error: worst.0, resolution, smooth, worst_index: worst.1, coordinates: probe.len() }
}

/// Draws networks until one is smooth over every stencil; returns it with its
/// report and the number of non-smooth draws that were discarded.
pub fn smooth_case(rng: &mut ChaCha8Rng) -> (Case, Report, usize) {
    let mut discarded = 0;
    loop {
        let case = random_network(rng);
        let report = check_gradient(&case);
        if report.smooth {
            return (case, report, discarded);
        }
        discarded += 1;
    }
}
