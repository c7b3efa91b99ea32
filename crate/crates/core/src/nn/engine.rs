use rand::Rng;

use super::kernels::{dense_backward, dense_forward, maxpool_backward, maxpool_forward, ConvGeom};
use super::ops::{clamped_nll, softmax_in_place};
use super::{ArchitectureSpec, LayerSpec, NnError, ParameterVector, SegmentKind};
use crate::scalar::Scalar;
use crate::tensor::{ProbVector, Tensor};

/// Dropout is active only in `Train`; `Eval` is a plain pass-through because
/// retained activations are rescaled at train time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    /// Pre-softmax outputs, shape `(batch, classes)`.
    pub logits: Tensor<T>,
    pub probs: Vec<ProbVector<T>>,
}

/// Per-layer state recorded for the backward pass.
enum Aux<T> {
    None,
    DropMask(Vec<T>),
    PoolWinners(Vec<u32>),
}

struct Pass<T> {
    /// `acts[i]` is the input of layer `i`; the final entry holds the logits.
    acts: Vec<Vec<T>>,
    aux: Vec<Aux<T>>,
}

fn param_offsets(arch: &ArchitectureSpec) -> Vec<Option<(usize, usize)>> {
    let mut offsets = vec![None; arch.layers().len()];
    let layout = arch.layout();
    for w in layout.iter().filter(|s| s.kind == SegmentKind::Weights) {
        let b = layout
            .iter()
            .find(|s| s.layer == w.layer && s.kind == SegmentKind::Bias)
            .expect("every weight segment has a bias");
        offsets[w.layer] = Some((w.offset, b.offset));
    }
    offsets
}

fn check_batch<T: Scalar>(arch: &ArchitectureSpec, batch: &Tensor<T>) -> Result<usize, NnError> {
    if batch.shape().len() < 2 || batch.inner_len() != arch.input().len() {
        return Err(NnError::Shape(format!(
            "batch of shape {:?} does not match network input {}",
            batch.shape(),
            arch.input()
        )));
    }
    Ok(batch.outer_len())
}

fn run<T: Scalar, R: Rng + ?Sized>(
    arch: &ArchitectureSpec,
    params: &ParameterVector<T>,
    input: &[T],
    batch: usize,
    mode: Mode,
    rng: &mut R,
    keep: bool,
) -> Pass<T> {
    let offsets = param_offsets(arch);
    let p = params.values();
    let mut acts = Vec::with_capacity(if keep { arch.layers().len() + 1 } else { 1 });
    let mut aux = Vec::with_capacity(arch.layers().len());
    let mut current = input.to_vec();
    for (i, layer) in arch.layers().iter().enumerate() {
        let in_shape = arch.shape_at(i);
        let out_len = arch.shape_at(i + 1).len() * batch;
        let (next, extra) = match *layer {
            LayerSpec::Conv2d { filters, kernel_h, kernel_w } => {
                let (wo, bo) = offsets[i].unwrap();
                let geom = ConvGeom { input: in_shape, filters, kernel_h, kernel_w };
                let mut out = vec![T::zero(); out_len];
                geom.forward(&current, batch, &p[wo..bo], &p[bo..bo + filters], &mut out);
                (out, Aux::None)
            }
            LayerSpec::MaxPool { pool_h, pool_w } => {
                let mut out = vec![T::zero(); out_len];
                let mut winners = vec![0u32; out_len];
                maxpool_forward(&current, batch, in_shape, pool_h, pool_w, &mut out, &mut winners);
                (out, if keep { Aux::PoolWinners(winners) } else { Aux::None })
            }
            LayerSpec::Dense { units: width } | LayerSpec::SoftmaxOutput { classes: width } => {
                let (wo, bo) = offsets[i].unwrap();
                let mut out = vec![T::zero(); out_len];
                dense_forward(&current, batch, in_shape.len(), &p[wo..bo], &p[bo..bo + width], &mut out);
                (out, Aux::None)
            }
            LayerSpec::Relu => {
                let out = current.iter().map(|v| v.max(T::zero())).collect();
                (out, Aux::None)
            }
            LayerSpec::Dropout { rate } => {
                if mode == Mode::Eval || rate == 0.0 {
                    (current.clone(), Aux::None)
                } else {
                    let keep_scale = T::of(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..current.len())
                        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep_scale })
                        .collect();
                    let out = current.iter().zip(&mask).map(|(v, m)| *v * *m).collect();
                    (out, Aux::DropMask(mask))
                }
            }
        };
        if keep {
            acts.push(std::mem::replace(&mut current, next));
        } else {
            current = next;
        }
        aux.push(extra);
    }
    acts.push(current);
    Pass { acts, aux }
}

fn softmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<ProbVector<T>> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let mut probs = row.to_vec();
            softmax_in_place(&mut probs);
            ProbVector::from_softmax(probs)
        })
        .collect()
}

/// Runs the network on a batch whose leading dimension indexes samples.
///
/// `rng` is consulted only for dropout masks in [`Mode::Train`].
pub fn forward<T: Scalar, R: Rng + ?Sized>(
    arch: &ArchitectureSpec,
    params: &ParameterVector<T>,
    batch: &Tensor<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardOutput<T>, NnError> {
    params.check_arch(arch)?;
    let n = check_batch(arch, batch)?;
    let pass = run(arch, params, batch.values(), n, mode, rng, false);
    let classes = arch.classes();
    let logits = pass.acts.into_iter().next_back().unwrap();
    let probs = softmax_rows(&logits, classes);
    Ok(ForwardOutput { logits: Tensor::from_parts_unchecked(vec![n, classes], logits), probs })
}

/// Input of every layer followed by the logits, each shaped
/// `(batch, channels, height, width)`. Dropout behaves as in [`forward`].
pub fn layer_inputs<T: Scalar, R: Rng + ?Sized>(
    arch: &ArchitectureSpec,
    params: &ParameterVector<T>,
    batch: &Tensor<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<Tensor<T>>, NnError> {
    params.check_arch(arch)?;
    let n = check_batch(arch, batch)?;
    let pass = run(arch, params, batch.values(), n, mode, rng, true);
    Ok(pass
        .acts
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let s = arch.shape_at(i);
            Tensor::from_parts_unchecked(vec![n, s.channels, s.height, s.width], a)
        })
        .collect())
}

/// Mean cross-entropy over the batch and its gradient with respect to every parameter.
///
/// The gradient is that of the unclamped loss; the clamp in [`super::cross_entropy`]
/// only bites for probabilities below `1e-12`.
pub fn backward<T: Scalar, R: Rng + ?Sized>(
    arch: &ArchitectureSpec,
    params: &ParameterVector<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    mode: Mode,
    rng: &mut R,
) -> Result<(T, ParameterVector<T>), NnError> {
    params.check_arch(arch)?;
    let n = check_batch(arch, batch)?;
    if labels.len() != n {
        return Err(NnError::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    let classes = arch.classes();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::InvalidLabel { label, classes });
    }

    let pass = run(arch, params, batch.values(), n, mode, rng, true);
    let scale = T::one() / T::of(n as f64);
    let mut loss = T::zero();
    let mut delta = pass.acts.last().unwrap().clone();
    for (row, &label) in delta.chunks_exact_mut(classes).zip(labels) {
        softmax_in_place(row);
        loss += clamped_nll(row[label]);
        row[label] -= T::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    loss *= scale;

    let offsets = param_offsets(arch);
    let p = params.values();
    let mut grad = ParameterVector::<T>::zeros(arch);
    let g = grad.values_mut();
    for (i, layer) in arch.layers().iter().enumerate().rev() {
        let x = &pass.acts[i];
        let in_shape = arch.shape_at(i);
        let need_dx = i > 0;
        match *layer {
            LayerSpec::Conv2d { filters, kernel_h, kernel_w } => {
                let (wo, bo) = offsets[i].unwrap();
                let geom = ConvGeom { input: in_shape, filters, kernel_h, kernel_w };
                let (gw, gb) = g[wo..bo + filters].split_at_mut(bo - wo);
                let mut dx = if need_dx { vec![T::zero(); x.len()] } else { Vec::new() };
                geom.backward(x, &delta, n, &p[wo..bo], gw, gb, need_dx.then_some(dx.as_mut_slice()));
                delta = dx;
            }
            LayerSpec::Dense { units: width } | LayerSpec::SoftmaxOutput { classes: width } => {
                let (wo, bo) = offsets[i].unwrap();
                let (gw, gb) = g[wo..bo + width].split_at_mut(bo - wo);
                let mut dx = if need_dx { vec![T::zero(); x.len()] } else { Vec::new() };
                dense_backward(x, &delta, n, in_shape.len(), &p[wo..bo], gw, gb, need_dx.then_some(dx.as_mut_slice()));
                delta = dx;
            }
            LayerSpec::MaxPool { .. } => {
                let Aux::PoolWinners(winners) = &pass.aux[i] else { unreachable!() };
                let mut dx = vec![T::zero(); x.len()];
                maxpool_backward(&delta, winners, n, in_shape.len(), &mut dx);
                delta = dx;
            }
            LayerSpec::Relu => {
                for (d, v) in delta.iter_mut().zip(x) {
                    if *v <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            LayerSpec::Dropout { .. } => {
                if let Aux::DropMask(mask) = &pass.aux[i] {
                    for (d, m) in delta.iter_mut().zip(mask) {
                        *d *= *m;
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}
