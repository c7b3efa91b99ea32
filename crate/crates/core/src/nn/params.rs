use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchitectureSpec, LayerSpec, NnError};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    Weights,
    Bias,
}

/// One contiguous parameter tensor inside a [`ParameterVector`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Segment {
    /// Index of the owning layer in the architecture.
    pub layer: usize,
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

/// Flat vector of every weight and bias of a network, plus the table that
/// maps segments back to layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector<T> {
    values: Vec<T>,
    layout: Vec<Segment>,
}

impl<T: Scalar> ParameterVector<T> {
    /// Validates that the segments tile `values` exactly.
    pub fn new(values: Vec<T>, layout: Vec<Segment>) -> Result<Self, NnError> {
        let mut offset = 0;
        for (i, s) in layout.iter().enumerate() {
            if s.offset != offset || s.len != s.shape.iter().product::<usize>() {
                return Err(NnError::Layout(format!("segment {i} is not contiguous or has inconsistent length")));
            }
            offset += s.len;
        }
        if offset != values.len() {
            return Err(NnError::Layout(format!("layout covers {offset} values but vector has {}", values.len())));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        Self { values: vec![T::zero(); arch.param_count()], layout: arch.layout() }
    }

    pub fn from_values(arch: &ArchitectureSpec, values: Vec<T>) -> Result<Self, NnError> {
        Self::new(values, arch.layout())
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn fits(&self, arch: &ArchitectureSpec) -> bool {
        self.layout == arch.layout()
    }

    pub(crate) fn check_arch(&self, arch: &ArchitectureSpec) -> Result<(), NnError> {
        if self.fits(arch) {
            Ok(())
        } else {
            Err(NnError::Layout(format!("parameters do not match architecture {arch}")))
        }
    }

    pub(crate) fn check_same_layout(&self, other: &Self) -> Result<(), NnError> {
        if self.layout == other.layout {
            Ok(())
        } else {
            Err(NnError::Layout("parameter vectors have different layouts".into()))
        }
    }

    /// Euclidean norm, accumulated in `f64`.
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
    }

    /// `self <- self - learning_rate * gradient`.
    pub fn apply_step(&mut self, gradient: &Self, learning_rate: T) -> Result<(), NnError> {
        self.check_same_layout(gradient)?;
        for (p, g) in self.values.iter_mut().zip(&gradient.values) {
            *p -= learning_rate * *g;
        }
        Ok(())
    }

    /// Converts to another precision, keeping the layout.
    pub fn cast<U: Scalar>(&self) -> ParameterVector<U> {
        ParameterVector { values: self.values.iter().map(|v| U::of(v.as_f64())).collect(), layout: self.layout.clone() }
    }
}

/// Plain gradient-descent update, returning a new vector.
pub fn sgd_step<T: Scalar>(
    params: &ParameterVector<T>,
    gradient: &ParameterVector<T>,
    learning_rate: T,
) -> Result<ParameterVector<T>, NnError> {
    let mut next = params.clone();
    next.apply_step(gradient, learning_rate)?;
    Ok(next)
}

/// Fan-in scaled uniform initialisation: weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
/// biases zero. Values are drawn in `f64` so both precisions see the same numbers.
pub fn init_params<T: Scalar>(arch: &ArchitectureSpec, seed: u64) -> ParameterVector<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterVector::<T>::zeros(arch);
    for segment in arch.layout() {
        if segment.kind != SegmentKind::Weights {
            continue;
        }
        let fan_in = match arch.layers()[segment.layer] {
            LayerSpec::Conv2d { .. } => segment.shape[1..].iter().product::<usize>(),
            _ => segment.shape[1],
        };
        let limit = (6.0 / fan_in as f64).sqrt();
        for v in &mut params.values[segment.offset..segment.offset + segment.len] {
            *v = T::of(rng.random_range(-limit..limit));
        }
    }
    params
}
