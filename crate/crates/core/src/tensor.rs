use crate::nn::NnError;
use crate::scalar::Scalar;

/// Dense row-major tensor with a validated shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, rejecting zero-sized dimensions, a shape/length
    /// mismatch, or non-finite entries.
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self, NnError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(NnError::Shape(format!("tensor dimensions must be positive, got {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(NnError::Shape(format!(
                "shape {shape:?} holds {expected} values but {} were given",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(NnError::InvalidInput(format!("non-finite tensor value at flat index {i}")));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self, NnError> {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n])
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, values: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self { shape, values }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Size of the leading (batch) dimension.
    pub fn outer_len(&self) -> usize {
        self.shape[0]
    }

    /// Number of values in one slice along the leading dimension.
    pub fn inner_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    /// Values of the `i`-th slice along the leading dimension.
    pub fn row(&self, i: usize) -> &[T] {
        let n = self.inner_len();
        &self.values[i * n..(i + 1) * n]
    }

    /// New tensor made of the given leading-dimension slices, in order.
    pub fn gather_rows(&self, rows: &[usize]) -> Self {
        let n = self.inner_len();
        let mut values = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        let mut shape = self.shape.clone();
        shape[0] = rows.len();
        Self { shape, values }
    }
}

/// Output of a softmax layer: non-negative entries summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector<T> {
    probs: Vec<T>,
}

/// Allowed deviation of a probability vector's sum from one.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

impl<T: Scalar> ProbVector<T> {
    pub fn new(probs: Vec<T>) -> Result<Self, NnError> {
        if probs.is_empty() {
            return Err(NnError::InvalidInput("probability vector is empty".into()));
        }
        if probs.iter().any(|p| !(*p >= T::zero() && *p <= T::one())) {
            return Err(NnError::InvalidInput("probability outside [0, 1]".into()));
        }
        let sum: f64 = probs.iter().map(|p| p.as_f64()).sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(NnError::InvalidInput(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    pub(crate) fn from_softmax(probs: Vec<T>) -> Self {
        Self { probs }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

impl<T> AsRef<[T]> for ProbVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.probs
    }
}

/// Lowest index of the maximum entry. Panics on an empty slice.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    assert!(!values.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]), Err(NnError::Shape(_))));
        assert!(matches!(Tensor::<f64>::new(vec![0, 3], vec![]), Err(NnError::Shape(_))));
    }

    #[test]
    fn non_finite_values_rejected() {
        let r = Tensor::<f32>::new(vec![2], vec![1.0, f32::NAN]);
        assert!(matches!(r, Err(NnError::InvalidInput(_))));
    }

    #[test]
    fn gather_rows_copies_slices() {
        let t = Tensor::<f64>::new(vec![3, 2], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let g = t.gather_rows(&[2, 0]);
        assert_eq!(g.shape(), &[2, 2]);
        assert_eq!(g.values(), &[4., 5., 0., 1.]);
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![0.25f64, 0.75]).is_ok());
        assert!(ProbVector::new(vec![0.5f64, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1f64, 1.1]).is_err());
        assert!(ProbVector::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }
}
