use serde::{Deserialize, Serialize};

use super::{AutogradError, Real};

/// Dense row-major n-dimensional array.
///
/// A scalar has an empty shape. `shape.iter().product() == data.len()` always
/// holds; every constructor checks it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, AutogradError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(AutogradError::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} holds {numel} values, got {}", data.len()),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(AutogradError::Shape {
                op: "tensor",
                detail: format!("zero-sized dimension in {shape:?}"),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self, AutogradError> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::of(v)).collect())
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self, AutogradError> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        )
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn l2_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Number of leading-axis slices (e.g. instances of a bag tensor).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Flat length of one leading-axis slice.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.rows()
    }

    pub fn row(&self, index: usize) -> &[T] {
        let n = self.row_len();
        &self.data[index * n..(index + 1) * n]
    }

    pub fn row_mut(&mut self, index: usize) -> &mut [T] {
        let n = self.row_len();
        &mut self.data[index * n..(index + 1) * n]
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self, AutogradError> {
        let first = items.first().ok_or_else(|| AutogradError::Shape {
            op: "stack",
            detail: "no tensors to stack".into(),
        })?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for (i, t) in items.iter().enumerate() {
            if t.shape != first.shape {
                return Err(AutogradError::Shape {
                    op: "stack",
                    detail: format!("item {i} has shape {:?}, expected {:?}", t.shape, first.shape),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self::from_parts(shape, data))
    }

    /// Select leading-axis rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        let mut data = Vec::with_capacity(indices.len() * self.row_len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::from_parts(shape, data)
    }
}
