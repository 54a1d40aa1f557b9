//! Dense tensors with an optional gradient slot.

use num_traits::Float;

/// Element type for network math. Training runs in `f32` (matching the
/// checkpoint encoding bit-for-bit); verification (gradient checking) runs
/// in `f64`.
pub trait Scalar:
    Float + num_traits::NumAssignOps + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// N-dimensional array in row-major order with an optional gradient buffer
/// of the same shape. Images are stored height-width-channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); len], grad: None }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Tensor { shape: shape.to_vec(), data, grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// The gradient buffer, allocated (zeroed) on first access.
    pub fn grad_mut(&mut self) -> &mut [T] {
        if self.grad.is_none() {
            self.grad = Some(vec![T::zero(); self.data.len()]);
        }
        self.grad.as_mut().unwrap().as_mut_slice()
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            for v in g.iter_mut() {
                *v = T::zero();
            }
        }
    }

    /// Reinterpret with a new shape of equal length.
    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape.to_vec();
        self
    }

    /// Convert element type; drops any gradient.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
            grad: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_slot_is_lazy_and_zeroed() {
        let mut t: Tensor<f64> = Tensor::zeros(&[2, 3]);
        assert!(t.grad().is_none());
        t.grad_mut()[4] = 2.5;
        assert_eq!(t.grad().unwrap()[4], 2.5);
        t.zero_grad();
        assert!(t.grad().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    #[should_panic]
    fn from_vec_rejects_shape_mismatch() {
        let _ = Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]);
    }
}
