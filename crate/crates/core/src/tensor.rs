//! Dense n-dimensional tensor backing all weights, activations, and gradients.

/// Element type for every tensor in the crate.
///
/// Fixed at 64-bit: the numeric oracles (finite differences, replay checks)
/// assume this precision.
pub type Scalar = f64;

/// Dense row-major tensor: a shape and a flat data buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Scalar>,
}

impl Tensor {
    /// Build from an explicit shape and buffer. Panics if they disagree;
    /// shapes come from layer constructors, not user input.
    pub fn from_vec(shape: Vec<usize>, data: Vec<Scalar>) -> Self {
        let expected: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            expected,
            "shape {:?} expects {} elements, got {}",
            shape,
            expected,
            data.len()
        );
        assert!(shape.iter().all(|&d| d >= 1), "zero extent in {shape:?}");
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self::from_vec(shape, vec![0.0; n])
    }

    pub fn full(shape: Vec<usize>, value: Scalar) -> Self {
        let n: usize = shape.iter().product();
        Self::from_vec(shape, vec![value; n])
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

    pub fn data(&self) -> &[Scalar] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Scalar] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Scalar> {
        self.data
    }

    /// Reinterpret the buffer under a new shape of equal length.
    pub fn reshape(mut self, shape: Vec<usize>) -> Self {
        let expected: usize = shape.iter().product();
        assert_eq!(self.data.len(), expected, "reshape length mismatch");
        self.shape = shape;
        self
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Scalar> {
        self.data.iter()
    }

    pub fn sum_abs(&self) -> Scalar {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += other`, elementwise. Shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Tensor, scale: Scalar) {
        assert_eq!(self.shape, other.shape, "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: Scalar) {
        for v in &mut self.data {
            *v *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let t = Tensor::from_vec(vec![2, 3], vec![0.0; 6]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.len(), 6);
    }

    #[test]
    #[should_panic]
    fn from_vec_rejects_mismatch() {
        let _ = Tensor::from_vec(vec![2, 3], vec![0.0; 5]);
    }

    #[test]
    #[should_panic]
    fn zero_extent_rejected() {
        let _ = Tensor::zeros(vec![2, 0, 3]);
    }

    #[test]
    fn add_scaled_accumulates() {
        let mut a = Tensor::zeros(vec![3]);
        let b = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]);
        a.add_scaled(&b, 0.5);
        assert_eq!(a.data(), &[0.5, 1.0, 1.5]);
    }

    #[test]
    fn sum_abs_is_l1() {
        let t = Tensor::from_vec(vec![4], vec![1.0, -2.0, 0.5, 3.5]);
        assert_eq!(t.sum_abs(), 7.0);
    }
}
