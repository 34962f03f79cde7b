use serde::{Deserialize, Serialize};

use crate::shapecheck::Shape4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("tensor of shape {shape:?} needs {expected} values, got {got}")]
pub struct TensorShapeError {
    pub shape: Shape4,
    pub expected: usize,
    pub got: usize,
}

/// Dense (n, c, h, w) array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape4) -> Self {
        assert!(shape.iter().all(|&d| d >= 1), "tensor dimensions must be ≥ 1, got {shape:?}");
        Tensor { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Self, TensorShapeError> {
        let expected = shape.iter().product();
        if data.len() != expected || shape.contains(&0) {
            return Err(TensorShapeError { shape, expected, got: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Number of values in one sample (c·h·w).
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + h) * ws + w
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.index(n, c, h, w)]
    }

    /// Stacks single-sample tensors of identical (c, h, w) along n.
    pub fn stack<'a>(samples: impl IntoIterator<Item = &'a Tensor>) -> Option<Tensor> {
        let mut iter = samples.into_iter().peekable();
        let first = iter.peek()?.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in iter {
            if t.shape[1..] != first[1..] {
                return None;
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Some(Tensor { shape: [n, first[1], first[2], first[3]], data })
    }

    pub fn reshape(self, shape: Shape4) -> Result<Tensor, TensorShapeError> {
        Tensor::from_vec(shape, self.data)
    }

    /// Little-endian byte image of the values, used for hashing and files.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::from_vec([2, 2, 2, 3], (0..24).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(1, 0, 1, 2), 17.0);
        assert_eq!(t.sample(1)[0], 12.0);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec([0, 1, 1, 1], vec![]).is_err());
    }

    #[test]
    fn stack_concatenates() {
        let a = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec([1, 1, 1, 2], vec![3.0, 4.0]).unwrap();
        let s = Tensor::stack([&a, &b]).unwrap();
        assert_eq!(s.shape(), [2, 1, 1, 2]);
        assert_eq!(s.data(), [1.0, 2.0, 3.0, 4.0]);
        let c = Tensor::zeros([1, 2, 1, 1]);
        assert!(Tensor::stack([&a, &c]).is_none());
    }
}
