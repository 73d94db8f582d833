//! Dense row-major arrays shared by every kernel.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense N-dimensional array in row-major order.
///
/// 4-D activations are laid out `[batch, channel, height, width]` and
/// convolution kernels `[out_channel, in_channel, kh, kw]`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "all extents must be at least 1".into(),
        });
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("shape holds {len} elements but data has {}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::fill(shape, T::zero())
    }

    pub fn fill(shape: &[usize], value: T) -> Result<Self> {
        let len = validate_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = validate_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::ShapeMismatch {
                left: self.shape,
                right: shape.to_vec(),
                context: "reshape",
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    fn zip_with(&self, other: &Self, context: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
                context,
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul_elementwise(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    /// 2-D matrix product `[m, k] · [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
                context: "matmul",
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            k as isize,
            1,
            &other.data,
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        Self::from_vec(&[m, n], out)
    }

    /// Sums over `axes`, keeping them as extent-1 dimensions. An empty
    /// slice reduces over every axis.
    pub fn reduce_sum(&self, axes: &[usize]) -> Result<Self> {
        let all: Vec<usize>;
        let axes = if axes.is_empty() {
            all = (0..self.ndim()).collect();
            &all[..]
        } else {
            axes
        };
        if let Some(&bad) = axes.iter().find(|&&a| a >= self.ndim()) {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("axis {bad} out of range"),
            });
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let strides = strides_of(&self.shape);
        let out_strides = strides_of(&out_shape);
        let mut out = vec![T::zero(); out_shape.iter().product()];
        for (flat, &v) in self.data.iter().enumerate() {
            let mut rem = flat;
            let mut target = 0;
            for (d, &s) in strides.iter().enumerate() {
                let idx = rem / s;
                rem %= s;
                if out_shape[d] != 1 {
                    target += idx * out_strides[d];
                }
            }
            out[target] += v;
        }
        Self::from_vec(&out_shape, out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Index of the maximum along the last axis; ties resolve to the first.
    pub fn argmax_lastaxis(&self) -> Vec<usize> {
        let last = *self.shape.last().expect("tensors have at least one axis");
        self.data
            .chunks(last)
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
                context: "max_abs_diff",
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }

    /// Slice of the `index`-th entry along the leading axis.
    pub fn outer(&self, index: usize) -> &[T] {
        let inner = self.data.len() / self.shape[0];
        &self.data[index * inner..(index + 1) * inner]
    }

    /// Copies the given leading-axis entries into a new tensor.
    pub fn gather_outer(&self, indices: &[usize]) -> Result<Self> {
        let inner = self.data.len() / self.shape[0];
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            data.extend_from_slice(self.outer(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::from_vec(&shape, data)
    }
}

fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type T64 = Tensor<f64>;

    #[test]
    fn add_componentwise() {
        let a = T64::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = T64::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn reduce_sum_of_ones_counts_elements() {
        let t = T64::fill(&[2, 3], 1.0).unwrap();
        let s = t.reduce_sum(&[]).unwrap();
        assert_eq!(s.shape(), &[1, 1]);
        assert_eq!(s.data(), &[6.0]);
    }

    #[test]
    fn reduce_sum_along_one_axis() {
        let t = T64::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.reduce_sum(&[0]).unwrap().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(t.reduce_sum(&[1]).unwrap().data(), &[6.0, 15.0]);
    }

    #[test]
    fn matmul_identity() {
        let id = T64::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = T64::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(id.matmul(&m).unwrap(), m);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = T64::zeros(&[2, 3]).unwrap();
        let b = T64::zeros(&[3, 2]).unwrap();
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
        let msg = a.matmul(&a).unwrap_err().to_string();
        assert!(msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(T64::zeros(&[2, 0]).is_err());
        assert!(T64::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn argmax_prefers_first_of_ties() {
        let t = T64::from_vec(&[2, 3], vec![1.0, 3.0, 3.0, 0.0, -1.0, 0.0]).unwrap();
        assert_eq!(t.argmax_lastaxis(), vec![1, 0]);
    }

    proptest! {
        #[test]
        fn add_commutes(v in prop::collection::vec(-1e6f64..1e6, 1..64)) {
            let a = T64::from_vec(&[v.len()], v.clone()).unwrap();
            let b = T64::from_vec(&[v.len()], v.iter().rev().copied().collect()).unwrap();
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
        }

        #[test]
        fn reduce_sum_matches_plain_sum(v in prop::collection::vec(-1e3f64..1e3, 12)) {
            let t = T64::from_vec(&[2, 3, 2], v.clone()).unwrap();
            let total = t.reduce_sum(&[]).unwrap().data()[0];
            let plain: f64 = v.iter().sum();
            let scale = v.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
            prop_assert!((total - plain).abs() <= 1e-12 * scale);
        }
    }
}
