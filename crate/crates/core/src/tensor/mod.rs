//! Dense NCHW tensors and the forward/backward numeric kernels.

mod activation;
mod batchnorm;
mod conv;
mod gemm;
mod layout;
mod pool;
mod tconv;

use std::fmt;

use crate::error::{Error, Result};

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, SIGMOID_CLAMP};
pub use batchnorm::{
    batch_norm, batch_norm_backward, BatchNormCache, BatchNormMode, BatchNormOutput,
    BN_EPSILON, BN_MOMENTUM,
};
pub use conv::{conv2d, conv2d_backward, conv2d_direct, Conv2dGrads, Conv2dSpec};
pub use layout::{crop, crop_backward, pad_replicate, pad_replicate_backward};
pub use pool::{avg_pool2d, avg_pool2d_backward, max_pool2d, max_pool2d_backward, Pool2dSpec, PoolKind};
pub use tconv::{
    transpose_conv2d, transpose_conv2d_backward, TransposeConv2dGrads, TransposeConv2dSpec,
};

/// Scalar storage type of a [`Tensor`].
///
/// Kernels do their arithmetic in `f64` and convert on load/store, so an
/// element only needs lossless-enough conversions. `f32` is the working
/// precision; `f64` exists for the gradient checker's shadow mode.
pub trait Element: Copy + Default + PartialOrd + Send + Sync + fmt::Debug + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Extents of a 4-D tensor: batch, channels, rows, columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline(always)]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major (N, C, H, W) tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Element = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_dims(&shape)?;
        if data.len() != shape.len() {
            return Err(Error::dim(
                "data",
                format!("{} values for shape {shape} (expected {})", data.len(), shape.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// # Panics
    /// If any extent is zero.
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::default())
    }

    /// # Panics
    /// If any extent is zero.
    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        check_dims(&shape).expect("tensor extents must be positive");
        Tensor {
            data: vec![value; shape.len()],
            shape,
        }
    }

    /// Builds a tensor by evaluating `f(n, c, y, x)` in storage order.
    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let shape = shape.into();
        check_dims(&shape).expect("tensor extents must be positive");
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// Rank-1 style tensor of shape `[len, 1, 1, 1]`, used for per-channel vectors.
    pub fn vector(values: Vec<T>) -> Result<Self> {
        Self::new([values.len(), 1, 1, 1], values)
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::new(1, 1, 1, 1),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let o = self.shape.offset(n, c, y, x);
        self.data[o] = v;
    }

    /// The contiguous `H·W` slice for image `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64()).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Slices images `[start, start + count)` out of the batch axis.
    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.shape.n {
            return Err(Error::dim("n", format!("slice {start}+{count} of batch {}", self.shape.n)));
        }
        let per = self.shape.c * self.shape.plane();
        Self::new(
            [count, self.shape.c, self.shape.h, self.shape.w],
            self.data[start * per..(start + count) * per].to_vec(),
        )
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::dim("n", "cannot stack an empty list"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        let mut n = 0;
        for t in items {
            if (t.shape.c, t.shape.h, t.shape.w) != (s.c, s.h, s.w) {
                return Err(Error::dim(
                    "chw",
                    format!("cannot stack {} with {}", t.shape, s),
                ));
            }
            n += t.shape.n;
            data.extend_from_slice(&t.data);
        }
        Self::new([n, s.c, s.h, s.w], data)
    }
}

fn check_dims(shape: &Shape) -> Result<()> {
    for (axis, d) in ["n", "c", "h", "w"].iter().zip(shape.dims()) {
        if d == 0 {
            return Err(Error::dim(*axis, "extent must be at least 1"));
        }
    }
    Ok(())
}

pub fn expect_same_shape<T: Element, U: Element>(
    what: &str,
    a: &Tensor<T>,
    b: &Tensor<U>,
) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    for (axis, (x, y)) in ["n", "c", "h", "w"].iter().zip(sa.dims().into_iter().zip(sb.dims())) {
        if x != y {
            return Err(Error::dim(*axis, format!("{what}: {sa} vs {sb}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offset_is_row_major_nchw() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.offset(1, 2, 3, 4), ((1 * 3 + 2) * 4 + 3) * 5 + 4);
        assert_eq!(s.offset(1, 2, 3, 4), s.len() - 1);
    }

    #[test]
    fn rejects_bad_lengths_and_zero_dims() {
        assert!(Tensor::<f32>::new([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(matches!(
            Tensor::<f32>::new([1, 0, 2, 2], vec![]),
            Err(Error::Dimension { ref axis, .. }) if axis == "c"
        ));
    }

    #[test]
    fn stack_and_slice_are_inverse() {
        let a = Tensor::<f32>::from_fn([1, 2, 2, 2], |_, c, y, x| (c * 4 + y * 2 + x) as f32);
        let b = a.map(|v| -v);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 2, 2));
        assert_eq!(s.batch_slice(0, 1).unwrap(), a);
        assert_eq!(s.batch_slice(1, 1).unwrap(), b);
    }
}
