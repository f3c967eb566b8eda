//! Dense 4-D arrays in `(batch, channel, height, width)` order.
//!
//! Storage is row-major with the width index varying fastest, so the flat
//! offset of `(n, c, y, x)` is `((n * C + c) * H + y) * W + x`.  Checkpoints
//! rely on this layout.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Floating-point element type. Training runs in `f32`; the gradient oracle
/// promotes whole networks to `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any float")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("value list has {got} entries but shape {shape:?} needs {expected}")]
    LengthMismatch {
        shape: Shape,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Shape, right: Shape },
    #[error("spatial extent of {0:?} is empty")]
    EmptySpatial(Shape),
    #[error("gradient buffer has {got} entries, data has {expected}")]
    GradLength { expected: usize, got: usize },
}

/// Four extents `(n, c, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub const fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl From<(usize, usize, usize, usize)> for Shape {
    fn from((n, c, h, w): (usize, usize, usize, usize)) -> Self {
        Self::new(n, c, h, w)
    }
}

impl From<[usize; 4]> for Shape {
    fn from([n, c, h, w]: [usize; 4]) -> Self {
        Self::new(n, c, h, w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Self {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if data.len() != shape.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected: shape.len(),
                got: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
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

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<(), TensorError> {
        if grad.len() != self.data.len() {
            return Err(TensorError::GradLength {
                expected: self.data.len(),
                got: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.offset(n, c, y, x)]
    }

    /// One `(h, w)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let start = self.shape.offset(n, c, 0, 0);
        &self.data[start..start + self.shape.plane()]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let start = self.shape.offset(n, c, 0, 0);
        let len = self.shape.plane();
        &mut self.data[start..start + len]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.as_f64()))
                .collect(),
            grad: self.grad.as_ref().map(|g| {
                g.iter()
                    .map(|&v| U::from_f64_lossy(v.as_f64()))
                    .collect()
            }),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Debug builds scan for NaN/Inf; release builds skip the pass.
    #[inline]
    pub(crate) fn debug_check_finite(&self) {
        debug_assert!(self.is_finite(), "non-finite value in tensor {:?}", self.shape);
    }

    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, TensorError> {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            shape: self.shape,
            data,
            grad: None,
        })
    }

    /// Global average pooling: `(n, c, h, w) -> (n, c, 1, 1)`.
    pub fn spatial_mean(&self) -> Result<Self, TensorError> {
        let plane = self.shape.plane();
        if plane == 0 {
            return Err(TensorError::EmptySpatial(self.shape));
        }
        let scale = T::from_usize(plane).unwrap();
        let data = self
            .data
            .chunks_exact(plane)
            .map(|p| p.iter().copied().sum::<T>() / scale)
            .collect();
        Ok(Self {
            shape: Shape::new(self.shape.n, self.shape.c, 1, 1),
            data,
            grad: None,
        })
    }

    /// Copies the window `[top, top + h) x [left, left + w)` of every plane.
    pub(crate) fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        let s = self.shape;
        debug_assert!(top + h <= s.h && left + w <= s.w);
        let mut out = Self::zeros(Shape::new(s.n, s.c, h, w));
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..h {
                    let row = (top + y) * s.w + left;
                    dst[y * w..(y + 1) * w].copy_from_slice(&src[row..row + w]);
                }
            }
        }
        out
    }

    /// Inverse of [`Tensor::crop`]: places every plane at `(top, left)` inside
    /// a zero canvas of extent `(h, w)`.
    pub(crate) fn embed(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        let s = self.shape;
        debug_assert!(top + s.h <= h && left + s.w <= w);
        let mut out = Self::zeros(Shape::new(s.n, s.c, h, w));
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..s.h {
                    let row = (top + y) * w + left;
                    dst[row..row + s.w].copy_from_slice(&src[y * s.w..(y + 1) * s.w]);
                }
            }
        }
        out
    }

    /// Stacks batch-1 tensors of equal spatial extent along the channel axis.
    pub(crate) fn concat_channels(parts: &[&Self]) -> Self {
        let first = parts[0].shape;
        let c = parts.iter().map(|p| p.shape.c).sum();
        let mut data = Vec::with_capacity(first.plane() * c);
        for p in parts {
            debug_assert_eq!((p.shape.n, p.shape.h, p.shape.w), (1, first.h, first.w));
            data.extend_from_slice(&p.data);
        }
        Self {
            shape: Shape::new(1, c, first.h, first.w),
            data,
            grad: None,
        }
    }

    /// Splits a batch-1 tensor into consecutive channel groups of `width`.
    pub(crate) fn split_channels(&self, width: usize) -> Vec<Self> {
        let s = self.shape;
        debug_assert_eq!(s.n, 1);
        self.data
            .chunks_exact(width * s.plane())
            .map(|chunk| Self {
                shape: Shape::new(1, width, s.h, s.w),
                data: chunk.to_vec(),
                grad: None,
            })
            .collect()
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Zero-pads every plane at the bottom and right to `(h, w)`.
    pub(crate) fn pad_to(&self, h: usize, w: usize) -> Self {
        if (h, w) == (self.shape.h, self.shape.w) {
            return self.clone();
        }
        self.embed(0, 0, h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn create_fill_and_list() {
        let z = Tensor::<f32>::zeros((1, 1, 2, 2));
        assert_eq!(z.data(), &[0.0; 4]);
        let t = Tensor::<f32>::from_vec((1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(t.data(), &[1., 2., 3., 4.]);
        assert_eq!(t.at(0, 0, 1, 0), 3.0);
        assert!(t.grad().is_none());
    }

    #[test]
    fn create_length_mismatch() {
        let err = Tensor::<f32>::from_vec((1, 2, 2, 2), vec![0.0; 7]).unwrap_err();
        assert!(matches!(err, TensorError::LengthMismatch { expected: 8, got: 7, .. }));
    }

    #[test]
    fn elementwise_ops() {
        let a = Tensor::<f32>::from_vec((1, 1, 1, 2), vec![1., 2.]).unwrap();
        let b = Tensor::<f32>::from_vec((1, 1, 1, 2), vec![3., 4.]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4., 6.]);
        let ones = Tensor::full((1, 1, 1, 2), 1.0f32);
        assert_eq!(a.mul(&ones).unwrap(), a);
        let c = Tensor::<f32>::zeros((1, 1, 2, 3));
        let d = Tensor::<f32>::zeros((1, 1, 2, 2));
        assert!(matches!(d.add(&c), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn spatial_mean_examples() {
        let t = Tensor::<f32>::from_vec((1, 1, 2, 2), vec![1., 2., 3., 4.]).unwrap();
        let m = t.spatial_mean().unwrap();
        assert_eq!(m.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(m.data(), &[2.5]);
        let c = Tensor::full((2, 3, 4, 5), 1.75f32).spatial_mean().unwrap();
        assert!(c.data().iter().all(|&v| v == 1.75));
        let e = Tensor::<f32>::zeros((1, 1, 0, 3));
        assert!(matches!(e.spatial_mean(), Err(TensorError::EmptySpatial(_))));
    }

    #[test]
    fn spatial_mean_matches_summation_oracle() {
        let mut rng = crate::rng::SplitMix64::new(11);
        let vals: Vec<f32> = (0..35).map(|_| rng.uniform(-3.0, 3.0) as f32).collect();
        let oracle = vals.iter().map(|&v| v as f64).sum::<f64>() / 35.0;
        let t = Tensor::from_vec((1, 1, 5, 7), vals).unwrap();
        let m = t.spatial_mean().unwrap().data()[0] as f64;
        assert!((m - oracle).abs() < 1e-6, "{m} vs {oracle}");
    }

    #[test]
    fn crop_embed_and_channels() {
        let t = Tensor::<f32>::from_vec((1, 2, 2, 2), (0..8).map(|v| v as f32).collect()).unwrap();
        let e = t.embed(1, 1, 3, 4);
        assert_eq!(e.at(0, 1, 2, 2), 7.0);
        assert_eq!(e.crop(1, 1, 2, 2), t);
        let parts = t.split_channels(1);
        assert_eq!(Tensor::concat_channels(&[&parts[0], &parts[1]]), t);
    }

    proptest! {
        #[test]
        fn spatial_mean_permutation_invariant(
            vals in proptest::collection::vec(-100.0f32..100.0, 12),
            seed in any::<u64>(),
        ) {
            let mut shuffled = vals.clone();
            crate::rng::SplitMix64::new(seed).shuffle(&mut shuffled);
            let a = Tensor::from_vec((1, 1, 3, 4), vals).unwrap().spatial_mean().unwrap();
            let b = Tensor::from_vec((1, 1, 3, 4), shuffled).unwrap().spatial_mean().unwrap();
            prop_assert!((a.data()[0] - b.data()[0]).abs() < 1e-4);
        }

        #[test]
        fn add_commutative_associative(
            a in proptest::collection::vec(-1e3f32..1e3, 6),
            b in proptest::collection::vec(-1e3f32..1e3, 6),
            c in proptest::collection::vec(-1e3f32..1e3, 6),
        ) {
            let t = |v: &Vec<f32>| Tensor::from_vec((1, 1, 2, 3), v.clone()).unwrap();
            let scale: Vec<f32> = (0..6).map(|i| a[i].abs() + b[i].abs() + c[i].abs()).collect();
            let (a, b, c) = (t(&a), t(&b), t(&c));
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
            let l = a.add(&b).unwrap().add(&c).unwrap();
            let r = a.add(&b.add(&c).unwrap()).unwrap();
            for ((x, y), m) in l.data().iter().zip(r.data()).zip(&scale) {
                // 1e-6 absolute is below f32 resolution at 3e3; allow two roundings of the operands
                prop_assert!((x - y).abs() <= 1e-6f32.max(m * f32::EPSILON * 2.0));
            }
        }

        #[test]
        fn readback_is_bitwise(vals in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 8)) {
            let t = Tensor::from_vec((1, 2, 2, 2), vals.clone()).unwrap();
            let back: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            let orig: Vec<u32> = vals.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(back, orig);
        }
    }
}
