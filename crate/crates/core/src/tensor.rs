//! Dense rank-4 tensors in NHWC layout and the scalar trait they are generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_like::FloatOps;

use crate::error::{Error, Result};

/// Scalar type used by tensors and kernels. Implemented for `f32` (training)
/// and `f64` (gradient checks).
pub trait Real:
    FloatOps
    + Copy
    + Default
    + PartialOrd
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const DTYPE: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c <- alpha * a @ b + beta * c` for row-major operands described by
    /// explicit strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping (for `c`)
    /// matrices of the given dimensions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

mod num_like {
    use std::ops::{Add, Div, Mul, Neg, Sub};

    /// The handful of float operations the kernels need.
    pub trait FloatOps:
        Sized
        + Add<Output = Self>
        + Sub<Output = Self>
        + Mul<Output = Self>
        + Div<Output = Self>
        + Neg<Output = Self>
    {
        fn exp(self) -> Self;
        fn ln(self) -> Self;
        fn sqrt(self) -> Self;
        fn abs(self) -> Self;
        fn max(self, other: Self) -> Self;
        fn min(self, other: Self) -> Self;
        fn is_finite(self) -> bool;
    }

    macro_rules! impl_float_ops {
        ($t:ty) => {
            impl FloatOps for $t {
                #[inline]
                fn exp(self) -> Self {
                    <$t>::exp(self)
                }
                #[inline]
                fn ln(self) -> Self {
                    <$t>::ln(self)
                }
                #[inline]
                fn sqrt(self) -> Self {
                    <$t>::sqrt(self)
                }
                #[inline]
                fn abs(self) -> Self {
                    <$t>::abs(self)
                }
                #[inline]
                fn max(self, other: Self) -> Self {
                    <$t>::max(self, other)
                }
                #[inline]
                fn min(self, other: Self) -> Self {
                    <$t>::min(self, other)
                }
                #[inline]
                fn is_finite(self) -> bool {
                    <$t>::is_finite(self)
                }
            }
        };
    }
    impl_float_ops!(f32);
    impl_float_ops!(f64);
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const DTYPE: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const DTYPE: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `(batch, height, width, channels)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, serde::Serialize, serde::Deserialize)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn new(n: usize, h: usize, w: usize, c: usize) -> Self {
        Shape([n, h, w, c])
    }
    /// A `(rows, cols)` matrix stored as `(rows, 1, 1, cols)`.
    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape([rows, 1, 1, cols])
    }
    pub fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }
    #[inline]
    pub fn n(&self) -> usize {
        self.0[0]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.0[1]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.0[2]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.0[3]
    }
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
    /// Number of "pixels" (`n * h * w`), i.e. rows when viewed as a matrix
    /// with `c` columns.
    pub fn rows(&self) -> usize {
        self.n() * self.h() * self.w()
    }
    pub fn with_c(&self, c: usize) -> Self {
        Shape([self.n(), self.h(), self.w(), c])
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [n, h, w, c] = self.0;
        write!(f, "({n},{h},{w},{c})")
    }
}

/// Dense NHWC tensor. The universal activation, image and parameter carrier.
#[derive(Clone, PartialEq, Debug)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

/// Activation/image tensor in 4-D NHWC layout.
pub type Tensor4D<T> = Tensor<T>;

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::ZERO; shape.numel()],
        }
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.0.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape}")));
        }
        if shape.numel() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape} needs {} elements, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Like [`Tensor::from_vec`] but additionally rejects NaN/Inf.
    pub fn from_vec_finite(shape: Shape, data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        t.check_finite("tensor")?;
        Ok(t)
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![v],
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
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

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize, c: usize) -> T {
        let [_, h, w, ch] = self.shape.0;
        self.data[((n * h + y) * w + x) * ch + c]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} into {shape}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{what}: element {i} of {} is {}",
                self.shape, self.data[i]
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_f64(self.data.len() as f64)
    }

    /// Element-wise conversion between precisions.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Select batch items (in the given order) into a new tensor.
    pub fn select_batch(&self, idx: &[usize]) -> Result<Self> {
        let per = self.shape.numel() / self.shape.n();
        let mut data = Vec::with_capacity(per * idx.len());
        for &i in idx {
            if i >= self.shape.n() {
                return Err(Error::Shape(format!(
                    "batch index {i} out of range for {}",
                    self.shape
                )));
            }
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Tensor::from_vec(
            Shape::new(idx.len(), self.shape.h(), self.shape.w(), self.shape.c()),
            data,
        )
    }

    /// Stack single images `(1,h,w,c)` or batches along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let [_, h, w, c] = first.shape.0;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            let [tn, th, tw, tc] = t.shape.0;
            if (th, tw, tc) != (h, w, c) {
                return Err(Error::Shape(format!(
                    "cannot stack {} with {}",
                    first.shape, t.shape
                )));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(Shape::new(n, h, w, c), data)
    }

    /// Maximum absolute element-wise difference.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 1), vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::from_vec(Shape::new(0, 2, 2, 1), vec![]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let r = Tensor::<f64>::from_vec_finite(Shape::new(1, 1, 1, 2), vec![1.0, f64::NAN]);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn nhwc_indexing() {
        let t = Tensor::<f64>::from_vec(Shape::new(1, 2, 2, 2), (0..8).map(|v| v as f64).collect())
            .unwrap();
        assert_eq!(t.at(0, 1, 0, 1), 5.0);
        assert_eq!(t.at(0, 0, 1, 0), 2.0);
    }

    #[test]
    fn select_and_stack() {
        let t = Tensor::<f32>::from_vec(Shape::new(3, 1, 1, 2), vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let s = t.select_batch(&[2, 0]).unwrap();
        assert_eq!(s.data(), &[4., 5., 0., 1.]);
        let st = Tensor::stack(&[s.clone(), s]).unwrap();
        assert_eq!(st.shape(), Shape::new(4, 1, 1, 2));
    }
}
