//! Dense rank-4 `(N, C, H, W)` arrays.
//!
//! Every feature map, image and gradient in the crate is a [`Tensor`]. The
//! element type is generic over [`Real`]: training runs in `f32`, gradient
//! checks in `f64`.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating point element type.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
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
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `C ← α·A·B + β·C` for row-major `A (m×k)`, `B (k×n)`, `C (m×n)`;
    /// a transposed operand is read through swapped strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], bool),
        b: (&[Self], bool),
        beta: Self,
        c: &mut [Self],
    );
}

/// Row and column strides of a row-major `rows×cols` operand, read transposed if asked.
fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: $t,
                a: (&[$t], bool),
                b: (&[$t], bool),
                beta: $t,
                c: &mut [$t],
            ) {
                assert!(a.0.len() >= m * k && b.0.len() >= k * n && c.len() >= m * n, "gemm operand too short");
                let (rsa, csa) = strides(m, k, a.1);
                let (rsb, csb) = strides(k, n, b.1);
                // SAFETY: the assertion bounds every index the strides reach.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.0.as_ptr(),
                        rsa,
                        csa,
                        b.0.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Extents of a rank-4 tensor.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
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

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

impl Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Debug::fmt(self, f)
    }
}

/// Row-major `(N, C, H, W)` array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

/// `∂loss/∂tensor`, shaped like the tensor it differentiates.
pub type Gradient<T = f32> = Tensor<T>;

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![T::zero(); shape.len()] }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self { shape, data: vec![value; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{} values for shape {shape} ({} expected)", data.len(), shape.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
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
        Self { shape, data }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn random_uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape.len()).map(|_| T::of(rng.gen_range(lo..hi))).collect();
        Self { shape, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape)
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.shape.index(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut T {
        let i = self.shape.index(n, c, y, x);
        &mut self.data[i]
    }

    /// Value at a possibly out-of-range position, zero outside.
    #[inline]
    pub fn at_padded(&self, n: usize, c: usize, y: isize, x: isize) -> T {
        if y < 0 || x < 0 || y as usize >= self.shape.h || x as usize >= self.shape.w {
            T::zero()
        } else {
            self.at(n, c, y as usize, x as usize)
        }
    }

    /// Contiguous `H×W` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return Err(Error::shape("Tensor::reshape", format!("{} -> {shape}", self.shape)));
        }
        Ok(Self { shape, data: self.data })
    }

    /// Copy of samples `start..start + count` along the batch axis.
    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.n {
            return Err(Error::shape(
                "Tensor::batch_slice",
                format!("samples {start}..{} of {}", start + count, self.shape.n),
            ));
        }
        let per = self.shape.c * self.shape.plane();
        let shape = Shape::new(count, self.shape.c, self.shape.h, self.shape.w);
        Ok(Self { shape, data: self.data[start * per..(start + count) * per].to_vec() })
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::invalid("Tensor::stack", "no tensors"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.len() * items.len());
        let mut n = 0;
        for t in items {
            if (t.shape.c, t.shape.h, t.shape.w) != (s.c, s.h, s.w) {
                return Err(Error::shape("Tensor::stack", format!("{} vs {}", t.shape, s)));
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Ok(Self { shape: Shape::new(n, s.c, s.h, s.w), data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect() }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.expect_same_shape("Tensor::add", other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Self { shape: self.shape, data })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape("Tensor::add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// `⟨self, other⟩` over all elements.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_same_shape("Tensor::dot", other)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_same_shape("Tensor::max_abs_diff", other)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|v| v.abs()).fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Returns `self` unless it holds NaN or ±∞.
    pub fn checked(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn expect_shape(&self, op: &'static str, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(op, format!("expected {shape}, got {}", self.shape)));
        }
        Ok(())
    }

    pub fn expect_same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        other.expect_shape(op, self.shape)
    }
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<_> = self.data.iter().take(8).collect();
        write!(f, "Tensor{} {:?}", self.shape, head)?;
        if self.data.len() > 8 {
            write!(f, "…")?;
        }
        Ok(())
    }
}
