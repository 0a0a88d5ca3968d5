//! Dense 4-D tensors in NCHW layout and the small engine built on them:
//! convolution kernels, a recorded computation graph with reverse-mode
//! differentiation, parameter storage, initialization and Adam.

mod adam;
pub mod conv;
mod exec;
pub mod gradcheck;
mod graph;
mod param;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{dim_err, Result};

pub use adam::{Adam, AdamConfig};
pub use conv::ConvGeometry;
pub use exec::{Backend, Eager};
pub use graph::{Gradients, Graph, Var};
pub use param::{he_init, he_std, seeded_rng, ParamId, ParamStore};

/// Floating-point element type of the engine.
///
/// Implemented for `f32` (training) and `f64` (gradient checks and oracles).
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// `c <- alpha * a * b + beta * c` for row/column-strided matrices,
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let max_index = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    (rows.saturating_sub(1) as isize * rs + cols.saturating_sub(1) as isize * cs)
                        as usize
                };
                if k > 0 {
                    assert!(
                        max_index(m, k, rsa, csa) < a.len(),
                        "gemm: lhs out of bounds"
                    );
                    assert!(
                        max_index(k, n, rsb, csb) < b.len(),
                        "gemm: rhs out of bounds"
                    );
                }
                assert!(
                    max_index(m, n, rsc, csc) < c.len(),
                    "gemm: output out of bounds"
                );
                // SAFETY: every index touched by the kernel lies inside the
                // slices (checked above) and `c` is borrowed mutably, so it
                // cannot alias `a` or `b`.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }

            fn from_f64(x: f64) -> Self {
                x as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Tensor shape `(batch, channels, height, width)`.
pub type Shape = [usize; 4];

pub(crate) fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

/// A dense row-major NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); numel(&shape)],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; numel(&shape)],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != numel(&shape) {
            return Err(dim_err!(
                "buffer of {} elements cannot have shape {:?}",
                data.len(),
                shape
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Scalar tensor of shape `(1, 1, 1, 1)`.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
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

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        let [_, ch, h, w] = self.shape;
        self.data[((n * ch + c) * h + y) * w + x]
    }

    /// Contiguous slice of one `(n, c)` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    /// Contiguous slice of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let chw = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * chw..(n + 1) * chw]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.check_same(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Tensor<T>) -> Result<T> {
        self.check_same(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same(&self, other: &Tensor<T>, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(dim_err!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape,
                other.shape
            ));
        }
        Ok(())
    }
}
