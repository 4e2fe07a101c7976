//! Scalar abstraction shared by every numeric kernel in the crate.
//!
//! The network, optimizer and gradient checker are written once against
//! [`Scalar`]; `f32` is used for training and inference, `f64` for gradient
//! checking, and quad precision [`f128::f128`] for the finite-difference side
//! of the gradient check. Dense matrix products are routed through [`Scalar::gemm`] so each
//! concrete type can use the fastest available kernel.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive, Zero};
use std::fmt::{Debug, Display};

/// Row/column strides of a matrix operand stored in a flat slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Strides {
    pub row: usize,
    pub col: usize,
}

impl Strides {
    /// Row-major storage with `cols` columns.
    pub const fn row_major(cols: usize) -> Self {
        Self { row: cols, col: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub const fn transposed(cols: usize) -> Self {
        Self { row: 1, col: cols }
    }

    fn span(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row + (cols - 1) * self.col + 1
        }
    }
}

/// Floating point type the model can be instantiated with.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Send + Sync + 'static
{
    /// Name used in checkpoint manifests and reports.
    const DTYPE: &'static str;

    /// `c = alpha * a·b + beta * c` with `a` m×k, `b` k×n and `c` m×n row-major.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        sa: Strides,
        b: &[Self],
        sb: Strides,
        beta: Self,
        c: &mut [Self],
    );

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn check_operands<S>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    sa: Strides,
    b: &[S],
    sb: Strides,
    c: &[S],
) {
    assert!(sa.span(m, k) <= a.len(), "gemm: lhs operand out of bounds");
    assert!(sb.span(k, n) <= b.len(), "gemm: rhs operand out of bounds");
    assert!(m * n <= c.len(), "gemm: output operand out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $name;

            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                sa: Strides,
                b: &[Self],
                sb: Strides,
                beta: Self,
                c: &mut [Self],
            ) {
                check_operands(m, k, n, a, sa, b, sb, c);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index touched by the kernel lies inside the
                // spans checked above, and `c` does not alias `a` or `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        sa.row as isize,
                        sa.col as isize,
                        b.as_ptr(),
                        sb.row as isize,
                        sb.col as isize,
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

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

impl Scalar for f128::f128 {
    const DTYPE: &'static str = "f128";

    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        sa: Strides,
        b: &[Self],
        sb: Strides,
        beta: Self,
        c: &mut [Self],
    ) {
        check_operands(m, k, n, a, sa, b, sb, c);
        for i in 0..m {
            for j in 0..n {
                let mut acc = Self::zero();
                for p in 0..k {
                    acc += a[i * sa.row + p * sa.col] * b[p * sb.row + j * sb.col];
                }
                let out = &mut c[i * n + j];
                *out = if beta == Self::zero() {
                    alpha * acc
                } else {
                    alpha * acc + beta * *out
                };
            }
        }
    }
}

/// Sum of a sequence of scalars.
#[inline]
pub fn sum<S: Scalar>(values: impl IntoIterator<Item = S>) -> S {
    values.into_iter().fold(S::zero(), |a, b| a + b)
}

/// `c (+)= a·b` for row-major operands; `accumulate` selects `beta = 1`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    sa: Strides,
    b: &[S],
    sb: Strides,
    c: &mut [S],
    accumulate: bool,
) {
    let beta = if accumulate { S::one() } else { S::zero() };
    S::gemm_raw(m, k, n, S::one(), a, sa, b, sb, beta, c);
}
