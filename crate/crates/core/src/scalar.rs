//! Floating-point element types the kernels are generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Element type of every tensor: `f64` for training and gradient checks,
/// `f32` for throughput measurements.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Short tag used in logs and bench output.
    const NAME: &'static str;

    /// `c = alpha * a · b + beta * c` on strided row/column layouts.
    ///
    /// `a` is `m × k`, `b` is `k × n` and `c` is `m × n`; strides are in
    /// elements, so transposed operands are expressed by swapping them.
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

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every float scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

// The `unsafe` blocks below only forward slices whose extents were checked
// against the strides by `check_gemm_extents`.
#[allow(clippy::too_many_arguments)]
fn check_gemm_extents(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize, rsc: isize, csc: isize) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c > max_index(m, n, rsc, csc), "gemm: output buffer too small");
    if k > 0 {
        assert!(a >= 1 && b >= 1, "gemm: empty operand");
    }
}

fn max_index(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        check_gemm_extents(m, k, n, a.len(), b.len(), c.len(), rsc, csc);
        if k > 0 && m > 0 && n > 0 {
            assert!(a.len() > max_index(m, k, rsa, csa), "gemm: lhs buffer too small");
            assert!(b.len() > max_index(k, n, rsb, csb), "gemm: rhs buffer too small");
        }
        unsafe {
            matrixmultiply::dgemm(
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
            );
        }
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        check_gemm_extents(m, k, n, a.len(), b.len(), c.len(), rsc, csc);
        if k > 0 && m > 0 && n > 0 {
            assert!(a.len() > max_index(m, k, rsa, csa), "gemm: lhs buffer too small");
            assert!(b.len() > max_index(k, n, rsb, csb), "gemm: rhs buffer too small");
        }
        unsafe {
            matrixmultiply::sgemm(
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
            );
        }
    }
}
