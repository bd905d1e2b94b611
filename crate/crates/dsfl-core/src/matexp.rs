//! Matrix exponential and Van Loan integrals for exact linear stepping of
//! continuous-time loop filters.

use crate::linalg::Mat;
use crate::scalar::Scalar;

/// `exp(A)` by scaling-and-squaring with a Taylor series.
///
/// Loop-filter matrices here are tiny (order <= 9 plus augmentation) with
/// moderate norms, so a machine-precision Taylor sum after scaling is both
/// simple and accurate.
pub(crate) fn expm<T: Scalar>(a: &Mat<T>) -> Mat<T> {
    let n = a.rows();
    let norm = a.norm_inf();
    let s = if norm > T::of(0.5) {
        (norm / T::of(0.5)).log2().ceil().as_f64() as usize
    } else {
        0
    };
    let scale = T::of(0.5).powi(s as i32);
    let b = a.scale(scale);

    let mut result = Mat::identity(n);
    let mut term = Mat::identity(n);
    for k in 1..=30 {
        term = term.matmul(&b);
        term = term.scale(T::one() / T::from_usize(k).unwrap());
        result.add_assign(&term);
        if term.norm_inf() < T::of(1e-20) * result.norm_inf() {
            break;
        }
    }
    for _ in 0..s {
        result = result.matmul(&result);
    }
    result
}

/// Exact integrals for one linear step of duration `h`:
///
/// * `e = exp(A h)`
/// * `q1 = ∫_0^h exp(A (h − s)) ds`
/// * `q2 = ∫_0^h exp(A (h − s)) s ds`
///
/// so that with input `u(s) = u0 + r s` held over the step,
/// `x(h) = e x(0) + q1 b u0 + q2 b r`.
pub(crate) struct StepKernels<T> {
    pub e: Mat<T>,
    pub q1: Mat<T>,
    pub q2: Mat<T>,
}

pub(crate) fn step_kernels<T: Scalar>(a: &Mat<T>, h: T) -> StepKernels<T> {
    let n = a.rows();
    // Van Loan augmented block matrix:
    //   [A I 0]
    //   [0 0 I]
    //   [0 0 0]
    let mut f = Mat::zeros(3 * n, 3 * n);
    f.set_block(0, 0, a);
    let eye = Mat::identity(n);
    f.set_block(0, n, &eye);
    f.set_block(n, 2 * n, &eye);
    let ef = expm(&f.scale(h));

    let mut e = Mat::zeros(n, n);
    let mut q1 = Mat::zeros(n, n);
    let mut q2 = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            e[(i, j)] = ef[(i, j)];
            q1[(i, j)] = ef[(i, j + n)];
            q2[(i, j)] = ef[(i, j + 2 * n)];
        }
    }
    StepKernels { e, q1, q2 }
}
