use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type the model and attention kernels are generic over.
///
/// Training and sampling run in `f32`; finite-difference gradient checks run
/// the same code in `f64`.
pub trait Real:
    Float + Sum + AddAssign + SubAssign + MulAssign + DivAssign + Default + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` with `a: m x k`, `b: k x n`. Use [`gemm`].
    fn gemm_strided(dims: (usize, usize, usize), alpha: Self, a: View<'_, Self>, b: View<'_, Self>, beta: Self, c: ViewMut<'_, Self>);

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v)
    }
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn gemm_strided(dims: (usize, usize, usize), alpha: Self, a: View<'_, Self>, b: View<'_, Self>, beta: Self, c: ViewMut<'_, Self>) {
        let (m, k, n) = dims;
        check_extents(dims, &a, &b, &c);
        // SAFETY: check_extents bounds every strided index by the slice lengths.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha, a.data.as_ptr(), a.rs as isize, a.cs as isize, b.data.as_ptr(), b.rs as isize,
                b.cs as isize, beta, c.data.as_mut_ptr(), c.rs as isize, c.cs as isize,
            )
        }
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn gemm_strided(dims: (usize, usize, usize), alpha: Self, a: View<'_, Self>, b: View<'_, Self>, beta: Self, c: ViewMut<'_, Self>) {
        let (m, k, n) = dims;
        check_extents(dims, &a, &b, &c);
        // SAFETY: check_extents bounds every strided index by the slice lengths.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha, a.data.as_ptr(), a.rs as isize, a.cs as isize, b.data.as_ptr(), b.rs as isize,
                b.cs as isize, beta, c.data.as_mut_ptr(), c.rs as isize, c.cs as isize,
            )
        }
    }
}

/// Read-only strided matrix view: element `(i, j)` is `data[i * rs + j * cs]`.
#[derive(Debug, Clone, Copy)]
pub struct View<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

#[derive(Debug)]
pub struct ViewMut<'a, T> {
    pub data: &'a mut [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> View<'a, T> {
    /// Row-major with row stride `rs`.
    pub fn rows(data: &'a [T], rs: usize) -> Self {
        Self { data, rs, cs: 1 }
    }
    /// Transpose of a row-major matrix with row stride `rs`.
    pub fn cols(data: &'a [T], rs: usize) -> Self {
        Self { data, rs: 1, cs: rs }
    }
}

impl<'a, T> ViewMut<'a, T> {
    pub fn rows(data: &'a mut [T], rs: usize) -> Self {
        Self { data, rs, cs: 1 }
    }
}

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

fn check_extents<T>(dims: (usize, usize, usize), a: &View<'_, T>, b: &View<'_, T>, c: &ViewMut<'_, T>) {
    let (m, k, n) = dims;
    assert!(extent(m, k, a.rs, a.cs) <= a.data.len(), "gemm: a out of bounds");
    assert!(extent(k, n, b.rs, b.cs) <= b.data.len(), "gemm: b out of bounds");
    assert!(extent(m, n, c.rs, c.cs) <= c.data.len(), "gemm: c out of bounds");
    assert!(m == 0 || n == 0 || (c.rs != 0 && c.cs != 0 && c.rs != c.cs), "gemm: aliased output strides");
}

/// `c = alpha * a * b + beta * c` over strided views, `a: m x k`, `b: k x n`.
/// With `beta == 0` the prior contents of `c` are ignored.
#[inline]
pub fn gemm<T: Real>(dims: (usize, usize, usize), alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, c: ViewMut<'_, T>) {
    T::gemm_strided(dims, alpha, a, b, beta, c)
}

/// Dot product with eight independent accumulators.
///
/// The summation order is fixed for a given length, so results are
/// reproducible bit-for-bit.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Real>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}
