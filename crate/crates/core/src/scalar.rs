//! Scalar abstraction for the numeric core.
//!
//! All encoder, loss, and augmentation math is generic over [`Scalar`] so the
//! same code runs in `f32` or `f64`. The CLI pipeline and the gradient-check
//! tests use `f64` (see the type aliases at the crate root).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::distributions::uniform::SampleUniform;

/// Floating-point scalar usable throughout the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + SampleUniform
    + Sum
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` for constants and config values.
    fn from_config(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to scalar")
    }

    /// Widening conversion used for reports and serialization.
    fn to_report(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dot product of two equal-length slices.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

/// Euclidean norm.
pub fn norm<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Euclidean distance between two points.
pub fn distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        acc += d * d;
    }
    acc.sqrt()
}

/// Cosine similarity. Returns `None` when either vector has zero norm.
pub fn cosine<S: Scalar>(a: &[S], b: &[S]) -> Option<S> {
    let na = norm(a);
    let nb = norm(b);
    if na == S::zero() || nb == S::zero() {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

/// `y += alpha * x`.
pub fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `y += W x` for a row-major `rows x cols` matrix.
pub fn matvec_acc<S: Scalar>(w: &[S], rows: usize, cols: usize, x: &[S], y: &mut [S]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(y.len(), rows);
    for r in 0..rows {
        y[r] += dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `x_grad += W^T dy` for a row-major `rows x cols` matrix.
pub fn matvec_t_acc<S: Scalar>(w: &[S], rows: usize, cols: usize, dy: &[S], x_grad: &mut [S]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(x_grad.len(), cols);
    for r in 0..rows {
        axpy(dy[r], &w[r * cols..(r + 1) * cols], x_grad);
    }
}

/// `W_grad += dy x^T` for a row-major `rows x cols` gradient buffer.
pub fn outer_acc<S: Scalar>(w_grad: &mut [S], rows: usize, cols: usize, dy: &[S], x: &[S]) {
    debug_assert_eq!(w_grad.len(), rows * cols);
    debug_assert_eq!(dy.len(), rows);
    debug_assert_eq!(x.len(), cols);
    for r in 0..rows {
        axpy(dy[r], x, &mut w_grad[r * cols..(r + 1) * cols]);
    }
}

/// Mean of a non-empty set of equal-length vectors.
pub fn mean_vector<S: Scalar, V: AsRef<[S]>>(vectors: &[V]) -> Vec<S> {
    assert!(!vectors.is_empty(), "mean of empty set");
    let dim = vectors[0].as_ref().len();
    let mut out = vec![S::zero(); dim];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v.as_ref()) {
            *o += *x;
        }
    }
    let n = S::from_usize(vectors.len()).unwrap();
    for o in &mut out {
        *o /= n;
    }
    out
}
