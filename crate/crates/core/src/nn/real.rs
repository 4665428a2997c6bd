use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Scalar type the network is generic over: `f32` for training, `f64` for
/// finite-difference gradient checks.
pub trait Real:
    Float + Sum + Default + Debug + Send + Sync + 'static + AddAssign + SubAssign + MulAssign + DivAssign
{
    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Always libm's, whatever `num-traits` features are unified in.
    fn tanh_libm(self) -> Self;
}

impl Real for f32 {
    #[inline(always)]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn tanh_libm(self) -> Self {
        libm::tanhf(self)
    }
}

impl Real for f64 {
    #[inline(always)]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn tanh_libm(self) -> Self {
        libm::tanh(self)
    }
}

/// Dot product with eight independent partial sums (fixed summation order).
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let (ca, cb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
pub fn sum<T: Real>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let c = &a[i * 8..i * 8 + 8];
        for l in 0..8 {
            acc[l] += c[l];
        }
    }
    let mut tail = T::zero();
    for v in &a[chunks * 8..] {
        tail += *v;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}
