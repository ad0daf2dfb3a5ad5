//! Scalar abstraction shared by the numerical modules.
//!
//! Everything in the crate is generic over [`Real`], implemented for `f32`
//! and `f64`. The tolerances quoted throughout the test-suite assume `f64`;
//! `f32` runs are meaningful only at single-precision tolerances.

use nalgebra::{Complex, RealField};
use num_traits::ToPrimitive;

/// Real field usable as the scalar type of the simulator.
pub trait Real: RealField + Copy + ToPrimitive + Send + Sync {}

impl Real for f32 {}
impl Real for f64 {}

/// Complex amplitude over a real field.
pub type C<T> = Complex<T>;

/// Converts an `f64` literal into the working precision.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in the working precision")
}

/// Converts a count into the working precision.
#[inline]
pub fn count<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("count representable in the working precision")
}

/// `e^{iθ}`.
#[inline]
pub fn cis<T: Real>(theta: T) -> C<T> {
    Complex::new(theta.cos(), theta.sin())
}

#[inline]
pub fn cabs<T: Real>(z: C<T>) -> T {
    z.re.hypot(z.im)
}

#[inline]
pub fn carg<T: Real>(z: C<T>) -> T {
    z.im.atan2(z.re)
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Reduces an angle into `[0, 2π)`.
#[inline]
pub fn wrap_two_pi<T: Real>(x: T) -> T {
    let tau = T::two_pi();
    let r = x - (x / tau).floor() * tau;
    if r >= tau {
        r - tau
    } else {
        r
    }
}

/// Distance between two angles measured on the circle of circumference `width`.
#[inline]
pub fn circular_distance<T: Real>(a: T, b: T, width: T) -> T {
    let d = (a - b).abs() % width;
    d.min(width - d)
}
