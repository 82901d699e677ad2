//! Scalar abstraction shared by every numeric stage of the pipeline.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the classifiers compute in: `f32` or `f64`.
///
/// Model files always store weights as IEEE-754 single precision, so an
/// `f64` model is rounded to `f32` when saved.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    fn from_single(v: f32) -> Self;
    fn to_single(self) -> f32;

    /// Lossless conversion of small integer counts and pixel values.
    #[inline]
    fn from_count(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize representable as float")
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_single(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_single(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_single(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn to_single(self) -> f32 {
        self as f32
    }
}

/// Index of the largest value, lowest index on ties. `None` for an empty slice.
pub fn argmax<T: Scalar>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
