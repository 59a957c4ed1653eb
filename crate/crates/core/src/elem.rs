//! Scalar element types. Precision is a runtime configuration: the whole
//! pipeline is generic over [`Elem`] and instantiated at `f32` (training
//! default) or `f64` (gradient checks).

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element of every tensor in the engine.
pub trait Elem:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    /// Bit width of the type, used for reporting and checkpoint metadata.
    const BITS: u32;
}

impl Elem for f32 {
    const BITS: u32 = 32;
}

impl Elem for f64 {
    const BITS: u32 = 64;
}

/// Shorthand for converting an `f64` literal into the element type.
#[inline]
pub fn lit<E: Elem>(x: f64) -> E {
    E::from_f64(x).expect("f64 literal representable in element type")
}
