//! Numerical laboratory for the small-scale limits of maximal, fractional
//! and singular integral operators applied to dilated measures.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: ball volumes, ball intersections, sphere quadrature.
//! * [`kernels`]: radial profiles, degree-zero kernels, Dini moduli.
//! * [`measures`]: finite positive measures, dilation and the
//!   concentration split.
//! * [`operators`]: pointwise evaluation of the five operator families.
//! * [`lorentz`]: level-set measurement and weak-`L^p` quasi-norms.
//! * [`limits`]: `t -> 0+` sweeps, limit targets and certificates.

pub mod error;
pub mod geometry;
pub mod kernels;
pub mod limits;
pub mod lorentz;
pub mod measures;
pub mod operators;
pub mod quad;
pub mod rng;

pub use error::{Error, Result};
pub use geometry::{Dimension, SphereRule};
pub use kernels::{FracOrder, HomogeneousKernel, KernelShape, ProfileShape, RadialProfile};
pub use lorentz::{EvalDomain, LevelSetEstimate, WeakNormEstimate};
pub use measures::{Measure, MeasureKind, SplitMeasure};
pub use operators::{EvalOptions, FreeFunction, OperatorSpec};

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}
