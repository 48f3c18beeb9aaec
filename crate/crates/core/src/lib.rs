//! Forward models and inference for polarization-resolved photon statistics of NV centers.
//!
//! The crate answers a practical question about a diffraction-limited spot in a [100]
//! diamond: is it one NV center over an unpolarized background, or two NV centers, and if
//! two, in which orientations and with what brightness ratio? It does so by sweeping an
//! emission polarizer, recording PL intensity and g²(0) at each angle, and fitting every
//! orientation-pair hypothesis by χ².
//!
//! - [`geometry`]: NV axes, orientation pairs, degeneracy classes.
//! - [`dipole`]: aperture-integrated double-dipole emission behind a linear polarizer.
//! - [`statistics`]: closed-form g²(0) for one to three emitters plus a background bath.
//! - [`synthetic`]: Poisson-noise polarization sweeps and their CSV form.
//! - [`estimator`]: χ² fits, model selection, Monte Carlo confidence.
//! - [`odmr`]: Zeeman-split ODMR spectra for comparison.
//! - [`config`]: the JSON scenario schema.
//!
//! The closed-form and geometric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix them to `f64`, the precision used by the sampling and fitting layers.

// `!(x > 0.0)` is how validation rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dipole;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod odmr;
pub mod scalar;
pub mod statistics;
pub mod synthetic;

pub use error::{Error, Result};
pub use geometry::{enumerate_pairs, DegeneracyClass, OrientationLabel, OrientationPair};
pub use scalar::Scalar;

pub type UnitVector3 = geometry::UnitVector3<f64>;
pub type NvOrientation = geometry::NvOrientation<f64>;
pub type OpticalSystem = dipole::OpticalSystem<f64>;
pub type DipoleEmitter = dipole::DipoleEmitter<f64>;
pub type PolarizerSetting = dipole::PolarizerSetting<f64>;
pub type PolarizationResponse = dipole::PolarizationResponse<f64>;
pub type ResponseTable = dipole::ResponseTable<f64>;
pub type EmitterSystem = statistics::EmitterSystem<f64>;
pub type G2Value = statistics::G2Value<f64>;
pub type G2Map = statistics::G2Map<f64>;

pub type OpticalSystemF32 = dipole::OpticalSystem<f32>;
pub type EmitterSystemF32 = statistics::EmitterSystem<f32>;
