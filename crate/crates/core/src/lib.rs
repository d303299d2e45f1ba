//! Simulation and analysis of the axial motion of one and two laser-cooled
//! trapped ions under harmonic dipolar drives and white-noise electric
//! fields.
//!
//! The crate is organised around four domains:
//!
//! - [`physics`]: closed-form trap and crystal formulas (secular frequencies,
//!   two-ion equilibrium separation and eigenfrequencies, heating rates, the
//!   noise-modified Doppler limit);
//! - [`dynamics`]: stochastic time-domain integration of the damped, driven,
//!   Coulomb-coupled axial motion, in the secular approximation or resolving
//!   RF micromotion, plus steady-state estimators;
//! - [`imaging`]: fluorescence profile models (driven arcsine x Lorentzian
//!   and thermal Voigt) and seeded synthetic detector images;
//! - [`fitting`]: damped Gauss-Newton curve fits, changepoint detection for
//!   noise sweeps, and the mass-ratio inversion of the two-ion
//!   eigenfrequency relation.
//!
//! All numerical code is generic over the scalar type through [`Float`];
//! concrete `f64`/`f32` aliases for the main types live at the crate root.
//! Internally everything is SI.

pub mod consts;
pub mod dynamics;
pub mod error;
pub mod fitting;
pub mod float;
pub mod imaging;
pub mod numeric;
pub mod physics;

pub use error::{Error, Result};
pub use float::Float;

// Concrete type aliases at the crate root (f64 is the working precision; f32
// instantiations are available for storage-constrained callers).
pub type TrapConfig64 = physics::TrapConfig<f64>;
pub type IonSpecies64 = physics::IonSpecies<f64>;
pub type CrystalConfig64 = physics::CrystalConfig<f64>;
pub type HeatingModel64 = physics::HeatingModel<f64>;
pub type DriveSpec64 = dynamics::DriveSpec<f64>;
pub type NoiseSpec64 = dynamics::NoiseSpec<f64>;
pub type SimConfig64 = dynamics::SimConfig<f64>;
pub type Trajectory64 = dynamics::Trajectory<f64>;
pub type EnsembleStats64 = dynamics::EnsembleStats<f64>;
pub type OpticsConfig64 = imaging::OpticsConfig<f64>;
pub type AxialProfile64 = imaging::AxialProfile<f64>;
pub type ProfileParams64 = imaging::ProfileParams<f64>;
pub type TwoIonProfileParams64 = imaging::TwoIonProfileParams<f64>;
pub type Image64 = imaging::Image<f64>;
pub type FitResult64 = fitting::FitResult<f64>;
pub type ResonanceScan64 = fitting::ResonanceScan<f64>;
pub type NoiseSweep64 = fitting::NoiseSweep<f64>;

pub type TrapConfig32 = physics::TrapConfig<f32>;
pub type IonSpecies32 = physics::IonSpecies<f32>;
pub type CrystalConfig32 = physics::CrystalConfig<f32>;
pub type HeatingModel32 = physics::HeatingModel<f32>;
pub type DriveSpec32 = dynamics::DriveSpec<f32>;
pub type NoiseSpec32 = dynamics::NoiseSpec<f32>;
pub type SimConfig32 = dynamics::SimConfig<f32>;
pub type Trajectory32 = dynamics::Trajectory<f32>;
pub type AxialProfile32 = imaging::AxialProfile<f32>;
pub type ProfileParams32 = imaging::ProfileParams<f32>;
pub type FitResult32 = fitting::FitResult<f32>;
