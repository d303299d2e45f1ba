//! Physical constants in SI units, pinned to CODATA 2018 values
//! (9+ significant digits where not exact by definition).

use std::f64::consts::PI;

/// Elementary charge e (C). Exact since the 2019 SI redefinition.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

/// Vacuum permittivity epsilon_0 (F/m).
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

/// Coulomb constant 1/(4 pi epsilon_0) (N m^2 / C^2).
pub const COULOMB: f64 = 1.0 / (4.0 * PI * VACUUM_PERMITTIVITY);

/// Reduced Planck constant hbar (J s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Boltzmann constant k_B (J/K). Exact.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Unified atomic mass unit u (kg).
pub const ATOMIC_MASS: f64 = 1.660_539_066_60e-27;

/// Electron mass (kg).
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;

/// Atomic mass of neutral 40Ca (u), AME2020.
pub const CA40_ATOMIC_MASS_U: f64 = 39.962_590_863;

/// Mass of the 40Ca+ ion (kg): neutral atomic mass minus one electron.
/// The ionization-energy mass deficit (~7e-35 kg) is negligible here.
pub const CA40_ION_MASS: f64 = CA40_ATOMIC_MASS_U * ATOMIC_MASS - ELECTRON_MASS;
