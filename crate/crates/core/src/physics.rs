//! Closed-form trap and crystal formulas: secular frequencies, two-ion
//! equilibrium geometry and eigenfrequencies, heating rates, and the
//! noise-modified Doppler-limit temperature.
//!
//! Everything here is pure and in SI units; conversions from lab-friendly
//! units (kHz, um, mV) happen at the CLI boundary.

use crate::consts;
use crate::error::{Error, Result};
use crate::float::Float;

/// RF/DC drive parameters of the trap and the dimensionless Mathieu
/// parameters they produce along the axial direction.
///
/// The voltage-to-(a, q) map is not modelled; `geometry_factor` records the
/// configured conversion constant and (a_z, q_z) are taken as given. The
/// Mathieu parameters refer to the first ion species of the crystal under
/// study; other species scale them by charge-to-mass ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapConfig<T> {
    /// RF drive angular frequency (rad/s).
    pub omega_rf: T,
    /// RF amplitude (V, peak-to-peak convention).
    pub v_rf: T,
    /// DC voltage on the same electrodes (V).
    pub u_dc: T,
    /// Axial Mathieu parameter q_z.
    pub q_z: T,
    /// Axial Mathieu parameter a_z.
    pub a_z: T,
    /// Dimensionless map from voltages to (a, q); bookkeeping only.
    pub geometry_factor: T,
}

impl<T: Float> TrapConfig<T> {
    pub fn new(omega_rf: T, a_z: T, q_z: T) -> Result<Self> {
        if !(omega_rf > T::zero()) || !omega_rf.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "omega_rf must be positive, got {omega_rf}"
            )));
        }
        if !a_z.is_finite() || !q_z.is_finite() {
            return Err(Error::InvalidParameter(
                "Mathieu parameters must be finite".into(),
            ));
        }
        Ok(Self {
            omega_rf,
            v_rf: T::zero(),
            u_dc: T::zero(),
            q_z,
            a_z,
            geometry_factor: T::one(),
        })
    }

    pub fn with_voltages(mut self, v_rf: T, u_dc: T, geometry_factor: T) -> Self {
        self.v_rf = v_rf;
        self.u_dc = u_dc;
        self.geometry_factor = geometry_factor;
        self
    }

    /// The adiabatic (pseudopotential) approximation is taken as valid for
    /// |q_z| < 0.4.
    pub fn is_adiabatic(&self) -> bool {
        self.q_z.abs() < T::c(0.4)
    }

    /// a_z + q_z^2/2, the squared ratio of 2 omega_z / omega_rf.
    pub fn stability_radicand(&self) -> T {
        self.a_z + self.q_z * self.q_z / T::c(2.0)
    }

    /// Whether the axial pseudopotential is confining.
    pub fn is_axially_confining(&self) -> bool {
        self.stability_radicand() > T::zero()
    }
}

/// A trapped ion species.
#[derive(Debug, Clone, PartialEq)]
pub struct IonSpecies<T> {
    /// Mass (kg).
    pub mass: T,
    /// Charge (C).
    pub charge: T,
    pub label: String,
}

impl<T: Float> IonSpecies<T> {
    pub fn new(mass: T, charge: T, label: impl Into<String>) -> Result<Self> {
        if !(mass > T::zero()) || !mass.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ion mass must be positive, got {mass}"
            )));
        }
        if charge == T::zero() || !charge.is_finite() {
            return Err(Error::InvalidParameter("ion charge must be nonzero".into()));
        }
        Ok(Self {
            mass,
            charge,
            label: label.into(),
        })
    }

    /// Singly charged 40Ca+.
    pub fn ca40() -> Self {
        Self {
            mass: T::c(consts::CA40_ION_MASS),
            charge: T::c(consts::ELEMENTARY_CHARGE),
            label: "40Ca+".into(),
        }
    }

    /// A singly charged ion of the given mass in atomic mass units.
    pub fn from_amu(mass_amu: T, charge_e: T, label: impl Into<String>) -> Result<Self> {
        Self::new(
            mass_amu * T::c(consts::ATOMIC_MASS),
            charge_e * T::c(consts::ELEMENTARY_CHARGE),
            label,
        )
    }
}

/// One- or two-ion crystal with a common viscous damping coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct CrystalConfig<T> {
    pub species: Vec<IonSpecies<T>>,
    /// Laser-cooling damping coefficient gamma_z (1/s); the friction force is
    /// -2 m gamma_z v per ion.
    pub gamma_z: T,
}

impl<T: Float> CrystalConfig<T> {
    pub fn new(species: Vec<IonSpecies<T>>, gamma_z: T) -> Result<Self> {
        if species.is_empty() || species.len() > 2 {
            return Err(Error::InvalidParameter(format!(
                "crystal must hold 1 or 2 ions, got {}",
                species.len()
            )));
        }
        if gamma_z < T::zero() || !gamma_z.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gamma_z must be nonnegative, got {gamma_z}"
            )));
        }
        Ok(Self { species, gamma_z })
    }

    pub fn n_ions(&self) -> usize {
        self.species.len()
    }

    /// Total mass (kg).
    pub fn total_mass(&self) -> T {
        self.species
            .iter()
            .fold(T::zero(), |acc, s| acc + s.mass)
    }

    /// Mass ratio mu = m_second / m_first for a two-ion crystal, with the
    /// first listed species as the reference ion.
    pub fn mass_ratio(&self) -> Option<T> {
        if self.species.len() == 2 {
            Some(self.species[1].mass / self.species[0].mass)
        } else {
            None
        }
    }
}

/// Free parameters of the noise-modified Doppler-limit model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatingModel<T> {
    /// Single-sided electric-field noise spectral density at omega_z
    /// (V^2 m^-2 Hz^-1).
    pub s_e: T,
    /// Heating-rate coefficient of the applied noise (J s^-1 V^-2).
    pub zeta: T,
    /// Recoil-heating constant K (J/s).
    pub k_const: T,
}

impl<T: Float> HeatingModel<T> {
    pub fn new(s_e: T, zeta: T, k_const: T) -> Result<Self> {
        for (name, v) in [("s_e", s_e), ("zeta", zeta), ("k_const", k_const)] {
            if v < T::zero() || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(Self { s_e, zeta, k_const })
    }
}

/// Secular frequency from arbitrary Mathieu parameters:
/// omega = (omega_rf / 2) sqrt(a + q^2/2).
///
/// Usable for the radial direction as well, given user-supplied (a_r, q_r).
pub fn secular_frequency_parts<T: Float>(omega_rf: T, a: T, q: T) -> Result<T> {
    if !(omega_rf > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "omega_rf must be positive, got {omega_rf}"
        )));
    }
    let radicand = a + q * q / T::c(2.0);
    if radicand < T::zero() {
        return Err(Error::UnstableConfinement(radicand.as_f64()));
    }
    Ok(omega_rf / T::c(2.0) * radicand.sqrt())
}

/// Axial secular frequency of the trap (rad/s).
pub fn secular_frequency<T: Float>(trap: &TrapConfig<T>) -> Result<T> {
    secular_frequency_parts(trap.omega_rf, trap.a_z, trap.q_z)
}

/// The a_z that yields a target secular frequency at fixed omega_rf and q_z.
pub fn axial_a_for_frequency<T: Float>(omega_target: T, omega_rf: T, q_z: T) -> Result<T> {
    if !(omega_rf > T::zero()) || omega_target < T::zero() {
        return Err(Error::InvalidParameter(
            "frequencies must be positive".into(),
        ));
    }
    let ratio = T::c(2.0) * omega_target / omega_rf;
    Ok(ratio * ratio - q_z * q_z / T::c(2.0))
}

/// Equilibrium separation of two identical ions in a harmonic axial well:
/// delta_z = (e^2 / (2 pi eps_0 m omega_z^2))^(1/3).
pub fn equilibrium_separation<T: Float>(species: &IonSpecies<T>, omega_z: T) -> Result<T> {
    if !(omega_z > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "omega_z must be positive, got {omega_z}"
        )));
    }
    let q2 = species.charge * species.charge;
    let denom = T::c(2.0) * T::PI() * T::c(consts::VACUUM_PERMITTIVITY) * species.mass * omega_z
        * omega_z;
    Ok((q2 / denom).cbrt())
}

/// Axial eigenfrequencies (Omega_minus, Omega_plus) of a two-ion crystal with
/// mass ratio mu = M/m, relative to the equal-mass COM frequency omega_ref:
///
/// Omega_pm^2 = omega_ref^2 (1 + 1/mu +- sqrt(1 + 1/mu^2 - 1/mu))
pub fn two_ion_eigenfrequencies<T: Float>(mu: T, omega_ref: T) -> Result<(T, T)> {
    if !(mu > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "mass ratio must be positive, got {mu}"
        )));
    }
    if !(omega_ref > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "omega_ref must be positive, got {omega_ref}"
        )));
    }
    let inv = T::one() / mu;
    let root = (T::one() + inv * inv - inv).sqrt();
    let base = T::one() + inv;
    let minus = omega_ref * (base - root).max(T::zero()).sqrt();
    let plus = omega_ref * (base + root).sqrt();
    Ok((minus, plus))
}

/// Electric-field-noise heating rate of a single ion (quanta/s):
/// Gamma_h = e^2 S_E(omega_z) / (4 m hbar omega_z).
pub fn heating_rate_single<T: Float>(species: &IonSpecies<T>, omega_z: T, s_e: T) -> Result<T> {
    if !(omega_z > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "omega_z must be positive, got {omega_z}"
        )));
    }
    if s_e < T::zero() {
        return Err(Error::InvalidParameter(format!(
            "spectral density must be nonnegative, got {s_e}"
        )));
    }
    let q2 = species.charge * species.charge;
    Ok(q2 * s_e / (T::c(4.0) * species.mass * T::c(consts::HBAR) * omega_z))
}

/// COM-mode heating rate for N ions under perfectly spatially correlated
/// noise: Gamma_h(COM) = N * Gamma_h.
pub fn heating_rate_com<T: Float>(n_ions: usize, single_rate: T) -> Result<T> {
    if !(1..=2).contains(&n_ions) {
        return Err(Error::InvalidParameter(format!(
            "N must be 1 or 2, got {n_ions}"
        )));
    }
    if single_rate < T::zero() {
        return Err(Error::InvalidParameter(
            "single-ion rate must be nonnegative".into(),
        ));
    }
    Ok(T::from_index(n_ions) * single_rate)
}

/// Noise-modified Doppler-limit temperature:
/// T = (K + zeta V_noise^2) / (gamma_z k_B).
pub fn doppler_limit_temperature<T: Float>(
    model: &HeatingModel<T>,
    gamma_z: T,
    v_noise: T,
) -> Result<T> {
    if gamma_z <= T::zero() {
        return Err(Error::InvalidParameter(format!(
            "gamma_z must be positive for a steady state, got {gamma_z}"
        )));
    }
    Ok((model.k_const + model.zeta * v_noise * v_noise) / (gamma_z * T::c(consts::BOLTZMANN)))
}
