//! Experiment configuration: a strict TOML file with named sections.
//! Unknown keys are rejected; units are carried in the key names and
//! converted to SI here, at the boundary.

use serde::Deserialize;

use iontrap_core::dynamics::{DriveSpec, NoiseCorrelation, NoiseSpec, SimConfig, SimMode};
use iontrap_core::imaging::OpticsConfig;
use iontrap_core::physics::{CrystalConfig, HeatingModel, IonSpecies, TrapConfig};

use crate::error::{CliError, CliResult};

const TWO_PI: f64 = std::f64::consts::TAU;

/// Instrument-specific default: dipolar force per volt of drive amplitude
/// (N/V). Free calibration constant of the model.
pub const DEFAULT_FORCE_PER_VOLT: f64 = 4.1e-19;

/// Instrument-specific default: single-sided force PSD per squared volt of
/// noise amplitude (N^2/Hz per V_pp^2). Free calibration constant.
pub const DEFAULT_PSD_PER_V2: f64 = 5.0e-44;

/// Default recoil-heating constant K (J/s) of the Doppler-limit model.
pub const DEFAULT_K_CONST: f64 = 2.1e-23;

/// Default noise-heating coefficient zeta (J s^-1 V^-2), consistent with
/// `DEFAULT_PSD_PER_V2` through zeta = psd/(8 m) for 40Ca+.
pub const DEFAULT_ZETA: f64 = 9.4e-20;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub trap: TrapSection,
    pub crystal: CrystalSection,
    #[serde(default)]
    pub drive: DriveSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub optics: OpticsSection,
    pub sim: SimSection,
    #[serde(default)]
    pub heating: HeatingSection,
    #[serde(default)]
    pub modes: ModesSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSection {
    pub rf_frequency_khz: f64,
    pub q_z: f64,
    pub a_z: f64,
    #[serde(default)]
    pub rf_amplitude_vpp: f64,
    #[serde(default)]
    pub dc_voltage_v: f64,
    #[serde(default = "one")]
    pub geometry_factor: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalSection {
    pub ion_mass_amu: Vec<f64>,
    #[serde(default)]
    pub ion_charge_e: Option<Vec<f64>>,
    pub gamma_z_per_s: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    #[serde(default)]
    pub force_n: Option<f64>,
    #[serde(default)]
    pub amplitude_mvpp: Option<f64>,
    #[serde(default)]
    pub force_per_volt_n_per_v: Option<f64>,
    #[serde(default)]
    pub frequency_khz: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub v_noise_mvpp: f64,
    #[serde(default = "default_psd_per_v2")]
    pub force_psd_per_v2_n2_per_hz: f64,
    #[serde(default = "correlated")]
    pub correlation: String,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            v_noise_mvpp: 0.0,
            force_psd_per_v2_n2_per_hz: DEFAULT_PSD_PER_V2,
            correlation: "correlated".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSection {
    #[serde(default = "default_fwhm_um")]
    pub lorentzian_fwhm_um: f64,
    #[serde(default = "default_magnification")]
    pub magnification: f64,
    #[serde(default = "default_pixel_um")]
    pub pixel_size_um: f64,
    #[serde(default = "default_photon_rate")]
    pub photon_rate_per_s: f64,
    #[serde(default = "one")]
    pub exposure_s: f64,
}

impl Default for OpticsSection {
    fn default() -> Self {
        Self {
            lorentzian_fwhm_um: 6.0,
            magnification: 6.75,
            pixel_size_um: 2.4,
            photon_rate_per_s: 20_000.0,
            exposure_s: 1.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default = "secular")]
    pub mode: String,
    #[serde(default = "one_usize")]
    pub ensemble_size: usize,
    #[serde(default = "one_usize")]
    pub record_every: usize,
    #[serde(default)]
    pub dt_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatingSection {
    #[serde(default)]
    pub s_e_v2_per_m2hz: f64,
    #[serde(default = "default_zeta")]
    pub zeta_j_per_s_v2: f64,
    #[serde(default = "default_k_const")]
    pub k_const_j_per_s: f64,
}

impl Default for HeatingSection {
    fn default() -> Self {
        Self {
            s_e_v2_per_m2hz: 0.0,
            zeta_j_per_s_v2: DEFAULT_ZETA,
            k_const_j_per_s: DEFAULT_K_CONST,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesSection {
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub omega_ref_khz: Option<f64>,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn secular() -> String {
    "secular".into()
}
fn correlated() -> String {
    "correlated".into()
}
fn default_psd_per_v2() -> f64 {
    DEFAULT_PSD_PER_V2
}
fn default_fwhm_um() -> f64 {
    6.0
}
fn default_magnification() -> f64 {
    6.75
}
fn default_pixel_um() -> f64 {
    2.4
}
fn default_photon_rate() -> f64 {
    20_000.0
}
fn default_zeta() -> f64 {
    DEFAULT_ZETA
}
fn default_k_const() -> f64 {
    DEFAULT_K_CONST
}

/// Validated SI-unit configuration ready for the core modules.
pub struct Experiment {
    pub trap: TrapConfig<f64>,
    pub crystal: CrystalConfig<f64>,
    pub drive: DriveSpec<f64>,
    pub noise: NoiseSpec<f64>,
    pub optics: OpticsConfig<f64>,
    pub sim: SimConfig<f64>,
    pub heating: HeatingModel<f64>,
    pub modes: ModesSection,
    /// Raw config bytes, echoed into each run directory.
    pub raw: Vec<u8>,
}

fn cfg_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub fn load(path: &std::path::Path, seed_override: Option<u64>) -> CliResult<Experiment> {
    let raw = std::fs::read(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&raw)
        .map_err(|e| cfg_err(format!("config is not UTF-8: {e}")))?;
    let file: FileConfig = toml::from_str(text).map_err(cfg_err)?;
    build(file, raw, seed_override)
}

fn build(file: FileConfig, raw: Vec<u8>, seed_override: Option<u64>) -> CliResult<Experiment> {
    let trap = TrapConfig::new(
        TWO_PI * file.trap.rf_frequency_khz * 1e3,
        file.trap.a_z,
        file.trap.q_z,
    )
    .map_err(cfg_err)?
    .with_voltages(
        file.trap.rf_amplitude_vpp,
        file.trap.dc_voltage_v,
        file.trap.geometry_factor,
    );
    if !trap.is_axially_confining() {
        return Err(cfg_err(format!(
            "trap is not axially confining: a_z + q_z^2/2 = {} <= 0",
            trap.stability_radicand()
        )));
    }
    if !trap.is_adiabatic() {
        return Err(cfg_err(format!(
            "|q_z| = {} is outside the adiabatic range (< 0.4)",
            file.trap.q_z.abs()
        )));
    }

    let n_ions = file.crystal.ion_mass_amu.len();
    let charges = match &file.crystal.ion_charge_e {
        Some(c) => {
            if c.len() != n_ions {
                return Err(cfg_err(format!(
                    "crystal lists {n_ions} masses but {} charges",
                    c.len()
                )));
            }
            c.clone()
        }
        None => vec![1.0; n_ions],
    };
    let species: Vec<IonSpecies<f64>> = file
        .crystal
        .ion_mass_amu
        .iter()
        .zip(charges.iter())
        .enumerate()
        .map(|(i, (&amu, &qe))| {
            IonSpecies::from_amu(amu, qe, format!("ion{}", i + 1)).map_err(cfg_err)
        })
        .collect::<CliResult<_>>()?;
    let crystal = CrystalConfig::new(species, file.crystal.gamma_z_per_s).map_err(cfg_err)?;

    let drive = match (file.drive.force_n, file.drive.amplitude_mvpp) {
        (Some(_), Some(_)) => {
            return Err(cfg_err(
                "drive: give either force_n or amplitude_mvpp, not both",
            ))
        }
        (Some(f), None) => {
            DriveSpec::new(f, TWO_PI * file.drive.frequency_khz * 1e3, file.drive.phase_rad)
                .map_err(cfg_err)?
        }
        (None, Some(mvpp)) => {
            let per_volt = file
                .drive
                .force_per_volt_n_per_v
                .unwrap_or(DEFAULT_FORCE_PER_VOLT);
            DriveSpec::new(
                mvpp * 1e-3 * per_volt,
                TWO_PI * file.drive.frequency_khz * 1e3,
                file.drive.phase_rad,
            )
            .map_err(cfg_err)?
        }
        (None, None) => DriveSpec::none(),
    };

    let correlation = match file.noise.correlation.as_str() {
        "correlated" => NoiseCorrelation::Correlated,
        "independent" => NoiseCorrelation::Independent,
        other => {
            return Err(cfg_err(format!(
                "noise.correlation must be \"correlated\" or \"independent\", got \"{other}\""
            )))
        }
    };
    let noise = NoiseSpec::new(
        file.noise.v_noise_mvpp * 1e-3,
        file.noise.force_psd_per_v2_n2_per_hz,
        correlation,
    )
    .map_err(cfg_err)?;

    let optics = OpticsConfig::new(
        file.optics.lorentzian_fwhm_um * 1e-6,
        file.optics.magnification,
        file.optics.pixel_size_um * 1e-6,
        file.optics.photon_rate_per_s,
        file.optics.exposure_s,
    )
    .map_err(cfg_err)?;

    let mode = match file.sim.mode.as_str() {
        "secular" => SimMode::Secular,
        "full-mathieu" => SimMode::FullMathieu,
        other => {
            return Err(cfg_err(format!(
                "sim.mode must be \"secular\" or \"full-mathieu\", got \"{other}\""
            )))
        }
    };
    if file.sim.duration_s <= 0.0 {
        return Err(cfg_err("sim.duration_s must be positive"));
    }
    if file.sim.ensemble_size == 0 || file.sim.record_every == 0 {
        return Err(cfg_err("sim.ensemble_size and sim.record_every must be >= 1"));
    }
    let mut sim = SimConfig::new(file.sim.duration_s, file.sim.seed);
    sim.mode = mode;
    sim.ensemble_size = file.sim.ensemble_size;
    sim.record_every = file.sim.record_every;
    sim.dt = file.sim.dt_s.filter(|&dt| dt > 0.0);
    if let Some(seed) = seed_override {
        sim.seed = seed;
    }

    let heating = HeatingModel::new(
        file.heating.s_e_v2_per_m2hz,
        file.heating.zeta_j_per_s_v2,
        file.heating.k_const_j_per_s,
    )
    .map_err(cfg_err)?;

    if let Some(mu) = file.modes.mu {
        if mu <= 0.0 {
            return Err(cfg_err("modes.mu must be positive"));
        }
    }

    Ok(Experiment {
        trap,
        crystal,
        drive,
        noise,
        optics,
        sim,
        heating,
        modes: file.modes,
        raw,
    })
}
