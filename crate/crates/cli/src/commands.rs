//! The six CLI pipelines. Each writes its artifacts plus a run manifest into
//! one directory; CSV floats use scientific notation with 9 significant
//! digits, and every stochastic step derives its seed deterministically from
//! the master seed and the point index.

use std::fmt::Write as _;
use std::path::Path;

use iontrap_core::dynamics::{
    ensemble_stats, equilibrium_positions, map_ensemble, simulate_ensemble, steady_state_amplitude,
    DriveSpec, NoiseSpec,
};
use iontrap_core::fitting::{
    detect_plateau, fit_noise_line, fit_profile_single, fit_profile_thermal, fit_profile_two_ion,
    fit_resonance, FitResult, NoiseSweep, ResonanceScan,
};
use iontrap_core::imaging::{
    axial_projection, profile_driven_closed, profile_fwhm, profile_thermal, render_profile_image,
    two_ion_profile, write_image_csv, write_pgm16, AxialProfile, ProfileParams,
    TwoIonProfileParams,
};
use iontrap_core::numeric::RunningStats;
use iontrap_core::physics::{
    doppler_limit_temperature, equilibrium_separation, heating_rate_com, heating_rate_single,
    secular_frequency, two_ion_eigenfrequencies,
};
use iontrap_core::{consts, Float};

use crate::config::Experiment;
use crate::error::{CliError, CliResult};
use crate::manifest::RunDir;

const TWO_PI: f64 = std::f64::consts::TAU;

/// Deterministic per-point seed derivation (splitmix-style increment).
fn point_seed(master: u64, index: usize) -> u64 {
    master.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn fmt_e(x: f64) -> String {
    format!("{x:.8e}")
}

fn provenance(exp: &Experiment, extra: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "config_sha256": crate::manifest::sha256_hex(&exp.raw),
        "seed": exp.sim.seed,
        "args": extra,
    })
}

/// `modes`: closed-form table of the trap and crystal frequencies, the
/// two-ion separation, eigenfrequencies for a mass ratio, heating rates, and
/// the Doppler-limit temperature.
pub fn cmd_modes(
    exp: &Experiment,
    mu_flag: Option<f64>,
    omega_ref_khz: Option<f64>,
    run: &mut RunDir,
) -> CliResult<()> {
    let omega_z = secular_frequency(&exp.trap)?;
    let reference = &exp.crystal.species[0];
    let delta_z = equilibrium_separation(reference, omega_z)?;
    let mu = mu_flag
        .or(exp.modes.mu)
        .or_else(|| exp.crystal.mass_ratio());
    let omega_ref = omega_ref_khz
        .or(exp.modes.omega_ref_khz)
        .map(|f| TWO_PI * f * 1e3)
        .unwrap_or(omega_z);
    let eigen = match mu {
        Some(mu) => Some(two_ion_eigenfrequencies(mu, omega_ref)?),
        None => None,
    };
    let rate_single = heating_rate_single(reference, omega_z, exp.heating.s_e)?;
    let rate_com = heating_rate_com(exp.crystal.n_ions(), rate_single)?;
    let doppler = if exp.crystal.gamma_z > 0.0 {
        Some(doppler_limit_temperature(
            &exp.heating,
            exp.crystal.gamma_z,
            exp.noise.v_noise,
        )?)
    } else {
        None
    };

    let mut table = String::new();
    let _ = writeln!(table, "axial secular frequency f_z: {:.6} kHz", omega_z / TWO_PI / 1e3);
    let _ = writeln!(table, "two-ion separation:          {:.4} um", delta_z * 1e6);
    if let (Some(mu), Some((lo, hi))) = (mu, eigen) {
        let _ = writeln!(table, "mass ratio mu:               {mu:.6}");
        let _ = writeln!(table, "reference frequency f_ref:   {:.6} kHz", omega_ref / TWO_PI / 1e3);
        let _ = writeln!(table, "Omega_-:                     {:.6} kHz", lo / TWO_PI / 1e3);
        let _ = writeln!(table, "Omega_+:                     {:.6} kHz", hi / TWO_PI / 1e3);
    }
    let _ = writeln!(table, "heating rate (single ion):   {rate_single:.6e} quanta/s");
    let _ = writeln!(
        table,
        "heating rate (COM, N = {}):   {rate_com:.6e} quanta/s",
        exp.crystal.n_ions()
    );
    if let Some(t) = doppler {
        let _ = writeln!(table, "Doppler-limit temperature:   {:.6e} K", t);
    }
    print!("{table}");

    let json = serde_json::json!({
        "omega_z_rad_per_s": omega_z,
        "f_z_hz": omega_z / TWO_PI,
        "delta_z_m": delta_z,
        "mu": mu,
        "omega_ref_rad_per_s": omega_ref,
        "omega_minus_rad_per_s": eigen.map(|e| e.0),
        "omega_plus_rad_per_s": eigen.map(|e| e.1),
        "f_minus_hz": eigen.map(|e| e.0 / TWO_PI),
        "f_plus_hz": eigen.map(|e| e.1 / TWO_PI),
        "heating_rate_single_quanta_per_s": rate_single,
        "heating_rate_com_quanta_per_s": rate_com,
        "doppler_limit_k": doppler,
        "adiabatic": exp.trap.is_adiabatic(),
    });
    run.write_json("modes.json", &json)?;
    run.finish()
}

/// `scan`: simulate the steady-state amplitude at each drive frequency,
/// write the scan CSV, and fit the driven-damped response.
pub fn cmd_scan(
    exp: &Experiment,
    fmin_khz: f64,
    fmax_khz: f64,
    points: usize,
    run: &mut RunDir,
) -> CliResult<()> {
    if points < 4 {
        return Err(CliError::Config("scan needs at least 4 points".into()));
    }
    if !(fmax_khz > fmin_khz) || fmin_khz <= 0.0 {
        return Err(CliError::Config(
            "scan range must satisfy 0 < fmin < fmax".into(),
        ));
    }
    if exp.sim.ensemble_size < 2 {
        return Err(CliError::Config(
            "scan needs sim.ensemble_size >= 2 for uncertainties".into(),
        ));
    }
    let mut freqs = Vec::with_capacity(points);
    let mut rho = Vec::with_capacity(points);
    let mut unc = Vec::with_capacity(points);
    for i in 0..points {
        let f_khz = fmin_khz + (fmax_khz - fmin_khz) * i as f64 / (points - 1) as f64;
        let omega = TWO_PI * f_khz * 1e3;
        let drive = DriveSpec::new(exp.drive.force, omega, exp.drive.phase)
            .map_err(|e| CliError::Numerical(format!("point {i} ({f_khz} kHz): {e}")))?;
        let mut sim = exp.sim.clone();
        sim.seed = point_seed(exp.sim.seed, i);
        let amps = map_ensemble(&exp.crystal, &exp.trap, &drive, &exp.noise, &sim, |traj| {
            steady_state_amplitude(&traj, omega, 0.5)
        })
        .map_err(|e| CliError::Numerical(format!("point {i} ({f_khz} kHz): {e}")))?;
        let mut stats = RunningStats::<f64>::default();
        for &a in &amps {
            stats.push(a);
        }
        freqs.push(omega);
        rho.push(stats.mean);
        unc.push((stats.sample_variance() / amps.len() as f64).sqrt());
    }

    let mut csv = String::from("f_hz,rho_m,rho_err_m\n");
    for i in 0..points {
        let _ = writeln!(
            csv,
            "{},{},{}",
            fmt_e(freqs[i] / TWO_PI),
            fmt_e(rho[i]),
            fmt_e(unc[i])
        );
    }
    run.write_file("scan.csv", csv.as_bytes())?;

    let scan = ResonanceScan::new(freqs, rho, unc)?;
    let mass = exp.crystal.total_mass();
    let args = serde_json::json!({
        "fmin_khz": fmin_khz, "fmax_khz": fmax_khz, "points": points, "mass_kg": mass,
    });
    match fit_resonance(&scan, mass) {
        Ok(fit) => {
            let json = fit.to_json(provenance(exp, args));
            run.write_json("scan_fit.json", &json)?;
            println!(
                "fitted f_z = {:.6} kHz, gamma_z = {:.2} 1/s",
                fit.param("omega_z").unwrap_or(f64::NAN) / TWO_PI / 1e3,
                fit.param("gamma_z").unwrap_or(f64::NAN)
            );
            run.finish()
        }
        Err(e) => {
            let json = serde_json::json!({
                "error": e.to_string(),
                "provenance": provenance(exp, args),
            });
            run.write_json("scan_fit_error.json", &json)?;
            run.finish()?;
            Err(CliError::Numerical(format!("resonance fit failed: {e}")))
        }
    }
}

/// `noise-sweep`: steady-state variance per noise power, the linear fit, the
/// COM-mode observables, and the plateau segmentation.
pub fn cmd_noise_sweep(exp: &Experiment, v2_mvpp2: &[f64], run: &mut RunDir) -> CliResult<()> {
    if v2_mvpp2.is_empty() {
        return Err(CliError::Config(
            "noise-sweep needs at least one --v2-mvpp2 value".into(),
        ));
    }
    if v2_mvpp2.iter().any(|&v| v < 0.0) {
        return Err(CliError::Config("noise powers must be nonnegative".into()));
    }
    if exp.sim.ensemble_size < 2 {
        return Err(CliError::Config(
            "noise-sweep needs sim.ensemble_size >= 2".into(),
        ));
    }
    let mut v2_si = Vec::with_capacity(v2_mvpp2.len());
    let mut sigma2 = Vec::with_capacity(v2_mvpp2.len());
    let mut sigma2_err = Vec::with_capacity(v2_mvpp2.len());
    let mut modes_rows = Vec::with_capacity(v2_mvpp2.len());
    for (i, &v2_mv) in v2_mvpp2.iter().enumerate() {
        let v2 = v2_mv * 1e-6; // mV^2 -> V^2
        let noise = NoiseSpec::new(v2.sqrt(), exp.noise.psd_per_v2, exp.noise.correlation)
            .map_err(|e| CliError::Numerical(format!("level {i}: {e}")))?;
        let mut sim = exp.sim.clone();
        sim.seed = point_seed(exp.sim.seed, i);
        let trajs = simulate_ensemble(&exp.crystal, &exp.trap, &exp.drive, &noise, &sim)
            .map_err(|e| CliError::Numerical(format!("level {i} (V^2 = {v2_mv} mV^2): {e}")))?;
        let drive_opt = exp.drive.is_active().then_some(&exp.drive);
        let stats = ensemble_stats(&trajs, &exp.crystal, &exp.trap, drive_opt, 0.5)
            .map_err(|e| CliError::Numerical(format!("level {i}: {e}")))?;
        v2_si.push(v2);
        sigma2.push(stats.sigma2[0]);
        sigma2_err.push(stats.sigma2_err[0]);
        modes_rows.push((v2, stats));
    }

    let mut csv = String::from("v2_vpp2,sigma2_m2,sigma2_err_m2\n");
    for i in 0..v2_si.len() {
        let _ = writeln!(
            csv,
            "{},{},{}",
            fmt_e(v2_si[i]),
            fmt_e(sigma2[i]),
            fmt_e(sigma2_err[i])
        );
    }
    run.write_file("sweep.csv", csv.as_bytes())?;

    let mut modes_csv =
        String::from("v2_vpp2,com_sigma2_m2,com_temperature_k,com_energy_rate_j_per_s\n");
    for (v2, stats) in &modes_rows {
        let _ = writeln!(
            modes_csv,
            "{},{},{},{}",
            fmt_e(*v2),
            fmt_e(stats.mode_sigma2[0]),
            fmt_e(stats.temperature[0]),
            fmt_e(stats.com_energy_rate)
        );
    }
    run.write_file("sweep_modes.csv", modes_csv.as_bytes())?;

    let sweep = NoiseSweep::new(v2_si.clone(), sigma2, sigma2_err)?;
    let args = serde_json::json!({ "v2_mvpp2": v2_mvpp2 });
    let window = (
        0.0,
        v2_si.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    match fit_noise_line(&sweep, window) {
        Ok(fit) => {
            let json = fit.to_json(provenance(exp, args.clone()));
            run.write_json("noise_fit.json", &json)?;
        }
        Err(e) => {
            run.write_json(
                "noise_fit_error.json",
                &serde_json::json!({"error": e.to_string()}),
            )?;
        }
    }
    match detect_plateau(&sweep) {
        Ok(res) => {
            let json = serde_json::json!({
                "plateau_found": res.plateau_found,
                "degenerate": res.degenerate,
                "breakpoints": res.breakpoints.iter().map(|(v, e)| {
                    serde_json::json!({"v2_vpp2": v, "uncertainty_vpp2": e})
                }).collect::<Vec<_>>(),
                "segments": res.segments.iter().map(|s| {
                    serde_json::json!({
                        "start": s.start, "end": s.end,
                        "intercept": s.intercept, "slope": s.slope,
                    })
                }).collect::<Vec<_>>(),
            });
            run.write_json("plateau.json", &json)?;
        }
        Err(e) => {
            run.write_json(
                "plateau.json",
                &serde_json::json!({"error": e.to_string()}),
            )?;
        }
    }
    run.finish()
}

/// `predict-spectrum`: driven-response amplitude and rendered-profile width
/// versus drive frequency, for the equal-mass reference crystal (resonance at
/// omega_ref) and the mixed crystal (resonance at Omega_-).
pub fn cmd_predict_spectrum(
    exp: &Experiment,
    mu_flag: Option<f64>,
    fmin_khz: f64,
    fmax_khz: f64,
    points: usize,
    run: &mut RunDir,
) -> CliResult<()> {
    let mu = mu_flag.or(exp.modes.mu).ok_or_else(|| {
        CliError::Config("predict-spectrum needs --mu (or [modes] mu in the config)".into())
    })?;
    if mu <= 0.0 {
        return Err(CliError::Config("mass ratio must be positive".into()));
    }
    if points < 2 || !(fmax_khz > fmin_khz) || fmin_khz <= 0.0 {
        return Err(CliError::Config("invalid frequency range".into()));
    }
    if !exp.drive.is_active() && exp.drive.force <= 0.0 {
        return Err(CliError::Config(
            "predict-spectrum needs a drive amplitude in [drive]".into(),
        ));
    }
    let omega_ref = exp
        .modes
        .omega_ref_khz
        .map(|f| TWO_PI * f * 1e3)
        .unwrap_or(secular_frequency(&exp.trap)?);
    let (omega_minus, omega_plus) = two_ion_eigenfrequencies(mu, omega_ref)?;
    let gamma = exp.crystal.gamma_z;
    if gamma <= 0.0 {
        return Err(CliError::Config(
            "predict-spectrum needs gamma_z > 0 for a steady-state response".into(),
        ));
    }
    let m = exp.crystal.species[0].mass;
    let force = exp.drive.force;
    let psf = exp.optics.lorentzian_fwhm;

    // Uniform drive on equal charges: the reference (equal-mass) crystal
    // responds like a single ion of mass m at omega_ref; the mixed crystal's
    // lower mode carries total mass m (1 + mu).
    let response = |f_eff: f64, m_eff: f64, w0: f64, w: f64| {
        f_eff / m_eff / ((2.0 * gamma * w).powi(2) + (w0 * w0 - w * w).powi(2)).sqrt()
    };
    let width_of = |rho: f64| -> CliResult<f64> {
        let p = ProfileParams::new(psf, 0.0, rho.max(1e-12), 1.0)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let f = |z: f64| profile_driven_closed(&p, z);
        Ok(profile_fwhm(&f, 0.0, 3.0 * (rho + psf) + 5.0 * psf)?)
    };

    let mut csv = String::from("f_hz,rho_ref_m,width_ref_m,rho_mixed_m,width_mixed_m\n");
    for i in 0..points {
        let f_khz = fmin_khz + (fmax_khz - fmin_khz) * i as f64 / (points - 1) as f64;
        let w = TWO_PI * f_khz * 1e3;
        let rho_ref = response(2.0 * force, 2.0 * m, omega_ref, w);
        let rho_mix = response(2.0 * force, m * (1.0 + mu), omega_minus, w);
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            fmt_e(w / TWO_PI),
            fmt_e(rho_ref),
            fmt_e(width_of(rho_ref)?),
            fmt_e(rho_mix),
            fmt_e(width_of(rho_mix)?)
        );
    }
    run.write_file("spectrum.csv", csv.as_bytes())?;
    let json = serde_json::json!({
        "mu": mu,
        "omega_ref_rad_per_s": omega_ref,
        "f_ref_hz": omega_ref / TWO_PI,
        "f_minus_hz": omega_minus / TWO_PI,
        "f_plus_hz": omega_plus / TWO_PI,
        "drive_force_n": force,
        "gamma_z_per_s": gamma,
        "psf_fwhm_m": psf,
        "provenance": provenance(exp, serde_json::json!({
            "fmin_khz": fmin_khz, "fmax_khz": fmax_khz, "points": points,
        })),
    });
    run.write_json("spectrum.json", &json)?;
    println!(
        "Omega_-/2pi = {:.4} kHz (reference {:.4} kHz)",
        omega_minus / TWO_PI / 1e3,
        omega_ref / TWO_PI / 1e3
    );
    run.finish()
}

/// `render`: a seeded synthetic fluorescence image of the configured crystal
/// (driven profile when a drive is active, thermal otherwise), plus the
/// analytic profile and the axial projection of the image.
pub fn cmd_render(exp: &Experiment, run: &mut RunDir) -> CliResult<()> {
    let omega_z = secular_frequency(&exp.trap)?;
    let sites = equilibrium_positions(&exp.crystal, &exp.trap)?;
    let gamma_psf = exp.optics.lorentzian_fwhm;
    let m = exp.crystal.species[0].mass;

    enum Shape {
        Driven { rho: f64 },
        Thermal { sigma: f64 },
    }
    let shape = if exp.drive.is_active() {
        if exp.crystal.gamma_z <= 0.0 {
            return Err(CliError::Config(
                "render with a drive needs gamma_z > 0 for a steady state".into(),
            ));
        }
        let w = exp.drive.omega;
        let rho = exp.drive.force / m
            / ((2.0 * exp.crystal.gamma_z * w).powi(2) + (omega_z * omega_z - w * w).powi(2))
                .sqrt();
        Shape::Driven { rho }
    } else {
        if exp.crystal.gamma_z <= 0.0 {
            return Err(CliError::Config(
                "render without a drive needs gamma_z > 0 for the Doppler limit".into(),
            ));
        }
        let t = doppler_limit_temperature(&exp.heating, exp.crystal.gamma_z, exp.noise.v_noise)?;
        let sigma = (consts::BOLTZMANN * t / (m * omega_z * omega_z)).sqrt();
        Shape::Thermal { sigma }
    };

    let extent = match &shape {
        Shape::Driven { rho } => rho + 4.0 * gamma_psf,
        Shape::Thermal { sigma } => 4.0 * sigma + 4.0 * gamma_psf,
    };
    let half_span = sites.iter().fold(0.0_f64, |acc, z| acc.max(z.abs())) + extent;
    let px = exp.optics.pixel_size_effective;
    let nx = ((2.0 * half_span / px).ceil() as usize).max(16) | 1;
    let ny = 25;

    let profile_value = |z: f64| -> iontrap_core::Result<f64> {
        match &shape {
            Shape::Driven { rho } => {
                if sites.len() == 2 {
                    let p = TwoIonProfileParams::new(
                        gamma_psf,
                        sites[0],
                        sites[1],
                        rho.max(1e-12),
                        1.0,
                    )?;
                    two_ion_profile(&p, z)
                } else {
                    let p = ProfileParams::new(gamma_psf, sites[0], rho.max(1e-12), 1.0)?;
                    profile_driven_closed(&p, z)
                }
            }
            Shape::Thermal { sigma } => {
                let mut acc = 0.0;
                for &site in &sites {
                    acc += profile_thermal(*sigma, gamma_psf, site, 1.0, z)?;
                }
                Ok(acc)
            }
        }
    };

    let image = render_profile_image(&profile_value, &exp.optics, nx, ny, 0.0, exp.sim.seed)?;

    let mut pgm = Vec::new();
    write_pgm16(&image, &mut pgm)?;
    run.write_file("image.pgm", &pgm)?;
    let mut matrix = Vec::new();
    write_image_csv(&image, &mut matrix)?;
    run.write_file("image_matrix.csv", &matrix)?;

    let mut profile_csv = String::from("z_m,density\n");
    for ix in 0..nx {
        let z = image.x_of(ix);
        let _ = writeln!(profile_csv, "{},{}", fmt_e(z), fmt_e(profile_value(z)?));
    }
    run.write_file("profile.csv", profile_csv.as_bytes())?;

    let projection = axial_projection(&image)?;
    let mut proj_csv = String::from("z_m,counts,err_counts\n");
    for i in 0..projection.bin_centers.len() {
        let _ = writeln!(
            proj_csv,
            "{},{},{}",
            fmt_e(projection.bin_centers[i]),
            fmt_e(projection.counts[i]),
            fmt_e(projection.uncertainties[i])
        );
    }
    run.write_file("projection.csv", proj_csv.as_bytes())?;

    let json = serde_json::json!({
        "n_ions": sites.len(),
        "sites_m": sites,
        "shape": match &shape {
            Shape::Driven { rho } => serde_json::json!({"kind": "driven", "rho_m": rho}),
            Shape::Thermal { sigma } => serde_json::json!({"kind": "thermal", "sigma_m": sigma}),
        },
        "nx": nx, "ny": ny,
        "pixel_size_m": px,
        "total_counts": image.total_counts(),
        "provenance": provenance(exp, serde_json::json!({})),
    });
    run.write_json("render.json", &json)?;
    println!(
        "rendered {nx}x{ny} image, {} counts",
        image.total_counts()
    );
    run.finish()
}

/// Parse a profile CSV (`z_m,density` or `z_m,counts,err`) with row-numbered
/// diagnostics.
pub fn read_profile_csv(path: &Path) -> CliResult<AxialProfile<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(CliError::Config(format!(
            "{}: empty file (no header row)",
            path.display()
        )));
    };
    let n_cols = header.split(',').count();
    if !(2..=3).contains(&n_cols) {
        return Err(CliError::Config(format!(
            "{}: expected 2 or 3 CSV columns, header has {n_cols}",
            path.display()
        )));
    }
    let mut centers = Vec::new();
    let mut counts = Vec::new();
    let mut errs = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1; // 1-based, header is row 1
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(CliError::Config(format!(
                "{}: row {row}: expected {n_cols} fields, found {}",
                path.display(),
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> CliResult<f64> {
            s.trim().parse::<f64>().map_err(|_| {
                CliError::Config(format!(
                    "{}: row {row}: cannot parse {what} value {s:?}",
                    path.display()
                ))
            })
        };
        centers.push(parse(fields[0], "position")?);
        counts.push(parse(fields[1], "count")?);
        if n_cols == 3 {
            errs.push(parse(fields[2], "uncertainty")?);
        }
    }
    if centers.len() < 2 {
        return Err(CliError::Config(format!(
            "{}: no usable data rows",
            path.display()
        )));
    }
    let uncertainties = (n_cols == 3).then_some(errs);
    AxialProfile::new(centers, counts, uncertainties)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitModelKind {
    Single,
    TwoIon,
    Thermal,
}

/// `fit`: run the chosen profile model over a CSV and write the fit JSON and
/// residuals.
pub fn cmd_fit(
    input: &Path,
    model: FitModelKind,
    exp: Option<&Experiment>,
    run: &mut RunDir,
) -> CliResult<()> {
    let profile = read_profile_csv(input)?;
    let outcome: Result<FitResult<f64>, iontrap_core::Error> = match model {
        FitModelKind::Single => fit_profile_single(&profile, None),
        FitModelKind::TwoIon => fit_profile_two_ion(&profile, None),
        FitModelKind::Thermal => fit_profile_thermal(&profile),
    };
    let prov = serde_json::json!({
        "input_file": input.display().to_string(),
        "model": format!("{model:?}"),
        "config_sha256": exp.map(|e| crate::manifest::sha256_hex(&e.raw)),
    });
    match outcome {
        Ok(fit) => {
            let json = fit.to_json(prov);
            run.write_json("fit.json", &json)?;
            let mut residuals = String::from("z_m,residual\n");
            for (z, r) in profile.bin_centers.iter().zip(fit.residuals.iter()) {
                let _ = writeln!(residuals, "{},{}", fmt_e(*z), fmt_e(*r));
            }
            run.write_file("residuals.csv", residuals.as_bytes())?;
            let summary: Vec<String> = fit
                .params
                .iter()
                .zip(fit.uncertainties.iter())
                .map(|((n, v), u)| format!("{n} = {v:.6e} +- {u:.2e}"))
                .collect();
            println!("{}", summary.join(", "));
            println!("chi2/dof = {:.4}", fit.chi2_per_dof.as_f64());
            run.finish()
        }
        Err(e) => {
            run.write_json(
                "fit_error.json",
                &serde_json::json!({"error": e.to_string(), "provenance": prov}),
            )?;
            run.finish()?;
            Err(CliError::Numerical(format!("fit failed: {e}")))
        }
    }
}
