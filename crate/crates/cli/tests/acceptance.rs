//! CLI acceptance: criterion 10 (byte-identical reruns for every command)
//! plus the command-level contract tests (exit codes, validation
//! diagnostics, render->fit closure).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_iontrap")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("iontrap-accept-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("IONTRAP_OUT_ROOT", std::env::temp_dir().join("iontrap-root"))
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const BASE_CONFIG: &str = r#"
[trap]
rf_frequency_khz = 1470.0
q_z = 0.25
a_z = -0.019403084363

[crystal]
ion_mass_amu = [39.9620423]
gamma_z_per_s = 2000.0

[drive]
force_n = 2.0e-22
frequency_khz = 80.0

[noise]
v_noise_mvpp = 5.0
force_psd_per_v2_n2_per_hz = 5.0e-44

[sim]
duration_s = 0.02
seed = 42
ensemble_size = 4
record_every = 8
"#;

const TWO_ION_RENDER_CONFIG: &str = r#"
[trap]
rf_frequency_khz = 1470.0
q_z = 0.25
a_z = -0.019403084363

[crystal]
ion_mass_amu = [39.9620423, 39.9620423]
gamma_z_per_s = 2000.0

[drive]
force_n = 8.0e-22
frequency_khz = 80.0

[optics]
lorentzian_fwhm_um = 6.0
pixel_size_um = 2.4
photon_rate_per_s = 200000.0
exposure_s = 1.0

[sim]
duration_s = 0.02
seed = 77
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn manifest_outputs(dir: &Path) -> (serde_json::Value, Vec<String>) {
    let text = std::fs::read_to_string(dir.join("run_manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    let outputs = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    (manifest, outputs)
}

/// Run one command twice into separate directories and require every listed
/// artifact to be byte-identical (the manifest itself carries wall-clock
/// timestamps and is compared on its config hash and output list).
fn assert_rerun_identical(name: &str, config: &str, args: &[&str]) {
    let dir = scratch(name);
    let cfg = write_config(&dir, config);
    let out_a = dir.join("run-a");
    let out_b = dir.join("run-b");
    for out_dir in [&out_a, &out_b] {
        let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        full.extend([
            "--config".into(),
            cfg.display().to_string(),
            "--out".into(),
            out_dir.display().to_string(),
        ]);
        let out = run(&full.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        assert!(
            out.status.success(),
            "{name}: command failed: {}",
            stderr_of(&out)
        );
    }
    let (man_a, files_a) = manifest_outputs(&out_a);
    let (man_b, files_b) = manifest_outputs(&out_b);
    assert_eq!(files_a, files_b, "{name}: output lists differ");
    assert_eq!(
        man_a["config_sha256"], man_b["config_sha256"],
        "{name}: config hashes differ"
    );
    assert!(!files_a.is_empty(), "{name}: no outputs recorded");
    for file in &files_a {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{name}: artifact {file} differs between reruns");
    }
}

/// Criterion 10: every CLI command, rerun with identical config and seed,
/// produces byte-identical artifacts.
#[test]
fn criterion_10_cli_reruns_are_byte_identical() {
    assert_rerun_identical(
        "modes",
        BASE_CONFIG,
        &["modes", "--mu", "4.675", "--omega-ref-khz", "79.7"],
    );
    assert_rerun_identical("render", TWO_ION_RENDER_CONFIG, &["render"]);
    assert_rerun_identical(
        "predict",
        TWO_ION_RENDER_CONFIG,
        &[
            "predict-spectrum",
            "--mu",
            "4.675",
            "--fmin-khz",
            "40",
            "--fmax-khz",
            "85",
            "--points",
            "10",
        ],
    );
    assert_rerun_identical(
        "scan",
        BASE_CONFIG,
        &[
            "scan",
            "--fmin-khz",
            "79.0",
            "--fmax-khz",
            "81.0",
            "--points",
            "5",
        ],
    );
    assert_rerun_identical(
        "noise-sweep",
        BASE_CONFIG,
        &["noise-sweep", "--v2-mvpp2", "100,400,900,1600"],
    );

    // fit: render once, then fit the same projection twice.
    let dir = scratch("fit-determinism");
    let cfg = write_config(&dir, TWO_ION_RENDER_CONFIG);
    let render_out = dir.join("render");
    let out = run(&[
        "render",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        render_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let projection = render_out.join("projection.csv");
    let fit_a = dir.join("fit-a");
    let fit_b = dir.join("fit-b");
    for out_dir in [&fit_a, &fit_b] {
        let out = run(&[
            "fit",
            "--input",
            projection.to_str().unwrap(),
            "--model",
            "two-ion",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    let (_, files_a) = manifest_outputs(&fit_a);
    for file in &files_a {
        let a = std::fs::read(fit_a.join(file)).unwrap();
        let b = std::fs::read(fit_b.join(file)).unwrap();
        assert_eq!(a, b, "fit artifact {file} differs between reruns");
    }
}

#[test]
fn modes_reports_reference_trap_numbers() {
    let dir = scratch("modes-values");
    let cfg = write_config(&dir, BASE_CONFIG);
    let out_dir = dir.join("out");
    let out = run(&[
        "modes",
        "--mu",
        "4.675",
        "--omega-ref-khz",
        "79.7",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("modes.json")).unwrap())
            .unwrap();
    let f_z = json["f_z_hz"].as_f64().unwrap();
    assert!((f_z - 80e3).abs() < 1.0, "f_z = {f_z}");
    let dz = json["delta_z_m"].as_f64().unwrap();
    assert!((dz - 30.19e-6).abs() < 0.05e-6, "delta_z = {dz}");
    let f_minus = json["f_minus_hz"].as_f64().unwrap();
    assert!((f_minus - 43_787.5).abs() < 10.0, "f_minus = {f_minus}");
    // mu = 1 pins Omega_- to the reference frequency.
    let out_dir2 = dir.join("out-mu1");
    let out = run(&[
        "modes",
        "--mu",
        "1.0",
        "--omega-ref-khz",
        "79.7",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir2.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir2.join("modes.json")).unwrap())
            .unwrap();
    let f_minus = json["f_minus_hz"].as_f64().unwrap();
    assert!((f_minus - 79_700.0).abs() < 1e-6, "f_minus = {f_minus}");
}

#[test]
fn unknown_config_key_is_rejected_with_its_name() {
    let dir = scratch("unknown-key");
    let cfg = write_config(
        &dir,
        &BASE_CONFIG.replace("[sim]", "unexpected_knob = 3\n\n[sim]"),
    );
    let out = run(&["modes", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("unexpected_knob"),
        "diagnostic should name the key: {}",
        stderr_of(&out)
    );
}

#[test]
fn non_confining_trap_is_rejected_before_computation() {
    let dir = scratch("non-confining");
    let cfg = write_config(&dir, &BASE_CONFIG.replace("a_z = -0.019403084363", "a_z = -0.2"));
    let out = run(&["modes", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("confining"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn malformed_csv_row_is_named() {
    let dir = scratch("bad-csv");
    let csv = dir.join("profile.csv");
    std::fs::write(&csv, "z_m,density\n1e-6,2.0\n2e-6,oops\n3e-6,1.0\n").unwrap();
    let out = run(&[
        "fit",
        "--input",
        csv.to_str().unwrap(),
        "--model",
        "single",
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("row 3"), "{}", stderr_of(&out));
}

#[test]
fn empty_profile_file_is_a_usage_error() {
    let dir = scratch("empty-csv");
    let csv = dir.join("empty.csv");
    std::fs::write(&csv, "").unwrap();
    let out = run(&[
        "fit",
        "--input",
        csv.to_str().unwrap(),
        "--model",
        "single",
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
}

#[test]
fn empty_noise_level_list_is_a_usage_error() {
    let dir = scratch("empty-v2");
    let cfg = write_config(&dir, BASE_CONFIG);
    let out = run(&[
        "noise-sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("at least one"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn zero_drive_scan_reports_resonance_not_bracketed() {
    let dir = scratch("flat-scan");
    let cfg = write_config(
        &dir,
        &BASE_CONFIG
            .replace("force_n = 2.0e-22", "force_n = 0.0")
            .replace("v_noise_mvpp = 5.0", "v_noise_mvpp = 2.0"),
    );
    let out_dir = dir.join("out");
    let out = run(&[
        "scan",
        "--fmin-khz",
        "79.0",
        "--fmax-khz",
        "81.0",
        "--points",
        "5",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    assert!(out_dir.join("scan.csv").exists(), "scan CSV still written");
    let err_json = std::fs::read_to_string(out_dir.join("scan_fit_error.json")).unwrap();
    assert!(err_json.contains("bracket"), "{err_json}");
    // The manifest still records the partial run.
    assert!(out_dir.join("run_manifest.json").exists());
}

#[test]
fn overwrite_requires_force_flag() {
    let dir = scratch("overwrite");
    let cfg = write_config(&dir, BASE_CONFIG);
    let out_dir = dir.join("out");
    let args = [
        "modes",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ];
    let first = run(&args);
    assert!(first.status.success(), "{}", stderr_of(&first));
    let second = run(&args);
    assert_eq!(second.status.code(), Some(4), "{}", stderr_of(&second));
    let mut forced: Vec<&str> = args.to_vec();
    forced.push("--force");
    let third = run(&forced);
    assert!(third.status.success(), "{}", stderr_of(&third));
}

fn slope_of(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn com_temperature_slope(dir: &Path, config: &str, name: &str) -> f64 {
    let cfg_path = dir.join(format!("{name}.toml"));
    std::fs::write(&cfg_path, config).unwrap();
    let out_dir = dir.join(name);
    let out = run(&[
        "noise-sweep",
        "--v2-mvpp2",
        "400,900,1600,2500",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{name}: {}", stderr_of(&out));
    let text = std::fs::read_to_string(out_dir.join("sweep_modes.csv")).unwrap();
    let points: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|line| {
            let f: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
            (f[0], f[2]) // v2_vpp2, com_temperature_k
        })
        .collect();
    slope_of(&points)
}

/// Under perfectly correlated noise the COM-mode temperature slope of the
/// two-ion crystal is twice the single ion's (the N-scaling of the COM
/// heating rate); the per-ion position variance slope stays the same.
#[test]
fn com_temperature_slope_doubles_for_correlated_crystal() {
    let dir = scratch("com-slope");
    let single = BASE_CONFIG
        .replace("force_n = 2.0e-22", "force_n = 0.0")
        .replace("ensemble_size = 4", "ensemble_size = 48");
    let double = single.replace(
        "ion_mass_amu = [39.9620423]",
        "ion_mass_amu = [39.9620423, 39.9620423]",
    );
    let s1 = com_temperature_slope(&dir, &single, "single");
    let s2 = com_temperature_slope(&dir, &double, "double");
    let ratio = s2 / s1;
    assert!(
        (ratio - 2.0).abs() < 0.3,
        "COM temperature slope ratio {ratio:.3}"
    );
}

/// A small scan through the configured resonance recovers the configured
/// frequency and damping from the fit JSON.
#[test]
fn cli_scan_recovers_configured_frequency() {
    let dir = scratch("scan-recovery");
    let cfg = write_config(&dir, BASE_CONFIG);
    let out_dir = dir.join("out");
    let out = run(&[
        "scan",
        "--fmin-khz",
        "79.0",
        "--fmax-khz",
        "81.0",
        "--points",
        "9",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("scan_fit.json")).unwrap())
            .unwrap();
    let omega = fit["params"]["omega_z"].as_f64().unwrap();
    let f_z = omega / std::f64::consts::TAU;
    assert!((f_z - 80e3).abs() / 80e3 < 1e-3, "fitted f_z = {f_z}");
    let gamma = fit["params"]["gamma_z"].as_f64().unwrap();
    assert!((gamma - 2000.0).abs() / 2000.0 < 0.15, "fitted gamma = {gamma}");
}

/// A thermal render at high noise amplitude merges the two lobes into one.
#[test]
fn high_noise_render_merges_lobes() {
    let dir = scratch("merged-render");
    let cfg_text = TWO_ION_RENDER_CONFIG
        .replace("[drive]\nforce_n = 8.0e-22\nfrequency_khz = 80.0\n", "")
        .replace(
            "[sim]",
            "[noise]\nv_noise_mvpp = 500.0\n\n[heating]\nzeta_j_per_s_v2 = 9.4e-20\n\n[sim]",
        );
    let cfg = write_config(&dir, &cfg_text);
    let out_dir = dir.join("out");
    let out = run(&[
        "render",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let render: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("render.json")).unwrap())
            .unwrap();
    let sigma = render["shape"]["sigma_m"].as_f64().unwrap();
    assert!(sigma > 15e-6, "thermal width {sigma} should dwarf the lobes");
    // Projection is single-lobed: the midpoint carries more signal than the
    // ion sites.
    let text = std::fs::read_to_string(out_dir.join("profile.csv")).unwrap();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
            (f[0], f[1])
        })
        .collect();
    let at = |z0: f64| {
        rows.iter()
            .min_by(|a, b| {
                (a.0 - z0).abs().partial_cmp(&(b.0 - z0).abs()).unwrap()
            })
            .unwrap()
            .1
    };
    let centre = at(0.0);
    let site = at(15.1e-6);
    assert!(
        centre >= site * 0.95,
        "profile still bimodal: centre {centre}, site {site}"
    );
}

/// Doubling the drive amplitude doubles the predicted response amplitude
/// everywhere (the response is linear in the force).
#[test]
fn predicted_spectrum_is_linear_in_drive() {
    let dir = scratch("predict-linear");
    let cfg_a = write_config(&dir, TWO_ION_RENDER_CONFIG);
    let doubled = TWO_ION_RENDER_CONFIG.replace("force_n = 8.0e-22", "force_n = 1.6e-21");
    let cfg_b = dir.join("config-2f.toml");
    std::fs::write(&cfg_b, doubled).unwrap();
    let read_rho = |cfg: &Path, out_name: &str| -> Vec<(f64, f64)> {
        let out_dir = dir.join(out_name);
        let out = run(&[
            "predict-spectrum",
            "--mu",
            "4.675",
            "--fmin-khz",
            "40",
            "--fmax-khz",
            "85",
            "--points",
            "8",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr_of(&out));
        std::fs::read_to_string(out_dir.join("spectrum.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|line| {
                let f: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
                (f[1], f[3]) // rho_ref_m, rho_mixed_m
            })
            .collect()
    };
    let base = read_rho(&cfg_a, "spec-1f");
    let twice = read_rho(&cfg_b, "spec-2f");
    for ((r1, m1), (r2, m2)) in base.iter().zip(twice.iter()) {
        assert!((r2 / r1 - 2.0).abs() < 1e-8, "reference column not linear");
        assert!((m2 / m1 - 2.0).abs() < 1e-8, "mixed column not linear");
    }
    // The mixed-crystal resonance sits at the predicted lower mode, below
    // the reference frequency.
    let json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("spec-1f").join("spectrum.json")).unwrap(),
    )
    .unwrap();
    // omega_ref defaults to the trap's 80 kHz here: 0.5494 x 80 kHz.
    let f_minus = json["f_minus_hz"].as_f64().unwrap();
    let f_ref = json["f_ref_hz"].as_f64().unwrap();
    assert!((f_minus - 43_952.3).abs() < 20.0, "f_minus = {f_minus}");
    assert!(f_minus < f_ref);
}

#[test]
fn render_then_fit_recovers_generating_parameters() {
    let dir = scratch("closure");
    let cfg = write_config(&dir, TWO_ION_RENDER_CONFIG);
    let render_out = dir.join("render");
    let out = run(&[
        "render",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        render_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let render_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(render_out.join("render.json")).unwrap())
            .unwrap();
    let sites = render_json["sites_m"].as_array().unwrap();
    let expected_sep = sites[1].as_f64().unwrap() - sites[0].as_f64().unwrap();
    let rho = render_json["shape"]["rho_m"].as_f64().unwrap();

    let fit_out = dir.join("fit");
    let out = run(&[
        "fit",
        "--input",
        render_out.join("projection.csv").to_str().unwrap(),
        "--model",
        "two-ion",
        "--out",
        fit_out.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let fit_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fit_out.join("fit.json")).unwrap()).unwrap();
    let sep_fit = fit_json["derived"]["separation"]["value"].as_f64().unwrap();
    assert!(
        (sep_fit - expected_sep).abs() < 1.0e-6,
        "separation {sep_fit} vs generating {expected_sep}"
    );
    let gamma_fit = fit_json["params"]["gamma"].as_f64().unwrap();
    assert!(
        (gamma_fit - 6.0e-6).abs() < 1.5e-6,
        "gamma {gamma_fit} vs 6 um"
    );
    let rho_fit = fit_json["params"]["rho_max"].as_f64().unwrap();
    assert!((rho_fit - rho).abs() < 1.5e-6, "rho {rho_fit} vs {rho}");
    assert!(fit_out.join("residuals.csv").exists());
}
