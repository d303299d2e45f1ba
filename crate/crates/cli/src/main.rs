//! `iontrap`: reproducible simulation/analysis pipelines for the axial
//! motion of one and two laser-cooled trapped ions.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::FitModelKind;
use error::{CliError, CliResult};
use manifest::RunDir;

#[derive(Parser)]
#[command(
    name = "iontrap",
    version,
    about = "Axial motion of one and two laser-cooled trapped ions: simulate, image, fit"
)]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for this run (default: derived under $IONTRAP_OUT_ROOT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form mode table: secular frequency, separation, two-ion
    /// eigenfrequencies, heating rates, Doppler limit.
    Modes {
        /// Mass ratio M/m for the eigenfrequency rows.
        #[arg(long)]
        mu: Option<f64>,
        /// Equal-mass COM reference frequency (kHz); default: trap f_z.
        #[arg(long)]
        omega_ref_khz: Option<f64>,
    },
    /// Simulate a resonance scan and fit the driven-damped response.
    Scan {
        #[arg(long)]
        fmin_khz: f64,
        #[arg(long)]
        fmax_khz: f64,
        #[arg(long, default_value_t = 25)]
        points: usize,
    },
    /// Simulate a white-noise sweep: variance vs V^2, line fit, plateau.
    NoiseSweep {
        /// Comma-separated noise powers in mV_pp^2.
        #[arg(long, value_delimiter = ',')]
        v2_mvpp2: Vec<f64>,
    },
    /// Predict two-ion motional spectra around omega_ref and Omega_-.
    PredictSpectrum {
        /// Mass ratio M/m; may also come from [modes] mu in the config.
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        fmin_khz: f64,
        #[arg(long)]
        fmax_khz: f64,
        #[arg(long, default_value_t = 121)]
        points: usize,
    },
    /// Fit a profile CSV (z_m,density or z_m,counts,err) with a model.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        model: FitModel,
    },
    /// Render a seeded synthetic image and its axial projection.
    Render,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitModel {
    /// Driven single-ion profile (Gamma, z0, rho_max, A0).
    Single,
    /// Two driven ions with shared Gamma, rho_max, A0.
    TwoIon,
    /// Thermal Voigt profile (sigma, Gamma, z0, A0).
    Thermal,
}

impl From<FitModel> for FitModelKind {
    fn from(m: FitModel) -> Self {
        match m {
            FitModel::Single => FitModelKind::Single,
            FitModel::TwoIon => FitModelKind::TwoIon,
            FitModel::Thermal => FitModelKind::Thermal,
        }
    }
}

fn load_required_config(cli: &Cli) -> CliResult<config::Experiment> {
    let path = cli.config.as_ref().ok_or_else(|| {
        CliError::Config("--config PATH is required for this command".into())
    })?;
    config::load(path, cli.seed)
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Modes { mu, omega_ref_khz } => {
            let exp = load_required_config(&cli)?;
            let mut run = RunDir::create(
                "modes",
                cli.out.clone(),
                Some(&exp.raw),
                Some(exp.sim.seed),
                cli.force,
            )?;
            commands::cmd_modes(&exp, *mu, *omega_ref_khz, &mut run)
        }
        Command::Scan {
            fmin_khz,
            fmax_khz,
            points,
        } => {
            let exp = load_required_config(&cli)?;
            let mut run = RunDir::create(
                "scan",
                cli.out.clone(),
                Some(&exp.raw),
                Some(exp.sim.seed),
                cli.force,
            )?;
            commands::cmd_scan(&exp, *fmin_khz, *fmax_khz, *points, &mut run)
        }
        Command::NoiseSweep { v2_mvpp2 } => {
            let exp = load_required_config(&cli)?;
            let mut run = RunDir::create(
                "noise-sweep",
                cli.out.clone(),
                Some(&exp.raw),
                Some(exp.sim.seed),
                cli.force,
            )?;
            commands::cmd_noise_sweep(&exp, v2_mvpp2, &mut run)
        }
        Command::PredictSpectrum {
            mu,
            fmin_khz,
            fmax_khz,
            points,
        } => {
            let exp = load_required_config(&cli)?;
            let mut run = RunDir::create(
                "predict-spectrum",
                cli.out.clone(),
                Some(&exp.raw),
                Some(exp.sim.seed),
                cli.force,
            )?;
            commands::cmd_predict_spectrum(&exp, *mu, *fmin_khz, *fmax_khz, *points, &mut run)
        }
        Command::Fit { input, model } => {
            // The config is optional here; it only enriches provenance.
            let exp = match &cli.config {
                Some(path) => Some(config::load(path, cli.seed)?),
                None => None,
            };
            let mut run = RunDir::create(
                "fit",
                cli.out.clone(),
                exp.as_ref().map(|e| e.raw.as_slice()),
                cli.seed,
                cli.force,
            )?;
            commands::cmd_fit(input, (*model).into(), exp.as_ref(), &mut run)
        }
        Command::Render => {
            let exp = load_required_config(&cli)?;
            let mut run = RunDir::create(
                "render",
                cli.out.clone(),
                Some(&exp.raw),
                Some(exp.sim.seed),
                cli.force,
            )?;
            commands::cmd_render(&exp, &mut run)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
