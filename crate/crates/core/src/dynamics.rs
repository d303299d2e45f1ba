//! Time-domain stochastic simulation of one- and two-ion axial motion:
//! damped driven oscillators with Coulomb coupling, white-noise forcing, and
//! optional RF micromotion by direct integration of the Mathieu equation.
//!
//! The integrator is a kick-drift-kick velocity-Verlet scheme (symplectic for
//! the conservative part) with the linear friction term solved implicitly and
//! white-noise impulses applied once per step, scaled by sqrt(dt). White noise
//! is band-limited at the Nyquist frequency of the step grid; this is the
//! documented discretization of the configured single-sided force PSD.
//!
//! Randomness comes from ChaCha8 (counter-based, seekable streams). Ensemble
//! member `m` uses streams `4m + c` with channel `c = 1` for spatially
//! correlated noise shared by all ions and channels `c = 2 + i` for the
//! independent per-ion streams, so correlated and independent runs with the
//! same seed draw from disjoint, reproducible streams.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::consts;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::imaging::AxialProfile;
use crate::physics::{
    secular_frequency_parts, two_ion_eigenfrequencies, CrystalConfig, TrapConfig,
};

/// Default fraction of a trajectory discarded before steady-state estimates.
pub const DEFAULT_SETTLE_FRACTION: f64 = 0.5;

/// Hard floor on the two-ion distance; closer approaches abort the run.
pub const COLLISION_DISTANCE: f64 = 1e-9;

/// Runaway-coordinate threshold used to diagnose instability.
const RUNAWAY_POSITION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    /// Time-averaged pseudopotential: each ion sees a static harmonic well at
    /// its secular frequency.
    Secular,
    /// Direct integration of the RF (Mathieu) potential, resolving
    /// micromotion.
    FullMathieu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseCorrelation {
    /// One noise realization applied to every ion (uniform field).
    Correlated,
    /// Independent realization per ion.
    Independent,
}

/// Coherent dipolar drive: a spatially uniform force F cos(omega t + phase).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveSpec<T> {
    /// Force amplitude on the reference (first) ion (N).
    pub force: T,
    /// Angular drive frequency (rad/s).
    pub omega: T,
    /// Phase at t = 0 (rad).
    pub phase: T,
}

impl<T: Float> DriveSpec<T> {
    pub fn new(force: T, omega: T, phase: T) -> Result<Self> {
        if force < T::zero() || !force.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "drive force must be nonnegative, got {force}"
            )));
        }
        if omega < T::zero() || !omega.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "drive frequency must be nonnegative, got {omega}"
            )));
        }
        Ok(Self { force, omega, phase })
    }

    pub fn none() -> Self {
        Self {
            force: T::zero(),
            omega: T::zero(),
            phase: T::zero(),
        }
    }

    pub fn is_active(&self) -> bool {
        self.force > T::zero() && self.omega > T::zero()
    }
}

/// Stochastic white-noise force descriptor.
///
/// The signal amplitude `v_noise` (V, peak-to-peak convention) maps to a
/// single-sided force PSD through the stored calibration constant:
/// S_F = psd_per_v2 * v_noise^2 (N^2/Hz on the reference ion).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec<T> {
    /// Applied noise amplitude (V peak-to-peak).
    pub v_noise: T,
    /// Calibration constant (N^2/Hz per V^2).
    pub psd_per_v2: T,
    pub correlation: NoiseCorrelation,
}

impl<T: Float> NoiseSpec<T> {
    pub fn new(v_noise: T, psd_per_v2: T, correlation: NoiseCorrelation) -> Result<Self> {
        if v_noise < T::zero() || psd_per_v2 < T::zero() {
            return Err(Error::InvalidParameter(
                "noise amplitude and calibration must be nonnegative".into(),
            ));
        }
        Ok(Self {
            v_noise,
            psd_per_v2,
            correlation,
        })
    }

    pub fn none() -> Self {
        Self {
            v_noise: T::zero(),
            psd_per_v2: T::zero(),
            correlation: NoiseCorrelation::Correlated,
        }
    }

    /// Directly specified force PSD (stored as calibration at V = 1).
    pub fn from_force_psd(psd: T, correlation: NoiseCorrelation) -> Result<Self> {
        Self::new(T::one(), psd, correlation)
    }

    /// Single-sided force PSD on the reference ion (N^2/Hz).
    pub fn force_psd(&self) -> T {
        self.psd_per_v2 * self.v_noise * self.v_noise
    }
}

/// Integration settings. `seed` fully determines the output.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T> {
    /// Step size (s); `None` selects 1/200 of the shortest relevant period.
    pub dt: Option<T>,
    /// Total integrated time (s). Steady-state estimators expect at least
    /// 20/gamma_z so the transient fits inside the settle window.
    pub duration: T,
    pub seed: u64,
    pub mode: SimMode,
    pub ensemble_size: usize,
    /// Keep every n-th sample in the output trajectory.
    pub record_every: usize,
    /// Initial displacement from equilibrium per ion (m); missing entries are 0.
    pub initial_offsets: Vec<T>,
    /// Initial velocity per ion (m/s); missing entries are 0.
    pub initial_velocities: Vec<T>,
}

impl<T: Float> SimConfig<T> {
    pub fn new(duration: T, seed: u64) -> Self {
        Self {
            dt: None,
            duration,
            seed,
            mode: SimMode::Secular,
            ensemble_size: 1,
            record_every: 1,
            initial_offsets: Vec::new(),
            initial_velocities: Vec::new(),
        }
    }
}

/// Uniformly sampled positions and velocities of every ion.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    /// positions[ion][sample] (m).
    pub positions: Vec<Vec<T>>,
    /// velocities[ion][sample] (m/s).
    pub velocities: Vec<Vec<T>>,
    pub mode: SimMode,
    /// Spacing of the recorded grid (s).
    pub dt_sample: T,
}

impl<T: Float> Trajectory<T> {
    pub fn n_ions(&self) -> usize {
        self.positions.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV export with header `t,z1,v1[,z2,v2]`, SI units, 9 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self.n_ions() {
            1 => writeln!(w, "t,z1,v1")?,
            _ => writeln!(w, "t,z1,v1,z2,v2")?,
        }
        for k in 0..self.len() {
            write!(w, "{:.8e}", self.times[k].as_f64())?;
            for i in 0..self.n_ions() {
                write!(
                    w,
                    ",{:.8e},{:.8e}",
                    self.positions[i][k].as_f64(),
                    self.velocities[i][k].as_f64()
                )?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Steady-state ensemble summary derived from a set of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats<T> {
    /// Post-settle position variance per ion (m^2).
    pub sigma2: Vec<T>,
    /// Standard error of `sigma2` over ensemble members.
    pub sigma2_err: Vec<T>,
    /// Equipartition temperature per normal mode (K): [COM] or [COM, stretch].
    pub temperature: Vec<T>,
    /// Post-settle variance per mode coordinate: [COM] or [COM, stretch].
    pub mode_sigma2: Vec<T>,
    /// Mean steady-state drive amplitude (m), when a drive was supplied.
    pub rho_max: Option<T>,
    pub rho_max_err: Option<T>,
    /// Growth rate of the ensemble-mean COM mode energy (J/s), fitted over
    /// the full trajectory; meaningful for undamped heating runs.
    pub com_energy_rate: T,
}

#[derive(Clone, Copy)]
struct IonParams<T> {
    mass: T,
    charge: T,
    omega_sec: T,
    mat_a: T,
    mat_q: T,
}

fn ion_params<T: Float>(
    crystal: &CrystalConfig<T>,
    trap: &TrapConfig<T>,
) -> Result<Vec<IonParams<T>>> {
    let reference = &crystal.species[0];
    let ref_qm = reference.charge / reference.mass;
    crystal
        .species
        .iter()
        .map(|s| {
            // Mathieu parameters scale with charge-to-mass ratio relative to
            // the reference species the trap configuration was stated for.
            let scale = (s.charge / s.mass) / ref_qm;
            let mat_a = trap.a_z * scale;
            let mat_q = trap.q_z * scale;
            let omega_sec = secular_frequency_parts(trap.omega_rf, mat_a, mat_q)?;
            Ok(IonParams {
                mass: s.mass,
                charge: s.charge,
                omega_sec,
                mat_a,
                mat_q,
            })
        })
        .collect()
}

/// Equilibrium positions of the crystal (m). One ion sits at the well centre;
/// two ions balance trap stiffness against Coulomb repulsion.
pub fn equilibrium_positions<T: Float>(
    crystal: &CrystalConfig<T>,
    trap: &TrapConfig<T>,
) -> Result<Vec<T>> {
    let ions = ion_params(crystal, trap)?;
    match ions.len() {
        1 => Ok(vec![T::zero()]),
        _ => {
            let k = T::c(consts::COULOMB) * (ions[0].charge * ions[1].charge).abs();
            let c0 = ions[0].mass * ions[0].omega_sec * ions[0].omega_sec;
            let c1 = ions[1].mass * ions[1].omega_sec * ions[1].omega_sec;
            if c0 <= T::zero() || c1 <= T::zero() {
                return Err(Error::InvalidParameter(
                    "two-ion equilibrium needs a confining axial well".into(),
                ));
            }
            let d = (k * (T::one() / c0 + T::one() / c1)).cbrt();
            let s0 = k / (c0 * d * d);
            let s1 = k / (c1 * d * d);
            Ok(vec![-s0, s1])
        }
    }
}

struct Engine<T> {
    n: usize,
    mode: SimMode,
    omega_rf: T,
    mass: [T; 2],
    omega2: [T; 2],
    mat_a: [T; 2],
    mat_q: [T; 2],
    gamma: T,
    drive_accel: [T; 2],
    omega_dip: T,
    phase: T,
    /// k q0 q1 for the pair force (N m^2); zero for a single ion.
    coulomb: T,
}

impl<T: Float> Engine<T> {
    #[inline]
    fn accel(&self, z: &[T; 2], t: T, out: &mut [T; 2]) {
        let quarter_rf2 = self.omega_rf * self.omega_rf / T::c(4.0);
        for i in 0..self.n {
            let harmonic = match self.mode {
                SimMode::Secular => -self.omega2[i] * z[i],
                SimMode::FullMathieu => {
                    -quarter_rf2
                        * (self.mat_a[i]
                            - T::c(2.0) * self.mat_q[i] * (self.omega_rf * t).cos())
                        * z[i]
                }
            };
            let drive = self.drive_accel[i] * (self.omega_dip * t + self.phase).cos();
            out[i] = harmonic + drive;
        }
        if self.n == 2 {
            let d = z[0] - z[1];
            let f = self.coulomb / (d * d) * d.signum();
            out[0] += f / self.mass[0];
            out[1] -= f / self.mass[1];
        }
    }
}

fn build_engine<T: Float>(
    crystal: &CrystalConfig<T>,
    trap: &TrapConfig<T>,
    drive: &DriveSpec<T>,
) -> Result<Engine<T>> {
    let ions = ion_params(crystal, trap)?;
    let n = ions.len();
    let mut mass = [T::one(); 2];
    let mut omega2 = [T::zero(); 2];
    let mut mat_a = [T::zero(); 2];
    let mut mat_q = [T::zero(); 2];
    let mut drive_accel = [T::zero(); 2];
    for (i, ion) in ions.iter().enumerate() {
        mass[i] = ion.mass;
        omega2[i] = ion.omega_sec * ion.omega_sec;
        mat_a[i] = ion.mat_a;
        mat_q[i] = ion.mat_q;
        // A uniform drive field forces each ion in proportion to its charge.
        drive_accel[i] = drive.force * (ion.charge / ions[0].charge) / ion.mass;
    }
    let coulomb = if n == 2 {
        T::c(consts::COULOMB) * (ions[0].charge * ions[1].charge).abs()
    } else {
        T::zero()
    };
    Ok(Engine {
        n,
        mode: SimMode::Secular,
        omega_rf: trap.omega_rf,
        mass,
        omega2,
        mat_a,
        mat_q,
        gamma: crystal.gamma_z,
        drive_accel,
        omega_dip: drive.omega,
        phase: drive.phase,
        coulomb,
    })
}

fn resolve_dt<T: Float>(
    sim: &SimConfig<T>,
    engine: &Engine<T>,
) -> Result<T> {
    let mut omega_max = engine.omega_dip;
    for i in 0..engine.n {
        omega_max = omega_max.max(engine.omega2[i].sqrt());
    }
    if sim.mode == SimMode::FullMathieu {
        omega_max = omega_max.max(engine.omega_rf);
    }
    let dt = match sim.dt {
        Some(dt) => dt,
        None => {
            if omega_max <= T::zero() {
                return Err(Error::InvalidParameter(
                    "cannot choose a default dt without any finite frequency".into(),
                ));
            }
            T::c(2.0) * T::PI() / (T::c(200.0) * omega_max)
        }
    };
    if !(dt > T::zero()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if omega_max > T::zero() && dt > T::c(2.0) * T::PI() / (T::c(100.0) * omega_max) {
        return Err(Error::InvalidParameter(format!(
            "dt = {dt} exceeds the resolution bound 2 pi / (100 max frequency)"
        )));
    }
    Ok(dt)
}

fn noise_rng(seed: u64, member: u32, channel: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(member) * 4 + channel);
    rng
}

/// Integrate one ensemble member. `member` selects the reproducible RNG
/// streams; the physics is otherwise identical across members.
pub fn simulate_member<T: Float>(
    crystal: &CrystalConfig<T>,
    trap: &TrapConfig<T>,
    drive: &DriveSpec<T>,
    noise: &NoiseSpec<T>,
    sim: &SimConfig<T>,
    member: u32,
) -> Result<Trajectory<T>> {
    if !(sim.duration > T::zero()) {
        return Err(Error::InvalidParameter("duration must be positive".into()));
    }
    if sim.record_every == 0 {
        return Err(Error::InvalidParameter("record_every must be >= 1".into()));
    }
    if sim.initial_offsets.len() > crystal.n_ions()
        || sim.initial_velocities.len() > crystal.n_ions()
    {
        return Err(Error::InvalidParameter(
            "more initial conditions than ions".into(),
        ));
    }

    let mut engine = build_engine(crystal, trap, drive)?;
    engine.mode = sim.mode;
    let n = engine.n;
    let dt = resolve_dt(sim, &engine)?;
    let n_steps = (sim.duration / dt).ceil().as_f64() as usize;

    let eq = equilibrium_positions(crystal, trap)?;
    let mut z = [T::zero(); 2];
    let mut v = [T::zero(); 2];
    for i in 0..n {
        z[i] = eq[i] + sim.initial_offsets.get(i).copied().unwrap_or(T::zero());
        v[i] = sim.initial_velocities.get(i).copied().unwrap_or(T::zero());
    }

    // Per-step velocity kicks realizing the single-sided force PSD: the
    // total impulse variance over dt is S_F dt / 2, injected as two
    // half-variance kicks around the deterministic update (the symmetric
    // placement cancels the O(omega dt) bias in steady-state variances).
    let s_f = noise.force_psd();
    let mut kick = [T::zero(); 2];
    let has_noise = s_f > T::zero();
    if has_noise {
        let base = (s_f * dt / T::c(4.0)).sqrt();
        for i in 0..n {
            let charge_scale = (crystal.species[i].charge / crystal.species[0].charge).abs();
            kick[i] = base * charge_scale / engine.mass[i];
        }
    }
    let mut rngs: Vec<ChaCha8Rng> = match noise.correlation {
        NoiseCorrelation::Correlated => vec![noise_rng(sim.seed, member, 1)],
        NoiseCorrelation::Independent => (0..n)
            .map(|i| noise_rng(sim.seed, member, 2 + i as u64))
            .collect(),
    };

    let n_rec = n_steps / sim.record_every + 2;
    let mut times = Vec::with_capacity(n_rec);
    let mut positions: Vec<Vec<T>> = (0..n).map(|_| Vec::with_capacity(n_rec)).collect();
    let mut velocities: Vec<Vec<T>> = (0..n).map(|_| Vec::with_capacity(n_rec)).collect();
    times.push(T::zero());
    for i in 0..n {
        positions[i].push(z[i]);
        velocities[i].push(v[i]);
    }

    let two = T::c(2.0);
    let half_dt = dt / two;
    let friction_div = T::one() + engine.gamma * dt;
    let mut acc = [T::zero(); 2];
    let collision = T::c(COLLISION_DISTANCE);
    let runaway = T::c(RUNAWAY_POSITION);
    if n == 2 {
        let gap = (z[0] - z[1]).abs();
        if gap < collision {
            return Err(Error::IonCollision(gap.as_f64()));
        }
    }

    let apply_kicks = |v: &mut [T; 2], rngs: &mut [ChaCha8Rng]| match noise.correlation {
        NoiseCorrelation::Correlated => {
            let g: f64 = StandardNormal.sample(&mut rngs[0]);
            let g = T::c(g);
            for i in 0..n {
                v[i] += kick[i] * g;
            }
        }
        NoiseCorrelation::Independent => {
            for (i, rng) in rngs.iter_mut().enumerate().take(n) {
                let g: f64 = StandardNormal.sample(rng);
                v[i] += kick[i] * T::c(g);
            }
        }
    };

    for step in 0..n_steps {
        let t = dt * T::from_index(step);
        if has_noise {
            apply_kicks(&mut v, &mut rngs);
        }
        engine.accel(&z, t, &mut acc);
        let mut vh = [T::zero(); 2];
        for i in 0..n {
            vh[i] = v[i] + half_dt * (acc[i] - two * engine.gamma * v[i]);
            z[i] += dt * vh[i];
        }
        let t_next = dt * T::from_index(step + 1);
        engine.accel(&z, t_next, &mut acc);
        for i in 0..n {
            v[i] = (vh[i] + half_dt * acc[i]) / friction_div;
        }
        if has_noise {
            apply_kicks(&mut v, &mut rngs);
        }
        if n == 2 {
            let gap = (z[0] - z[1]).abs();
            if gap < collision {
                return Err(Error::IonCollision(gap.as_f64()));
            }
        }
        for i in 0..n {
            if !z[i].is_finite() || !v[i].is_finite() || z[i].abs() > runaway {
                return Err(Error::Instability(format!(
                    "ion {i} left the valid domain at t = {:.3e} s",
                    t_next.as_f64()
                )));
            }
        }
        if (step + 1) % sim.record_every == 0 {
            times.push(t_next);
            for i in 0..n {
                positions[i].push(z[i]);
                velocities[i].push(v[i]);
            }
        }
    }

    Ok(Trajectory {
        times,
        positions,
        velocities,
        mode: sim.mode,
        dt_sample: dt * T::from_index(sim.record_every),
    })
}

/// Integrate ensemble member 0.
pub fn simulate<T: Float>(
    crystal: &CrystalConfig<T>,
    trap: &TrapConfig<T>,
    drive: &DriveSpec<T>,
    noise: &NoiseSpec<T>,
    sim: &SimConfig<T>,
) -> Result<Trajectory<T>> {
    simulate_member(crystal, trap, drive, noise, sim, 0)
}

/// Integrate the full ensemble (members 0..ensemble_size) in parallel.
pub fn simulate_ensemble<T: Float>(
    crystal: &CrystalConfig<T>,
    trap: &TrapConfig<T>,
    drive: &DriveSpec<T>,
    noise: &NoiseSpec<T>,
    sim: &SimConfig<T>,
) -> Result<Vec<Trajectory<T>>> {
    map_ensemble(crystal, trap, drive, noise, sim, Ok)
}

/// Parallel map over ensemble members with bounded memory: each trajectory is
/// reduced to `R` as soon as it is integrated. Results keep member order, so
/// downstream reductions are deterministic.
pub fn map_ensemble<T: Float, R: Send, F>(
    crystal: &CrystalConfig<T>,
    trap: &TrapConfig<T>,
    drive: &DriveSpec<T>,
    noise: &NoiseSpec<T>,
    sim: &SimConfig<T>,
    f: F,
) -> Result<Vec<R>>
where
    F: Fn(Trajectory<T>) -> Result<R> + Sync,
{
    if sim.ensemble_size == 0 {
        return Err(Error::InvalidParameter("ensemble_size must be >= 1".into()));
    }
    (0..sim.ensemble_size as u32)
        .into_par_iter()
        .map(|member| simulate_member(crystal, trap, drive, noise, sim, member).and_then(&f))
        .collect()
}

/// Amplitude of the omega_dip quadrature components of ion 0's motion over
/// the post-settle window (lock-in demodulation on an integer number of
/// drive cycles).
pub fn steady_state_amplitude<T: Float>(
    traj: &Trajectory<T>,
    omega_dip: T,
    settle_fraction: T,
) -> Result<T> {
    if !(omega_dip > T::zero()) {
        return Err(Error::InvalidParameter(
            "demodulation frequency must be positive".into(),
        ));
    }
    if settle_fraction < T::zero() || settle_fraction >= T::one() {
        return Err(Error::InvalidParameter(
            "settle fraction must lie in [0, 1)".into(),
        ));
    }
    let len = traj.len();
    if len < 4 {
        return Err(Error::InsufficientWindow("trajectory too short".into()));
    }
    let t_end = traj.times[len - 1];
    let t_start = settle_fraction * t_end;
    let cycle = T::c(2.0) * T::PI() / omega_dip;
    let window = t_end - t_start;
    let n_cycles = (window / cycle).floor();
    if n_cycles < T::c(20.0) {
        return Err(Error::InsufficientWindow(format!(
            "post-settle window covers {} drive cycles; >= 20 required",
            n_cycles.as_f64()
        )));
    }
    let n_use = ((n_cycles * cycle) / traj.dt_sample).round().as_f64() as usize;
    let n_use = n_use.clamp(2, len);
    let start = len - n_use;
    let z = &traj.positions[0];
    let mut mean = T::zero();
    for k in start..len {
        mean += z[k];
    }
    mean /= T::from_index(n_use);
    let mut i_sum = T::zero();
    let mut q_sum = T::zero();
    for k in start..len {
        let ph = omega_dip * traj.times[k];
        let dz = z[k] - mean;
        i_sum += dz * ph.cos();
        q_sum += dz * ph.sin();
    }
    let scale = T::c(2.0) / T::from_index(n_use);
    Ok(((i_sum * scale).powi(2) + (q_sum * scale).powi(2)).sqrt())
}

fn window_start_index<T: Float>(traj: &Trajectory<T>, settle_fraction: T) -> usize {
    let t_end = traj.times[traj.len() - 1];
    let t_start = settle_fraction * t_end;
    traj.times.iter().position(|&t| t >= t_start).unwrap_or(0)
}

/// Ensemble statistics over identically configured trajectories: per-ion
/// steady-state variances, per-mode equipartition temperatures, and the COM
/// heating rate. `drive` additionally enables the coherent amplitude
/// estimate.
pub fn ensemble_stats<T: Float>(
    trajs: &[Trajectory<T>],
    crystal: &CrystalConfig<T>,
    trap: &TrapConfig<T>,
    drive: Option<&DriveSpec<T>>,
    settle_fraction: T,
) -> Result<EnsembleStats<T>> {
    if trajs.len() < 2 {
        return Err(Error::InsufficientPoints(
            "ensemble statistics need at least 2 trajectories".into(),
        ));
    }
    let n_ions = trajs[0].n_ions();
    let len = trajs[0].len();
    if n_ions != crystal.n_ions() {
        return Err(Error::ConfigMismatch(
            "trajectory ion count does not match the crystal".into(),
        ));
    }
    for t in trajs.iter() {
        if t.n_ions() != n_ions || t.len() != len || t.mode != trajs[0].mode {
            return Err(Error::ConfigMismatch(
                "ensemble members have differing shapes or modes".into(),
            ));
        }
        if (t.dt_sample - trajs[0].dt_sample).abs() > trajs[0].dt_sample * T::c(1e-12) {
            return Err(Error::ConfigMismatch(
                "ensemble members have differing sample spacings".into(),
            ));
        }
    }

    let ions = ion_params(crystal, trap)?;
    let m_total = crystal.total_mass();
    let start = window_start_index(&trajs[0], settle_fraction);

    // Per-ion variance: mean over members of each member's window variance.
    let mut sigma2 = Vec::with_capacity(n_ions);
    let mut sigma2_err = Vec::with_capacity(n_ions);
    for ion in 0..n_ions {
        let mut member_vars = crate::numeric::RunningStats::<T>::default();
        for traj in trajs {
            let mut stats = crate::numeric::RunningStats::<T>::default();
            for k in start..len {
                stats.push(traj.positions[ion][k]);
            }
            member_vars.push(stats.variance());
        }
        sigma2.push(member_vars.mean);
        sigma2_err.push(
            (member_vars.sample_variance() / T::from_index(trajs.len())).sqrt(),
        );
    }

    // Mode coordinates: COM (mass-weighted) and, for two ions, stretch.
    let mode_count = if n_ions == 2 { 2 } else { 1 };
    let mut mode_sigma2 = Vec::with_capacity(mode_count);
    let mode_freqs: Vec<T> = if n_ions == 2 {
        let mu = ions[1].mass / ions[0].mass;
        let (lo, hi) = two_ion_eigenfrequencies(mu, ions[0].omega_sec)?;
        vec![lo, hi]
    } else {
        vec![ions[0].omega_sec]
    };

    for mode in 0..mode_count {
        let mut member_vars = crate::numeric::RunningStats::<T>::default();
        for traj in trajs {
            let mut stats = crate::numeric::RunningStats::<T>::default();
            for k in start..len {
                let value = if n_ions == 2 {
                    if mode == 0 {
                        (ions[0].mass * traj.positions[0][k]
                            + ions[1].mass * traj.positions[1][k])
                            / m_total
                    } else {
                        traj.positions[1][k] - traj.positions[0][k]
                    }
                } else {
                    traj.positions[0][k]
                };
                stats.push(value);
            }
            member_vars.push(stats.variance());
        }
        mode_sigma2.push(member_vars.mean);
    }

    // Equipartition temperatures with the effective mode masses.
    let kb = T::c(consts::BOLTZMANN);
    let mut temperature = Vec::with_capacity(mode_count);
    for mode in 0..mode_count {
        let m_eff = if n_ions == 2 {
            if mode == 0 {
                m_total
            } else {
                ions[0].mass * ions[1].mass / m_total
            }
        } else {
            ions[0].mass
        };
        let w = mode_freqs[mode];
        temperature.push(m_eff * w * w * mode_sigma2[mode] / kb);
    }

    // Ensemble-mean COM energy vs time, fitted linearly (heating rate).
    let eq = equilibrium_positions(crystal, trap)?;
    let com_eq = if n_ions == 2 {
        (ions[0].mass * eq[0] + ions[1].mass * eq[1]) / m_total
    } else {
        T::zero()
    };
    let w_com = mode_freqs[0];
    let mut mean_energy = vec![T::zero(); len];
    for traj in trajs {
        for k in 0..len {
            let (zc, vc) = if n_ions == 2 {
                (
                    (ions[0].mass * traj.positions[0][k] + ions[1].mass * traj.positions[1][k])
                        / m_total,
                    (ions[0].mass * traj.velocities[0][k] + ions[1].mass * traj.velocities[1][k])
                        / m_total,
                )
            } else {
                (traj.positions[0][k], traj.velocities[0][k])
            };
            let dz = zc - com_eq;
            mean_energy[k] +=
                T::c(0.5) * m_total * (vc * vc + w_com * w_com * dz * dz);
        }
    }
    let inv_members = T::one() / T::from_index(trajs.len());
    for e in mean_energy.iter_mut() {
        *e *= inv_members;
    }
    let unit_w = vec![T::one(); len];
    let fit = crate::numeric::weighted_line_fit(&trajs[0].times, &mean_energy, &unit_w)?;

    // Coherent amplitude under a drive.
    let (rho_max, rho_max_err) = match drive {
        Some(d) if d.is_active() => {
            let mut stats = crate::numeric::RunningStats::<T>::default();
            for traj in trajs {
                stats.push(steady_state_amplitude(traj, d.omega, settle_fraction)?);
            }
            (
                Some(stats.mean),
                Some((stats.sample_variance() / T::from_index(trajs.len())).sqrt()),
            )
        }
        _ => (None, None),
    };

    Ok(EnsembleStats {
        sigma2,
        sigma2_err,
        temperature,
        mode_sigma2,
        rho_max,
        rho_max_err,
        com_energy_rate: fit.slope,
    })
}

/// Ratio of RF-frequency motion amplitude to secular amplitude for ion 0 of a
/// full-Mathieu trajectory.
///
/// The recorded signal is split by a moving average spanning one RF period
/// into a secular band and its residual (the micromotion band); the reported
/// ratio sqrt(2) RMS(residual) / RMS(secular) equals the micromotion envelope
/// amplitude relative to the secular amplitude for modulated sinusoids, i.e.
/// ~q_z/2 to first order in the Mathieu expansion.
pub fn micromotion_ratio<T: Float>(traj: &Trajectory<T>, trap: &TrapConfig<T>) -> Result<T> {
    if traj.mode != SimMode::FullMathieu {
        return Err(Error::SecularModeInput);
    }
    let period_rf = T::c(2.0) * T::PI() / trap.omega_rf;
    let k = (period_rf / traj.dt_sample).round();
    let k_usize = k.as_f64() as usize;
    if k_usize < 8 {
        return Err(Error::InsufficientWindow(
            "record stride too coarse to resolve the RF period".into(),
        ));
    }
    if ((k * traj.dt_sample - period_rf) / period_rf).abs() > T::c(0.02) {
        return Err(Error::InsufficientWindow(
            "sample grid is not commensurate with the RF period".into(),
        ));
    }
    let start = window_start_index(traj, T::c(DEFAULT_SETTLE_FRACTION));
    let z_raw = &traj.positions[0][start..];
    if z_raw.len() < 4 * k_usize {
        return Err(Error::InsufficientWindow(
            "need at least 4 RF periods after settling".into(),
        ));
    }
    let mut mean = T::zero();
    for &x in z_raw {
        mean += x;
    }
    mean /= T::from_index(z_raw.len());

    // Moving average over one RF period = secular band; residual = micromotion.
    let inv_k = T::one() / T::from_index(k_usize);
    let mut window_sum = T::zero();
    for item in z_raw.iter().take(k_usize) {
        window_sum += *item - mean;
    }
    let mut sec_sq = T::zero();
    let mut mm_sq = T::zero();
    let n_out = z_raw.len() - k_usize;
    for j in 0..n_out {
        let sec = window_sum * inv_k;
        let centre = z_raw[j + k_usize / 2] - mean;
        let mm = centre - sec;
        sec_sq += sec * sec;
        mm_sq += mm * mm;
        window_sum += (z_raw[j + k_usize] - mean) - (z_raw[j] - mean);
    }
    if sec_sq <= T::zero() {
        return Ok(T::zero());
    }
    Ok(T::c(std::f64::consts::SQRT_2) * (mm_sq / sec_sq).sqrt())
}

/// Valley-to-peak contrast of a (possibly) bimodal axial profile:
/// (mean peak height - valley depth) / mean peak height, and 0 when the
/// profile is unimodal.
pub fn lobe_distinguishability<T: Float>(profile: &AxialProfile<T>) -> T {
    let n = profile.counts.len();
    if n < 5 {
        return T::zero();
    }
    // Light smoothing so single-count wiggles do not register as lobes.
    let w = (n / 25).max(3) | 1;
    let half = w / 2;
    let mut smooth = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let mut acc = T::zero();
        for k in lo..hi {
            acc += profile.counts[k];
        }
        smooth.push(acc / T::from_index(hi - lo));
    }
    // Local maxima of the smoothed curve.
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        if smooth[i] >= smooth[i - 1] && smooth[i] > smooth[i + 1] {
            peaks.push(i);
        }
    }
    if peaks.len() < 2 {
        return T::zero();
    }
    peaks.sort_by(|&a, &b| smooth[b].partial_cmp(&smooth[a]).unwrap());
    // The two tallest peaks must be genuinely separated.
    let mut first = peaks[0];
    let mut second = None;
    for &p in peaks.iter().skip(1) {
        if p.abs_diff(first) >= w {
            second = Some(p);
            break;
        }
    }
    let Some(mut second) = second else {
        return T::zero();
    };
    if first > second {
        std::mem::swap(&mut first, &mut second);
    }
    let mut valley = smooth[first];
    for item in smooth.iter().take(second).skip(first) {
        valley = valley.min(*item);
    }
    let peak_mean = (smooth[first] + smooth[second]) / T::c(2.0);
    if peak_mean <= T::zero() {
        return T::zero();
    }
    ((peak_mean - valley) / peak_mean).max(T::zero()).min(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::IonSpecies;

    const TWO_PI: f64 = std::f64::consts::TAU;

    fn trap_80khz() -> TrapConfig<f64> {
        let a = crate::physics::axial_a_for_frequency(TWO_PI * 80e3, TWO_PI * 1.47e6, 0.25)
            .unwrap();
        TrapConfig::new(TWO_PI * 1.47e6, a, 0.25).unwrap()
    }

    fn one_ion(gamma: f64) -> CrystalConfig<f64> {
        CrystalConfig::new(vec![IonSpecies::ca40()], gamma).unwrap()
    }

    fn two_ions(gamma: f64) -> CrystalConfig<f64> {
        CrystalConfig::new(vec![IonSpecies::ca40(), IonSpecies::ca40()], gamma).unwrap()
    }

    #[test]
    fn damped_relaxation_reaches_equilibrium() {
        let trap = trap_80khz();
        let crystal = two_ions(2.0e3);
        let mut sim = SimConfig::new(8e-3, 1);
        sim.initial_offsets = vec![4e-6, -3e-6];
        sim.record_every = 50;
        let traj = simulate(&crystal, &trap, &DriveSpec::none(), &NoiseSpec::none(), &sim)
            .unwrap();
        let eq = equilibrium_positions(&crystal, &trap).unwrap();
        let last = traj.len() - 1;
        for i in 0..2 {
            let rel = (traj.positions[i][last] - eq[i]).abs() / eq[i].abs();
            assert!(rel < 5e-3, "ion {i} ended {rel} away from equilibrium");
        }
        // Separation matches the closed-form prediction.
        let sep = traj.positions[1][last] - traj.positions[0][last];
        let predicted =
            crate::physics::equilibrium_separation(&crystal.species[0], TWO_PI * 80e3).unwrap();
        assert!((sep - predicted).abs() / predicted < 5e-3);
    }

    #[test]
    fn resonant_drive_reaches_analytic_amplitude() {
        let trap = trap_80khz();
        let gamma = 500.0;
        let crystal = one_ion(gamma);
        let omega = TWO_PI * 80e3;
        let force = 1e-22;
        let drive = DriveSpec::new(force, omega, 0.0).unwrap();
        let mut sim = SimConfig::new(0.05, 3);
        sim.record_every = 10;
        let traj = simulate(&crystal, &trap, &drive, &NoiseSpec::none(), &sim).unwrap();
        let rho = steady_state_amplitude(&traj, omega, 0.6).unwrap();
        let expected = force / (2.0 * crystal.species[0].mass * gamma * omega);
        assert!(
            (rho - expected).abs() / expected < 0.01,
            "rho = {rho}, expected {expected}"
        );
    }

    #[test]
    fn linear_response_matches_analytic_pointwise() {
        // Simulated rho(omega_dip) tracks the driven-damped response within
        // 3% across the resonance for gamma/omega ~ 1e-3.
        let trap = trap_80khz();
        let gamma = 500.0;
        let crystal = one_ion(gamma);
        let m = crystal.species[0].mass;
        let omega_z = TWO_PI * 80e3;
        let force = 1e-22;
        for df in [-400.0, -150.0, 0.0, 150.0, 400.0] {
            let w = TWO_PI * (80e3 + df);
            let drive = DriveSpec::new(force, w, 0.0).unwrap();
            let mut sim = SimConfig::new(0.05, 12);
            sim.record_every = 10;
            let traj = simulate(&crystal, &trap, &drive, &NoiseSpec::none(), &sim).unwrap();
            let rho = steady_state_amplitude(&traj, w, 0.6).unwrap();
            let expected = force / m
                / ((2.0 * gamma * w).powi(2) + (omega_z * omega_z - w * w).powi(2)).sqrt();
            assert!(
                (rho - expected).abs() / expected < 0.03,
                "df = {df} Hz: rho = {rho:.4e}, expected {expected:.4e}"
            );
        }
    }

    #[test]
    fn amplitude_of_pure_sinusoid_is_exact() {
        // Synthetic trajectory: z = A cos(w t), commensurate sampling.
        let omega = TWO_PI * 1000.0;
        let cycle = TWO_PI / omega;
        let dt = cycle / 64.0;
        let n = 64 * 64;
        let amp = 3.7e-6;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let z: Vec<f64> = times.iter().map(|&t| amp * (omega * t).cos()).collect();
        let v: Vec<f64> = times.iter().map(|&t| -amp * omega * (omega * t).sin()).collect();
        let traj = Trajectory {
            times,
            positions: vec![z],
            velocities: vec![v],
            mode: SimMode::Secular,
            dt_sample: dt,
        };
        let rho = steady_state_amplitude(&traj, omega, 0.0).unwrap();
        assert!((rho - amp).abs() / amp < 1e-12);
    }

    #[test]
    fn noise_only_amplitude_consistent_with_zero() {
        let trap = trap_80khz();
        let gamma = 500.0;
        let crystal = one_ion(gamma);
        let omega = TWO_PI * 80e3;
        let s_f = 1e-50;
        let noise = NoiseSpec::from_force_psd(s_f, NoiseCorrelation::Correlated).unwrap();
        let mut sim = SimConfig::new(0.05, 17);
        sim.record_every = 10;
        let traj = simulate(&crystal, &trap, &DriveSpec::none(), &noise, &sim).unwrap();
        let rho = steady_state_amplitude(&traj, omega, 0.5).unwrap();
        // Lock-in noise floor: Var(I) + Var(Q) = 2 S_z(omega) / W with
        // S_z(omega_z) = S_F / (4 m^2 gamma^2 omega^2) on resonance.
        let m = crystal.species[0].mass;
        let window = 0.5 * 0.05;
        let s_z = s_f / (4.0 * m * m * gamma * gamma * omega * omega);
        let floor = (2.0 * s_z / window).sqrt();
        assert!(rho < 3.0 * floor, "rho = {rho}, floor = {floor}");
    }

    #[test]
    fn trajectories_are_deterministic_per_seed() {
        let trap = trap_80khz();
        let crystal = one_ion(300.0);
        let noise = NoiseSpec::from_force_psd(1e-48, NoiseCorrelation::Correlated).unwrap();
        let mut sim = SimConfig::new(2e-3, 99);
        sim.record_every = 7;
        let a = simulate(&crystal, &trap, &DriveSpec::none(), &noise, &sim).unwrap();
        let b = simulate(&crystal, &trap, &DriveSpec::none(), &noise, &sim).unwrap();
        assert_eq!(a, b);
        let c = simulate_member(&crystal, &trap, &DriveSpec::none(), &noise, &sim, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn doubling_force_psd_doubles_variance() {
        let trap = trap_80khz();
        let crystal = one_ion(400.0);
        let mut sim = SimConfig::new(0.04, 5);
        sim.record_every = 10;
        sim.ensemble_size = 2;
        let run = |psd: f64| {
            let noise = NoiseSpec::from_force_psd(psd, NoiseCorrelation::Correlated).unwrap();
            let trajs = simulate_ensemble(&crystal, &trap, &DriveSpec::none(), &noise, &sim)
                .unwrap();
            ensemble_stats(&trajs, &crystal, &trap, None, 0.5).unwrap().sigma2[0]
        };
        let s1 = run(1e-48);
        let s2 = run(2e-48);
        // Same seed, linear system: scales exactly with the PSD.
        assert!((s2 / s1 - 2.0).abs() < 1e-9, "ratio {}", s2 / s1);
    }

    #[test]
    fn identical_zero_trajectories_give_zero_stats() {
        let trap = trap_80khz();
        let crystal = one_ion(300.0);
        let sim = SimConfig::new(1e-3, 4);
        let traj = simulate(&crystal, &trap, &DriveSpec::none(), &NoiseSpec::none(), &sim)
            .unwrap();
        let stats = ensemble_stats(&[traj.clone(), traj], &crystal, &trap, None, 0.5).unwrap();
        assert!(stats.sigma2[0].abs() < 1e-30);
        assert!(stats.temperature[0].abs() < 1e-20);
    }

    #[test]
    fn energy_conserved_without_damping() {
        // gamma = 0, no drive, no noise, secular mode: relative energy
        // deviation stays below 1e-6 over 1e4 periods (velocity Verlet).
        let trap = trap_80khz();
        let crystal = one_ion(0.0);
        let omega = TWO_PI * 80e3;
        let period = TWO_PI / omega;
        // Verlet's bounded energy oscillation has amplitude ~(w dt)^2/4;
        // 4500 steps per period keeps every sampled deviation below 1e-6.
        let mut sim = SimConfig::new(1e4 * period, 1);
        sim.dt = Some(period / 4500.0);
        sim.record_every = 977; // prime stride: samples cover all phases
        sim.initial_offsets = vec![2e-6];
        let traj = simulate(&crystal, &trap, &DriveSpec::none(), &NoiseSpec::none(), &sim)
            .unwrap();
        let m = crystal.species[0].mass;
        let e0 = 0.5 * m * omega * omega * 4e-12;
        let mut worst: f64 = 0.0;
        for k in 0..traj.len() {
            let z = traj.positions[0][k];
            let v = traj.velocities[0][k];
            let e = 0.5 * m * (v * v + omega * omega * z * z);
            worst = worst.max(((e - e0) / e0).abs());
        }
        assert!(worst < 1e-6, "max relative energy deviation {worst}");
    }

    #[test]
    fn equal_mass_modes_at_predicted_frequencies() {
        // Free two-ion oscillation: COM at omega_z, stretch at sqrt(3) omega_z.
        let trap = trap_80khz();
        let crystal = two_ions(0.0);
        let omega = TWO_PI * 80e3;
        let mut sim = SimConfig::new(25e-3, 2);
        sim.initial_offsets = vec![0.3e-6, 0.1e-6];
        sim.record_every = 4;
        let traj = simulate(&crystal, &trap, &DriveSpec::none(), &NoiseSpec::none(), &sim)
            .unwrap();
        let len = traj.len();
        let com: Vec<f64> = (0..len)
            .map(|k| 0.5 * (traj.positions[0][k] + traj.positions[1][k]))
            .collect();
        let eqs = equilibrium_positions(&crystal, &trap).unwrap();
        let d_eq = eqs[1] - eqs[0];
        let stretch: Vec<f64> = (0..len)
            .map(|k| traj.positions[1][k] - traj.positions[0][k] - d_eq)
            .collect();
        let peak = |series: &[f64], centre: f64| -> f64 {
            let mut best = (0.0, 0.0);
            let steps = 400;
            for s in 0..=steps {
                let w = centre * (0.99 + 0.02 * s as f64 / steps as f64);
                let mut i_sum = 0.0;
                let mut q_sum = 0.0;
                for (k, &x) in series.iter().enumerate() {
                    let ph = w * traj.times[k];
                    i_sum += x * ph.cos();
                    q_sum += x * ph.sin();
                }
                let a = i_sum * i_sum + q_sum * q_sum;
                if a > best.1 {
                    best = (w, a);
                }
            }
            best.0
        };
        let w_com = peak(&com, omega);
        let w_str = peak(&stretch, 3.0_f64.sqrt() * omega);
        assert!((w_com - omega).abs() / omega < 5e-3);
        assert!((w_str - 3.0_f64.sqrt() * omega).abs() / (3.0_f64.sqrt() * omega) < 5e-3);
    }

    #[test]
    fn collision_raises_error() {
        let trap = trap_80khz();
        let crystal = two_ions(0.0);
        let mut sim = SimConfig::new(1e-3, 1);
        // Nearly coincident start: Coulomb blows the pair apart through the
        // collision guard within the first steps.
        let eq = equilibrium_positions(&crystal, &trap).unwrap();
        sim.initial_offsets = vec![-eq[0] - 4.0e-10, -eq[1] + 4.0e-10];
        let got = simulate(&crystal, &trap, &DriveSpec::none(), &NoiseSpec::none(), &sim);
        assert!(matches!(got, Err(Error::IonCollision(_))));
    }

    #[test]
    fn mathieu_instability_detected() {
        // q = 0.95 is outside the stability region: exponential growth.
        let trap = TrapConfig::new(TWO_PI * 1.47e6, 0.0, 0.95).unwrap();
        let crystal = one_ion(0.0);
        let mut sim = SimConfig::new(5e-3, 1);
        sim.mode = SimMode::FullMathieu;
        sim.initial_offsets = vec![1e-6];
        let got = simulate(&crystal, &trap, &DriveSpec::none(), &NoiseSpec::none(), &sim);
        assert!(matches!(got, Err(Error::Instability(_))));
    }

    #[test]
    fn micromotion_requires_full_mathieu() {
        let trap = trap_80khz();
        let crystal = one_ion(300.0);
        let sim = SimConfig::new(1e-3, 1);
        let traj = simulate(&crystal, &trap, &DriveSpec::none(), &NoiseSpec::none(), &sim)
            .unwrap();
        assert!(matches!(
            micromotion_ratio(&traj, &trap),
            Err(Error::SecularModeInput)
        ));
    }

    #[test]
    fn micromotion_vanishes_for_small_q() {
        let trap = TrapConfig::new(TWO_PI * 1.47e6, 3e-3, 1e-3).unwrap();
        let omega_z = crate::physics::secular_frequency(&trap).unwrap();
        let crystal = one_ion(2000.0);
        let drive = DriveSpec::new(2e-22, omega_z, 0.0).unwrap();
        let mut sim = SimConfig::new(8e-3, 6);
        sim.mode = SimMode::FullMathieu;
        let traj = simulate(&crystal, &trap, &drive, &NoiseSpec::none(), &sim).unwrap();
        let ratio = micromotion_ratio(&traj, &trap).unwrap();
        assert!(ratio < 0.01, "ratio = {ratio}");
    }

    #[test]
    fn distinguishability_of_synthetic_profiles() {
        // Two well-separated Gaussians: contrast ~ 1.
        let n = 201;
        let sep = 5.0; // in sigma units
        let make = |sep: f64| {
            let centers: Vec<f64> = (0..n).map(|i| -8.0 + 16.0 * i as f64 / (n - 1) as f64).collect();
            let counts: Vec<f64> = centers
                .iter()
                .map(|&z| {
                    1e4 * ((-0.5 * (z - sep / 2.0) * (z - sep / 2.0)).exp()
                        + (-0.5 * (z + sep / 2.0) * (z + sep / 2.0)).exp())
                })
                .collect();
            AxialProfile::new(centers, counts, None).unwrap()
        };
        let deep = lobe_distinguishability(&make(sep));
        assert!(deep > 0.9, "contrast = {deep}");
        // Single Gaussian: 0.
        let single = lobe_distinguishability(&make(0.0));
        assert!(single == 0.0, "contrast = {single}");
        // Monotone decrease as the lobes merge.
        let seps = [5.0, 4.0, 3.0, 2.5, 2.0, 1.5, 0.5];
        let values: Vec<f64> = seps.iter().map(|&s| lobe_distinguishability(&make(s))).collect();
        for pair in values.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "not monotone: {values:?}");
        }
        assert!(values[values.len() - 1] == 0.0);
    }

    #[test]
    fn trajectory_csv_header_and_shape() {
        let trap = trap_80khz();
        let crystal = two_ions(300.0);
        let mut sim = SimConfig::new(2e-4, 1);
        sim.record_every = 20;
        let traj = simulate(&crystal, &trap, &DriveSpec::none(), &NoiseSpec::none(), &sim)
            .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,z1,v1,z2,v2");
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), 5);
    }

    #[test]
    fn dt_resolution_bound_enforced() {
        let trap = trap_80khz();
        let crystal = one_ion(300.0);
        let mut sim = SimConfig::new(1e-3, 1);
        sim.dt = Some(1e-6); // ~12 steps per period: too coarse
        let got = simulate(&crystal, &trap, &DriveSpec::none(), &NoiseSpec::none(), &sim);
        assert!(matches!(got, Err(Error::InvalidParameter(_))));
    }
}
