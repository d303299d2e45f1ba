//! Nonlinear least-squares extraction of physical parameters: driven-profile
//! fits, resonance-curve fits, linear noise fits with changepoint detection,
//! and the mass-ratio inversion of the two-ion eigenfrequency relation.
//!
//! The optimizer is a damped Gauss-Newton (Levenberg-style adaptive damping)
//! with forward finite-difference Jacobians (relative step 1e-6). Parameter
//! uncertainties come from the local quadratic model of the weighted
//! objective, i.e. the inverse of J^T W J at the optimum.

use crate::error::{Error, Result};
use crate::float::Float;
use crate::imaging::{
    profile_driven_closed, profile_lorentzian, profile_thermal, two_ion_profile, AxialProfile,
    ProfileParams, TwoIonProfileParams,
};
use crate::numeric::{invert_in_place, solve_linear, weighted_line_fit};
use crate::physics::two_ion_eigenfrequencies;

/// Result of a parameter fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    /// Fitted parameters, in model order.
    pub params: Vec<(String, T)>,
    /// 1-sigma uncertainty per fitted parameter.
    pub uncertainties: Vec<T>,
    pub chi2_per_dof: T,
    pub converged: bool,
    pub n_iterations: usize,
    /// Unweighted residuals data - model, in data order.
    pub residuals: Vec<T>,
    /// Derived quantities (name, value, 1-sigma).
    pub derived: Vec<(String, T, T)>,
}

impl<T: Float> FitResult<T> {
    pub fn param(&self, name: &str) -> Option<T> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn uncertainty(&self, name: &str) -> Option<T> {
        self.params
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| self.uncertainties[i])
    }

    pub fn derived_value(&self, name: &str) -> Option<(T, T)> {
        self.derived
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, v, e)| (*v, *e))
    }

    /// JSON document with parameters, uncertainties, fit quality, residuals,
    /// and an arbitrary provenance blob (typically the input configuration).
    pub fn to_json(&self, provenance: serde_json::Value) -> serde_json::Value {
        let params: serde_json::Map<String, serde_json::Value> = self
            .params
            .iter()
            .map(|(n, v)| (n.clone(), serde_json::json!(v.as_f64())))
            .collect();
        let uncertainties: serde_json::Map<String, serde_json::Value> = self
            .params
            .iter()
            .zip(self.uncertainties.iter())
            .map(|((n, _), u)| (n.clone(), serde_json::json!(u.as_f64())))
            .collect();
        let derived: serde_json::Map<String, serde_json::Value> = self
            .derived
            .iter()
            .map(|(n, v, e)| {
                (
                    n.clone(),
                    serde_json::json!({"value": v.as_f64(), "uncertainty": e.as_f64()}),
                )
            })
            .collect();
        serde_json::json!({
            "params": params,
            "uncertainties": uncertainties,
            "derived": derived,
            "chi2_per_dof": self.chi2_per_dof.as_f64(),
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "residuals": self.residuals.iter().map(|r| r.as_f64()).collect::<Vec<_>>(),
            "provenance": provenance,
        })
    }
}

/// Amplitude-vs-frequency scan of a driven resonance.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceScan<T> {
    /// Angular drive frequencies (rad/s), strictly increasing.
    pub frequencies: Vec<T>,
    /// Steady-state amplitudes (m).
    pub rho_max: Vec<T>,
    /// 1-sigma amplitude uncertainties (m).
    pub uncertainties: Vec<T>,
}

impl<T: Float> ResonanceScan<T> {
    pub fn new(frequencies: Vec<T>, rho_max: Vec<T>, uncertainties: Vec<T>) -> Result<Self> {
        if frequencies.len() != rho_max.len() || frequencies.len() != uncertainties.len() {
            return Err(Error::InvalidParameter(
                "scan arrays must have matching lengths".into(),
            ));
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "scan frequencies must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            frequencies,
            rho_max,
            uncertainties,
        })
    }
}

/// Position-variance-vs-noise-power sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSweep<T> {
    /// Squared noise amplitudes (V^2).
    pub v2: Vec<T>,
    /// Steady-state variances (m^2) or any variance-like observable.
    pub sigma2: Vec<T>,
    pub uncertainties: Vec<T>,
}

impl<T: Float> NoiseSweep<T> {
    pub fn new(v2: Vec<T>, sigma2: Vec<T>, uncertainties: Vec<T>) -> Result<Self> {
        if v2.len() != sigma2.len() || v2.len() != uncertainties.len() {
            return Err(Error::InvalidParameter(
                "sweep arrays must have matching lengths".into(),
            ));
        }
        if v2.iter().any(|&v| v < T::zero()) {
            return Err(Error::InvalidParameter(
                "noise powers must be nonnegative".into(),
            ));
        }
        Ok(Self {
            v2,
            sigma2,
            uncertainties,
        })
    }
}

struct LmOptions<T> {
    max_iterations: usize,
    rel_obj_tol: T,
    step_tol: T,
}

impl<T: Float> Default for LmOptions<T> {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_obj_tol: T::c(1e-10),
            step_tol: T::c(1e-12),
        }
    }
}

struct LmOutcome<T> {
    params: Vec<T>,
    covariance: Vec<T>,
    chi2: T,
    n_iterations: usize,
    converged: bool,
    /// Accepted objective values, used by the step-control contract tests.
    #[cfg_attr(not(test), allow(dead_code))]
    chi2_history: Vec<T>,
}

fn chi2_of<T: Float, M>(model: &M, x: &[T], y: &[T], w: &[T], p: &[T]) -> Option<T>
where
    M: Fn(&[T], T) -> Result<T>,
{
    let mut acc = T::zero();
    for i in 0..x.len() {
        let m = model(p, x[i]).ok()?;
        if !m.is_finite() {
            return None;
        }
        let r = y[i] - m;
        acc += w[i] * r * r;
    }
    acc.is_finite().then_some(acc)
}

/// Damped Gauss-Newton minimization of sum_i w_i (y_i - model(p, x_i))^2.
fn levenberg_marquardt<T: Float, M>(
    model: &M,
    x: &[T],
    y: &[T],
    w: &[T],
    p0: &[T],
    scales: &[T],
    opts: &LmOptions<T>,
) -> Result<LmOutcome<T>>
where
    M: Fn(&[T], T) -> Result<T>,
{
    let n = x.len();
    let k = p0.len();
    if n < k {
        return Err(Error::InsufficientPoints(format!(
            "{n} data points cannot constrain {k} parameters"
        )));
    }
    let mut p = p0.to_vec();
    let mut chi2 = chi2_of(model, x, y, w, &p).ok_or_else(|| {
        Error::InvalidParameter("model is not evaluable at the initial guess".into())
    })?;
    let mut history = vec![chi2];
    let mut lambda = T::c(1e-3);
    let lambda_up = T::c(8.0);
    let lambda_down = T::c(0.25);
    let lambda_max = T::c(1e14);
    let mut converged = false;
    let mut iterations = 0;

    let mut jac = vec![T::zero(); n * k];
    let mut res = vec![T::zero(); n];

    while iterations < opts.max_iterations {
        iterations += 1;
        // Residuals and forward-difference Jacobian at p.
        for i in 0..n {
            let m = model(&p, x[i])
                .map_err(|e| Error::InvalidParameter(format!("model evaluation failed: {e}")))?;
            res[i] = y[i] - m;
        }
        for j in 0..k {
            let h = T::c(1e-6) * p[j].abs().max(scales[j].abs()).max(T::c(1e-300));
            let mut pj = p.clone();
            pj[j] += h;
            for i in 0..n {
                let m1 = match model(&pj, x[i]) {
                    Ok(v) => v,
                    Err(_) => {
                        // One-sided step out of the domain: difference backwards.
                        let mut pj2 = p.clone();
                        pj2[j] -= h;
                        let m0 = model(&pj2, x[i]).map_err(|e| {
                            Error::InvalidParameter(format!("model evaluation failed: {e}"))
                        })?;
                        let base = y[i] - res[i];
                        jac[i * k + j] = (base - m0) / h;
                        continue;
                    }
                };
                let base = y[i] - res[i]; // model(p, x_i)
                jac[i * k + j] = (m1 - base) / h;
            }
        }
        // Normal equations: A = J^T W J, g = J^T W r.
        let mut a = vec![T::zero(); k * k];
        let mut g = vec![T::zero(); k];
        for i in 0..n {
            for j1 in 0..k {
                let jw = jac[i * k + j1] * w[i];
                g[j1] += jw * res[i];
                for j2 in j1..k {
                    a[j1 * k + j2] += jw * jac[i * k + j2];
                }
            }
        }
        for j1 in 0..k {
            for j2 in 0..j1 {
                a[j1 * k + j2] = a[j2 * k + j1];
            }
        }

        let mut stepped = false;
        while lambda <= lambda_max {
            let mut damped = a.clone();
            for j in 0..k {
                damped[j * k + j] += lambda * a[j * k + j].max(T::c(1e-300));
            }
            let mut rhs = g.clone();
            let Some(step) = solve_linear(&mut damped, &mut rhs, k) else {
                lambda *= lambda_up;
                continue;
            };
            let mut candidate = p.clone();
            for j in 0..k {
                candidate[j] += step[j];
            }
            match chi2_of(model, x, y, w, &candidate) {
                Some(c2) if c2 <= chi2 => {
                    // Accepted: the objective never increases.
                    let rel_drop = (chi2 - c2) / chi2.max(T::c(1e-300));
                    let step_norm = step
                        .iter()
                        .zip(scales.iter())
                        .map(|(s, sc)| (*s / sc.abs().max(T::c(1e-300))).powi(2))
                        .sum::<T>()
                        .sqrt();
                    p = candidate;
                    chi2 = c2;
                    history.push(chi2);
                    lambda = (lambda * lambda_down).max(T::c(1e-14));
                    stepped = true;
                    if rel_drop < opts.rel_obj_tol || step_norm < opts.step_tol {
                        converged = true;
                    }
                    break;
                }
                _ => {
                    lambda *= lambda_up;
                }
            }
        }
        if converged {
            break;
        }
        if !stepped {
            // Damping exhausted without an acceptable step: call the current
            // point converged only if the gradient has effectively vanished.
            let gnorm = g.iter().map(|v| v.abs()).fold(T::zero(), T::max);
            if gnorm < T::c(1e-30) {
                converged = true;
            }
            break;
        }
    }

    if !converged && iterations >= opts.max_iterations {
        return Err(Error::NoConvergence(opts.max_iterations));
    }

    // Covariance from the undamped normal equations at the optimum.
    let mut a = vec![T::zero(); k * k];
    for i in 0..n {
        for j in 0..k {
            let h = T::c(1e-6) * p[j].abs().max(scales[j].abs()).max(T::c(1e-300));
            let mut pj = p.clone();
            pj[j] += h;
            let m1 = model(&pj, x[i]).unwrap_or(T::nan());
            let m0 = model(&p, x[i]).unwrap_or(T::nan());
            jac[i * k + j] = (m1 - m0) / h;
        }
    }
    for i in 0..n {
        for j1 in 0..k {
            let jw = jac[i * k + j1] * w[i];
            for j2 in j1..k {
                a[j1 * k + j2] += jw * jac[i * k + j2];
            }
        }
    }
    for j1 in 0..k {
        for j2 in 0..j1 {
            a[j1 * k + j2] = a[j2 * k + j1];
        }
    }
    let covariance = if invert_in_place(&mut a, k) {
        a
    } else {
        vec![T::infinity(); k * k]
    };

    Ok(LmOutcome {
        params: p,
        covariance,
        chi2,
        n_iterations: iterations,
        converged,
        chi2_history: history,
    })
}

fn finish_fit<T: Float, M>(
    model: &M,
    x: &[T],
    y: &[T],
    outcome: &LmOutcome<T>,
    names: &[&str],
) -> FitResult<T>
where
    M: Fn(&[T], T) -> Result<T>,
{
    let k = names.len();
    let dof = (x.len().saturating_sub(k)).max(1);
    let residuals: Vec<T> = x
        .iter()
        .zip(y.iter())
        .map(|(&xi, &yi)| yi - model(&outcome.params, xi).unwrap_or(T::nan()))
        .collect();
    FitResult {
        params: names
            .iter()
            .zip(outcome.params.iter())
            .map(|(n, v)| (n.to_string(), *v))
            .collect(),
        uncertainties: (0..k)
            .map(|j| {
                let v = outcome.covariance[j * k + j];
                if v.is_finite() && v >= T::zero() {
                    v.sqrt()
                } else {
                    T::infinity()
                }
            })
            .collect(),
        chi2_per_dof: outcome.chi2 / T::from_index(dof),
        converged: outcome.converged,
        n_iterations: outcome.n_iterations,
        residuals,
        derived: Vec::new(),
    }
}

/// Poisson weights 1/max(count, 1).
fn poisson_weights<T: Float>(counts: &[T]) -> Vec<T> {
    counts.iter().map(|&c| T::one() / c.max(T::one())).collect()
}

fn validate_profile<T: Float>(profile: &AxialProfile<T>) -> Result<()> {
    let nonzero = profile.counts.iter().filter(|&&c| c > T::zero()).count();
    if nonzero < 10 {
        return Err(Error::InsufficientPoints(format!(
            "profile has {nonzero} nonzero bins; >= 10 required"
        )));
    }
    let max = profile.counts.iter().cloned().fold(T::zero(), T::max);
    let min = profile.counts.iter().cloned().fold(max, T::min);
    if max <= min + (max * T::c(1e-12)) {
        return Err(Error::DegenerateData("profile is flat".into()));
    }
    Ok(())
}

struct ProfileMoments<T> {
    mass: T,
    centroid: T,
    rms: T,
}

fn profile_moments<T: Float>(profile: &AxialProfile<T>) -> ProfileMoments<T> {
    let mut total = T::zero();
    let mut zbar = T::zero();
    for (&z, &c) in profile.bin_centers.iter().zip(profile.counts.iter()) {
        total += c;
        zbar += c * z;
    }
    let centroid = if total > T::zero() { zbar / total } else { T::zero() };
    let mut var = T::zero();
    for (&z, &c) in profile.bin_centers.iter().zip(profile.counts.iter()) {
        let d = z - centroid;
        var += c * d * d;
    }
    let rms = if total > T::zero() {
        (var / total).sqrt()
    } else {
        T::zero()
    };
    ProfileMoments {
        mass: total * profile.bin_width(),
        centroid,
        rms,
    }
}

fn smoothed_counts<T: Float>(counts: &[T]) -> Vec<T> {
    let n = counts.len();
    let w = (n / 25).max(3) | 1;
    let half = w / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            let mut acc = T::zero();
            for k in lo..hi {
                acc += counts[k];
            }
            acc / T::from_index(hi - lo)
        })
        .collect()
}

/// Two tallest separated local maxima of a lightly smoothed profile.
fn two_tallest_peaks<T: Float>(profile: &AxialProfile<T>) -> Option<(usize, usize)> {
    let n = profile.counts.len();
    if n < 5 {
        return None;
    }
    let w = (n / 25).max(3) | 1;
    let smooth = smoothed_counts(&profile.counts);
    let mut peaks: Vec<usize> = (1..n - 1)
        .filter(|&i| smooth[i] >= smooth[i - 1] && smooth[i] > smooth[i + 1])
        .collect();
    peaks.sort_by(|&a, &b| smooth[b].partial_cmp(&smooth[a]).unwrap());
    let first = *peaks.first()?;
    let second = peaks.iter().skip(1).find(|&&p| p.abs_diff(first) >= w)?;
    Some((first.min(*second), first.max(*second)))
}

/// Half width at half maximum of the smoothed profile around a peak index,
/// restricted to [lo, hi). Falls back to one bin width when the crossings
/// are not bracketed.
fn half_width_about<T: Float>(
    profile: &AxialProfile<T>,
    smooth: &[T],
    peak: usize,
    lo: usize,
    hi: usize,
) -> T {
    let level = smooth[peak] / T::c(2.0);
    let bin = profile.bin_width();
    let mut left = None;
    for i in (lo..peak).rev() {
        if smooth[i] < level {
            left = Some(profile.bin_centers[peak] - profile.bin_centers[i]);
            break;
        }
    }
    let mut right = None;
    for i in peak + 1..hi {
        if smooth[i] < level {
            right = Some(profile.bin_centers[i] - profile.bin_centers[peak]);
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => ((l + r) / T::c(2.0)).max(bin),
        (Some(l), None) => l.max(bin),
        (None, Some(r)) => r.max(bin),
        (None, None) => bin,
    }
}

/// Run one model over several starting points and keep the lowest-chi2
/// outcome. Starting-point diversity covers the Gamma-vs-rho shape
/// degeneracy that a single moment-based guess cannot resolve.
fn best_of_candidates<T: Float, M>(
    model: &M,
    x: &[T],
    y: &[T],
    w: &[T],
    candidates: &[(Vec<T>, Vec<T>)],
) -> Result<LmOutcome<T>>
where
    M: Fn(&[T], T) -> Result<T>,
{
    let mut best: Option<LmOutcome<T>> = None;
    let mut last_err = None;
    for (guess, scales) in candidates {
        match levenberg_marquardt(model, x, y, w, guess, scales, &LmOptions::default()) {
            Ok(out) => {
                if best.as_ref().map_or(true, |b| out.chi2 < b.chi2) {
                    best = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::NoConvergence(0)))
}

/// Fit the four-parameter driven profile (Gamma, z0, rho_max, A0) to a
/// binned axial distribution with Poisson weighting.
pub fn fit_profile_single<T: Float>(
    profile: &AxialProfile<T>,
    initial: Option<ProfileParams<T>>,
) -> Result<FitResult<T>> {
    validate_profile(profile)?;
    let moments = profile_moments(profile);
    let bin = profile.bin_width();
    let pos_scale = bin.max(moments.rms);
    let mut candidates: Vec<(Vec<T>, Vec<T>)> = Vec::new();
    let mut push = |gamma0: T, z0: T, rho0: T, a0s: T| {
        let gamma0 = gamma0.max(bin);
        let rho0 = rho0.max(bin);
        let a0 = (a0s * gamma0 * gamma0).max(T::c(1e-300));
        candidates.push((
            vec![gamma0, z0, rho0, a0],
            vec![gamma0, pos_scale, rho0, a0],
        ));
    };
    match initial {
        Some(p) => push(p.gamma, p.z0, p.rho_max, p.a0 / (p.gamma * p.gamma)),
        None => {
            let smooth = smoothed_counts(&profile.counts);
            let n = smooth.len();
            let peak = smooth
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(n / 2);
            let hw = half_width_about(profile, &smooth, peak, 0, n);
            // Two horns of one arcsine envelope read directly as rho.
            if let Some((i, j)) = two_tallest_peaks(profile) {
                let half_sep = (profile.bin_centers[j] - profile.bin_centers[i]) / T::c(2.0);
                push(hw * T::c(0.6), moments.centroid, half_sep, moments.mass);
            }
            // Width splits from Lorentzian-dominated to arcsine-dominated.
            for &alpha in &[0.15, 0.55, 0.9] {
                let a = T::c(alpha);
                push(
                    (T::one() - a) * T::c(1.6) * hw,
                    moments.centroid,
                    a * hw * T::c(1.1),
                    moments.mass,
                );
            }
        }
    }
    let model = |p: &[T], z: T| -> Result<T> {
        let params = ProfileParams::new(p[0], p[1], p[2], p[3])?;
        profile_driven_closed(&params, z)
    };
    let w = poisson_weights(&profile.counts);
    let outcome = best_of_candidates(&model, &profile.bin_centers, &profile.counts, &w, &candidates)?;
    Ok(finish_fit(
        &model,
        &profile.bin_centers,
        &profile.counts,
        &outcome,
        &["gamma", "z0", "rho_max", "a0"],
    ))
}

/// The rho_max = 0 nested variant: a pure Lorentzian fit (Gamma, z0, A0).
pub fn fit_profile_lorentzian<T: Float>(profile: &AxialProfile<T>) -> Result<FitResult<T>> {
    validate_profile(profile)?;
    let moments = profile_moments(profile);
    let bin = profile.bin_width();
    let gamma0 = (moments.rms).max(bin);
    let guess = vec![gamma0, moments.centroid, moments.mass * gamma0 * gamma0];
    let scales = vec![guess[0], bin.max(moments.rms), guess[2]];
    let model = |p: &[T], z: T| -> Result<T> {
        if !(p[0] > T::zero()) || !(p[2] > T::zero()) {
            return Err(Error::InvalidParameter("widths must stay positive".into()));
        }
        Ok(profile_lorentzian(p[0], p[1], p[2], z))
    };
    let w = poisson_weights(&profile.counts);
    let outcome = levenberg_marquardt(
        &model,
        &profile.bin_centers,
        &profile.counts,
        &w,
        &guess,
        &scales,
        &LmOptions::default(),
    )?;
    Ok(finish_fit(
        &model,
        &profile.bin_centers,
        &profile.counts,
        &outcome,
        &["gamma", "z0", "a0"],
    ))
}

/// Thermal (Voigt) profile fit: (sigma, Gamma, z0, A0).
pub fn fit_profile_thermal<T: Float>(profile: &AxialProfile<T>) -> Result<FitResult<T>> {
    validate_profile(profile)?;
    let moments = profile_moments(profile);
    let bin = profile.bin_width();
    let width = moments.rms.max(bin);
    let guess = vec![
        width * T::c(0.7),
        width * T::c(0.7),
        moments.centroid,
        moments.mass,
    ];
    let scales = vec![guess[0], guess[1], bin.max(moments.rms), guess[3]];
    let model = |p: &[T], z: T| -> Result<T> {
        if !(p[0] > T::zero()) || !(p[1] > T::zero()) || !(p[3] > T::zero()) {
            return Err(Error::InvalidParameter("widths must stay positive".into()));
        }
        profile_thermal(p[0], p[1], p[2], p[3], z)
    };
    let w = poisson_weights(&profile.counts);
    let outcome = levenberg_marquardt(
        &model,
        &profile.bin_centers,
        &profile.counts,
        &w,
        &guess,
        &scales,
        &LmOptions::default(),
    )?;
    Ok(finish_fit(
        &model,
        &profile.bin_centers,
        &profile.counts,
        &outcome,
        &["sigma", "gamma", "z0", "a0"],
    ))
}

/// Five-parameter two-ion fit: shared Gamma, rho_max, A0 and free positions
/// z1 < z2 (the label degeneracy is resolved post hoc). Reports the derived
/// half-separation z0 = (z2 - z1)/2 and the full separation.
pub fn fit_profile_two_ion<T: Float>(
    profile: &AxialProfile<T>,
    initial: Option<TwoIonProfileParams<T>>,
) -> Result<FitResult<T>> {
    validate_profile(profile)?;
    let moments = profile_moments(profile);
    let bin = profile.bin_width();
    let pos_scale = bin.max(moments.rms);
    let mut candidates: Vec<(Vec<T>, Vec<T>)> = Vec::new();
    let mut push = |gamma0: T, z1: T, z2: T, rho0: T| {
        let gamma0 = gamma0.max(bin);
        let rho0 = rho0.max(bin);
        let a0 = (moments.mass / T::c(2.0) * gamma0 * gamma0).max(T::c(1e-300));
        candidates.push((
            vec![gamma0, z1, z2, rho0, a0],
            vec![gamma0, pos_scale, pos_scale, rho0, a0],
        ));
    };
    match initial {
        Some(p) => candidates.push((
            vec![p.gamma, p.z1, p.z2, p.rho_max, p.a0],
            vec![p.gamma, pos_scale, pos_scale, p.rho_max, p.a0],
        )),
        None => {
            let smooth = smoothed_counts(&profile.counts);
            let n = smooth.len();
            let splits: [f64; 3] = [0.2, 0.6, 0.95];
            if let Some((i, j)) = two_tallest_peaks(profile) {
                let z1 = profile.bin_centers[i];
                let z2 = profile.bin_centers[j];
                let mid = (i + j) / 2;
                let hw1 = half_width_about(profile, &smooth, i, 0, mid.max(i + 1));
                let hw2 = half_width_about(profile, &smooth, j, mid.min(j), n);
                let hw = (hw1 + hw2) / T::c(2.0);
                for &alpha in &splits {
                    let a = T::c(alpha);
                    push(
                        (T::one() - a) * T::c(1.8) * hw,
                        z1,
                        z2,
                        a * hw * T::c(1.1),
                    );
                }
            }
            // Merged or coincident lobes: positions collapse to the centroid.
            let peak = smooth
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(n / 2);
            let hw = half_width_about(profile, &smooth, peak, 0, n);
            for &alpha in &splits {
                let a = T::c(alpha);
                push(
                    (T::one() - a) * T::c(1.8) * hw,
                    moments.centroid - bin / T::c(2.0),
                    moments.centroid + bin / T::c(2.0),
                    a * hw * T::c(1.1),
                );
            }
            // Overlapping-but-resolved intermediate.
            push(
                hw * T::c(0.5),
                moments.centroid - hw * T::c(0.8),
                moments.centroid + hw * T::c(0.8),
                hw * T::c(0.5),
            );
        }
    }
    let model = |p: &[T], z: T| -> Result<T> {
        let params = TwoIonProfileParams::new(p[0], p[1], p[2], p[3], p[4])?;
        two_ion_profile(&params, z)
    };
    let w = poisson_weights(&profile.counts);
    let mut outcome =
        best_of_candidates(&model, &profile.bin_centers, &profile.counts, &w, &candidates)?;
    // Enforce z1 < z2 (the model is symmetric under the swap).
    if outcome.params[1] > outcome.params[2] {
        outcome.params.swap(1, 2);
        let k = 5;
        for j in 0..k {
            outcome.covariance.swap(k + j, 2 * k + j);
        }
        for j in 0..k {
            outcome.covariance.swap(j * k + 1, j * k + 2);
        }
    }
    let mut fit = finish_fit(
        &model,
        &profile.bin_centers,
        &profile.counts,
        &outcome,
        &["gamma", "z1", "z2", "rho_max", "a0"],
    );
    let k = 5;
    let var1 = outcome.covariance[k + 1];
    let var2 = outcome.covariance[2 * k + 2];
    let cov12 = outcome.covariance[k + 2];
    let sep = outcome.params[2] - outcome.params[1];
    let sep_var = (var1 + var2 - T::c(2.0) * cov12).max(T::zero());
    fit.derived.push((
        "separation".into(),
        sep,
        sep_var.sqrt(),
    ));
    fit.derived.push((
        "half_separation".into(),
        sep / T::c(2.0),
        sep_var.sqrt() / T::c(2.0),
    ));
    Ok(fit)
}

/// Fit the driven-damped oscillator response
/// rho(omega) = (F_e/m) [(2 gamma omega)^2 + (omega_z^2 - omega^2)^2]^(-1/2)
/// to a resonance scan; parameters (F_e, omega_z, gamma_z).
pub fn fit_resonance<T: Float>(scan: &ResonanceScan<T>, mass: T) -> Result<FitResult<T>> {
    let n = scan.frequencies.len();
    if n < 4 {
        return Err(Error::InsufficientPoints(
            "resonance fit needs >= 4 scan points".into(),
        ));
    }
    if !(mass > T::zero()) {
        return Err(Error::InvalidParameter("mass must be positive".into()));
    }
    let (argmax, &peak) = scan
        .rho_max
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    if argmax == 0 || argmax == n - 1 {
        return Err(Error::ResonanceNotBracketed);
    }
    // A scan consistent with a constant brackets nothing: compare the
    // weighted scatter of the amplitudes against the stated uncertainties.
    if scan.uncertainties.iter().all(|&u| u > T::zero()) {
        let w: Vec<T> = scan
            .uncertainties
            .iter()
            .map(|&u| T::one() / (u * u))
            .collect();
        let w_sum: T = w.iter().copied().sum();
        let mean = scan
            .rho_max
            .iter()
            .zip(w.iter())
            .map(|(&r, &wi)| r * wi)
            .sum::<T>()
            / w_sum;
        let chi2_const: T = scan
            .rho_max
            .iter()
            .zip(w.iter())
            .map(|(&r, &wi)| wi * (r - mean) * (r - mean))
            .sum();
        if chi2_const / T::from_index(n - 1) < T::c(5.0) {
            return Err(Error::ResonanceNotBracketed);
        }
    }

    let omega0 = scan.frequencies[argmax];
    // Half-power points give the damping estimate: full width ~ 2 gamma.
    let half_power = peak / T::c(std::f64::consts::SQRT_2);
    let mut lo = scan.frequencies[0];
    for i in (0..argmax).rev() {
        if scan.rho_max[i] < half_power {
            lo = scan.frequencies[i];
            break;
        }
    }
    let mut hi = scan.frequencies[n - 1];
    for i in argmax + 1..n {
        if scan.rho_max[i] < half_power {
            hi = scan.frequencies[i];
            break;
        }
    }
    let gamma0 = ((hi - lo) / T::c(2.0)).max(omega0 * T::c(1e-5));
    let f0 = peak * T::c(2.0) * mass * gamma0 * omega0;

    let model = |p: &[T], omega: T| -> Result<T> {
        let (fe, wz, gamma) = (p[0], p[1], p[2]);
        if !(fe > T::zero()) || !(wz > T::zero()) || !(gamma > T::zero()) {
            return Err(Error::InvalidParameter(
                "resonance parameters must stay positive".into(),
            ));
        }
        let d1 = T::c(2.0) * gamma * omega;
        let d2 = wz * wz - omega * omega;
        Ok(fe / mass / (d1 * d1 + d2 * d2).sqrt())
    };
    let w: Vec<T> = if scan.uncertainties.iter().all(|&u| u > T::zero()) {
        scan.uncertainties.iter().map(|&u| T::one() / (u * u)).collect()
    } else {
        vec![T::one(); n]
    };
    let guess = vec![f0, omega0, gamma0];
    let scales = vec![f0, omega0, gamma0];
    let outcome = levenberg_marquardt(
        &model,
        &scan.frequencies,
        &scan.rho_max,
        &w,
        &guess,
        &scales,
        &LmOptions::default(),
    )?;
    Ok(finish_fit(
        &model,
        &scan.frequencies,
        &scan.rho_max,
        &outcome,
        &["f_e", "omega_z", "gamma_z"],
    ))
}

/// Joint fit of two resonance scans sharing one drive-force amplitude:
/// parameters (f_e, omega_z_1, gamma_z_1, omega_z_2, gamma_z_2). The
/// independent per-scan alternative is [`fit_resonance`].
pub fn fit_resonance_joint<T: Float>(
    scan_a: &ResonanceScan<T>,
    mass_a: T,
    scan_b: &ResonanceScan<T>,
    mass_b: T,
) -> Result<FitResult<T>> {
    let fit_a = fit_resonance(scan_a, mass_a)?;
    let fit_b = fit_resonance(scan_b, mass_b)?;
    let n_a = scan_a.frequencies.len();
    let n = n_a + scan_b.frequencies.len();
    // The abscissa is the sample index; the model looks the frequency and
    // mass up per point, so both scans share the parameter vector.
    let x: Vec<T> = (0..n).map(T::from_index).collect();
    let mut y = scan_a.rho_max.clone();
    y.extend_from_slice(&scan_b.rho_max);
    let mut unc = scan_a.uncertainties.clone();
    unc.extend_from_slice(&scan_b.uncertainties);
    let w: Vec<T> = if unc.iter().all(|&u| u > T::zero()) {
        unc.iter().map(|&u| T::one() / (u * u)).collect()
    } else {
        vec![T::one(); n]
    };
    let freqs: Vec<T> = scan_a
        .frequencies
        .iter()
        .chain(scan_b.frequencies.iter())
        .copied()
        .collect();
    let model = move |p: &[T], xi: T| -> Result<T> {
        let idx = xi.as_f64() as usize;
        let (wz, gamma, mass) = if idx < n_a {
            (p[1], p[2], mass_a)
        } else {
            (p[3], p[4], mass_b)
        };
        let fe = p[0];
        if !(fe > T::zero()) || !(wz > T::zero()) || !(gamma > T::zero()) {
            return Err(Error::InvalidParameter(
                "resonance parameters must stay positive".into(),
            ));
        }
        let omega = freqs[idx];
        let d1 = T::c(2.0) * gamma * omega;
        let d2 = wz * wz - omega * omega;
        Ok(fe / mass / (d1 * d1 + d2 * d2).sqrt())
    };
    let fe0 = (fit_a.param("f_e").unwrap() + fit_b.param("f_e").unwrap()) / T::c(2.0);
    let guess = vec![
        fe0,
        fit_a.param("omega_z").unwrap(),
        fit_a.param("gamma_z").unwrap(),
        fit_b.param("omega_z").unwrap(),
        fit_b.param("gamma_z").unwrap(),
    ];
    let scales = guess.clone();
    let outcome = levenberg_marquardt(&model, &x, &y, &w, &guess, &scales, &LmOptions::default())?;
    Ok(finish_fit(
        &model,
        &x,
        &y,
        &outcome,
        &["f_e", "omega_z_1", "gamma_z_1", "omega_z_2", "gamma_z_2"],
    ))
}

/// Weighted linear fit sigma^2 = c0 + c1 V^2 over a window of noise powers.
pub fn fit_noise_line<T: Float>(sweep: &NoiseSweep<T>, window: (T, T)) -> Result<FitResult<T>> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for i in 0..sweep.v2.len() {
        if sweep.v2[i] >= window.0 && sweep.v2[i] <= window.1 {
            x.push(sweep.v2[i]);
            y.push(sweep.sigma2[i]);
            let u = sweep.uncertainties[i];
            w.push(if u > T::zero() { T::one() / (u * u) } else { T::one() });
        }
    }
    if x.len() < 4 {
        return Err(Error::InsufficientPoints(format!(
            "{} points in the fit window; >= 4 required",
            x.len()
        )));
    }
    let fit = weighted_line_fit(&x, &y, &w)?;
    let dof = (x.len() - 2).max(1);
    let residuals: Vec<T> = x
        .iter()
        .zip(y.iter())
        .map(|(&xi, &yi)| yi - fit.intercept - fit.slope * xi)
        .collect();
    Ok(FitResult {
        params: vec![("c0".into(), fit.intercept), ("c1".into(), fit.slope)],
        uncertainties: vec![fit.intercept_err, fit.slope_err],
        chi2_per_dof: fit.sse / T::from_index(dof),
        converged: true,
        n_iterations: 1,
        residuals,
        derived: vec![("r_squared".into(), fit.r_squared, T::zero())],
    })
}

/// Ratio of the slopes of two line fits, with first-order error propagation.
pub fn slope_ratio<T: Float>(numerator: &FitResult<T>, denominator: &FitResult<T>) -> Option<(T, T)> {
    let s1 = numerator.param("c1")?;
    let s2 = denominator.param("c1")?;
    let e1 = numerator.uncertainty("c1")?;
    let e2 = denominator.uncertainty("c1")?;
    if s2 == T::zero() {
        return None;
    }
    let ratio = s1 / s2;
    let rel = ((e1 / s1).powi(2) + (e2 / s2).powi(2)).sqrt();
    Some((ratio, ratio.abs() * rel))
}

/// One fitted segment of a piecewise-linear changepoint model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentFit<T> {
    /// Data index range [start, end).
    pub start: usize,
    pub end: usize,
    pub intercept: T,
    pub slope: T,
}

/// Changepoint segmentation of a noise sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauResult<T> {
    pub segments: Vec<SegmentFit<T>>,
    /// Breakpoint locations in V^2, with resolution-limited uncertainties.
    pub breakpoints: Vec<(T, T)>,
    /// True when a 3-segment rise-plateau-rise shape was selected.
    pub plateau_found: bool,
    /// True when the data carry no usable slope structure at all.
    pub degenerate: bool,
}

fn segment_sse<T: Float>(x: &[T], y: &[T], w: &[T]) -> (T, T, T) {
    match weighted_line_fit(x, y, w) {
        Ok(fit) => (fit.sse, fit.intercept, fit.slope),
        Err(_) => (T::infinity(), T::zero(), T::zero()),
    }
}

/// Three-segment piecewise-linear changepoint detection (rise, plateau,
/// slower rise), by exhaustive search over breakpoint pairs with a BIC
/// comparison against the single-line model. Returns a flagged single
/// segment when no plateau improves on a plain line.
pub fn detect_plateau<T: Float>(sweep: &NoiseSweep<T>) -> Result<PlateauResult<T>> {
    let n = sweep.v2.len();
    if n < 12 {
        return Err(Error::InsufficientPoints(format!(
            "changepoint detection needs >= 12 points, got {n}"
        )));
    }
    let x = &sweep.v2;
    let y = &sweep.sigma2;
    let w: Vec<T> = sweep
        .uncertainties
        .iter()
        .map(|&u| if u > T::zero() { T::one() / (u * u) } else { T::one() })
        .collect();

    let y_max = y.iter().cloned().fold(T::neg_infinity(), T::max);
    let y_min = y.iter().cloned().fold(T::infinity(), T::min);
    let scale = (y_max - y_min).abs().max(y_max.abs());

    let (sse1, int1, slope1) = segment_sse(x, y, &w);
    let single = SegmentFit {
        start: 0,
        end: n,
        intercept: int1,
        slope: slope1,
    };

    // Constant data: no structure to segment.
    if (y_max - y_min).abs() <= y_max.abs().max(T::c(1e-300)) * T::c(1e-9) {
        return Ok(PlateauResult {
            segments: vec![single],
            breakpoints: vec![],
            plateau_found: false,
            degenerate: true,
        });
    }
    // A perfect line needs no breakpoints.
    if sse1 <= (scale * scale) * T::c(1e-18) {
        return Ok(PlateauResult {
            segments: vec![single],
            breakpoints: vec![],
            plateau_found: false,
            degenerate: false,
        });
    }

    let min_seg = 3usize;
    let mut best: Option<(T, usize, usize, [(T, T); 3])> = None;
    for i in min_seg..=n - 2 * min_seg {
        for j in i + min_seg..=n - min_seg {
            let (s1, a1, b1) = segment_sse(&x[..i], &y[..i], &w[..i]);
            let (s2, a2, b2) = segment_sse(&x[i..j], &y[i..j], &w[i..j]);
            let (s3, a3, b3) = segment_sse(&x[j..], &y[j..], &w[j..]);
            let total = s1 + s2 + s3;
            if best.as_ref().map_or(true, |(b, _, _, _)| total < *b) {
                best = Some((total, i, j, [(a1, b1), (a2, b2), (a3, b3)]));
            }
        }
    }
    let (sse3, i, j, coeffs) = best.unwrap();

    // BIC model selection: single line (2 params) vs three lines plus two
    // breakpoints (8 params).
    let nn = T::from_index(n);
    let floor = (scale * scale) * T::c(1e-30);
    let bic1 = nn * (sse1.max(floor) / nn).ln() + T::c(2.0) * nn.ln();
    let bic3 = nn * (sse3.max(floor) / nn).ln() + T::c(8.0) * nn.ln();
    if bic1 <= bic3 {
        return Ok(PlateauResult {
            segments: vec![single],
            breakpoints: vec![],
            plateau_found: false,
            degenerate: false,
        });
    }

    let breakpoint = |k: usize| -> (T, T) {
        let loc = (x[k - 1] + x[k]) / T::c(2.0);
        let err = (x[k] - x[k - 1]) / T::c(2.0);
        (loc, err)
    };
    let segments = vec![
        SegmentFit {
            start: 0,
            end: i,
            intercept: coeffs[0].0,
            slope: coeffs[0].1,
        },
        SegmentFit {
            start: i,
            end: j,
            intercept: coeffs[1].0,
            slope: coeffs[1].1,
        },
        SegmentFit {
            start: j,
            end: n,
            intercept: coeffs[2].0,
            slope: coeffs[2].1,
        },
    ];
    let plateau_found = coeffs[1].1.abs() < coeffs[0].1.abs() * T::c(0.5);
    Ok(PlateauResult {
        segments,
        breakpoints: vec![breakpoint(i), breakpoint(j)],
        plateau_found,
        degenerate: false,
    })
}

/// Which eigenfrequency branch a measured frequency belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Omega_minus, below omega_ref.
    Lower,
    /// Omega_plus, above sqrt(2) omega_ref.
    Upper,
}

/// Invert the two-ion eigenfrequency relation for the mass ratio mu, given a
/// measured frequency on the chosen branch and the equal-mass reference
/// frequency. Uses monotone bisection in log(mu); the input uncertainty is
/// propagated through the local sensitivity d(mu)/d(Omega).
pub fn invert_mass_ratio<T: Float>(
    omega: T,
    omega_err: T,
    omega_ref: T,
    branch: Branch,
) -> Result<(T, T)> {
    if !(omega > T::zero()) || !(omega_ref > T::zero()) {
        return Err(Error::InvalidParameter(
            "frequencies must be positive".into(),
        ));
    }
    if omega_err < T::zero() {
        return Err(Error::InvalidParameter(
            "uncertainty must be nonnegative".into(),
        ));
    }
    let r = omega / omega_ref;
    let branch_value = |mu: T| -> T {
        let (lo, hi) = two_ion_eigenfrequencies(mu, omega_ref).unwrap();
        match branch {
            Branch::Lower => lo / omega_ref,
            Branch::Upper => hi / omega_ref,
        }
    };
    // Attainable ranges: Omega_-/omega_ref in (0, sqrt(3/2));
    // Omega_+/omega_ref in (sqrt(2), infinity), both decreasing in mu.
    match branch {
        Branch::Lower => {
            if r >= T::c(1.5_f64.sqrt()) {
                return Err(Error::OutOfRange(format!(
                    "Omega/omega_ref = {r} is above the lower-branch ceiling sqrt(3/2)"
                )));
            }
        }
        Branch::Upper => {
            if r <= T::c(std::f64::consts::SQRT_2) {
                return Err(Error::OutOfRange(format!(
                    "Omega/omega_ref = {r} is below the upper-branch floor sqrt(2)"
                )));
            }
        }
    }
    let (mut lo, mut hi) = (T::c(1e-9), T::c(1e9));
    if !(branch_value(lo) > r && branch_value(hi) < r) {
        return Err(Error::OutOfRange(
            "no mass ratio in [1e-9, 1e9] reproduces the measured frequency".into(),
        ));
    }
    for _ in 0..200 {
        let mid = (lo.ln() + hi.ln()) / T::c(2.0);
        let mid = mid.exp();
        if branch_value(mid) > r {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - T::one() < T::c(1e-15) {
            break;
        }
    }
    let mu = (lo.ln() + hi.ln()) / T::c(2.0);
    let mu = mu.exp();

    // Sensitivity d(Omega)/d(mu) by central difference.
    let h = mu * T::c(1e-6);
    let d_omega = (branch_value(mu + h) - branch_value(mu - h)) * omega_ref / (T::c(2.0) * h);
    let mu_err = if d_omega.abs() > T::zero() {
        omega_err / d_omega.abs()
    } else {
        T::infinity()
    };
    Ok((mu, mu_err))
}
