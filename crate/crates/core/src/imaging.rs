//! Fluorescence-profile models and synthetic detector images.
//!
//! The driven-ion axial profile is the convolution of a Lorentzian point
//! spread function (FWHM Gamma, object plane) with the arcsine position
//! density of a harmonic oscillation of amplitude rho. Both routes are
//! implemented: direct numerical quadrature of the defining integral, and the
//! closed complex-valued form; their pointwise equivalence is the module's
//! central correctness check. The integration variable of the defining
//! integral is interpreted in the observation coordinate z throughout (the
//! source text mixes x and z for the same coordinate).
//!
//! Thermal (undriven) ions get a Voigt profile: Gaussian position density
//! convolved with the same Lorentzian PSF.

use std::io::Write;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::numeric::{adaptive_simpson, faddeeva_w, integrate_gl8};

/// Imaging-system parameters in object-plane units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticsConfig<T> {
    /// Lorentzian PSF full width at half maximum (m, object plane).
    pub lorentzian_fwhm: T,
    /// Optical magnification (dimensionless, bookkeeping).
    pub magnification: T,
    /// Effective pixel size in the object plane (m).
    pub pixel_size_effective: T,
    /// Mean detected photon rate (counts/s).
    pub photon_rate: T,
    /// Exposure time (s).
    pub exposure: T,
}

impl<T: Float> OpticsConfig<T> {
    pub fn new(
        lorentzian_fwhm: T,
        magnification: T,
        pixel_size_effective: T,
        photon_rate: T,
        exposure: T,
    ) -> Result<Self> {
        if !(lorentzian_fwhm > T::zero()) {
            return Err(Error::InvalidParameter(
                "Lorentzian FWHM must be positive".into(),
            ));
        }
        if !(pixel_size_effective > T::zero()) {
            return Err(Error::InvalidParameter(
                "effective pixel size must be positive".into(),
            ));
        }
        if photon_rate < T::zero() || exposure < T::zero() {
            return Err(Error::InvalidParameter(
                "photon rate and exposure must be nonnegative".into(),
            ));
        }
        Ok(Self {
            lorentzian_fwhm,
            magnification,
            pixel_size_effective,
            photon_rate,
            exposure,
        })
    }
}

/// Parameters of the single-ion driven profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileParams<T> {
    /// Lorentzian FWHM (m).
    pub gamma: T,
    /// Ion equilibrium position (m).
    pub z0: T,
    /// Steady-state oscillation amplitude (m).
    pub rho_max: T,
    /// Scale parameter A0; the profile integrates to A0 / Gamma^2.
    pub a0: T,
}

impl<T: Float> ProfileParams<T> {
    pub fn new(gamma: T, z0: T, rho_max: T, a0: T) -> Result<Self> {
        if !(gamma > T::zero()) {
            return Err(Error::InvalidParameter("gamma must be positive".into()));
        }
        if rho_max < T::zero() {
            return Err(Error::InvalidParameter(
                "rho_max must be nonnegative".into(),
            ));
        }
        if !(a0 > T::zero()) {
            return Err(Error::InvalidParameter("a0 must be positive".into()));
        }
        Ok(Self {
            gamma,
            z0,
            rho_max,
            a0,
        })
    }
}

/// Two ions sharing one oscillation amplitude, PSF width, and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoIonProfileParams<T> {
    pub gamma: T,
    pub z1: T,
    pub z2: T,
    pub rho_max: T,
    pub a0: T,
}

impl<T: Float> TwoIonProfileParams<T> {
    pub fn new(gamma: T, z1: T, z2: T, rho_max: T, a0: T) -> Result<Self> {
        ProfileParams::new(gamma, z1, rho_max, a0)?;
        Ok(Self {
            gamma,
            z1,
            z2,
            rho_max,
            a0,
        })
    }
}

/// Binned axial photon-count projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AxialProfile<T> {
    pub bin_centers: Vec<T>,
    pub counts: Vec<T>,
    pub uncertainties: Vec<T>,
}

impl<T: Float> AxialProfile<T> {
    /// Build a profile on a uniform grid. Missing uncertainties default to
    /// sqrt(max(count, 1)).
    pub fn new(bin_centers: Vec<T>, counts: Vec<T>, uncertainties: Option<Vec<T>>) -> Result<Self> {
        if bin_centers.len() != counts.len() || bin_centers.len() < 2 {
            return Err(Error::InvalidParameter(
                "profile needs >= 2 bins with matching counts".into(),
            ));
        }
        let width = bin_centers[1] - bin_centers[0];
        if !(width > T::zero()) {
            return Err(Error::InvalidParameter(
                "bin centers must be strictly increasing".into(),
            ));
        }
        for w in bin_centers.windows(2) {
            if ((w[1] - w[0]) - width).abs() > width * T::c(1e-6) {
                return Err(Error::InvalidParameter("binning must be uniform".into()));
            }
        }
        if counts.iter().any(|&c| c < T::zero() || !c.is_finite()) {
            return Err(Error::InvalidParameter(
                "counts must be finite and nonnegative".into(),
            ));
        }
        let uncertainties = match uncertainties {
            Some(u) => {
                if u.len() != counts.len() {
                    return Err(Error::InvalidParameter(
                        "uncertainty array length mismatch".into(),
                    ));
                }
                u
            }
            None => counts.iter().map(|&c| c.max(T::one()).sqrt()).collect(),
        };
        Ok(Self {
            bin_centers,
            counts,
            uncertainties,
        })
    }

    /// Histogram a sample set onto `n_bins` uniform bins over [lo, hi].
    pub fn from_samples(samples: &[T], n_bins: usize, lo: T, hi: T) -> Result<Self> {
        if n_bins < 2 || !(hi > lo) {
            return Err(Error::InvalidParameter("invalid histogram range".into()));
        }
        let width = (hi - lo) / T::from_index(n_bins);
        let mut counts = vec![T::zero(); n_bins];
        for &s in samples {
            if s >= lo && s < hi {
                let idx = ((s - lo) / width).as_f64() as usize;
                counts[idx.min(n_bins - 1)] += T::one();
            }
        }
        let centers = (0..n_bins)
            .map(|i| lo + width * (T::from_index(i) + T::c(0.5)))
            .collect();
        Self::new(centers, counts, None)
    }

    pub fn bin_width(&self) -> T {
        self.bin_centers[1] - self.bin_centers[0]
    }

    /// CSV export with header `z_m,density`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "z_m,density")?;
        for (z, c) in self.bin_centers.iter().zip(self.counts.iter()) {
            writeln!(w, "{:.8e},{:.8e}", z.as_f64(), c.as_f64())?;
        }
        Ok(())
    }
}

/// Driven-ion profile by direct quadrature of the Lorentzian x arcsine
/// integral, using the substitution f = rho sin(theta) that removes the
/// integrable endpoint singularities. Scaled by A0/Gamma^2 to match the
/// closed form's convention.
pub fn profile_driven_quadrature<T: Float>(p: &ProfileParams<T>, z: T) -> Result<T> {
    if !(p.gamma > T::zero()) || !(p.rho_max > T::zero()) {
        return Err(Error::InvalidParameter(
            "quadrature profile needs gamma > 0 and rho_max > 0".into(),
        ));
    }
    let u = z - p.z0;
    let gamma = p.gamma;
    let rho = p.rho_max;
    let half_gamma = gamma / T::c(2.0);
    let pre = gamma / (T::c(2.0) * T::PI() * T::PI());
    let integrand = move |theta: T| {
        let f = rho * theta.sin();
        let d = f - u;
        pre / (half_gamma * half_gamma + d * d)
    };
    let half_pi = T::PI() / T::c(2.0);
    let raw = adaptive_simpson(&integrand, -half_pi, half_pi, T::c(1e-10))?;
    Ok(raw * p.a0 / (gamma * gamma))
}

/// Driven-ion profile, closed form:
/// F(z) = 2/(pi Gamma^2) * A0/(2 rho) * Im[i / sqrt(1 - Gamma^2 (2(z-z0)/Gamma + i)^2 / (4 rho^2))]
/// evaluated on the principal branch; the argument never crosses the cut for
/// gamma > 0.
pub fn profile_driven_closed<T: Float>(p: &ProfileParams<T>, z: T) -> Result<T> {
    if !(p.gamma > T::zero()) || !(p.rho_max > T::zero()) {
        return Err(Error::InvalidParameter(
            "closed-form profile needs gamma > 0 and rho_max > 0".into(),
        ));
    }
    let u = z - p.z0;
    let two = T::c(2.0);
    // c = (z - z0) + i Gamma/2, the complex observation coordinate.
    let c = Complex::new(u, p.gamma / two);
    let ratio = c / Complex::new(p.rho_max, T::zero());
    let arg = Complex::new(T::one(), T::zero()) - ratio * ratio;
    let root = arg.sqrt();
    let inner = Complex::new(T::zero(), T::one()) / root;
    let pre = two / (T::PI() * p.gamma * p.gamma) * p.a0 / (two * p.rho_max);
    Ok(pre * inner.im)
}

/// rho -> 0 limit of the driven profile: a pure Lorentzian with the same
/// mass convention (integral = A0 / Gamma^2).
pub fn profile_lorentzian<T: Float>(gamma: T, z0: T, a0: T, z: T) -> T {
    let u = z - z0;
    let half = gamma / T::c(2.0);
    a0 / (gamma * gamma) * half / (T::PI() * (u * u + half * half))
}

/// Thermal (undriven) profile: Gaussian position density of RMS width
/// `sigma` convolved with the Lorentzian PSF of FWHM `gamma`; normalized so
/// the integral equals `a0`. Degenerate limits fall back to the pure
/// Gaussian (gamma = 0) and pure Lorentzian (sigma = 0).
pub fn profile_thermal<T: Float>(sigma: T, gamma: T, z0: T, a0: T, z: T) -> Result<T> {
    if sigma < T::zero() || gamma < T::zero() {
        return Err(Error::InvalidParameter(
            "thermal profile widths must be nonnegative".into(),
        ));
    }
    let u = z - z0;
    if sigma == T::zero() && gamma == T::zero() {
        return Err(Error::InvalidParameter(
            "thermal profile needs sigma > 0 or gamma > 0".into(),
        ));
    }
    if gamma == T::zero() {
        let norm = sigma * (T::c(2.0) * T::PI()).sqrt();
        return Ok(a0 * (-u * u / (T::c(2.0) * sigma * sigma)).exp() / norm);
    }
    if sigma == T::zero() {
        let half = gamma / T::c(2.0);
        return Ok(a0 * half / (T::PI() * (u * u + half * half)));
    }
    let half_gamma = gamma / T::c(2.0);
    let sqrt2 = T::c(std::f64::consts::SQRT_2);
    let zz = Complex::new(u, half_gamma) / Complex::new(sigma * sqrt2, T::zero());
    let w = faddeeva_w(zz);
    Ok(a0 * w.re / (sigma * sqrt2 * T::PI().sqrt()))
}

/// Sum of two driven profiles with shared Gamma, rho, and A0.
pub fn two_ion_profile<T: Float>(p: &TwoIonProfileParams<T>, z: T) -> Result<T> {
    let one = ProfileParams::new(p.gamma, p.z1, p.rho_max, p.a0)?;
    let two = ProfileParams::new(p.gamma, p.z2, p.rho_max, p.a0)?;
    Ok(profile_driven_closed(&one, z)? + profile_driven_closed(&two, z)?)
}

/// Integral of a profile over the whole axis via the tangent substitution
/// z = z_ref + s tan(theta) (the Lorentzian tails decay as 1/z^2, so the
/// mapped integrand is smooth on the closed interval).
pub fn profile_mass<T: Float>(
    f: &impl Fn(T) -> Result<T>,
    z_ref: T,
    scale: T,
) -> Result<T> {
    let wrapped = |theta: T| {
        let cos = theta.cos();
        let z = z_ref + scale * theta.tan();
        match f(z) {
            Ok(v) => v * scale / (cos * cos),
            Err(_) => T::nan(),
        }
    };
    let half_pi_inner = T::PI() / T::c(2.0) * T::c(1.0 - 1e-12);
    let got = adaptive_simpson(&wrapped, -half_pi_inner, half_pi_inner, T::c(1e-9))?;
    if !got.is_finite() {
        return Err(Error::QuadratureNonConvergence(
            "profile evaluation failed inside the mass integral".into(),
        ));
    }
    Ok(got)
}

/// Full width at half maximum of a nonnegative profile, found on a dense
/// grid around `center` and refined by bisection at the outermost crossings.
pub fn profile_fwhm<T: Float>(
    f: &impl Fn(T) -> Result<T>,
    center: T,
    half_span: T,
) -> Result<T> {
    const GRID: usize = 2048;
    let mut best = T::zero();
    let mut values = Vec::with_capacity(GRID + 1);
    for i in 0..=GRID {
        let z = center - half_span
            + T::c(2.0) * half_span * T::from_index(i) / T::from_index(GRID);
        let v = f(z)?;
        best = best.max(v);
        values.push((z, v));
    }
    if !(best > T::zero()) {
        return Err(Error::DegenerateData("profile is identically zero".into()));
    }
    let half = best / T::c(2.0);
    let cross = |a: (T, T), b: (T, T)| -> T {
        // Linear-interpolated crossing, then bisection refinement.
        let (mut lo, mut hi) = (a.0, b.0);
        let lo_below = a.1 < half;
        for _ in 0..60 {
            let mid = (lo + hi) / T::c(2.0);
            let v = f(mid).unwrap_or(T::nan());
            if (v < half) == lo_below {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo + hi) / T::c(2.0)
    };
    let left = values
        .windows(2)
        .find(|w| w[0].1 < half && w[1].1 >= half)
        .map(|w| cross(w[0], w[1]));
    let right = values
        .windows(2)
        .rev()
        .find(|w| w[0].1 >= half && w[1].1 < half)
        .map(|w| cross(w[0], w[1]));
    match (left, right) {
        (Some(l), Some(r)) if r > l => Ok(r - l),
        _ => Err(Error::OutOfRange(
            "half-maximum crossings not bracketed by the scan span".into(),
        )),
    }
}

/// Synthetic detector image: per-pixel expectations plus one seeded Poisson
/// realization.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub nx: usize,
    pub ny: usize,
    /// Object-plane pixel size (m).
    pub pixel_size: T,
    /// Object-plane coordinate of the centre of column 0 (m).
    pub x0: T,
    /// Observed counts, row-major (ny rows of nx).
    pub counts: Vec<u32>,
    /// Expected counts, row-major.
    pub expected: Vec<T>,
}

impl<T: Float> Image<T> {
    pub fn total_counts(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Column coordinate of pixel `ix`.
    pub fn x_of(&self, ix: usize) -> T {
        self.x0 + self.pixel_size * T::from_index(ix)
    }
}

fn radial_weights<T: Float>(ny: usize, sigma_px: T) -> Vec<T> {
    let mid = T::from_index(ny.saturating_sub(1)) / T::c(2.0);
    let mut w: Vec<T> = (0..ny)
        .map(|iy| {
            let d = (T::from_index(iy) - mid) / sigma_px;
            (-d * d / T::c(2.0)).exp()
        })
        .collect();
    let total: T = w.iter().copied().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

/// Render an analytic axial profile into an nx x ny image centred on
/// `z_center`. Expected counts follow
///   E[pixel] = exposure * rate * (integral of the profile over the pixel
///   column, normalized over the image span) * radial weight,
/// with per-pixel integrals by 8-point Gauss-Legendre and a fixed Gaussian
/// radial envelope tied to the PSF width. Counts are Poisson with a
/// dedicated ChaCha8 stream per seed.
pub fn render_profile_image<T: Float>(
    profile: &impl Fn(T) -> Result<T>,
    optics: &OpticsConfig<T>,
    nx: usize,
    ny: usize,
    z_center: T,
    seed: u64,
) -> Result<Image<T>> {
    if nx < 2 || ny == 0 {
        return Err(Error::InvalidParameter("image needs nx >= 2, ny >= 1".into()));
    }
    let px = optics.pixel_size_effective;
    let x0 = z_center - px * T::from_index(nx - 1) / T::c(2.0);
    let mut column = Vec::with_capacity(nx);
    for ix in 0..nx {
        let lo = x0 + px * (T::from_index(ix) - T::c(0.5));
        let hi = lo + px;
        let mut err: Option<Error> = None;
        let integ = integrate_gl8(
            |z| match profile(z) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    T::zero()
                }
            },
            lo,
            hi,
        );
        if let Some(e) = err {
            return Err(e);
        }
        column.push(integ.max(T::zero()));
    }
    let total: T = column.iter().copied().sum();
    if !(total > T::zero()) {
        // A dark profile renders as a dark image.
        return assemble_image(nx, ny, px, x0, vec![T::zero(); nx], optics, seed);
    }
    let budget = optics.exposure * optics.photon_rate;
    let expected_ax: Vec<T> = column.iter().map(|&c| budget * c / total).collect();
    assemble_image(nx, ny, px, x0, expected_ax, optics, seed)
}

fn assemble_image<T: Float>(
    nx: usize,
    ny: usize,
    px: T,
    x0: T,
    expected_ax: Vec<T>,
    optics: &OpticsConfig<T>,
    seed: u64,
) -> Result<Image<T>> {
    let sigma_px = (optics.lorentzian_fwhm / px / T::c(2.354_820_045)).max(T::c(0.8));
    let wy = radial_weights::<T>(ny, sigma_px);
    let mut expected = vec![T::zero(); nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            expected[iy * nx + ix] = expected_ax[ix] * wy[iy];
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX); // rendering stream, disjoint from dynamics
    let counts = expected
        .iter()
        .map(|&e| {
            let lambda = e.as_f64();
            if lambda <= 0.0 {
                0_u32
            } else {
                let pois = Poisson::new(lambda).expect("positive lambda");
                let draw: f64 = pois.sample(&mut rng);
                draw.min(u32::MAX as f64) as u32
            }
        })
        .collect();
    Ok(Image {
        nx,
        ny,
        pixel_size: px,
        x0,
        counts,
        expected,
    })
}

/// Render the time-averaged occupancy of a trajectory (all ions, post-settle
/// window) through the Lorentzian PSF. The occupancy is histogrammed on a
/// fine grid and each source bin contributes its exact Lorentzian integral
/// over each pixel column.
pub fn render_trajectory_image<T: Float>(
    traj: &crate::dynamics::Trajectory<T>,
    settle_fraction: T,
    optics: &OpticsConfig<T>,
    nx: usize,
    ny: usize,
    z_center: T,
    seed: u64,
) -> Result<Image<T>> {
    if nx < 2 || ny == 0 {
        return Err(Error::InvalidParameter("image needs nx >= 2, ny >= 1".into()));
    }
    let px = optics.pixel_size_effective;
    let x0 = z_center - px * T::from_index(nx - 1) / T::c(2.0);
    let span_lo = x0 - px;
    let span_hi = x0 + px * T::from_index(nx);
    let fine = nx * 8;
    let fine_w = (span_hi - span_lo) / T::from_index(fine);
    let mut hist = vec![T::zero(); fine];
    let len = traj.len();
    let t_end = traj.times[len - 1];
    let t_start = settle_fraction * t_end;
    let mut n_in = 0usize;
    for ion in 0..traj.n_ions() {
        for k in 0..len {
            if traj.times[k] < t_start {
                continue;
            }
            n_in += 1;
            let z = traj.positions[ion][k];
            if z >= span_lo && z < span_hi {
                let idx = ((z - span_lo) / fine_w).as_f64() as usize;
                hist[idx.min(fine - 1)] += T::one();
            }
        }
    }
    if n_in == 0 {
        return Err(Error::InsufficientWindow(
            "no samples after the settle window".into(),
        ));
    }
    let half_gamma = optics.lorentzian_fwhm / T::c(2.0);
    let mut column = vec![T::zero(); nx];
    for (b, &h) in hist.iter().enumerate() {
        if h == T::zero() {
            continue;
        }
        let zc = span_lo + fine_w * (T::from_index(b) + T::c(0.5));
        for (ix, col) in column.iter_mut().enumerate() {
            let lo = x0 + px * (T::from_index(ix) - T::c(0.5));
            let hi = lo + px;
            let frac = (((hi - zc) / half_gamma).atan() - ((lo - zc) / half_gamma).atan())
                / T::PI();
            *col += h * frac;
        }
    }
    let total: T = column.iter().copied().sum();
    let budget = optics.exposure * optics.photon_rate;
    let expected_ax: Vec<T> = if total > T::zero() {
        column.iter().map(|&c| budget * c / total).collect()
    } else {
        vec![T::zero(); nx]
    };
    assemble_image(nx, ny, px, x0, expected_ax, optics, seed)
}

/// Column sums of the observed counts as an axial profile.
pub fn axial_projection<T: Float>(image: &Image<T>) -> Result<AxialProfile<T>> {
    let mut counts = vec![T::zero(); image.nx];
    for iy in 0..image.ny {
        for ix in 0..image.nx {
            counts[ix] += T::from_u32(image.counts[iy * image.nx + ix]).unwrap();
        }
    }
    let centers = (0..image.nx).map(|ix| image.x_of(ix)).collect();
    AxialProfile::new(centers, counts, None)
}

/// 16-bit binary PGM (P5) of the observed counts, clamped to 65535.
pub fn write_pgm16<T: Float, W: Write>(image: &Image<T>, mut w: W) -> std::io::Result<()> {
    writeln!(w, "P5")?;
    writeln!(w, "{} {}", image.nx, image.ny)?;
    writeln!(w, "65535")?;
    for &c in &image.counts {
        let v = c.min(65535) as u16;
        w.write_all(&v.to_be_bytes())?;
    }
    Ok(())
}

/// CSV matrix of the observed counts (one row per pixel row).
pub fn write_image_csv<T: Float, W: Write>(image: &Image<T>, mut w: W) -> std::io::Result<()> {
    for iy in 0..image.ny {
        let row: Vec<String> = (0..image.nx)
            .map(|ix| image.counts[iy * image.nx + ix].to_string())
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
