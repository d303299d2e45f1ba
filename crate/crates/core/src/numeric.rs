//! Shared numerical kernels: adaptive quadrature, fixed-order Gauss-Legendre,
//! small dense linear algebra, weighted line fits, and the Faddeeva function.

use std::sync::OnceLock;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::float::Float;

/// 8-point Gauss-Legendre nodes and weights on [-1, 1].
#[allow(clippy::excessive_precision)]
const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
#[allow(clippy::excessive_precision)]
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Single-panel 8-point Gauss-Legendre quadrature of `f` over `[a, b]`.
pub fn integrate_gl8<T: Float>(mut f: impl FnMut(T) -> T, a: T, b: T) -> T {
    let half = (b - a) / T::c(2.0);
    let mid = (a + b) / T::c(2.0);
    let mut acc = T::zero();
    for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
        acc += T::c(*w) * f(mid + half * T::c(*x));
    }
    acc * half
}

fn simpson<T: Float>(a: T, b: T, fa: T, fm: T, fb: T) -> T {
    (b - a) / T::c(6.0) * (fa + T::c(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson_rec<T: Float, F: Fn(T) -> T>(
    f: &F,
    a: T,
    b: T,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    eps: T,
    depth: usize,
) -> Result<T> {
    if depth == 0 {
        return Err(Error::QuadratureNonConvergence(format!(
            "recursion depth exhausted on [{}, {}]",
            a.as_f64(),
            b.as_f64()
        )));
    }
    let m = (a + b) / T::c(2.0);
    let lm = (a + m) / T::c(2.0);
    let rm = (m + b) / T::c(2.0);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= T::c(15.0) * eps {
        Ok(left + right + delta / T::c(15.0))
    } else {
        let half_eps = eps / T::c(2.0);
        let l = adaptive_simpson_rec(f, a, m, fa, flm, fm, left, half_eps, depth - 1)?;
        let r = adaptive_simpson_rec(f, m, b, fm, frm, fb, right, half_eps, depth - 1)?;
        Ok(l + r)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to relative tolerance
/// `rel_tol` (with a small absolute floor for near-zero integrals).
pub fn adaptive_simpson<T: Float, F: Fn(T) -> T>(f: &F, a: T, b: T, rel_tol: T) -> Result<T> {
    let fa = f(a);
    let fb = f(b);
    let m = (a + b) / T::c(2.0);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let scale = whole.abs().max(T::c(1e-300));
    let eps = rel_tol * scale;
    adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, eps, 60)
}

/// Solve the `n x n` system `A x = b` by Gaussian elimination with partial
/// pivoting. `a` is row-major and is destroyed. Returns `None` when singular.
pub fn solve_linear<T: Float>(a: &mut [T], b: &mut [T], n: usize) -> Option<Vec<T>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < T::c(1e-300) {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let inv = T::one() / a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] * inv;
            if factor == T::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col * n + k];
                a[row * n + k] = a[row * n + k] - factor * v;
            }
            let bc = b[col];
            b[row] = b[row] - factor * bc;
        }
    }
    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc = acc - a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

/// Invert an `n x n` matrix in place (Gauss-Jordan with partial pivoting).
/// Returns `false` when singular.
pub fn invert_in_place<T: Float>(a: &mut [T], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    let mut inv: Vec<T> = vec![T::zero(); n * n];
    for i in 0..n {
        inv[i * n + i] = T::one();
    }
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < T::c(1e-300) {
            return false;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
                inv.swap(col * n + k, pivot * n + k);
            }
        }
        let piv_inv = T::one() / a[col * n + col];
        for k in 0..n {
            a[col * n + k] *= piv_inv;
            inv[col * n + k] *= piv_inv;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row * n + col];
            if factor == T::zero() {
                continue;
            }
            for k in 0..n {
                let av = a[col * n + k];
                let iv = inv[col * n + k];
                a[row * n + k] = a[row * n + k] - factor * av;
                inv[row * n + k] = inv[row * n + k] - factor * iv;
            }
        }
    }
    a.copy_from_slice(&inv);
    true
}

/// Result of a weighted straight-line fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy)]
pub struct LineFit<T> {
    pub intercept: T,
    pub slope: T,
    pub intercept_err: T,
    pub slope_err: T,
    /// Weighted sum of squared residuals.
    pub sse: T,
    /// Coefficient of determination (weighted).
    pub r_squared: T,
}

/// Weighted least-squares line fit. Weights are 1/sigma^2-style.
pub fn weighted_line_fit<T: Float>(x: &[T], y: &[T], w: &[T]) -> Result<LineFit<T>> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::InvalidParameter(
            "line fit: mismatched array lengths".into(),
        ));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientPoints(
            "line fit needs at least 2 points".into(),
        ));
    }
    let mut s = T::zero();
    let mut sx = T::zero();
    let mut sy = T::zero();
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for i in 0..x.len() {
        s += w[i];
        sx += w[i] * x[i];
        sy += w[i] * y[i];
        sxx += w[i] * x[i] * x[i];
        sxy += w[i] * x[i] * y[i];
    }
    let delta = s * sxx - sx * sx;
    if delta.abs() < T::c(1e-300) || s <= T::zero() {
        return Err(Error::DegenerateData(
            "line fit: singular normal equations (identical abscissae?)".into(),
        ));
    }
    let slope = (s * sxy - sx * sy) / delta;
    let intercept = (sxx * sy - sx * sxy) / delta;
    let mut sse = T::zero();
    let mut sst = T::zero();
    let y_mean = sy / s;
    for i in 0..x.len() {
        let r = y[i] - intercept - slope * x[i];
        sse += w[i] * r * r;
        let d = y[i] - y_mean;
        sst += w[i] * d * d;
    }
    let r_squared = if sst > T::zero() {
        T::one() - sse / sst
    } else {
        T::one()
    };
    Ok(LineFit {
        intercept,
        slope,
        intercept_err: (sxx / delta).max(T::zero()).sqrt(),
        slope_err: (s / delta).max(T::zero()).sqrt(),
        sse,
        r_squared,
    })
}

/// Running mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy)]
pub struct RunningStats<T> {
    pub n: usize,
    pub mean: T,
    m2: T,
}

impl<T: Float> Default for RunningStats<T> {
    fn default() -> Self {
        Self {
            n: 0,
            mean: T::zero(),
            m2: T::zero(),
        }
    }
}

impl<T: Float> RunningStats<T> {
    pub fn push(&mut self, x: T) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / T::from_index(self.n);
        self.m2 += delta * (x - self.mean);
    }

    /// Population variance (divide by n).
    pub fn variance(&self) -> T {
        if self.n == 0 {
            T::zero()
        } else {
            self.m2 / T::from_index(self.n)
        }
    }

    /// Sample variance (divide by n - 1).
    pub fn sample_variance(&self) -> T {
        if self.n < 2 {
            T::zero()
        } else {
            self.m2 / T::from_index(self.n - 1)
        }
    }
}

/// Weideman rational approximation of the Faddeeva function,
/// w(z) = exp(-z^2) erfc(-iz), accurate to ~1e-13 relative for Im(z) >= 0.
fn weideman_coeffs() -> &'static (Vec<f64>, f64) {
    static COEFFS: OnceLock<(Vec<f64>, f64)> = OnceLock::new();
    COEFFS.get_or_init(|| {
        const N: usize = 32;
        let m = 2 * N;
        let m2 = 2 * m;
        let l = (N as f64 / std::f64::consts::SQRT_2).sqrt();
        // Sampled auxiliary function on the tangent grid, with fftshift applied
        // by evaluating the DFT of the rotated sequence directly.
        let mut g = vec![0.0_f64; m2];
        for (idx, k) in (-(m as i64 - 1)..=(m as i64 - 1)).enumerate() {
            let theta = k as f64 * std::f64::consts::PI / m as f64;
            let t = l * (theta / 2.0).tan();
            let f = (-t * t).exp() * (l * l + t * t);
            // position in the zero-padded sequence: [0, f_{-M+1} .. f_{M-1}]
            g[idx + 1] = f;
        }
        // fftshift: rotate by m positions.
        let mut shifted = vec![0.0_f64; m2];
        for (i, val) in g.iter().enumerate() {
            shifted[(i + m) % m2] = *val;
        }
        // Real part of the DFT, direct O(M^2) evaluation (done once).
        let mut a = vec![0.0_f64; N];
        for (j, aj) in a.iter_mut().enumerate() {
            let freq = j + 1; // drop the DC coefficient
            let mut acc = 0.0;
            for (mi, val) in shifted.iter().enumerate() {
                acc += val * (2.0 * std::f64::consts::PI * freq as f64 * mi as f64 / m2 as f64).cos();
            }
            *aj = acc / m2 as f64;
        }
        a.reverse(); // highest-degree coefficient first
        (a, l)
    })
}

/// Faddeeva function w(z) for Im(z) >= 0.
pub fn faddeeva_w<T: Float>(z: Complex<T>) -> Complex<T> {
    let (coeffs, l64) = weideman_coeffs();
    let l = T::c(*l64);
    let iz = Complex::new(-z.im, z.re); // i * z
    let denom = Complex::new(l, T::zero()) - iz;
    let zz = (Complex::new(l, T::zero()) + iz) / denom;
    let mut p = Complex::new(T::zero(), T::zero());
    for c in coeffs.iter() {
        p = p * zz + Complex::new(T::c(*c), T::zero());
    }
    let two = Complex::new(T::c(2.0), T::zero());
    let sqrt_pi_inv = Complex::new(T::c(1.0 / std::f64::consts::PI.sqrt()), T::zero());
    two * p / (denom * denom) + sqrt_pi_inv / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl8_integrates_polynomials_exactly() {
        // degree <= 15 is exact for 8-point Gauss-Legendre
        let f = |x: f64| 3.0 * x.powi(7) - x.powi(4) + 2.0 * x + 1.0;
        let exact = |x: f64| 3.0 / 8.0 * x.powi(8) - x.powi(5) / 5.0 + x * x + x;
        let got = integrate_gl8(f, -1.3, 2.7);
        assert!((got - (exact(2.7) - exact(-1.3))).abs() < 1e-10);
    }

    #[test]
    fn adaptive_simpson_handles_peaked_integrand() {
        // narrow Lorentzian, integrates to ~pi
        let g = 1e-3;
        let f = |x: f64| g / (x * x + g * g);
        let got = adaptive_simpson(&f, -10.0, 10.0, 1e-12).unwrap();
        let exact = 2.0 * (10.0 / g).atan();
        assert!((got - exact).abs() / exact < 1e-10);
    }

    #[test]
    fn solve_and_invert_agree() {
        let a = [4.0, 1.0, 2.0, 1.0, 5.0, 0.5, 2.0, 0.5, 6.0];
        let b = [1.0, -2.0, 3.0];
        let mut a1 = a;
        let mut b1 = b;
        let x = solve_linear(&mut a1, &mut b1, 3).unwrap();
        let mut a2 = a;
        assert!(invert_in_place(&mut a2, 3));
        for i in 0..3 {
            let xi: f64 = (0..3).map(|j| a2[i * 3 + j] * b[j]).sum();
            assert!((xi - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&x| 2.5 * x - 1.25).collect();
        let w = vec![1.0; 10];
        let fit = weighted_line_fit(&x, &y, &w).unwrap();
        assert!((fit.slope - 2.5).abs() < 1e-12);
        assert!((fit.intercept + 1.25).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn faddeeva_reference_values() {
        // Reference values computed with mpmath (erfcx-based, 30 digits).
        // w(1 + 1i) = 0.3047442052569125 + 0.2082189382028316 i
        let w = faddeeva_w(num_complex::Complex::new(1.0_f64, 1.0));
        assert!((w.re - 0.304_744_205_256_912_5).abs() < 1e-12);
        assert!((w.im - 0.208_218_938_202_831_6).abs() < 1e-12);
        // w(i y) = erfcx(y), at y = 0.5: erfcx(0.5) = 0.6156903441929259
        let w2 = faddeeva_w(num_complex::Complex::new(0.0_f64, 0.5));
        assert!((w2.re - 0.615_690_344_192_925_9).abs() < 1e-12);
        assert!(w2.im.abs() < 1e-13);
    }

    #[test]
    fn running_stats_match_direct() {
        let xs = [1.0, 2.5, -0.5, 4.0, 0.0];
        let mut rs = RunningStats::<f64>::default();
        for &x in &xs {
            rs.push(x);
        }
        let mean: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
        let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((rs.mean - mean).abs() < 1e-14);
        assert!((rs.variance() - var).abs() < 1e-14);
    }
}
