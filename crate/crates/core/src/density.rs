//! Closed-form densities, the delta kernel and Chebyshev-expansion checks.
//!
//! Two abscissa conventions appear: `eps` on `[-1, 1]` (UME, scaled by
//! `2 sqrt(N-2)`) and `x = E / sqrt(N)` on `[-2, 2]` for the GUE.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::ensemble::{build_ume, scale_divisor, HermitianMatrix, MatrixKind, PhaseConfiguration};
use crate::nbwalks::{hashimoto, y_from_operator};
use crate::spectral::{chebyshev_all, eigenvalues, pre_trace_boundary, ChebyshevCoefficients, Spectrum};
use crate::{LabError, Result, C64};

/// `(2/pi) sqrt(1 - eps^2)` on `[-1, 1]`, zero outside.
pub fn semicircle(eps: f64) -> f64 {
    if eps.abs() >= 1.0 {
        0.0
    } else {
        2.0 / PI * (1.0 - eps * eps).sqrt()
    }
}

/// `1 + 1/(N-2) - 4 eps^2/(N-1)`.
pub fn ume_density_denominator(eps: f64, n: usize) -> f64 {
    let nf = n as f64;
    1.0 + 1.0 / (nf - 2.0) - 4.0 * eps * eps / (nf - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityValue {
    pub value: f64,
    /// False when the denominator is not strictly positive (only `N = 3`, `|eps| = 1`).
    pub valid: bool,
}

/// Finite-N mean density with its validity flag; the value is not clamped.
pub fn ume_mean_density_flagged(eps: f64, n: usize) -> DensityValue {
    if eps.abs() > 1.0 {
        return DensityValue { value: 0.0, valid: true };
    }
    let den = ume_density_denominator(eps, n);
    let num = 2.0 / PI * (1.0 - eps * eps).max(0.0).sqrt();
    DensityValue { value: num / den, valid: den > 0.0 }
}

/// `(2/pi) sqrt(1 - eps^2) / (1 + 1/(N-2) - 4 eps^2/(N-1))`, zero for `|eps| > 1`.
pub fn ume_mean_density(eps: f64, n: usize) -> f64 {
    ume_mean_density_flagged(eps, n).value
}

/// Exact finite-N GUE density in the unscaled energy `E` (support about `+-2 sqrt N`):
/// `(1/N) sum_{k<N} psi_k(E)^2` with `psi_0 = (2 pi)^(-1/4) exp(-E^2/4)`,
/// `psi_{k+1} = (E psi_k - sqrt(k) psi_{k-1}) / sqrt(k+1)`.
pub fn gue_finite_density_unscaled(e: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut prev = 0.0;
    let mut cur = (2.0 * PI).powf(-0.25) * (-e * e / 4.0).exp();
    let mut sum = cur * cur;
    for k in 0..n - 1 {
        let kf = k as f64;
        let next = (e * cur - kf.sqrt() * prev) / (kf + 1.0).sqrt();
        prev = cur;
        cur = next;
        sum += cur * cur;
    }
    sum / n as f64
}

/// Same density in `x = E / sqrt(N)`, support about `[-2, 2]`.
pub fn gue_finite_density(x: f64, n: usize) -> f64 {
    let s = (n as f64).sqrt();
    s * gue_finite_density_unscaled(x * s, n)
}

/// Printed complex `1/N` correction
/// `(1/(N pi)) (1/(1 - x^2/4)) exp(i N x sqrt(1 - x^2/4) + 2 i N arctan(-2 sqrt(1 - x^2/4) / x))`.
///
/// The arctangent is taken as `atan2(-2 sqrt(1 - x^2/4), x)` in `(-pi, pi]`; the
/// other branch differs by `pi`, which `2N` turns into a multiple of `2 pi`.
pub fn gue_density_oscillation_complex(x: f64, n: usize) -> Result<C64> {
    if x.abs() >= 2.0 {
        return Err(LabError::Domain(format!("oscillation term needs |x| < 2, got {x}")));
    }
    let nf = n as f64;
    let s = (1.0 - x * x / 4.0).sqrt();
    let phase = nf * x * s + 2.0 * nf * (-2.0 * s).atan2(x);
    Ok(C64::from_polar(1.0 / (nf * PI * (1.0 - x * x / 4.0)), phase))
}

/// Real part of [`gue_density_oscillation_complex`].
pub fn gue_density_oscillation(x: f64, n: usize) -> Result<f64> {
    Ok(gue_density_oscillation_complex(x, n)?.re)
}

pub const DEFAULT_BAND_CONSTANT: f64 = 5.0;

/// `|xi| < 1 - c / N*`.
pub fn in_kernel_band(xi: f64, n_star: usize, c: f64) -> bool {
    xi.abs() < 1.0 - c / n_star as f64
}

/// `1 / (1 + (pi/2) sqrt(1 - xi^2))`.
pub fn delta_kernel_prefactor(xi: f64) -> f64 {
    1.0 / (1.0 + FRAC_PI_2 * (1.0 - xi * xi).sqrt())
}

pub fn delta_kernel(x: f64, xi: f64, n_star: usize) -> Result<f64> {
    delta_kernel_with(x, xi, n_star, DEFAULT_BAND_CONSTANT)
}

/// `delta_{N*}(x; xi) = prefactor(xi) sum_{m=0}^{N*} T_m(x) T_m(xi)`.
pub fn delta_kernel_with(x: f64, xi: f64, n_star: usize, c: f64) -> Result<f64> {
    if !in_kernel_band(xi, n_star, c) {
        return Err(LabError::Domain(format!("xi = {xi} outside |xi| < 1 - {c}/{n_star}")));
    }
    let tx = chebyshev_all(n_star, x);
    let txi = chebyshev_all(n_star, xi);
    Ok(delta_kernel_prefactor(xi) * tx.iter().zip(&txi).map(|(a, b)| a * b).sum::<f64>())
}

/// `f_m = ((2 - delta_{m0}) / pi) int f T_m / sqrt(1 - eps^2)` by Gauss-Chebyshev
/// quadrature on `max(4 m_max, 16)` nodes.
pub fn chebyshev_coefficients(f: impl Fn(f64) -> f64, m_max: usize) -> ChebyshevCoefficients {
    let k = (4 * m_max).max(16);
    let mut coeffs = vec![0.0; m_max + 1];
    for j in 0..k {
        let x = (PI * (j as f64 + 0.5) / k as f64).cos();
        let fx = f(x);
        for (m, t) in chebyshev_all(m_max, x).into_iter().enumerate() {
            coeffs[m] += fx * t;
        }
    }
    for (m, c) in coeffs.iter_mut().enumerate() {
        *c *= if m == 0 { 1.0 } else { 2.0 } / k as f64;
    }
    ChebyshevCoefficients { coeffs }
}

/// Polynomial in the power basis, `coeffs[k]` multiplying `x^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn to_chebyshev(&self) -> ChebyshevCoefficients {
        chebyshev_coefficients(|x| self.eval(x), self.degree())
    }
}

/// Which right-hand side of the trace formula to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceFormulaForm {
    /// Boundary terms reconstructed coefficient by coefficient.
    PerTerm,
    /// Boundary terms folded into an integral against the finite-N mean density.
    Integral,
}

const MAX_TRACE_FORMULA_DEGREE: usize = 40;

/// `|(1/N) Tr f(W) - RHS|` where the left side comes from the spectrum and the
/// right side from `y_n` computed as Hashimoto-operator traces.
pub fn trace_formula_residual(phi: &PhaseConfiguration, f: &Polynomial, form: TraceFormulaForm) -> Result<f64> {
    let (lhs, rhs) = trace_formula_sides(phi, f, form)?;
    Ok((lhs - rhs).abs())
}

/// `(lhs, rhs)` of the trace formula.
pub fn trace_formula_sides(phi: &PhaseConfiguration, f: &Polynomial, form: TraceFormulaForm) -> Result<(f64, f64)> {
    let deg = f.degree();
    if deg > MAX_TRACE_FORMULA_DEGREE {
        return Err(LabError::Domain(format!("degree {deg} above {MAX_TRACE_FORMULA_DEGREE}")));
    }
    let n = phi.size();
    scale_divisor(n)?;
    let spec = eigenvalues(&build_ume(phi))?;
    let lhs = spec.scaled.iter().map(|&e| f.eval(e)).sum::<f64>() / n as f64;

    let fc = f.to_chebyshev().coeffs;
    let y = y_from_operator(&hashimoto(phi)?, deg);
    let periodic: f64 = (3..=deg).map(|k| 0.5 * y[k] * fc[k]).sum();
    let smooth = match form {
        TraceFormulaForm::PerTerm => {
            0.5 * (n as f64 - 1.0) * fc[0] - (0..=deg).map(|k| 0.5 * fc[k] * pre_trace_boundary(k, n)).sum::<f64>()
        }
        TraceFormulaForm::Integral => mean_density_integral(|e| f.eval(e), n, 512),
    };
    Ok((lhs, periodic + smooth))
}

/// `int_{-1}^{1} <rho(eps)> g(eps) d eps` by Gauss-Chebyshev quadrature of the second kind.
pub fn mean_density_integral(g: impl Fn(f64) -> f64, n: usize, nodes: usize) -> f64 {
    let h = PI / (nodes as f64 + 1.0);
    (1..=nodes)
        .map(|j| {
            let t = j as f64 * h;
            let x = t.cos();
            h * t.sin().powi(2) * (2.0 / PI) * g(x) / ume_density_denominator(x, n)
        })
        .sum()
}

/// Sampled curve with optional standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityCurve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    /// Whether the curve is claimed to integrate to one over its support.
    pub normalized: bool,
}

impl DensityCurve {
    pub fn from_fn(x: Vec<f64>, f: impl Fn(f64) -> f64, normalized: bool) -> Self {
        let y = x.iter().map(|&v| f(v)).collect();
        Self { x, y, stderr: None, normalized }
    }

    /// Trapezoid rule over the grid.
    pub fn integral(&self) -> f64 {
        self.x.windows(2).zip(self.y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
    }
}

/// Evenly spaced grid including both ends.
pub fn linspace(a: f64, b: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![a];
    }
    (0..points).map(|i| a + (b - a) * i as f64 / (points - 1) as f64).collect()
}

/// Monte Carlo `(1/N) <Tr delta_{N*}(W; xi)>` over the given spectra.
pub fn smoothed_mean_density(spectra: &[Spectrum], xi: &[f64], n_star: usize, c: f64) -> Result<DensityCurve> {
    if spectra.is_empty() {
        return Err(LabError::EmptyEnsemble);
    }
    if let Some(bad) = xi.iter().find(|&&v| !in_kernel_band(v, n_star, c)) {
        return Err(LabError::Domain(format!("xi = {bad} outside |xi| < 1 - {c}/{n_star}")));
    }
    let txi: Vec<Vec<f64>> = xi.iter().map(|&v| chebyshev_all(n_star, v)).collect();
    let pref: Vec<f64> = xi.iter().map(|&v| delta_kernel_prefactor(v)).collect();
    let mut sum = vec![0.0; xi.len()];
    let mut sum2 = vec![0.0; xi.len()];
    for spec in spectra {
        if spec.scaled.is_empty() {
            return Err(LabError::InvalidDimension { dim: spec.dim, reason: "scaled spectrum needs N >= 3" });
        }
        let mut tau = vec![0.0; n_star + 1];
        for &e in &spec.scaled {
            for (t, v) in tau.iter_mut().zip(chebyshev_all(n_star, e)) {
                *t += v;
            }
        }
        let nf = spec.dim as f64;
        for (i, t) in txi.iter().enumerate() {
            let v = pref[i] * tau.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / nf;
            sum[i] += v;
            sum2[i] += v * v;
        }
    }
    let r = spectra.len() as f64;
    let y: Vec<f64> = sum.iter().map(|s| s / r).collect();
    let stderr = sum2
        .iter()
        .zip(&y)
        .map(|(s2, m)| if r > 1.0 { ((s2 / r - m * m).max(0.0) * r / (r - 1.0) / r).sqrt() } else { f64::NAN })
        .collect();
    Ok(DensityCurve { x: xi.to_vec(), y, stderr: Some(stderr), normalized: false })
}

/// Normalized histogram of scaled eigenvalues.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub replicas: u64,
    pub heights: Vec<f64>,
}

impl DensityHistogram {
    /// Bins of the given width aligned to `-1`, extended until every sample is covered.
    pub fn from_samples(samples: &[f64], width: f64, replicas: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(LabError::EmptyEnsemble);
        }
        if !(width > 0.0) {
            return Err(LabError::Domain(format!("bin width {width}")));
        }
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min).min(-1.0);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(1.0);
        let below = ((-1.0 - min) / width).ceil() as i64;
        let lo = -1.0 - below as f64 * width;
        let bins = (((max - lo) / width).floor() as usize + 1).max(1);
        let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
        let mut counts = vec![0u64; bins];
        for &s in samples {
            let i = (((s - lo) / width).floor() as usize).min(bins - 1);
            counts[i] += 1;
        }
        let total = samples.len() as f64;
        let heights = counts.iter().map(|&c| c as f64 / (total * width)).collect();
        Ok(Self { edges, counts, replicas, heights })
    }

    /// Default width `2 / ceil(sqrt(replicas))`.
    pub fn default_width(replicas: u64) -> f64 {
        2.0 / (replicas as f64).sqrt().ceil()
    }

    pub fn height_at(&self, x: f64) -> f64 {
        let w = self.edges[1] - self.edges[0];
        let i = ((x - self.edges[0]) / w).floor();
        if i < 0.0 || i as usize >= self.heights.len() {
            0.0
        } else {
            self.heights[i as usize]
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.heights.iter().zip(self.edges.windows(2)).map(|(h, e)| h * (e[1] - e[0])).sum()
    }

    /// `int_a^b |h(x) - f(x)| dx` by the midpoint rule on a fine grid.
    pub fn l1_distance(&self, f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let steps = 20_000;
        let dx = (b - a) / steps as f64;
        (0..steps)
            .map(|i| {
                let x = a + (i as f64 + 0.5) * dx;
                (self.height_at(x) - f(x)).abs() * dx
            })
            .sum()
    }
}

/// Builds `W` directly, for callers that want the matrix rather than a spectrum.
pub fn scaled_ume(phi: &PhaseConfiguration) -> Result<HermitianMatrix> {
    let m = build_ume(phi);
    let d = scale_divisor(m.dim())?;
    HermitianMatrix::from_entries(m.dim(), m.entries().iter().map(|z| z / d).collect(), MatrixKind::Scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample_phases, SeedSpec};

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn semicircle_values() {
        assert!((semicircle(0.0) - 0.636_619_772_367_581_3).abs() < 1e-15);
        assert_eq!(semicircle(1.0), 0.0);
        assert_eq!(semicircle(-1.0), 0.0);
        // substitution eps = sin t removes the endpoint singularity
        let total = simpson(|t: f64| semicircle(t.sin()) * t.cos(), -FRAC_PI_2, FRAC_PI_2, 2000);
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mean_density_values() {
        assert!((ume_mean_density(0.0, 10) - 2.0 / PI * 8.0 / 9.0).abs() < 1e-15);
        assert!((ume_mean_density(0.0, 10) - 0.565_884).abs() < 1e-6);
        assert_eq!(ume_mean_density(1.0, 7), 0.0);
        assert_eq!(ume_mean_density(-1.0, 7), 0.0);
        assert_eq!(ume_mean_density(1.2, 7), 0.0);
        let worst = linspace(-1.0, 1.0, 1001)
            .into_iter()
            .map(|e| (ume_mean_density(e, 1_000_000) - semicircle(e)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-5);
    }

    #[test]
    fn mean_density_validity() {
        for n in 4..60 {
            for e in linspace(-1.0, 1.0, 201) {
                let d = ume_mean_density_flagged(e, n);
                assert!(d.valid && d.value >= 0.0, "N={n} eps={e}");
            }
        }
        assert!(!ume_mean_density_flagged(1.0, 3).valid);
        assert!(ume_mean_density_flagged(0.999, 3).valid);
    }

    #[test]
    fn mean_density_is_normalized() {
        for n in [4, 5, 10, 50] {
            let total = mean_density_integral(|_| 1.0, n, 2000);
            assert!((total - 1.0).abs() < 1e-10, "N={n}: {total}");
        }
    }

    #[test]
    fn gue_density_normalization_and_second_moment() {
        for n in [1, 2, 5, 12, 30] {
            let r = 2.0 * (n as f64).sqrt() + 12.0;
            let mass = simpson(|e| gue_finite_density_unscaled(e, n), -r, r, 4000);
            let m2 = simpson(|e| e * e * gue_finite_density_unscaled(e, n), -r, r, 4000);
            assert!((mass - 1.0).abs() < 1e-8, "N={n}: {mass}");
            assert!((m2 - n as f64).abs() < 1e-6, "N={n}: {m2}");
            let xs = simpson(|x| gue_finite_density(x, n), -r, r, 4000);
            assert!((xs - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn gue_density_has_n_maxima() {
        let n = 20;
        let xs = linspace(-2.2, 2.2, 20_001);
        let ys: Vec<f64> = xs.iter().map(|&x| gue_finite_density(x, n)).collect();
        let maxima = (1..ys.len() - 1).filter(|&i| ys[i] > ys[i - 1] && ys[i] > ys[i + 1]).count();
        assert_eq!(maxima, n);
    }

    #[test]
    fn oscillation_envelope_and_domain() {
        let a = gue_density_oscillation_complex(0.5, 20).unwrap().norm();
        let b = gue_density_oscillation_complex(0.5, 40).unwrap().norm();
        assert!((a / b - 2.0).abs() < 0.05 * 2.0);
        assert!(gue_density_oscillation(2.0, 10).is_err());
        assert!(gue_density_oscillation(-2.5, 10).is_err());
        let near = gue_density_oscillation_complex(1.9999, 10).unwrap().norm();
        assert!(near > 1e3 * gue_density_oscillation_complex(0.0, 10).unwrap().norm());
        let crossings = |n: usize| {
            let v: Vec<f64> = linspace(-1.5, 1.5, 30_001).iter().map(|&x| gue_density_oscillation(x, n).unwrap()).collect();
            v.windows(2).filter(|w| w[0].signum() != w[1].signum()).count()
        };
        let (c20, c40) = (crossings(20), crossings(40));
        assert!(c40 as f64 > 1.8 * c20 as f64 && (c40 as f64) < 2.2 * c20 as f64, "{c20} {c40}");
    }

    #[test]
    fn kernel_peak_width_and_band() {
        let n_star = 40;
        let peak = delta_kernel(0.0, 0.0, n_star).unwrap();
        let expected = (n_star as f64 + 1.0) / (2.0 * (1.0 + FRAC_PI_2));
        assert!(((peak - expected) / expected).abs() < 2.0 / n_star as f64);
        // half-maximum crossing on the right of xi = 0
        let mut x = 0.0;
        while delta_kernel(x, 0.0, n_star).unwrap() > 0.5 * peak {
            x += 1e-5;
        }
        let fwhm = 2.0 * x;
        let expected = 2.0 * 3f64.sqrt() / n_star as f64;
        assert!((fwhm / expected - 1.0).abs() < 0.2, "fwhm {fwhm} expected {expected}");
        assert!(delta_kernel(0.0, 0.9, n_star).is_err());
        assert!(delta_kernel(0.0, 0.8, n_star).is_ok());
    }

    #[test]
    fn kernel_integral_tends_to_one() {
        let mut last = f64::INFINITY;
        for n_star in [20, 40, 80, 160] {
            let total = simpson(|t: f64| delta_kernel(t.sin(), 0.3, n_star).unwrap() * t.cos(), -FRAC_PI_2, FRAC_PI_2, 20_000);
            let err = (total - 1.0).abs();
            assert!(err < 3.0 / n_star as f64, "N*={n_star}: {total}");
            assert!(err <= last + 1e-12);
            last = err;
        }
    }

    #[test]
    fn coefficients_of_simple_functions() {
        let c = chebyshev_coefficients(|x| 4.0 * x * x * x - 3.0 * x, 8);
        for (m, v) in c.coeffs.iter().enumerate() {
            let want = if m == 3 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-10);
        }
        let c = chebyshev_coefficients(|_| 1.0, 5);
        assert!((c.coeffs[0] - 1.0).abs() < 1e-12 && c.coeffs[1..].iter().all(|v| v.abs() < 1e-12));
        let c = chebyshev_coefficients(|x| x * x, 6);
        assert!((c.coeffs[0] - 0.5).abs() < 1e-12 && (c.coeffs[2] - 0.5).abs() < 1e-12);
        assert!(c.coeffs.iter().enumerate().all(|(m, v)| m == 0 || m == 2 || v.abs() < 1e-12));
    }

    #[test]
    fn trace_formula_constant_and_t4() {
        let phi = sample_phases(12, SeedSpec::new(3, 0)).unwrap();
        let one = Polynomial { coeffs: vec![1.0] };
        assert!(trace_formula_residual(&phi, &one, TraceFormulaForm::PerTerm).unwrap() < 1e-14);
        let t4 = Polynomial { coeffs: vec![1.0, 0.0, -8.0, 0.0, 8.0] };
        for r in 0..10 {
            let phi = sample_phases(12, SeedSpec::new(44, r)).unwrap();
            for form in [TraceFormulaForm::PerTerm, TraceFormulaForm::Integral] {
                assert!(trace_formula_residual(&phi, &t4, form).unwrap() <= 1e-10);
            }
        }
    }

    #[test]
    fn histogram_mass_and_l1() {
        let samples: Vec<f64> = (0..1000).map(|i| -1.05 + 2.1 * (i as f64 + 0.5) / 1000.0).collect();
        let h = DensityHistogram::from_samples(&samples, 0.1, 1).unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-12);
        assert!(h.edges[0] <= -1.05 && *h.edges.last().unwrap() >= 1.05);
        assert!(h.l1_distance(|_| 1.0 / 2.1, -0.8, 0.8) < 0.02);
        assert!(DensityHistogram::from_samples(&[], 0.1, 0).is_err());
        assert!((DensityHistogram::default_width(20_000) - 2.0 / 142.0).abs() < 1e-15);
    }
}
