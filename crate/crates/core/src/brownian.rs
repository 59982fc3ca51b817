//! Brownian motion of the phases and the drift/diffusion of centered Chebyshev traces.
//!
//! In time `ds` every phase receives an independent `N(0, 2 ds)` increment, so the
//! generator is `L = sum_e d^2/d phi_e^2`. For `F_n = Tr T_n(W) - <Tr T_n(W)>` the
//! expected contract is drift `~ -n F_n` and diffusion `~ (n^2/2) delta_{nm}`.
//!
//! Two routes are provided: Monte Carlo one-step estimators from a fixed `Phi`, and
//! the exact `ds -> 0` limit from eigenvalue perturbation theory
//! (`d Tr f(M) = Tr f'(M) dM`, second order through divided differences of `f'`).

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::ensemble::{build_ume, sample_phases, scale_divisor, PhaseConfiguration, SeedSpec};
use crate::mcharness::BLOCK_SIZE;
use crate::spectral::{chebyshev_all, chebyshev_with_derivatives, eigen_decomposition, eigenvalues, Centering};
use crate::{LabError, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionConfig {
    pub delta_s: f64,
    /// One-step realizations per conditional expectation.
    pub replicas: usize,
    pub horizon_steps: usize,
    pub seed: SeedSpec,
    pub centering: Centering,
}

impl MotionConfig {
    pub fn new(delta_s: f64, replicas: usize, seed: SeedSpec) -> Self {
        Self { delta_s, replicas, horizon_steps: 1, seed, centering: Centering::ClosedForm }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_s > 0.0) {
            return Err(LabError::Domain(format!("step size must be positive, got {}", self.delta_s)));
        }
        if self.replicas == 0 {
            return Err(LabError::Domain("need at least one replica".into()));
        }
        Ok(())
    }
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self::new(1e-3, 400, SeedSpec::new(0, 0))
    }
}

/// Adds `N(0, 2 ds)` to each phase and wraps back into `[0, 2 pi)`.
pub fn brownian_step<R: Rng + ?Sized>(phi: &PhaseConfiguration, delta_s: f64, rng: &mut R) -> Result<PhaseConfiguration> {
    if !(delta_s > 0.0) {
        return Err(LabError::Domain(format!("step size must be positive, got {delta_s}")));
    }
    let sd = (2.0 * delta_s).sqrt();
    let moved: Vec<f64> = phi.phases().iter().map(|p| p + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    PhaseConfiguration::from_unwrapped(phi.size(), moved)
}

fn shifted(phi: &PhaseConfiguration, g: &[f64], sign: f64) -> Result<PhaseConfiguration> {
    PhaseConfiguration::from_unwrapped(phi.size(), phi.phases().iter().zip(g).map(|(p, d)| p + sign * d))
}

/// `F_n` for every `n` in `ns`.
pub fn centered_traces(phi: &PhaseConfiguration, ns: &[usize], centering: Centering) -> Result<Vec<f64>> {
    if let Some(&bad) = ns.iter().find(|&&n| n < 3) {
        return Err(LabError::Domain(format!("F_n needs n >= 3, got {bad}")));
    }
    let spec = eigenvalues(&build_ume(phi))?;
    let n_max = ns.iter().copied().max().unwrap_or(0);
    let mut tr = vec![0.0; n_max + 1];
    for &e in &spec.scaled {
        for (t, v) in tr.iter_mut().zip(chebyshev_all(n_max, e)) {
            *t += v;
        }
    }
    Ok(ns.iter().map(|&n| tr[n] - centering.mean(n, spec.dim)).collect())
}

/// Exact generator data at one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactGenerator {
    pub ns: Vec<usize>,
    pub f: Vec<f64>,
    /// `L F_n`.
    pub drift: Vec<f64>,
    /// `2 sum_e dF_n/dphi_e dF_m/dphi_e`, row-major over `ns`.
    pub diffusion: Vec<f64>,
}

impl ExactGenerator {
    pub fn drift_remainder(&self, i: usize) -> f64 {
        self.drift[i] + self.ns[i] as f64 * self.f[i]
    }

    pub fn diffusion_at(&self, i: usize, j: usize) -> f64 {
        self.diffusion[i * self.ns.len() + j]
    }

    pub fn diffusion_remainder(&self, i: usize, j: usize) -> f64 {
        let n = self.ns[i] as f64;
        self.diffusion_at(i, j) - if i == j { n * n / 2.0 } else { 0.0 }
    }
}

/// Drift and diffusion of `F_n` in the limit `ds -> 0`, by perturbation of the eigen-decomposition of `M`.
pub fn exact_generator(phi: &PhaseConfiguration, ns: &[usize], centering: Centering) -> Result<ExactGenerator> {
    if let Some(&bad) = ns.iter().find(|&&n| n < 3) {
        return Err(LabError::Domain(format!("F_n needs n >= 3, got {bad}")));
    }
    let size = phi.size();
    let c = 1.0 / scale_divisor(size)?;
    let evd = eigen_decomposition(&build_ume(phi))?;
    let lam = &evd.values;
    let u = |k: usize, i: usize| evd.vectors[k * size + i];

    // G_jk = sum_e |<u_j| A_e |u_k>|^2 and the diagonal elements (A_e)_kk for gradients
    let mut g = vec![0.0; size * size];
    let n_edges = size * (size - 1) / 2;
    let mut akk = vec![0.0; n_edges * size];
    for (p, (mu, nu)) in phi.pairs().enumerate() {
        let w = C64::from_polar(1.0, phi.phases()[p]);
        for j in 0..size {
            let a = w * u(j, mu).conj();
            let b = w.conj() * u(j, nu).conj();
            for k in 0..size {
                let z = a * u(k, nu) - b * u(k, mu);
                g[j * size + k] += z.norm_sqr();
            }
            akk[p * size + j] = -2.0 * (w * u(j, mu).conj() * u(j, nu)).im;
        }
    }

    let mut f = Vec::with_capacity(ns.len());
    let mut drift = Vec::with_capacity(ns.len());
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(ns.len());
    for &n in ns {
        let derivs: Vec<(f64, f64, f64)> = lam
            .iter()
            .map(|&l| {
                let (t, d, s) = chebyshev_with_derivatives(n, c * l);
                (t, c * d, c * c * s)
            })
            .collect();
        f.push(derivs.iter().map(|d| d.0).sum::<f64>() - centering.mean(n, size));
        let mut dr = -lam.iter().zip(&derivs).map(|(l, d)| l * d.1).sum::<f64>();
        for j in 0..size {
            for k in 0..size {
                let gap = lam[j] - lam[k];
                let dd = if gap.abs() <= 1e-9 * (1.0 + lam[j].abs()) {
                    0.5 * (derivs[j].2 + derivs[k].2)
                } else {
                    (derivs[j].1 - derivs[k].1) / gap
                };
                dr += g[j * size + k] * dd;
            }
        }
        drift.push(dr);
        grads.push(
            (0..n_edges)
                .map(|p| (0..size).map(|k| derivs[k].1 * akk[p * size + k]).sum())
                .collect(),
        );
    }
    let k = ns.len();
    let mut diffusion = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            diffusion[i * k + j] = 2.0 * grads[i].iter().zip(&grads[j]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(ExactGenerator { ns: ns.to_vec(), f, drift, diffusion })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftEstimate {
    pub empirical: f64,
    pub stderr: f64,
    pub f_n: f64,
    /// `-n F_n`.
    pub predicted: f64,
    /// `empirical - predicted`.
    pub remainder: f64,
}

fn gaussian_increments<R: Rng>(rng: &mut R, len: usize, delta_s: f64) -> Vec<f64> {
    let sd = (2.0 * delta_s).sqrt();
    (0..len).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Monte Carlo `E[dF_n | Phi] / ds` with antithetic increments
/// `(F(Phi + g) + F(Phi - g) - 2 F(Phi)) / (2 ds)`.
pub fn estimate_drift(phi: &PhaseConfiguration, n: usize, cfg: &MotionConfig) -> Result<DriftEstimate> {
    let steps = one_step_samples(phi, &[n], cfg)?;
    Ok(steps.drift(0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionEstimate {
    pub empirical: f64,
    pub stderr: f64,
    /// `(n^2 / 2) delta_{nm}`.
    pub predicted: f64,
    pub remainder: f64,
}

/// Monte Carlo `E[dF_n dF_m | Phi] / ds`, averaging the `+g` and `-g` increments.
pub fn estimate_diffusion(phi: &PhaseConfiguration, n: usize, m: usize, cfg: &MotionConfig) -> Result<DiffusionEstimate> {
    let steps = one_step_samples(phi, &[n, m], cfg)?;
    Ok(steps.diffusion(0, 1))
}

/// `F` at `Phi` and at `Phi +- g` for each antithetic pair of increments.
struct OneStep {
    ns: Vec<usize>,
    delta_s: f64,
    f0: Vec<f64>,
    plus: Vec<Vec<f64>>,
    minus: Vec<Vec<f64>>,
}

impl OneStep {
    fn drift(&self, i: usize) -> DriftEstimate {
        let samples: Vec<f64> = self
            .plus
            .iter()
            .zip(&self.minus)
            .map(|(p, m)| (p[i] + m[i] - 2.0 * self.f0[i]) / (2.0 * self.delta_s))
            .collect();
        let (empirical, stderr) = mean_se(&samples);
        let predicted = -(self.ns[i] as f64) * self.f0[i];
        DriftEstimate { empirical, stderr, f_n: self.f0[i], predicted, remainder: empirical - predicted }
    }

    fn diffusion(&self, i: usize, j: usize) -> DiffusionEstimate {
        let f0 = &self.f0;
        let samples: Vec<f64> = self
            .plus
            .iter()
            .zip(&self.minus)
            .map(|(p, m)| ((p[i] - f0[i]) * (p[j] - f0[j]) + (m[i] - f0[i]) * (m[j] - f0[j])) / (2.0 * self.delta_s))
            .collect();
        let (empirical, stderr) = mean_se(&samples);
        let n = self.ns[i];
        let predicted = if n == self.ns[j] { (n * n) as f64 / 2.0 } else { 0.0 };
        DiffusionEstimate { empirical, stderr, predicted, remainder: empirical - predicted }
    }
}

fn one_step_samples(phi: &PhaseConfiguration, ns: &[usize], cfg: &MotionConfig) -> Result<OneStep> {
    cfg.validate()?;
    let f0 = centered_traces(phi, ns, cfg.centering)?;
    let mut rng = cfg.seed.rng();
    let mut plus = Vec::with_capacity(cfg.replicas);
    let mut minus = Vec::with_capacity(cfg.replicas);
    for _ in 0..cfg.replicas {
        let g = gaussian_increments(&mut rng, phi.phases().len(), cfg.delta_s);
        plus.push(centered_traces(&shifted(phi, &g, 1.0)?, ns, cfg.centering)?);
        minus.push(centered_traces(&shifted(phi, &g, -1.0)?, ns, cfg.centering)?);
    }
    Ok(OneStep { ns: ns.to_vec(), delta_s: cfg.delta_s, f0, plus, minus })
}

/// Monte Carlo drift slopes, diffusion matrix and remainder sizes over sampled configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftDiffusionReport {
    pub n_dim: usize,
    pub ns: Vec<usize>,
    pub configurations: usize,
    /// Least-squares slope of the drift against `F_n`.
    pub slopes: Vec<Estimate>,
    /// Configuration average of `E[dF_n dF_m | Phi] / ds`, row-major and symmetrized.
    pub diffusion: Vec<Estimate>,
    /// Configuration average of `|drift + n F_n|`.
    pub drift_remainder: Vec<Estimate>,
    /// Configuration average of `|diffusion - (n^2/2) delta_{nm}|`, row-major.
    pub diffusion_remainder: Vec<Estimate>,
}

impl DriftDiffusionReport {
    pub fn diffusion_at(&self, i: usize, j: usize) -> Estimate {
        self.diffusion[i * self.ns.len() + j]
    }
}

/// Configuration `i` is sampled with seed `(master, i)`; its increments use a derived stream.
pub fn drift_diffusion_report(n_dim: usize, ns: &[usize], configurations: usize, cfg: &MotionConfig) -> Result<DriftDiffusionReport> {
    if configurations < 3 {
        return Err(LabError::TooFewSamples { need: 3, got: configurations });
    }
    let steps: Vec<OneStep> = (0..configurations as u64)
        .into_par_iter()
        .map(|i| {
            let seed = SeedSpec::new(cfg.seed.master_seed, i);
            let phi = sample_phases(n_dim, seed)?;
            one_step_samples(&phi, ns, &MotionConfig { seed: seed.derive(1), ..*cfg })
        })
        .collect::<Result<_>>()?;
    let k = ns.len();
    let avg = |v: Vec<f64>| {
        let (value, stderr) = mean_se(&v);
        Estimate { value, stderr }
    };
    let mut slopes = Vec::with_capacity(k);
    let mut drift_remainder = Vec::with_capacity(k);
    for i in 0..k {
        let pts: Vec<DriftEstimate> = steps.iter().map(|s| s.drift(i)).collect();
        slopes.push(fit_slope(&pts).0);
        drift_remainder.push(avg(pts.iter().map(|p| p.remainder.abs()).collect()));
    }
    let mut diffusion = vec![Estimate { value: 0.0, stderr: 0.0 }; k * k];
    let mut diffusion_remainder = diffusion.clone();
    for i in 0..k {
        for j in i..k {
            let d: Vec<DiffusionEstimate> = steps.iter().map(|s| s.diffusion(i, j)).collect();
            let e = avg(d.iter().map(|x| x.empirical).collect());
            let r = avg(d.iter().map(|x| x.remainder.abs()).collect());
            diffusion[i * k + j] = e;
            diffusion[j * k + i] = e;
            diffusion_remainder[i * k + j] = r;
            diffusion_remainder[j * k + i] = r;
        }
    }
    Ok(DriftDiffusionReport { n_dim, ns: ns.to_vec(), configurations, slopes, diffusion, drift_remainder, diffusion_remainder })
}

/// `(slope, intercept)` of the least-squares line of the empirical drift on `F_n`.
fn fit_slope(points: &[DriftEstimate]) -> (Estimate, f64) {
    let xs: Vec<f64> = points.iter().map(|p| p.f_n).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.empirical).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    (Estimate { value: slope, stderr: (rss / (k - 2.0) / sxx).sqrt() }, intercept)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Monte Carlo `E[|dF_n dF_m dF_l| | Phi] / ds`; vanishes like `ds^(1/2)`.
pub fn third_moment_check(phi: &PhaseConfiguration, n: usize, m: usize, l: usize, cfg: &MotionConfig) -> Result<Estimate> {
    cfg.validate()?;
    let ns = [n, m, l];
    let f0 = centered_traces(phi, &ns, cfg.centering)?;
    let mut rng = cfg.seed.rng();
    let mut samples = Vec::with_capacity(cfg.replicas);
    for _ in 0..cfg.replicas {
        let g = gaussian_increments(&mut rng, phi.phases().len(), cfg.delta_s);
        let f1 = centered_traces(&shifted(phi, &g, 1.0)?, &ns, cfg.centering)?;
        let prod: f64 = f1.iter().zip(&f0).map(|(a, b)| a - b).product();
        samples.push(prod.abs() / cfg.delta_s);
    }
    let (value, stderr) = mean_se(&samples);
    Ok(Estimate { value, stderr })
}

/// Least-squares fit of the empirical drift against `F_n` over sampled configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftRegression {
    pub n: usize,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub points: Vec<DriftEstimate>,
}

/// Samples `configurations` uniform `Phi` at size `n_dim` and regresses the Monte
/// Carlo drift on `F_n`. Configuration `i` uses seed `(master, i)`, its increments
/// a derived stream.
pub fn drift_regression(n_dim: usize, n: usize, configurations: usize, cfg: &MotionConfig) -> Result<DriftRegression> {
    if configurations < 3 {
        return Err(LabError::TooFewSamples { need: 3, got: configurations });
    }
    let points: Vec<DriftEstimate> = (0..configurations as u64)
        .into_par_iter()
        .map(|i| {
            let seed = SeedSpec::new(cfg.seed.master_seed, i);
            let phi = sample_phases(n_dim, seed)?;
            estimate_drift(&phi, n, &MotionConfig { seed: seed.derive(1), ..*cfg })
        })
        .collect::<Result<_>>()?;
    let (fit, intercept) = fit_slope(&points);
    Ok(DriftRegression { n, slope: fit.value, slope_stderr: fit.stderr, intercept, points })
}

/// Ensemble averages of the exact generator quantities over uniform `Phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSurvey {
    pub n_dim: usize,
    pub ns: Vec<usize>,
    pub samples: usize,
    /// `<|R_n|>` per `n`.
    pub mean_abs_drift_remainder: Vec<Estimate>,
    /// `<diffusion_{nm}>`, row-major.
    pub mean_diffusion: Vec<Estimate>,
    /// `<|R_{nm}|>`, row-major.
    pub mean_abs_diffusion_remainder: Vec<Estimate>,
}

impl GeneratorSurvey {
    pub fn diffusion(&self, i: usize, j: usize) -> Estimate {
        self.mean_diffusion[i * self.ns.len() + j]
    }

    pub fn diffusion_remainder(&self, i: usize, j: usize) -> Estimate {
        self.mean_abs_diffusion_remainder[i * self.ns.len() + j]
    }
}

pub fn generator_survey(n_dim: usize, ns: &[usize], samples: usize, master_seed: u64, centering: Centering) -> Result<GeneratorSurvey> {
    if samples < 2 {
        return Err(LabError::TooFewSamples { need: 2, got: samples });
    }
    let gens: Vec<ExactGenerator> = (0..samples as u64)
        .into_par_iter()
        .map(|i| exact_generator(&sample_phases(n_dim, SeedSpec::new(master_seed, i))?, ns, centering))
        .collect::<Result<_>>()?;
    let k = ns.len();
    let est = |f: &dyn Fn(&ExactGenerator) -> f64| {
        let v: Vec<f64> = gens.iter().map(f).collect();
        let (value, stderr) = mean_se(&v);
        Estimate { value, stderr }
    };
    let mut mean_abs_drift_remainder = Vec::with_capacity(k);
    let mut mean_diffusion = Vec::with_capacity(k * k);
    let mut mean_abs_diffusion_remainder = Vec::with_capacity(k * k);
    for i in 0..k {
        mean_abs_drift_remainder.push(est(&|g| g.drift_remainder(i).abs()));
        for j in 0..k {
            mean_diffusion.push(est(&|g| g.diffusion_at(i, j)));
            mean_abs_diffusion_remainder.push(est(&|g| g.diffusion_remainder(i, j).abs()));
        }
    }
    Ok(GeneratorSurvey { n_dim, ns: ns.to_vec(), samples, mean_abs_drift_remainder, mean_diffusion, mean_abs_diffusion_remainder })
}

/// Empirical law of `F_n` at times `0` and `s` from uniform starts.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentComparison {
    pub n: usize,
    pub mean0: Estimate,
    pub mean_s: Estimate,
    pub var0: Estimate,
    pub var_s: Estimate,
    /// Two-sample Kolmogorov-Smirnov statistic between the two marginals.
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

impl MomentComparison {
    /// Largest of the mean and variance z-scores, using combined errors.
    pub fn max_z(&self) -> f64 {
        let z = |a: Estimate, b: Estimate| {
            let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
            if se == 0.0 {
                if a.value == b.value { 0.0 } else { f64::INFINITY }
            } else {
                (a.value - b.value).abs() / se
            }
        };
        z(self.mean0, self.mean_s).max(z(self.var0, self.var_s))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationarityReport {
    pub horizon: f64,
    pub replicas: usize,
    pub moments: Vec<MomentComparison>,
    pub chi2_statistic: f64,
    pub chi2_dof: usize,
    pub chi2_p_value: f64,
}

pub const STATIONARITY_ORDERS: [usize; 4] = [3, 4, 5, 6];
const CHI2_BINS: usize = 20;

/// Evolves uniform starts for time `horizon` in `steps` Gaussian steps and compares
/// the laws of `F_3..F_6` before and after; also tests the phase marginal for uniformity.
pub fn stationarity_check(n_dim: usize, horizon: f64, replicas: usize, steps: usize, master_seed: u64) -> Result<StationarityReport> {
    if replicas < 2 {
        return Err(LabError::TooFewSamples { need: 2, got: replicas });
    }
    if horizon < 0.0 {
        return Err(LabError::Domain(format!("negative horizon {horizon}")));
    }
    let ns = STATIONARITY_ORDERS;
    let results: Vec<(Vec<f64>, Vec<f64>, Vec<u64>)> = (0..replicas as u64)
        .into_par_iter()
        .map(|i| {
            let seed = SeedSpec::new(master_seed, i);
            let phi0 = sample_phases(n_dim, seed)?;
            let mut phi = phi0.clone();
            if horizon > 0.0 {
                let mut rng = seed.derive(2).rng();
                let ds = horizon / steps.max(1) as f64;
                for _ in 0..steps.max(1) {
                    phi = brownian_step(&phi, ds, &mut rng)?;
                }
            }
            let mut hist = vec![0u64; CHI2_BINS];
            for p in phi.phases() {
                let b = ((p / std::f64::consts::TAU) * CHI2_BINS as f64) as usize;
                hist[b.min(CHI2_BINS - 1)] += 1;
            }
            Ok((centered_traces(&phi0, &ns, Centering::ClosedForm)?, centered_traces(&phi, &ns, Centering::ClosedForm)?, hist))
        })
        .collect::<Result<_>>()?;

    let mut moments = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        let a: Vec<f64> = results.iter().map(|r| r.0[i]).collect();
        let b: Vec<f64> = results.iter().map(|r| r.1[i]).collect();
        let (sa, sb) = (moment_summary(&a), moment_summary(&b));
        let (ks_statistic, ks_p_value) = ks_two_sample(&a, &b);
        moments.push(MomentComparison {
            n,
            mean0: sa.mean,
            mean_s: sb.mean,
            var0: sa.variance,
            var_s: sb.variance,
            ks_statistic,
            ks_p_value,
        });
    }
    let mut hist = vec![0u64; CHI2_BINS];
    for r in &results {
        for (h, c) in hist.iter_mut().zip(&r.2) {
            *h += c;
        }
    }
    let total: u64 = hist.iter().sum();
    let expect = total as f64 / CHI2_BINS as f64;
    let chi2: f64 = hist.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let dof = CHI2_BINS - 1;
    let p = 1.0 - ChiSquared::new(dof as f64).map_err(|e| LabError::Domain(e.to_string()))?.cdf(chi2);
    Ok(StationarityReport { horizon, replicas, moments, chi2_statistic: chi2, chi2_dof: dof, chi2_p_value: p })
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// `Q(lambda) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Sample moments of one component with large-sample standard errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentSummary {
    pub mean: Estimate,
    pub variance: Estimate,
    pub skewness: Estimate,
    pub excess_kurtosis: Estimate,
}

/// Skewness and kurtosis errors come from a delete-one-block jackknife over blocks of
/// [`BLOCK_SIZE`] samples (the Gaussian-only `sqrt(6/n)`, `sqrt(24/n)` when there are
/// fewer than two full blocks).
pub fn moment_summary(x: &[f64]) -> MomentSummary {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let c = |p: i32| x.iter().map(|v| (v - m).powi(p)).sum::<f64>() / n;
    let (m2, m3, m4) = (c(2), c(3), c(4));
    let var = m2 * n / (n - 1.0);
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    let (skew_se, kurt_se) = shape_jackknife(x).unwrap_or(((6.0 / n).sqrt(), (24.0 / n).sqrt()));
    MomentSummary {
        mean: Estimate { value: m, stderr: (var / n).sqrt() },
        variance: Estimate { value: var, stderr: ((m4 - m2 * m2).max(0.0) / n).sqrt() },
        skewness: Estimate { value: skew, stderr: skew_se },
        excess_kurtosis: Estimate { value: kurt, stderr: kurt_se },
    }
}

fn shape_from_sums(s: &[f64; 5]) -> (f64, f64) {
    let n = s[0];
    let (e1, e2, e3, e4) = (s[1] / n, s[2] / n, s[3] / n, s[4] / n);
    let m2 = e2 - e1 * e1;
    let m3 = e3 - 3.0 * e1 * e2 + 2.0 * e1.powi(3);
    let m4 = e4 - 4.0 * e1 * e3 + 6.0 * e1 * e1 * e2 - 3.0 * e1.powi(4);
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

fn shape_jackknife(x: &[f64]) -> Option<(f64, f64)> {
    let size = BLOCK_SIZE as usize;
    if x.len() < 2 * size {
        return None;
    }
    // centered first so the power sums stay well conditioned
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let blocks: Vec<[f64; 5]> = x
        .chunks(size)
        .map(|b| {
            let mut s = [0.0; 5];
            for v in b.iter().map(|v| v - mean) {
                s[0] += 1.0;
                s[1] += v;
                s[2] += v * v;
                s[3] += v.powi(3);
                s[4] += v.powi(4);
            }
            s
        })
        .collect();
    let k = blocks.len();
    let mut total = [0.0; 5];
    for b in &blocks {
        for i in 0..5 {
            total[i] += b[i];
        }
    }
    let reps: Vec<(f64, f64)> = blocks
        .iter()
        .map(|b| {
            let mut s = total;
            for i in 0..5 {
                s[i] -= b[i];
            }
            shape_from_sums(&s)
        })
        .collect();
    let kf = k as f64;
    let spread = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let mean = reps.iter().map(f).sum::<f64>() / kf;
        ((kf - 1.0) / kf * reps.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>()).sqrt()
    };
    Some((spread(&|r| r.0), spread(&|r| r.1)))
}

/// `(1/n) sum_i |x_(i) - q((i - 1/2)/n)|` against the centered Gaussian of the given variance.
pub fn wasserstein_to_gaussian(x: &[f64], variance: f64) -> Result<f64> {
    if x.is_empty() {
        return Err(LabError::EmptyEnsemble);
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| LabError::Domain(e.to_string()))?;
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    Ok(s.iter().enumerate().map(|(i, v)| (v - normal.inverse_cdf((i as f64 + 0.5) / n)).abs()).sum::<f64>() / n)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentReport {
    pub n: usize,
    pub moments: MomentSummary,
    /// Distance to `N(0, n/4)`.
    pub wasserstein: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianityReport {
    pub samples: usize,
    pub components: Vec<ComponentReport>,
    /// `(n, m, cov, stderr)` for `n < m`.
    pub cross_covariances: Vec<(usize, usize, Estimate)>,
}

pub const MIN_GAUSSIANITY_SAMPLES: usize = 100;

/// Moment, Wasserstein and cross-covariance diagnostics for samples of
/// `(F_n)_{n in ns}`; `samples[r][i]` belongs to order `ns[i]`.
pub fn gaussianity_report(samples: &[Vec<f64>], ns: &[usize]) -> Result<GaussianityReport> {
    if samples.len() < MIN_GAUSSIANITY_SAMPLES {
        return Err(LabError::TooFewSamples { need: MIN_GAUSSIANITY_SAMPLES, got: samples.len() });
    }
    if samples.iter().any(|s| s.len() != ns.len()) {
        return Err(LabError::Domain("sample vectors do not match the order list".into()));
    }
    let col = |i: usize| samples.iter().map(|s| s[i]).collect::<Vec<f64>>();
    let mut components = Vec::new();
    for (i, &n) in ns.iter().enumerate() {
        let x = col(i);
        components.push(ComponentReport { n, moments: moment_summary(&x), wasserstein: wasserstein_to_gaussian(&x, n as f64 / 4.0)? });
    }
    let mut cross_covariances = Vec::new();
    for i in 0..ns.len() {
        for j in i + 1..ns.len() {
            let (a, b) = (col(i), col(j));
            let (ma, mb) = (mean_se(&a).0, mean_se(&b).0);
            let prods: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).collect();
            let (c, se) = mean_se(&prods);
            cross_covariances.push((ns[i], ns[j], Estimate { value: c, stderr: se }));
        }
    }
    Ok(GaussianityReport { samples: samples.len(), components, cross_covariances })
}

/// `replicas` independent vectors `(F_n)_{n in ns}` from uniform `Phi`, in replica order.
pub fn sample_f_vectors(n_dim: usize, ns: &[usize], replicas: usize, master_seed: u64, centering: Centering) -> Result<Vec<Vec<f64>>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|i| centered_traces(&sample_phases(n_dim, SeedSpec::new(master_seed, i))?, ns, centering))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_keeps_phases_wrapped() {
        let phi = PhaseConfiguration::new(3, vec![0.0, 6.283, 3.0]).unwrap();
        let mut rng = SeedSpec::new(1, 1).rng();
        for _ in 0..100 {
            let p = brownian_step(&phi, 0.5, &mut rng).unwrap();
            assert!(p.phases().iter().all(|v| (0.0..std::f64::consts::TAU).contains(v)));
        }
        assert!(brownian_step(&phi, 0.0, &mut rng).is_err());
    }

    #[test]
    fn small_n_remainders_vanish() {
        // every walk of length <= 5 is a simple cycle, so L F_n = -n F_n exactly
        for seed in 0..3 {
            let phi = sample_phases(11, SeedSpec::new(7, seed)).unwrap();
            let g = exact_generator(&phi, &[3, 4, 5], Centering::ClosedForm).unwrap();
            for i in 0..3 {
                assert!(g.drift_remainder(i).abs() < 1e-9 * (1.0 + g.f[i].abs()), "{:?}", g);
            }
        }
    }

    #[test]
    fn generator_matches_finite_differences() {
        let phi = sample_phases(8, SeedSpec::new(3, 3)).unwrap();
        let ns = [3, 6];
        let g = exact_generator(&phi, &ns, Centering::ClosedForm).unwrap();
        let h = 1e-4;
        let mut lap = [0.0; 2];
        let mut grads = vec![[0.0; 2]; phi.phases().len()];
        let f0 = centered_traces(&phi, &ns, Centering::ClosedForm).unwrap();
        for e in 0..phi.phases().len() {
            let mut d = vec![0.0; phi.phases().len()];
            d[e] = h;
            let fp = centered_traces(&shifted(&phi, &d, 1.0).unwrap(), &ns, Centering::ClosedForm).unwrap();
            let fm = centered_traces(&shifted(&phi, &d, -1.0).unwrap(), &ns, Centering::ClosedForm).unwrap();
            for i in 0..2 {
                lap[i] += (fp[i] + fm[i] - 2.0 * f0[i]) / (h * h);
                grads[e][i] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        for i in 0..2 {
            assert!((lap[i] - g.drift[i]).abs() < 1e-4 * (1.0 + g.drift[i].abs()), "{} vs {}", lap[i], g.drift[i]);
        }
        let d01: f64 = 2.0 * grads.iter().map(|v| v[0] * v[1]).sum::<f64>();
        assert!((d01 - g.diffusion_at(0, 1)).abs() < 1e-6 * (1.0 + d01.abs()));
    }

    #[test]
    fn monte_carlo_agrees_with_exact_generator() {
        let phi = sample_phases(12, SeedSpec::new(5, 2)).unwrap();
        let ns = [3, 6];
        let g = exact_generator(&phi, &ns, Centering::ClosedForm).unwrap();
        let cfg = MotionConfig::new(1e-4, 4000, SeedSpec::new(9, 0));
        for (i, &n) in ns.iter().enumerate() {
            let d = estimate_drift(&phi, n, &cfg).unwrap();
            assert!((d.empirical - g.drift[i]).abs() < 4.0 * d.stderr + 1e-3 * g.drift[i].abs(), "{d:?} vs {}", g.drift[i]);
        }
        let d = estimate_diffusion(&phi, 3, 6, &cfg).unwrap();
        assert!((d.empirical - g.diffusion_at(0, 1)).abs() < 4.0 * d.stderr + 0.01, "{d:?} vs {}", g.diffusion_at(0, 1));
    }

    #[test]
    fn halving_the_step_leaves_estimates_unchanged() {
        let phi = sample_phases(10, SeedSpec::new(4, 4)).unwrap();
        let a = MotionConfig::new(1e-3, 2000, SeedSpec::new(1, 0));
        let b = MotionConfig { delta_s: 5e-4, seed: SeedSpec::new(2, 0), ..a };
        let (da, db) = (estimate_drift(&phi, 4, &a).unwrap(), estimate_drift(&phi, 4, &b).unwrap());
        assert!((da.empirical - db.empirical).abs() < 3.0 * (da.stderr.powi(2) + db.stderr.powi(2)).sqrt());
        let (qa, qb) = (estimate_diffusion(&phi, 4, 4, &a).unwrap(), estimate_diffusion(&phi, 4, 4, &b).unwrap());
        assert!((qa.empirical - qb.empirical).abs() < 3.0 * (qa.stderr.powi(2) + qb.stderr.powi(2)).sqrt());
    }

    #[test]
    fn third_moment_scales_like_root_step() {
        let phi = sample_phases(10, SeedSpec::new(6, 1)).unwrap();
        let a = MotionConfig::new(1e-3, 2000, SeedSpec::new(3, 0));
        let b = MotionConfig { delta_s: 2.5e-4, ..a };
        let (ta, tb) = (third_moment_check(&phi, 3, 4, 5, &a).unwrap(), third_moment_check(&phi, 3, 4, 5, &b).unwrap());
        assert!(ta.value > 0.0 && tb.value > 0.0);
        assert!((ta.value / tb.value - 2.0).abs() < 0.5, "{ta:?} {tb:?}");
    }

    #[test]
    fn step_increment_moments() {
        let phi = PhaseConfiguration::zeros(3).unwrap();
        let mut rng = SeedSpec::new(8, 0).rng();
        let ds = 1e-4;
        let (mut s1, mut s2, mut c01, mut count) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..100_000 {
            let p = brownian_step(&phi, ds, &mut rng).unwrap();
            let d: Vec<f64> = p.phases().iter().map(|v| if *v > std::f64::consts::PI { v - std::f64::consts::TAU } else { *v }).collect();
            for x in &d {
                s1 += x;
                s2 += x * x;
                count += 1.0;
            }
            c01 += d[0] * d[1];
        }
        let mean = s1 / count;
        let var = s2 / count - mean * mean;
        assert!(mean.abs() < 3.0 * (2.0 * ds / count).sqrt());
        assert!((var / (2.0 * ds) - 1.0).abs() < 0.01);
        assert!((c01 / 1e5).abs() < 3.0 * 2.0 * ds / (1e5f64).sqrt());
    }

    #[test]
    fn wasserstein_of_exact_quantiles_is_zero() {
        let normal = Normal::new(0.0, 0.5).unwrap();
        let x: Vec<f64> = (0..500).map(|i| normal.inverse_cdf((i as f64 + 0.5) / 500.0)).rev().collect();
        assert!(wasserstein_to_gaussian(&x, 0.25).unwrap() < 1e-12);
        assert!(wasserstein_to_gaussian(&x, 1.0).unwrap() > 0.1);
    }

    #[test]
    fn gaussianity_requires_samples() {
        let s = vec![vec![0.0]; 99];
        assert!(matches!(gaussianity_report(&s, &[3]), Err(LabError::TooFewSamples { need: 100, got: 99 })));
    }

    #[test]
    fn ks_statistic_basics() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (d, p) = ks_two_sample(&a, &a);
        assert_eq!(d, 0.0);
        assert!(p > 0.99);
        let b: Vec<f64> = a.iter().map(|v| v + 1000.0).collect();
        let (d, p) = ks_two_sample(&a, &b);
        assert_eq!(d, 1.0);
        assert!(p < 1e-10);
    }

    #[test]
    fn zero_horizon_is_identical() {
        let r = stationarity_check(8, 0.0, 50, 1, 3).unwrap();
        for m in &r.moments {
            assert_eq!(m.mean0, m.mean_s);
            assert_eq!(m.var0, m.var_s);
            assert_eq!(m.max_z(), 0.0);
        }
    }
}
