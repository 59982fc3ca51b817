//! Angle unfolding `theta = 2 arccos(eps)` and the spectral form factor.
//!
//! For each integer time `t` with `S_t = sum_j exp(i theta_j t)` this module
//! estimates several related quantities from the same replicas:
//! - `verbatim`: `<|S_t|^2 / N> - N`, the defining expression taken literally
//! - `raw`: `<|S_t|^2> / N`
//! - `connected`: `(<|S_t|^2> - |<S_t>|^2) / N`
//! - `y_relation`: `(N/4)(1 - 2/(N-2)) delta_{t,1} + (N/4) <y_{2t}^2>`

use std::f64::consts::PI;

use crate::ensemble::{build_ume, sample_phases, SeedSpec};
use crate::mcharness::{run_ensemble_filtered, EnsembleEstimate, RunConfig};
use crate::spectral::{eigenvalues, y_n, Spectrum};
use crate::{LabError, Result};

/// `theta_k = 2 arccos(eps_k)`; rejects non-Ramanujan spectra.
pub fn unfold_angles(spec: &Spectrum) -> Result<Vec<f64>> {
    if !spec.ramanujan {
        return Err(LabError::NonRamanujan);
    }
    Ok(spec.scaled.iter().map(|e| 2.0 * e.clamp(-1.0, 1.0).acos()).collect())
}

/// `(Re S_t, Im S_t)`.
pub fn phase_sum(angles: &[f64], t: usize) -> (f64, f64) {
    angles.iter().fold((0.0, 0.0), |(re, im), &th| {
        let (s, c) = (th * t as f64).sin_cos();
        (re + c, im + s)
    })
}

/// The GUE form factor in `tau = t/N`; constant 1 beyond `tau = 2`.
pub fn form_factor_gue(tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    if tau > 2.0 {
        return 1.0;
    }
    let a = (tau / 2.0).sqrt().min(1.0).asin();
    tau * (1.0 - 2.0 / PI * a) + (2.0 * a - (2.0 * a).sin()) / PI
}

/// Value with standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// `<|S_t|^2 / N> - N` over an ensemble of angle arrays.
pub fn form_factor_empirical(ensemble: &[Vec<f64>], t: usize) -> Result<Estimate> {
    if ensemble.is_empty() {
        return Err(LabError::EmptyEnsemble);
    }
    let vals: Vec<f64> = ensemble
        .iter()
        .map(|a| {
            let (re, im) = phase_sum(a, t);
            (re * re + im * im) / a.len() as f64
        })
        .collect();
    let n = ensemble[0].len() as f64;
    let (m, se) = mean_and_se(&vals);
    Ok(Estimate { value: m - n, stderr: se })
}

/// `(N/4)(1 - 2/(N-2)) delta_{t,1} + (N/4) <y_{2t}^2>` from sampled `y_{2t}` values.
pub fn form_factor_y_relation(y2t: &[f64], n_dim: usize, t: usize) -> Result<Estimate> {
    if y2t.is_empty() {
        return Err(LabError::EmptyEnsemble);
    }
    let q = n_dim as f64 / 4.0;
    let sq: Vec<f64> = y2t.iter().map(|y| q * y * y).collect();
    let (m, se) = mean_and_se(&sq);
    Ok(Estimate { value: boundary_term(n_dim, t) + m, stderr: se })
}

fn boundary_term(n_dim: usize, t: usize) -> f64 {
    if t == 1 {
        let n = n_dim as f64;
        n / 4.0 * (1.0 - 2.0 / (n - 2.0))
    } else {
        0.0
    }
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, f64::NAN);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

const STATS_PER_T: usize = 4;

/// Per-replica vector `[|S_t|^2/N, Re S_t, Im S_t, (N/4) y_{2t}^2]` for `t = 1..=t_max`,
/// or `None` for a non-Ramanujan spectrum.
pub fn replica_statistics(spec: &Spectrum, t_max: usize) -> Result<Option<Vec<f64>>> {
    let angles = match unfold_angles(spec) {
        Ok(a) => a,
        Err(LabError::NonRamanujan) => return Ok(None),
        Err(e) => return Err(e),
    };
    let n = spec.dim as f64;
    let mut out = Vec::with_capacity(STATS_PER_T * t_max);
    for t in 1..=t_max {
        let (re, im) = phase_sum(&angles, t);
        let y = y_n(spec, 2 * t)?;
        out.extend([(re * re + im * im) / n, re, im, n / 4.0 * y * y]);
    }
    Ok(Some(out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormFactorSeries {
    pub n_dim: usize,
    pub t: Vec<usize>,
    pub verbatim: Vec<Estimate>,
    pub raw: Vec<Estimate>,
    pub connected: Vec<Estimate>,
    pub y_relation: Vec<Estimate>,
    /// Jackknife estimate of `verbatim - y_relation` on the shared replicas.
    pub path_difference: Vec<Estimate>,
    pub retained: u64,
    pub discarded: u64,
}

impl FormFactorSeries {
    pub fn discard_fraction(&self) -> f64 {
        let total = self.retained + self.discarded;
        if total == 0 {
            0.0
        } else {
            self.discarded as f64 / total as f64
        }
    }

    pub fn from_estimate(est: &EnsembleEstimate, n_dim: usize, t_max: usize) -> Self {
        let n = n_dim as f64;
        let mut s = FormFactorSeries {
            n_dim,
            t: (1..=t_max).collect(),
            verbatim: Vec::new(),
            raw: Vec::new(),
            connected: Vec::new(),
            y_relation: Vec::new(),
            path_difference: Vec::new(),
            retained: est.count,
            discarded: est.discarded,
        };
        for t in 1..=t_max {
            let b = STATS_PER_T * (t - 1);
            let q = est.count as f64;
            let raw = Estimate { value: est.mean[b], stderr: est.stderr[b] };
            s.verbatim.push(Estimate { value: raw.value - n, stderr: raw.stderr });
            s.raw.push(raw);
            let conn = est.jackknife(|m| (m[b] - (m[b + 1].powi(2) + m[b + 2].powi(2)) / n) * q / (q - 1.0));
            s.connected.push(Estimate { value: conn.value, stderr: conn.stderr });
            let bt = boundary_term(n_dim, t);
            s.y_relation.push(Estimate { value: bt + est.mean[b + 3], stderr: est.stderr[b + 3] });
            let diff = est.jackknife(|m| m[b] - n - bt - m[b + 3]);
            s.path_difference.push(Estimate { value: diff.value, stderr: diff.stderr });
        }
        s
    }
}

/// Samples UME replicas, discards non-Ramanujan ones and returns all series up to `t_max`.
pub fn form_factor_series(cfg: &RunConfig, t_max: usize) -> Result<FormFactorSeries> {
    if t_max == 0 {
        return Err(LabError::Domain("t_max must be at least 1".into()));
    }
    let n = cfg.n_dim;
    let est = run_ensemble_filtered(cfg, STATS_PER_T * t_max, |seed: SeedSpec| {
        let spec = eigenvalues(&build_ume(&sample_phases(n, seed)?))?;
        replica_statistics(&spec, t_max)
    })?;
    Ok(FormFactorSeries::from_estimate(&est, n, t_max))
}

/// Divides by the mean over `t` in `(2N, 3N]` and returns `(normalized, factor)`.
pub fn plateau_normalize(values: &[Estimate], n_dim: usize) -> Result<(Vec<f64>, f64)> {
    let lo = 2 * n_dim;
    let hi = 3 * n_dim;
    if values.len() < hi {
        return Err(LabError::Domain(format!("plateau needs t up to {hi}, have {}", values.len())));
    }
    let factor = values[lo..hi].iter().map(|e| e.value).sum::<f64>() / (hi - lo) as f64;
    Ok((values.iter().map(|e| e.value / factor).collect(), factor))
}

/// Root-mean-square deviation from `form_factor_gue(t/N)` over `t = 1..=t_cmp`.
pub fn rms_to_gue(normalized: &[f64], n_dim: usize, t_cmp: usize) -> f64 {
    let s: f64 = (1..=t_cmp)
        .map(|t| (normalized[t - 1] - form_factor_gue(t as f64 / n_dim as f64)).powi(2))
        .sum();
    (s / t_cmp as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::MatrixKind;

    #[test]
    fn unfolding() {
        let s = Spectrum::from_eigenvalues(vec![-1.0, 0.0, 1.0], MatrixKind::Scaled);
        let a = unfold_angles(&s).unwrap();
        assert!((a[0] - 2.0 * PI).abs() < 1e-15 && (a[1] - PI).abs() < 1e-15 && a[2].abs() < 1e-15);
        let s = Spectrum::from_eigenvalues(vec![-1.2, 0.0, 1.0], MatrixKind::Scaled);
        assert!(matches!(unfold_angles(&s), Err(LabError::NonRamanujan)));
    }

    #[test]
    fn gue_form_factor_points() {
        assert_eq!(form_factor_gue(0.0), 0.0);
        assert!((form_factor_gue(2.0) - 1.0).abs() < 1e-15);
        assert!((form_factor_gue(1.0) - (1.0 - 1.0 / PI)).abs() < 1e-15);
        assert!((form_factor_gue(1.0) - 0.681_690).abs() < 1e-6);
        assert_eq!(form_factor_gue(2.5), 1.0);
    }

    #[test]
    fn gue_form_factor_monotone_continuous() {
        let xs: Vec<f64> = (0..2001).map(|i| 3.0 * i as f64 / 2000.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| form_factor_gue(x)).collect();
        for w in ys.windows(2) {
            assert!(w[1] >= w[0] - 1e-15);
            assert!((w[1] - w[0]).abs() < 0.01);
        }
        assert!(xs.iter().zip(&ys).filter(|(x, _)| **x > 2.0).all(|(_, y)| *y == 1.0));
    }

    #[test]
    fn empirical_errors_and_constant_ensemble() {
        assert!(matches!(form_factor_empirical(&[], 1), Err(LabError::EmptyEnsemble)));
        let ens = vec![vec![0.0, PI]; 5];
        // S_1 = 1 - 1 = 0, S_2 = 2
        assert!((form_factor_empirical(&ens, 1).unwrap().value + 2.0).abs() < 1e-12);
        assert!((form_factor_empirical(&ens, 2).unwrap().value - 0.0).abs() < 1e-12);
    }

    #[test]
    fn t1_boundary_term() {
        let e = form_factor_y_relation(&[0.0, 0.0], 20, 1).unwrap();
        assert!((e.value - 5.0 * (1.0 - 2.0 / 18.0)).abs() < 1e-14);
        assert_eq!(form_factor_y_relation(&[0.0], 20, 2).unwrap().value, 0.0);
    }

    #[test]
    fn y_relation_matches_real_part_per_replica() {
        // for a Ramanujan spectrum, (2/N) Re S_t = y_{2t} - (N-3)/(N-2)^t
        let spec = eigenvalues(&build_ume(&sample_phases(16, SeedSpec::new(1, 0)).unwrap())).unwrap();
        if spec.ramanujan {
            let a = unfold_angles(&spec).unwrap();
            for t in 1..6 {
                let (re, _) = phase_sum(&a, t);
                let y = y_n(&spec, 2 * t).unwrap();
                assert!((2.0 * re / 16.0 + 13.0 / 14f64.powi(t as i32) - y).abs() < 1e-12);
            }
        }
    }
}
