//! Deterministic parallel Monte Carlo.
//!
//! Replicas are grouped in fixed blocks of [`BLOCK_SIZE`] consecutive indices.
//! Each block is accumulated sequentially, blocks run on a worker pool, and
//! block results are merged in index order, so the output does not depend on
//! the number of workers. Block sums double as jackknife groups.

use rayon::prelude::*;

use crate::ensemble::SeedSpec;
use crate::{LabError, Result};

pub const BLOCK_SIZE: u64 = 100;

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "UMELAB_WORKERS";

/// Blocks evaluated between two ordered merges; bounds peak memory.
const CHUNK_BLOCKS: usize = 256;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunParams {
    pub n_range: Option<(usize, usize)>,
    pub t_max: Option<usize>,
    pub delta_s: Option<f64>,
    pub n_star: Option<usize>,
    pub bins: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n_dim: usize,
    pub replicas: u64,
    pub master_seed: u64,
    /// Name of the statistic; echoed into the estimate.
    pub statistic: String,
    /// `None`: environment override, then available parallelism.
    pub workers: Option<usize>,
    pub params: RunParams,
}

impl RunConfig {
    pub fn new(n_dim: usize, replicas: u64, master_seed: u64, statistic: impl Into<String>) -> Self {
        Self { n_dim, replicas, master_seed, statistic: statistic.into(), workers: None, params: RunParams::default() }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(LabError::EmptyEnsemble);
        }
        if self.n_dim == 0 {
            return Err(LabError::InvalidDimension { dim: 0, reason: "need N >= 1" });
        }
        if self.workers == Some(0) {
            return Err(LabError::Domain("worker count must be positive".into()));
        }
        Ok(())
    }
}

/// Worker count: explicit value, else `UMELAB_WORKERS`, else available parallelism.
pub fn resolve_workers(explicit: Option<usize>) -> usize {
    explicit
        .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Streaming mean / variance (Welford) with optional co-moments, merged by Chan's formula.
#[derive(Clone, Debug, PartialEq)]
pub struct Accumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    comoment: Option<Vec<f64>>,
    sum: Vec<f64>,
}

impl Accumulator {
    pub fn new(dim: usize, track_covariance: bool) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            comoment: track_covariance.then(|| vec![0.0; dim * dim]),
            sum: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim(), "statistic length changed between replicas");
        self.count += 1;
        let c = self.count as f64;
        let d = self.dim();
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / c;
            self.m2[i] += delta[i] * (x[i] - self.mean[i]);
            self.sum[i] += x[i];
        }
        if let Some(cm) = self.comoment.as_mut() {
            for i in 0..d {
                for j in 0..d {
                    cm[i * d + j] += delta[i] * (x[j] - self.mean[j]);
                }
            }
        }
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let d = self.dim();
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        for i in 0..d {
            self.mean[i] += delta[i] * nb / n;
            self.m2[i] += other.m2[i] + delta[i] * delta[i] * na * nb / n;
            self.sum[i] += other.sum[i];
        }
        if let (Some(a), Some(b)) = (self.comoment.as_mut(), other.comoment.as_ref()) {
            for i in 0..d {
                for j in 0..d {
                    a[i * d + j] += b[i * d + j] + delta[i] * delta[j] * na * nb / n;
                }
            }
        }
        self.count += other.count;
    }

    /// Unbiased sample variance per component.
    pub fn variance(&self) -> Vec<f64> {
        let denom = self.count.saturating_sub(1).max(1) as f64;
        self.m2.iter().map(|m| m / denom).collect()
    }

    pub fn covariance(&self) -> Option<Vec<f64>> {
        let denom = self.count.saturating_sub(1).max(1) as f64;
        self.comoment.as_ref().map(|c| c.iter().map(|v| v / denom).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSummary {
    pub count: u64,
    pub sum: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix {
    pub dim: usize,
    /// Row-major unbiased sample covariance.
    pub values: Vec<f64>,
    /// Delete-one-block jackknife errors of `values`.
    pub stderr: Vec<f64>,
}

impl CovarianceMatrix {
    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        (self.values[i * self.dim + j], self.stderr[i * self.dim + j])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jackknife {
    pub value: f64,
    pub stderr: f64,
}

/// Monte Carlo estimate of a vector statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleEstimate {
    pub name: String,
    pub count: u64,
    /// Replicas the evaluator rejected (e.g. non-Ramanujan spectra).
    pub discarded: u64,
    pub mean: Vec<f64>,
    /// Unbiased sample variance of each component.
    pub variance: Vec<f64>,
    /// `sqrt(variance / count)`.
    pub stderr: Vec<f64>,
    pub covariance: Option<CovarianceMatrix>,
    pub blocks: Vec<BlockSummary>,
}

impl EnsembleEstimate {
    fn from_accumulator(name: &str, acc: &Accumulator, discarded: u64, blocks: Vec<BlockSummary>) -> Result<Self> {
        if acc.count == 0 {
            return Err(LabError::EmptyEnsemble);
        }
        let variance = acc.variance();
        let stderr = variance.iter().map(|v| (v / acc.count as f64).sqrt()).collect();
        Ok(Self {
            name: name.to_string(),
            count: acc.count,
            discarded,
            mean: acc.mean.clone(),
            variance,
            stderr,
            covariance: None,
            blocks,
        })
    }

    /// Delete-one-block jackknife of a smooth function of the component means.
    pub fn jackknife(&self, g: impl Fn(&[f64]) -> f64) -> Jackknife {
        let value = g(&self.mean);
        let d = self.mean.len();
        let total: Vec<f64> = (0..d).map(|i| self.blocks.iter().map(|b| b.sum[i]).sum()).collect();
        let used: Vec<&BlockSummary> = self.blocks.iter().filter(|b| b.count > 0).collect();
        let k = used.len();
        if k < 2 {
            return Jackknife { value, stderr: f64::NAN };
        }
        let reps: Vec<f64> = used
            .iter()
            .map(|b| {
                let rest = (self.count - b.count) as f64;
                let m: Vec<f64> = (0..d).map(|i| (total[i] - b.sum[i]) / rest).collect();
                g(&m)
            })
            .collect();
        let avg = reps.iter().sum::<f64>() / k as f64;
        let var = reps.iter().map(|r| (r - avg).powi(2)).sum::<f64>() * (k as f64 - 1.0) / k as f64;
        Jackknife { value, stderr: var.sqrt() }
    }
}

type Evaluator<'a> = dyn Fn(SeedSpec) -> Result<Option<Vec<f64>>> + Sync + 'a;

fn run_blocks(cfg: &RunConfig, dim: usize, track_covariance: bool, f: &Evaluator<'_>) -> Result<(Accumulator, u64, Vec<BlockSummary>)> {
    cfg.validate()?;
    let workers = resolve_workers(cfg.workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LabError::Domain(format!("worker pool: {e}")))?;
    let n_blocks = cfg.replicas.div_ceil(BLOCK_SIZE);
    let block = |b: u64| -> Result<(Accumulator, u64)> {
        let mut acc = Accumulator::new(dim, track_covariance);
        let mut discarded = 0;
        let end = ((b + 1) * BLOCK_SIZE).min(cfg.replicas);
        for index in b * BLOCK_SIZE..end {
            let seed = SeedSpec::new(cfg.master_seed, index);
            match f(seed).map_err(|e| LabError::Replica { index, source: Box::new(e) })? {
                Some(x) => {
                    if x.len() != dim {
                        return Err(LabError::Replica {
                            index,
                            source: Box::new(LabError::Domain(format!("statistic has {} components, expected {dim}", x.len()))),
                        });
                    }
                    acc.push(&x)
                }
                None => discarded += 1,
            }
        }
        Ok((acc, discarded))
    };

    let mut total = Accumulator::new(dim, track_covariance);
    let mut discarded = 0;
    let mut blocks = Vec::with_capacity(n_blocks as usize);
    let ids: Vec<u64> = (0..n_blocks).collect();
    for chunk in ids.chunks(CHUNK_BLOCKS) {
        let results: Vec<Result<(Accumulator, u64)>> = pool.install(|| chunk.par_iter().map(|&b| block(b)).collect());
        for r in results {
            let (acc, d) = r?;
            blocks.push(BlockSummary { count: acc.count, sum: acc.sum.clone() });
            total.merge(&acc);
            discarded += d;
        }
    }
    Ok((total, discarded, blocks))
}

/// Runs `f` on replicas `0..cfg.replicas`; every replica must yield `dim` values.
pub fn run_ensemble<F>(cfg: &RunConfig, dim: usize, f: F) -> Result<EnsembleEstimate>
where
    F: Fn(SeedSpec) -> Result<Vec<f64>> + Sync,
{
    let g = |s: SeedSpec| f(s).map(Some);
    let (acc, discarded, blocks) = run_blocks(cfg, dim, false, &g)?;
    EnsembleEstimate::from_accumulator(&cfg.statistic, &acc, discarded, blocks)
}

/// As [`run_ensemble`], but `Ok(None)` discards the replica and is counted.
pub fn run_ensemble_filtered<F>(cfg: &RunConfig, dim: usize, f: F) -> Result<EnsembleEstimate>
where
    F: Fn(SeedSpec) -> Result<Option<Vec<f64>>> + Sync,
{
    let (acc, discarded, blocks) = run_blocks(cfg, dim, false, &f)?;
    EnsembleEstimate::from_accumulator(&cfg.statistic, &acc, discarded, blocks)
}

/// Mean, variance and full covariance of `k >= 2` statistics, with jackknife
/// errors on every covariance entry.
pub fn covariance_estimate<F>(cfg: &RunConfig, k: usize, f: F) -> Result<EnsembleEstimate>
where
    F: Fn(SeedSpec) -> Result<Vec<f64>> + Sync,
{
    if k < 2 {
        return Err(LabError::Domain(format!("covariance needs at least 2 statistics, got {k}")));
    }
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i..k).map(move |j| (i, j))).collect();
    let g = |s: SeedSpec| -> Result<Option<Vec<f64>>> {
        let x = f(s)?;
        if x.len() != k {
            return Err(LabError::Domain(format!("statistic has {} components, expected {k}", x.len())));
        }
        let mut out = x.clone();
        out.extend(pairs.iter().map(|&(i, j)| x[i] * x[j]));
        Ok(Some(out))
    };
    let (acc, discarded, blocks) = run_blocks(cfg, k + pairs.len(), true, &g)?;
    let full = EnsembleEstimate::from_accumulator(&cfg.statistic, &acc, discarded, blocks)?;

    let n = full.count as f64;
    let cov_full = acc.covariance().expect("covariance tracked");
    let d = k + pairs.len();
    let mut values = vec![0.0; k * k];
    let mut stderr = vec![0.0; k * k];
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let jk = full.jackknife(|m| (m[k + p] - m[i] * m[j]) * n / (n - 1.0));
        for (a, b) in [(i, j), (j, i)] {
            values[a * k + b] = cov_full[i * d + j];
            stderr[a * k + b] = jk.stderr;
        }
    }
    Ok(EnsembleEstimate {
        name: full.name,
        count: full.count,
        discarded: full.discarded,
        mean: full.mean[..k].to_vec(),
        variance: full.variance[..k].to_vec(),
        stderr: full.stderr[..k].to_vec(),
        covariance: Some(CovarianceMatrix { dim: k, values, stderr }),
        blocks: full
            .blocks
            .into_iter()
            .map(|b| BlockSummary { count: b.count, sum: b.sum[..k].to_vec() })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{build_ume, sample_phases};
    use crate::spectral::{eigenvalues, y_n};
    use rand::Rng;

    #[test]
    fn constant_statistic() {
        let cfg = RunConfig::new(3, 250, 1, "const").with_workers(1);
        let e = run_ensemble(&cfg, 1, |_| Ok(vec![2.5])).unwrap();
        assert_eq!(e.count, 250);
        assert_eq!(e.mean, vec![2.5]);
        assert_eq!(e.variance, vec![0.0]);
        assert_eq!(e.blocks.len(), 3);
    }

    #[test]
    fn y2_is_identically_zero() {
        let cfg = RunConfig::new(9, 300, 4, "y2").with_workers(2);
        let e = run_ensemble(&cfg, 1, |s| {
            let spec = eigenvalues(&build_ume(&sample_phases(9, s)?))?;
            y_n(&spec, 2).map(|v| vec![v])
        })
        .unwrap();
        assert!(e.mean[0].abs() < 1e-12 && e.variance[0] < 1e-24);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let f = |s: SeedSpec| -> Result<Vec<f64>> {
            let mut r = s.rng();
            Ok(vec![r.random::<f64>(), r.random::<f64>().powi(3)])
        };
        let base = RunConfig::new(3, 1234, 99, "u");
        let a = covariance_estimate(&base.clone().with_workers(1), 2, f).unwrap();
        let b = covariance_estimate(&base.clone().with_workers(3), 2, f).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn merge_matches_single_stream() {
        let xs: Vec<Vec<f64>> = (0..1000).map(|i| vec![(i as f64 * 0.37).sin() + 1e3, (i as f64).sqrt()]).collect();
        let mut one = Accumulator::new(2, true);
        xs.iter().for_each(|x| one.push(x));
        let mut parts = Accumulator::new(2, true);
        for chunk in xs.chunks(77) {
            let mut a = Accumulator::new(2, true);
            chunk.iter().for_each(|x| a.push(x));
            parts.merge(&a);
        }
        for (a, b) in one.variance().iter().zip(parts.variance()) {
            assert!(((a - b) / a).abs() < 1e-12);
        }
        let scale = one.variance().iter().cloned().fold(0.0, f64::max);
        for (a, b) in one.covariance().unwrap().iter().zip(parts.covariance().unwrap()) {
            assert!((a - b).abs() < 1e-12 * scale);
        }
        for (a, b) in one.mean().iter().zip(parts.mean()) {
            assert!(((a - b) / a).abs() < 1e-12);
        }
    }

    #[test]
    fn failures_report_replica_index() {
        let cfg = RunConfig::new(3, 500, 0, "boom").with_workers(2);
        let err = run_ensemble(&cfg, 1, |s| {
            if s.replica_index == 321 || s.replica_index == 444 {
                Err(LabError::Domain("bad".into()))
            } else {
                Ok(vec![1.0])
            }
        })
        .unwrap_err();
        assert!(matches!(err, LabError::Replica { index: 321, .. }));
    }

    #[test]
    fn filtered_runs_count_discards() {
        let cfg = RunConfig::new(3, 1000, 0, "half");
        let e = run_ensemble_filtered(&cfg, 1, |s| Ok((s.replica_index % 2 == 0).then(|| vec![1.0]))).unwrap();
        assert_eq!((e.count, e.discarded), (500, 500));
        let none = run_ensemble_filtered(&cfg, 1, |_| Ok(None));
        assert!(matches!(none, Err(LabError::EmptyEnsemble)));
        assert!(run_ensemble(&RunConfig::new(3, 0, 0, "x"), 1, |_| Ok(vec![0.0])).is_err());
    }

    #[test]
    fn jackknife_of_mean_matches_standard_error() {
        let cfg = RunConfig::new(3, 20_000, 5, "g");
        let e = run_ensemble(&cfg, 1, |s| {
            let mut r = s.rng();
            Ok(vec![r.random::<f64>()])
        })
        .unwrap();
        let jk = e.jackknife(|m| m[0]);
        assert!((jk.stderr / e.stderr[0] - 1.0).abs() < 0.15);
    }
}
