//! Sampling of UME and GUE members.
//!
//! The canonical UME state is the phase array; matrices are derived from it.
//! GUE convention: off-diagonal `<|H_ij|^2> = 1` and diagonal variance 1.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{LabError, Result, C64};

/// Key of an independent random stream.
///
/// The master seed selects the ChaCha key, the replica index selects the
/// stream, so replicas can be generated in any order on any thread.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub replica_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, replica_index: u64) -> Self {
        Self { master_seed, replica_index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.replica_index);
        rng
    }

    /// Same replica, different purpose (e.g. Brownian increments vs initial phases).
    pub fn derive(&self, tag: u64) -> SeedSpec {
        SeedSpec {
            master_seed: splitmix64(self.master_seed ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
            replica_index: self.replica_index,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Reduce an angle into `[0, 2 pi)`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Independent phases `phi_{mu nu}`, `mu < nu`, of one UME member.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseConfiguration {
    size: usize,
    phases: Vec<f64>,
}

impl PhaseConfiguration {
    pub fn new(size: usize, phases: Vec<f64>) -> Result<Self> {
        if size < 2 {
            return Err(LabError::InvalidDimension { dim: size, reason: "need N >= 2" });
        }
        if phases.len() != size * (size - 1) / 2 {
            return Err(LabError::Domain(format!(
                "expected {} phases for N = {size}, got {}",
                size * (size - 1) / 2,
                phases.len()
            )));
        }
        if let Some(bad) = phases.iter().find(|p| !(0.0..TAU).contains(*p)) {
            return Err(LabError::Domain(format!("phase {bad} outside [0, 2pi)")));
        }
        Ok(Self { size, phases })
    }

    pub fn zeros(size: usize) -> Result<Self> {
        Self::new(size, vec![0.0; size * size.saturating_sub(1) / 2])
    }

    /// Wraps every value; used after Brownian increments.
    pub fn from_unwrapped(size: usize, phases: impl IntoIterator<Item = f64>) -> Result<Self> {
        Self::new(size, phases.into_iter().map(wrap_phase).collect())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn into_phases(self) -> Vec<f64> {
        self.phases
    }

    /// Storage index of the pair `(mu, nu)`, `mu < nu`.
    pub fn pair_index(&self, mu: usize, nu: usize) -> usize {
        debug_assert!(mu < nu && nu < self.size);
        mu * (2 * self.size - mu - 1) / 2 + (nu - mu - 1)
    }

    /// Pairs `(mu, nu)` in storage order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.size).flat_map(move |mu| (mu + 1..self.size).map(move |nu| (mu, nu)))
    }

    /// Antisymmetric phase `phi_{mu nu} = -phi_{nu mu}`; zero on the diagonal.
    pub fn phase(&self, mu: usize, nu: usize) -> f64 {
        use std::cmp::Ordering::*;
        match mu.cmp(&nu) {
            Less => self.phases[self.pair_index(mu, nu)],
            Greater => -self.phases[self.pair_index(nu, mu)],
            Equal => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixKind {
    Ume,
    Gue,
    Scaled,
}

/// Dense complex Hermitian matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix {
    dim: usize,
    entries: Vec<C64>,
    kind: MatrixKind,
}

impl HermitianMatrix {
    /// Wraps raw entries without checking Hermiticity; [`crate::spectral::eigenvalues`] checks.
    pub fn from_entries(dim: usize, entries: Vec<C64>, kind: MatrixKind) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(LabError::Domain(format!("{} entries for a {dim}x{dim} matrix", entries.len())));
        }
        Ok(Self { dim, entries, kind })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.entries[i * self.dim + j]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `max |H_ij - conj(H_ji)|`.
    pub fn hermiticity_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.dim {
            for j in i..self.dim {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// `Tr(H^2) = sum |H_ij|^2` for Hermitian `H`.
    pub fn trace_of_square(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn matmul(&self, other: &HermitianMatrix) -> Vec<C64> {
        let n = self.dim;
        let mut out = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.entries[k * n + j];
                }
            }
        }
        out
    }
}

/// I.i.d. uniform phases on `[0, 2 pi)`.
pub fn sample_phases(n: usize, seed: SeedSpec) -> Result<PhaseConfiguration> {
    if n < 2 {
        return Err(LabError::InvalidDimension { dim: n, reason: "need N >= 2" });
    }
    let mut rng = seed.rng();
    let phases = (0..n * (n - 1) / 2).map(|_| wrap_phase(rng.random::<f64>() * TAU)).collect();
    PhaseConfiguration::new(n, phases)
}

/// `M_{mu nu} = (1 - delta_{mu nu}) exp(i phi_{mu nu})`.
pub fn build_ume(phi: &PhaseConfiguration) -> HermitianMatrix {
    let n = phi.size();
    let mut entries = vec![C64::new(0.0, 0.0); n * n];
    for (mu, nu) in phi.pairs() {
        let z = C64::from_polar(1.0, phi.phases()[phi.pair_index(mu, nu)]);
        entries[mu * n + nu] = z;
        entries[nu * n + mu] = z.conj();
    }
    HermitianMatrix { dim: n, entries, kind: MatrixKind::Ume }
}

/// GUE member with `<|H_ij|^2> = 1` off the diagonal and unit diagonal variance.
pub fn build_gue(n: usize, seed: SeedSpec) -> Result<HermitianMatrix> {
    if n < 1 {
        return Err(LabError::InvalidDimension { dim: n, reason: "need N >= 1" });
    }
    let mut rng = seed.rng();
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let mut entries = vec![C64::new(0.0, 0.0); n * n];
    for i in 0..n {
        let d: f64 = rng.sample(StandardNormal);
        entries[i * n + i] = C64::new(d, 0.0);
        for j in i + 1..n {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = C64::new(re * half, im * half);
            entries[i * n + j] = z;
            entries[j * n + i] = z.conj();
        }
    }
    Ok(HermitianMatrix { dim: n, entries, kind: MatrixKind::Gue })
}

/// The divisor `2 sqrt(N - 2)` of the scaling `W = M / (2 sqrt(N - 2))`.
pub fn scale_divisor(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(LabError::InvalidDimension { dim: n, reason: "scaling needs N >= 3" });
    }
    Ok(2.0 * ((n - 2) as f64).sqrt())
}

pub fn scale_matrix(m: &HermitianMatrix) -> Result<HermitianMatrix> {
    let d = scale_divisor(m.dim)?;
    Ok(HermitianMatrix {
        dim: m.dim,
        entries: m.entries.iter().map(|z| z / d).collect(),
        kind: MatrixKind::Scaled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn two_by_two_examples() {
        let m = build_ume(&PhaseConfiguration::new(2, vec![0.0]).unwrap());
        assert_eq!(m.entries(), &[C64::new(0., 0.), C64::new(1., 0.), C64::new(1., 0.), C64::new(0., 0.)]);
        let m = build_ume(&PhaseConfiguration::new(2, vec![PI / 2.0]).unwrap());
        assert!((m.get(0, 1) - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((m.get(1, 0) - C64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn sample_phases_shape_and_determinism() {
        let p = sample_phases(2, SeedSpec::new(9, 0)).unwrap();
        assert_eq!(p.phases().len(), 1);
        let a = sample_phases(12, SeedSpec::new(3, 7)).unwrap();
        let b = sample_phases(12, SeedSpec::new(3, 7)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(sample_phases(1, SeedSpec::new(0, 0)), Err(LabError::InvalidDimension { .. })));
    }

    #[test]
    fn cos_phase_mean_vanishes() {
        let (mut s, mut s2, mut k) = (0.0, 0.0, 0.0);
        for r in 0..2223 {
            for p in sample_phases(10, SeedSpec::new(11, r)).unwrap().phases() {
                s += p.cos();
                s2 += p.cos().powi(2);
                k += 1.0;
            }
        }
        let mean = s / k;
        let se = ((s2 / k - mean * mean) / k).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn distinct_replicas_uncorrelated() {
        let a = sample_phases(142, SeedSpec::new(5, 0)).unwrap().into_phases();
        let b = sample_phases(142, SeedSpec::new(5, 1)).unwrap().into_phases();
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        assert!(a.len() >= 10_000);
        assert!((cov / (va * vb).sqrt()).abs() < 0.05);
    }

    #[test]
    fn derived_streams_differ() {
        let s = SeedSpec::new(1, 2);
        assert_ne!(s.derive(1), s.derive(2));
        assert_eq!(s.derive(1).replica_index, 2);
    }

    #[test]
    fn wrap_edge_cases() {
        assert_eq!(wrap_phase(-1e-300), 0.0);
        assert!((wrap_phase(-0.5) - (TAU - 0.5)).abs() < 1e-15);
        assert!(wrap_phase(TAU) < 1e-15);
    }

    #[test]
    fn scaling_divisors() {
        assert_eq!(scale_divisor(3).unwrap(), 2.0);
        assert_eq!(scale_divisor(6).unwrap(), 4.0);
        let m = build_ume(&PhaseConfiguration::new(2, vec![0.0]).unwrap());
        assert!(scale_matrix(&m).is_err());
    }

    #[test]
    fn gue_trace_square_mean() {
        // <(1/N) Tr H^2> = N
        let (n, reps) = (4, 20_000u64);
        let (mut s, mut s2) = (0.0, 0.0);
        for r in 0..reps {
            let v = build_gue(n, SeedSpec::new(21, r)).unwrap().trace_of_square() / n as f64;
            s += v;
            s2 += v * v;
        }
        let mean = s / reps as f64;
        let se = ((s2 / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!((mean - 4.0).abs() < 3.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn gue_one_by_one_variance() {
        let reps = 20_000u64;
        let xs: Vec<f64> = (0..reps).map(|r| build_gue(1, SeedSpec::new(2, r)).unwrap().get(0, 0).re).collect();
        let m = xs.iter().sum::<f64>() / reps as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1) as f64;
        // se of a normal sample variance is sqrt(2/(n-1))
        assert!((v - 1.0).abs() < 3.0 * (2.0 / (reps - 1) as f64).sqrt());
    }
}
