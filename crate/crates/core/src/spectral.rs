//! Spectra, moments, Chebyshev traces and the normalized Hashimoto traces `y_n`.

use faer::{Mat, Side};

use crate::ensemble::{scale_divisor, HermitianMatrix, MatrixKind};
use crate::nbwalks::expected_chebyshev_formula;
use crate::{LabError, Result, C64};

/// Relative Hermiticity tolerance accepted by the eigensolver entry points.
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Sorted eigenvalues `lambda` (on the scale of `M`) and `eps = lambda / (2 sqrt(N-2))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub dim: usize,
    pub eigenvalues: Vec<f64>,
    /// Empty when `N < 3`.
    pub scaled: Vec<f64>,
    pub ramanujan: bool,
    pub source: MatrixKind,
}

impl Spectrum {
    /// Builds from eigenvalues of the given source; `Scaled` input is read as `eps`.
    pub fn from_eigenvalues(mut values: Vec<f64>, source: MatrixKind) -> Spectrum {
        values.sort_by(f64::total_cmp);
        let dim = values.len();
        let divisor = scale_divisor(dim).ok();
        let (eigenvalues, scaled) = match (source, divisor) {
            (MatrixKind::Scaled, Some(d)) => (values.iter().map(|e| e * d).collect(), values),
            (MatrixKind::Scaled, None) => (values.clone(), values),
            (_, Some(d)) => {
                let eps = values.iter().map(|l| l / d).collect();
                (values, eps)
            }
            (_, None) => (values, Vec::new()),
        };
        let ramanujan = !scaled.is_empty() && scaled.iter().all(|e| e.abs() <= 1.0);
        Spectrum { dim, eigenvalues, scaled, ramanujan, source }
    }

    fn require_scaled(&self) -> Result<&[f64]> {
        if self.scaled.is_empty() {
            return Err(LabError::InvalidDimension { dim: self.dim, reason: "scaled spectrum needs N >= 3" });
        }
        Ok(&self.scaled)
    }
}

fn to_faer(h: &HermitianMatrix) -> Result<Mat<C64>> {
    let scale = h.frobenius_norm().max(1.0);
    let res = h.hermiticity_residual();
    if res > HERMITIAN_TOL * scale {
        return Err(LabError::NotHermitian(res));
    }
    let n = h.dim();
    Ok(Mat::from_fn(n, n, |i, j| h.get(i, j)))
}

pub fn eigenvalues(h: &HermitianMatrix) -> Result<Spectrum> {
    let m = to_faer(h)?;
    let vals = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| LabError::Eigen(format!("{e:?}")))?;
    Ok(Spectrum::from_eigenvalues(vals, h.kind()))
}

/// Eigenvalues together with an orthonormal eigenbasis.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub spectrum: Spectrum,
    /// Raw eigenvalues of the input matrix, ascending, aligned with the columns of `vectors`.
    pub values: Vec<f64>,
    /// Column-major: column `k` is the eigenvector of `values[k]`.
    pub vectors: Vec<C64>,
}

impl EigenDecomposition {
    pub fn vector(&self, k: usize) -> &[C64] {
        let n = self.values.len();
        &self.vectors[k * n..(k + 1) * n]
    }

    /// `max_ij |H - V diag V^dagger|_ij`, relative to `|H|_F`.
    pub fn reconstruction_residual(&self, h: &HermitianMatrix) -> f64 {
        let n = h.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let mut z = C64::new(0.0, 0.0);
                for k in 0..n {
                    z += self.vectors[k * n + i] * self.values[k] * self.vectors[k * n + j].conj();
                }
                worst = worst.max((h.get(i, j) - z).norm());
            }
        }
        worst / h.frobenius_norm().max(f64::MIN_POSITIVE)
    }
}

pub fn eigen_decomposition(h: &HermitianMatrix) -> Result<EigenDecomposition> {
    let m = to_faer(h)?;
    let evd = m.self_adjoint_eigen(Side::Lower).map_err(|e| LabError::Eigen(format!("{e:?}")))?;
    let n = h.dim();
    let s = evd.S().column_vector();
    let u = evd.U();
    let values: Vec<f64> = (0..n).map(|k| s[k].re).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for k in 0..n {
        for i in 0..n {
            vectors.push(u[(i, k)]);
        }
    }
    // faer returns ascending order already; keep the pairing explicit anyway
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let values_sorted: Vec<f64> = order.iter().map(|&k| values[k]).collect();
    let vectors_sorted = order.iter().flat_map(|&k| vectors[k * n..(k + 1) * n].iter().copied()).collect();
    Ok(EigenDecomposition {
        spectrum: Spectrum::from_eigenvalues(values_sorted.clone(), h.kind()),
        values: values_sorted,
        vectors: vectors_sorted,
    })
}

/// `(1/N) sum_k lambda_k^k`.
pub fn spectral_moment(spec: &Spectrum, k: u32) -> f64 {
    if spec.dim == 0 {
        return 0.0;
    }
    spec.eigenvalues.iter().map(|l| l.powi(k as i32)).sum::<f64>() / spec.dim as f64
}

/// `T_n(x)` by the three-term recurrence, valid on the whole real line.
pub fn chebyshev_eval(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for _ in 1..n {
        let next = 2.0 * x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `[T_0(x), ..., T_n_max(x)]`.
pub fn chebyshev_all(n_max: usize, x: f64) -> Vec<f64> {
    let mut t = Vec::with_capacity(n_max + 1);
    t.push(1.0);
    if n_max >= 1 {
        t.push(x);
    }
    for k in 2..=n_max {
        t.push(2.0 * x * t[k - 1] - t[k - 2]);
    }
    t
}

/// `T_n`, `T_n'`, `T_n''` at `x`.
pub fn chebyshev_with_derivatives(n: usize, x: f64) -> (f64, f64, f64) {
    let (mut t0, mut d0, mut s0) = (1.0, 0.0, 0.0);
    if n == 0 {
        return (t0, d0, s0);
    }
    let (mut t1, mut d1, mut s1) = (x, 1.0, 0.0);
    for _ in 1..n {
        let t2 = 2.0 * x * t1 - t0;
        let d2 = 2.0 * t1 + 2.0 * x * d1 - d0;
        let s2 = 4.0 * d1 + 2.0 * x * s1 - s0;
        (t0, d0, s0) = (t1, d1, s1);
        (t1, d1, s1) = (t2, d2, s2);
    }
    (t1, d1, s1)
}

/// Truncated Chebyshev series `sum_m coeffs[m] T_m(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebyshevCoefficients {
    pub coeffs: Vec<f64>,
}

impl ChebyshevCoefficients {
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        // Clenshaw
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * x * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        self.coeffs.first().copied().unwrap_or(0.0) + x * b1 - b2
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Power-basis table of `T_n`: pairs `(n - 2r, d_r)` with
/// `d_r = (n/2) (-1)^r 2^(n-2r) (n-r-1)! / (r! (n-2r)!)`.
pub fn chebyshev_power_table(n: usize) -> Vec<(usize, f64)> {
    if n == 0 {
        return vec![(0, 1.0)];
    }
    (0..=n / 2)
        .map(|r| {
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            let d = 0.5 * n as f64 * sign * 2f64.powi((n - 2 * r) as i32) * factorial(n - r - 1)
                / (factorial(r) * factorial(n - 2 * r));
            (n - 2 * r, d)
        })
        .collect()
}

/// `Tr T_n(W) = sum_k T_n(eps_k)`.
pub fn chebyshev_trace(spec: &Spectrum, n: usize) -> Result<f64> {
    Ok(spec.require_scaled()?.iter().map(|&e| chebyshev_eval(n, e)).sum())
}

/// Boundary term `((N-3)/2) (1 + (-1)^n) / (N-2)^(n/2)` of the pre-trace identity.
pub fn pre_trace_boundary(n: usize, dim: usize) -> f64 {
    if n % 2 == 1 {
        return 0.0;
    }
    (dim as f64 - 3.0) / ((dim as f64 - 2.0).powi((n / 2) as i32))
}

/// `y_n = (2/N) Tr T_n(W) + ((N-3)/2)(1 + (-1)^n) / (N-2)^(n/2)`.
pub fn y_n(spec: &Spectrum, n: usize) -> Result<f64> {
    let tr = chebyshev_trace(spec, n)?;
    Ok(2.0 * tr / spec.dim as f64 + pre_trace_boundary(n, spec.dim))
}

/// Reference value subtracted from `Tr T_n(W)` in `F_n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Centering {
    /// Closed-form ensemble mean; exact for `n <= 8`.
    ClosedForm,
    /// Caller-supplied (e.g. Monte Carlo) mean.
    Empirical(f64),
}

impl Centering {
    pub fn mean(&self, n: usize, dim: usize) -> f64 {
        match *self {
            Centering::ClosedForm => closed_form_chebyshev_mean(n, dim),
            Centering::Empirical(m) => m,
        }
    }
}

/// Closed-form `<Tr T_n(W)>`: zero for odd `n`, otherwise the even-index formula.
pub fn closed_form_chebyshev_mean(n: usize, dim: usize) -> f64 {
    if n % 2 == 1 {
        0.0
    } else if n == 0 {
        dim as f64
    } else {
        expected_chebyshev_formula(n / 2, dim as f64)
    }
}

/// `F_n = Tr T_n(W) - <Tr T_n(W)>`, defined for `n >= 3`.
pub fn centered_chebyshev(spec: &Spectrum, n: usize, centering: Centering) -> Result<f64> {
    if n < 3 {
        return Err(LabError::Domain(format!("F_n needs n >= 3, got {n}")));
    }
    Ok(chebyshev_trace(spec, n)? - centering.mean(n, spec.dim))
}

/// Catalan number `C_k`; exact up to `k = 35`.
pub fn catalan(k: u32) -> u128 {
    let mut c: u128 = 1;
    for i in 0..k as u128 {
        c = c * 2 * (2 * i + 1) / (i + 2);
    }
    c
}

/// `m_k = (1/N) <Tr (H/sqrt N)^(2k)>` for the GUE from the three-term recurrence
/// `(k+1) m_k = (4k-2) m_{k-1} + (k-1)(2k-1)(2k-3)/N^2 m_{k-2}`, `m_0 = m_1 = 1`.
pub fn gue_moment(k: u32, n: f64) -> f64 {
    let (mut a, mut b) = (1.0, 1.0); // m_{k-2}, m_{k-1}
    if k <= 1 {
        return 1.0;
    }
    for j in 2..=k as u64 {
        let jf = j as f64;
        let next = ((4.0 * jf - 2.0) * b + (jf - 1.0) * (2.0 * jf - 1.0) * (2.0 * jf - 3.0) / (n * n) * a) / (jf + 1.0);
        a = b;
        b = next;
    }
    b
}
