//! Directed-edge operators on the complete graph `K_N` with magnetic phases,
//! the Bass identity, and exact enumeration of periodic non-backtracking walks.
//!
//! The directed edge `o -> t` carries the phase `phi_{o t}` (so `-phi_{t o}`),
//! and `Y_{e', e} = exp(i (phi_e + phi_{e'}) / 2)` whenever `o(e') = t(e)` and
//! `e' != reverse(e)`. A walk `w` picks up `exp(i Phi_w)` with
//! `Phi_w = sum_e kappa_e phi_e` over undirected edges `e = (mu < nu)`.

use std::collections::HashMap;

use faer::Mat;
use rayon::prelude::*;

use crate::ensemble::{build_ume, PhaseConfiguration};
use crate::{LabError, Result, C64};

/// All `N(N-1)` ordered pairs `(origin, terminus)` of `K_N`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DirectedEdgeSpace {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl DirectedEdgeSpace {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(LabError::InvalidDimension { dim: n, reason: "need N >= 2" });
        }
        let edges = (0..n).flat_map(|o| (0..n).filter(move |&t| t != o).map(move |t| (o, t))).collect();
        Ok(Self { n, edges })
    }

    pub fn vertices(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn index(&self, o: usize, t: usize) -> usize {
        debug_assert!(o != t);
        o * (self.n - 1) + if t < o { t } else { t - 1 }
    }

    pub fn origin(&self, e: usize) -> usize {
        self.edges[e].0
    }

    pub fn terminus(&self, e: usize) -> usize {
        self.edges[e].1
    }

    pub fn reversal(&self, e: usize) -> usize {
        let (o, t) = self.edges[e];
        self.index(t, o)
    }

    /// Edges that may follow `e` in a non-backtracking walk.
    pub fn successors(&self, e: usize) -> impl Iterator<Item = usize> + '_ {
        let (o, t) = self.edges[e];
        (0..self.n).filter(move |&u| u != t && u != o).map(move |u| self.index(t, u))
    }

    /// Undirected pair index and orientation sign of `e` (`+1` when `o < t`).
    pub fn undirected(&self, e: usize) -> (usize, i32) {
        let (o, t) = self.edges[e];
        let (a, b, s) = if o < t { (o, t, 1) } else { (t, o, -1) };
        (a * (2 * self.n - a - 1) / 2 + (b - a - 1), s)
    }

    fn successor_table(&self) -> Vec<Vec<usize>> {
        (0..self.len()).map(|e| self.successors(e).collect()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    /// All head-to-tail transitions, reversals included.
    B,
    /// Non-backtracking (magnetic Hashimoto) operator.
    Y,
}

/// Sparse `N(N-1) x N(N-1)` edge operator stored by rows.
#[derive(Clone, Debug)]
pub struct MagneticOperator {
    kind: OperatorKind,
    space: DirectedEdgeSpace,
    /// `rows[e']` holds `(e, value)` pairs.
    rows: Vec<Vec<(usize, C64)>>,
}

fn edge_phase(space: &DirectedEdgeSpace, phi: &PhaseConfiguration, e: usize) -> f64 {
    let (o, t) = space.edge(e);
    phi.phase(o, t)
}

fn build_operator(phi: &PhaseConfiguration, kind: OperatorKind) -> Result<MagneticOperator> {
    let n = phi.size();
    if n < 3 {
        return Err(LabError::InvalidDimension { dim: n, reason: "edge operators need N >= 3" });
    }
    let space = DirectedEdgeSpace::new(n)?;
    let rows = (0..space.len())
        .map(|ep| {
            let o = space.origin(ep);
            let back = space.reversal(ep);
            (0..n)
                .filter(|&s| s != o)
                .map(|s| space.index(s, o))
                .filter(|&e| kind == OperatorKind::B || e != back)
                .map(|e| {
                    let a = 0.5 * (edge_phase(&space, phi, e) + edge_phase(&space, phi, ep));
                    (e, C64::from_polar(1.0, a))
                })
                .collect()
        })
        .collect();
    Ok(MagneticOperator { kind, space, rows })
}

/// Magnetic Hashimoto operator `Y(Phi)`.
pub fn hashimoto(phi: &PhaseConfiguration) -> Result<MagneticOperator> {
    build_operator(phi, OperatorKind::Y)
}

/// Magnetic edge-adjacency operator `B(Phi)`; `B - J = Y` at `Phi = 0`.
pub fn magnetic_b(phi: &PhaseConfiguration) -> Result<MagneticOperator> {
    build_operator(phi, OperatorKind::B)
}

impl MagneticOperator {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn space(&self) -> &DirectedEdgeSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn row(&self, e_prime: usize) -> &[(usize, C64)] {
        &self.rows[e_prime]
    }

    pub fn to_dense(&self) -> Vec<C64> {
        let d = self.dim();
        let mut out = vec![C64::new(0.0, 0.0); d * d];
        for (ep, row) in self.rows.iter().enumerate() {
            for &(e, v) in row {
                out[ep * d + e] = v;
            }
        }
        out
    }

    /// `[Tr Y^0, Tr Y^1, ..., Tr Y^n_max]` by repeated sparse-times-dense products.
    pub fn trace_powers(&self, n_max: usize) -> Vec<C64> {
        let d = self.dim();
        let mut p = vec![C64::new(0.0, 0.0); d * d];
        for i in 0..d {
            p[i * d + i] = C64::new(1.0, 0.0);
        }
        let mut next = vec![C64::new(0.0, 0.0); d * d];
        let mut traces = vec![C64::new(d as f64, 0.0)];
        for _ in 0..n_max {
            for (ep, row) in self.rows.iter().enumerate() {
                let out = &mut next[ep * d..(ep + 1) * d];
                out.fill(C64::new(0.0, 0.0));
                for &(e, v) in row {
                    let src = &p[e * d..(e + 1) * d];
                    for (o, s) in out.iter_mut().zip(src) {
                        *o += v * s;
                    }
                }
            }
            std::mem::swap(&mut p, &mut next);
            traces.push((0..d).map(|i| p[i * d + i]).sum());
        }
        traces
    }

    pub fn trace_power(&self, n: usize) -> C64 {
        self.trace_powers(n)[n]
    }

    /// Eigenvalues of the (non-normal) dense operator.
    pub fn eigenvalues(&self) -> Result<Vec<C64>> {
        let d = self.dim();
        let dense = self.to_dense();
        let m = Mat::from_fn(d, d, |i, j| dense[i * d + j]);
        m.eigenvalues().map_err(|e| LabError::Eigen(format!("{e:?}")))
    }
}

/// `(1/N) Tr Y^n / (N-2)^(n/2)` for `n = 0..=n_max`, i.e. `y_n` from the walk side.
pub fn y_from_operator(op: &MagneticOperator, n_max: usize) -> Vec<f64> {
    let n = op.space().vertices() as f64;
    op.trace_powers(n_max)
        .iter()
        .enumerate()
        .map(|(k, t)| t.re / n / (n - 2.0).powf(k as f64 / 2.0))
        .collect()
}

/// `ln |det|` and `arg det` of a complex matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogDet {
    pub ln_abs: f64,
    pub phase: f64,
}

impl LogDet {
    pub fn value(&self) -> C64 {
        C64::from_polar(self.ln_abs.exp(), self.phase)
    }
}

/// LU with partial pivoting, accumulated in log space. `a` is row-major and consumed.
pub fn log_det(mut a: Vec<C64>, n: usize) -> LogDet {
    let mut ln_abs = 0.0;
    let mut phase = 0.0;
    for k in 0..n {
        let (piv, best) = (k..n)
            .map(|i| (i, a[i * n + k].norm()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best == 0.0 {
            return LogDet { ln_abs: f64::NEG_INFINITY, phase: 0.0 };
        }
        if piv != k {
            for j in 0..n {
                a.swap(k * n + j, piv * n + j);
            }
            phase += std::f64::consts::PI;
        }
        let pivot = a[k * n + k];
        ln_abs += pivot.norm().ln();
        phase += pivot.arg();
        for i in k + 1..n {
            let f = a[i * n + k] / pivot;
            if f == C64::new(0.0, 0.0) {
                continue;
            }
            for j in k + 1..n {
                let u = a[k * n + j];
                a[i * n + j] -= f * u;
            }
        }
    }
    LogDet { ln_abs, phase: wrap_pi(phase) }
}

fn wrap_pi(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let r = x.rem_euclid(tau);
    if r > std::f64::consts::PI {
        r - tau
    } else {
        r
    }
}

/// Both sides of `det(eta I - Y) = (eta^2 - 1)^(N(N-3)/2) det((eta^2 + N - 2) I - eta M)`.
#[derive(Clone, Copy, Debug)]
pub struct BassComparison {
    pub lhs: LogDet,
    pub rhs: LogDet,
    /// `|L - R| / max(|L|, |R|)`, computed from the log forms.
    pub residual: f64,
    /// True when either determinant would overflow `f64` if exponentiated.
    pub overflow: bool,
}

pub fn bass_comparison(phi: &PhaseConfiguration, eta: C64) -> Result<BassComparison> {
    let y = hashimoto(phi)?;
    let n = phi.size();
    let d = y.dim();
    let mut a: Vec<C64> = y.to_dense().iter().map(|z| -z).collect();
    for i in 0..d {
        a[i * d + i] += eta;
    }
    let lhs = log_det(a, d);

    let m = build_ume(phi);
    let shift = eta * eta + (n as f64 - 2.0);
    let mut b: Vec<C64> = m.entries().iter().map(|z| -eta * z).collect();
    for i in 0..n {
        b[i * n + i] += shift;
    }
    let core = log_det(b, n);
    let power = (n * (n - 3) / 2) as f64;
    let lead = eta * eta - 1.0;
    let rhs = LogDet {
        ln_abs: core.ln_abs + power * lead.norm().ln(),
        phase: wrap_pi(core.phase + power * lead.arg()),
    };

    let residual = if lhs.ln_abs == f64::NEG_INFINITY && rhs.ln_abs == f64::NEG_INFINITY {
        0.0
    } else {
        // |1 - e^d| / max(1, |e^d|) with d = R - L
        let d = C64::new(rhs.ln_abs - lhs.ln_abs, wrap_pi(rhs.phase - lhs.phase));
        let ed = d.exp();
        (C64::new(1.0, 0.0) - ed).norm() / ed.norm().max(1.0)
    };
    let limit = f64::MAX.ln();
    Ok(BassComparison { lhs, rhs, residual, overflow: lhs.ln_abs > limit || rhs.ln_abs > limit })
}

pub fn bass_residual(phi: &PhaseConfiguration, eta: C64) -> Result<f64> {
    Ok(bass_comparison(phi, eta)?.residual)
}

/// Images of the `M`-spectrum under the Bass factorization: for each `lambda`,
/// both roots of `eta^2 - lambda eta + (N - 2) = 0`, plus `+1` and `-1` each
/// with multiplicity `N(N-3)/2`.
pub fn bass_eigenvalue_images(lambdas: &[f64]) -> Vec<C64> {
    let n = lambdas.len();
    let q = n as f64 - 2.0;
    let mut out = Vec::with_capacity(n * (n - 1));
    for &l in lambdas {
        let disc = C64::new(l * l - 4.0 * q, 0.0).sqrt();
        out.push((l + disc) / 2.0);
        out.push((l - disc) / 2.0);
    }
    for _ in 0..n * (n - 3) / 2 {
        out.push(C64::new(1.0, 0.0));
        out.push(C64::new(-1.0, 0.0));
    }
    out
}

pub const DEFAULT_BUDGET: u64 = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationConfig {
    /// Cap on `N(N-1)(N-2)^(n-1)` partial walks.
    pub budget: u64,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET }
    }
}

/// Number of length-`n` non-backtracking edge sequences, `N(N-1)(N-2)^(n-1)`.
pub fn enumeration_cost(n_dim: usize, len: usize) -> f64 {
    if len == 0 {
        return 0.0;
    }
    let nf = n_dim as f64;
    nf * (nf - 1.0) * (nf - 2.0).powi(len as i32 - 1)
}

fn check(n_dim: usize, len: usize, cfg: &EnumerationConfig) -> Result<DirectedEdgeSpace> {
    if n_dim < 3 {
        return Err(LabError::InvalidDimension { dim: n_dim, reason: "walk enumeration needs N >= 3" });
    }
    let required = enumeration_cost(n_dim, len);
    if required > cfg.budget as f64 {
        return Err(LabError::BudgetExceeded { required, budget: cfg.budget });
    }
    DirectedEdgeSpace::new(n_dim)
}

/// Exact walk counts. `signatures` maps nonzero `kappa` vectors (indexed by
/// undirected pair) to counts when classification was requested.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkTally {
    pub n_dim: usize,
    pub length: usize,
    pub count: u64,
    pub signatures: Option<HashMap<Vec<i16>, u64>>,
}

struct Walker<'a> {
    space: &'a DirectedEdgeSpace,
    succ: &'a [Vec<usize>],
    len: usize,
}

impl Walker<'_> {
    fn closes(&self, last: usize, start: usize) -> bool {
        self.space.terminus(last) == self.space.origin(start) && self.space.reversal(last) != start
    }

    /// Calls `f(path)` for every closed walk of length `len` beginning with `start`.
    fn visit(&self, start: usize, f: &mut dyn FnMut(&[usize])) {
        let mut path = vec![start];
        self.visit_rec(&mut path, f);
    }

    fn visit_rec(&self, path: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        let last = *path.last().unwrap();
        if path.len() == self.len {
            if self.closes(last, path[0]) {
                f(path);
            }
            return;
        }
        for &e in &self.succ[last] {
            path.push(e);
            self.visit_rec(path, f);
            path.pop();
        }
    }

    fn count(&self, start: usize) -> u64 {
        let mut c = 0;
        self.visit(start, &mut |_| c += 1);
        c
    }

    /// Walks with `kappa = 0`, pruned by the l1 bound `|kappa|_1 <= steps left`.
    fn count_balanced(&self, start: usize, kappa: &mut [i32]) -> u64 {
        let (u, s) = self.space.undirected(start);
        kappa[u] += s;
        let c = self.balanced_rec(start, start, 1, 1, kappa);
        kappa[u] -= s;
        c
    }

    fn balanced_rec(&self, start: usize, last: usize, depth: usize, l1: usize, kappa: &mut [i32]) -> u64 {
        if depth == self.len {
            return u64::from(l1 == 0 && self.closes(last, start));
        }
        let left = self.len - depth;
        let mut total = 0;
        for &e in &self.succ[last] {
            let (u, s) = self.space.undirected(e);
            let before = kappa[u].unsigned_abs() as usize;
            kappa[u] += s;
            let after = kappa[u].unsigned_abs() as usize;
            let l1n = l1 + after - before;
            if l1n < left {
                total += self.balanced_rec(start, e, depth + 1, l1n, kappa);
            }
            kappa[u] -= s;
        }
        total
    }
}

fn make_walker<'a>(space: &'a DirectedEdgeSpace, succ: &'a [Vec<usize>], len: usize) -> Walker<'a> {
    Walker { space, succ, len }
}

/// Net traversal count per undirected pair.
pub fn kappa_of(space: &DirectedEdgeSpace, walk: &[usize]) -> Vec<i16> {
    let n = space.vertices();
    let mut k = vec![0i16; n * (n - 1) / 2];
    for &e in walk {
        let (u, s) = space.undirected(e);
        k[u] += s as i16;
    }
    k
}

/// Visits every closed non-backtracking walk (rooted at its first edge) sequentially.
pub fn for_each_walk(n_dim: usize, len: usize, cfg: &EnumerationConfig, mut f: impl FnMut(&DirectedEdgeSpace, &[usize])) -> Result<()> {
    let space = check(n_dim, len, cfg)?;
    if len == 0 {
        return Ok(());
    }
    let succ = space.successor_table();
    let w = make_walker(&space, &succ, len);
    for s in 0..space.len() {
        w.visit(s, &mut |p| f(&space, p));
    }
    Ok(())
}

pub fn enumerate_nbw(n_dim: usize, len: usize) -> Result<WalkTally> {
    enumerate_nbw_with(n_dim, len, &EnumerationConfig::default())
}

/// Count of `len`-periodic non-backtracking walks on `K_N`, i.e. `Tr Y(0)^len`.
pub fn enumerate_nbw_with(n_dim: usize, len: usize, cfg: &EnumerationConfig) -> Result<WalkTally> {
    let space = check(n_dim, len, cfg)?;
    let count = if len == 0 {
        space.len() as u64
    } else {
        let succ = space.successor_table();
        let w = make_walker(&space, &succ, len);
        (0..space.len()).into_par_iter().map(|s| w.count(s)).sum()
    };
    Ok(WalkTally { n_dim, length: len, count, signatures: None })
}

pub fn enumerate_zero_phase_walks(n_dim: usize, len: usize) -> Result<WalkTally> {
    enumerate_zero_phase_walks_with(n_dim, len, &EnumerationConfig::default())
}

/// Walks whose every edge is traversed equally often in both directions;
/// the count equals the exact UME mean `<Tr Y^len>`.
pub fn enumerate_zero_phase_walks_with(n_dim: usize, len: usize, cfg: &EnumerationConfig) -> Result<WalkTally> {
    let space = check(n_dim, len, cfg)?;
    let count = if len == 0 {
        space.len() as u64
    } else if len % 2 == 1 {
        0
    } else {
        let succ = space.successor_table();
        let w = make_walker(&space, &succ, len);
        let pairs = n_dim * (n_dim - 1) / 2;
        (0..space.len())
            .into_par_iter()
            .map(|s| w.count_balanced(s, &mut vec![0; pairs]))
            .sum()
    };
    Ok(WalkTally { n_dim, length: len, count, signatures: None })
}

/// Walk counts grouped by nonzero `kappa` signature.
pub fn enumerate_signatures(n_dim: usize, len: usize, cfg: &EnumerationConfig) -> Result<WalkTally> {
    let space = check(n_dim, len, cfg)?;
    let succ = space.successor_table();
    let w = make_walker(&space, &succ, len);
    let map = (0..space.len())
        .into_par_iter()
        .map(|s| {
            let mut local: HashMap<Vec<i16>, u64> = HashMap::new();
            w.visit(s, &mut |p| {
                let k = kappa_of(&space, p);
                if k.iter().any(|&x| x != 0) {
                    *local.entry(k).or_default() += 1;
                }
            });
            local
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });
    let count = map.values().sum();
    Ok(WalkTally { n_dim, length: len, count, signatures: Some(map) })
}

pub fn enumerate_retracing_pairs(n_dim: usize, n: usize, m: usize) -> Result<WalkTally> {
    enumerate_retracing_pairs_with(n_dim, n, m, &EnumerationConfig::default())
}

/// Number of pairs `(w, w')` with `Phi_w = -Phi_w' != 0`, equal to the exact
/// `Cov(Tr Y^n, Tr Y^m)` over the UME.
pub fn enumerate_retracing_pairs_with(n_dim: usize, n: usize, m: usize, cfg: &EnumerationConfig) -> Result<WalkTally> {
    check(n_dim, n, cfg)?;
    check(n_dim, m, cfg)?;
    let length = n.max(m);
    if n.abs_diff(m) % 2 == 1 || n == 0 || m == 0 {
        return Ok(WalkTally { n_dim, length, count: 0, signatures: None });
    }
    let a = enumerate_signatures(n_dim, n, cfg)?.signatures.unwrap_or_default();
    let b = if n == m { a.clone() } else { enumerate_signatures(n_dim, m, cfg)?.signatures.unwrap_or_default() };
    let count = a
        .iter()
        .map(|(k, c)| {
            let neg: Vec<i16> = k.iter().map(|x| -x).collect();
            c * b.get(&neg).copied().unwrap_or(0)
        })
        .sum();
    Ok(WalkTally { n_dim, length, count, signatures: None })
}

/// Printed leading-order `<y_{2n}>`: zero for `n <= 4`, `n(n-4)/N^2` at `n = 5`,
/// `(n / (6N^2)) [(n+1)(n-4) + 3(n-5)]` for `n >= 6`.
pub fn expected_y2n_formula(n: usize, dim: f64) -> f64 {
    let nf = n as f64;
    match n {
        0 => dim - 1.0,
        1..=4 => 0.0,
        5 => nf * (nf - 4.0) / (dim * dim),
        _ => nf / (6.0 * dim * dim) * ((nf + 1.0) * (nf - 4.0) + 3.0 * (nf - 5.0)),
    }
}

/// Printed `<Tr T_{2n}(W)>`: exact `-(N/2)(N-3)/(N-2)^n` for `n < 5`,
/// `n(n-4)/(2N)` at `n = 5`, `(n / (12N)) [(n+1)(n-1) - 18]` for `n >= 6`.
pub fn expected_chebyshev_formula(n: usize, dim: f64) -> f64 {
    let nf = n as f64;
    match n {
        0 => dim,
        1..=4 => -0.5 * dim * (dim - 3.0) / (dim - 2.0).powi(n as i32),
        5 => nf * (nf - 4.0) / (2.0 * dim),
        _ => nf / (12.0 * dim) * ((nf + 1.0) * (nf - 1.0) - 18.0),
    }
}

/// Printed `Var Tr T_n(W) = n/4 - n(n+1)/(2N)`; pass `f64::INFINITY` for the limit.
pub fn variance_formula(n: usize, dim: f64) -> f64 {
    let nf = n as f64;
    nf / 4.0 - nf * (nf + 1.0) / (2.0 * dim)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CovarianceFormula {
    /// Odd `n - m`: the phases can never cancel.
    Zero,
    /// `Cov(y_n, y_m) = nm / N^3` for even `|n - m| >= 6`.
    Value(f64),
    /// Even `|n - m| < 6` (including `n = m`): no closed form.
    NotCovered,
}

pub fn covariance_formula(n: usize, m: usize, dim: f64) -> CovarianceFormula {
    let gap = n.abs_diff(m);
    if gap % 2 == 1 {
        CovarianceFormula::Zero
    } else if gap >= 6 {
        CovarianceFormula::Value((n * m) as f64 / dim.powi(3))
    } else {
        CovarianceFormula::NotCovered
    }
}
