use umelab::ensemble::{build_ume, sample_phases};
use umelab::mcharness::{covariance_estimate, run_ensemble, RunConfig};
use umelab::nbwalks::{covariance_formula, enumerate_retracing_pairs, CovarianceFormula};
use umelab::spectral::{centered_chebyshev, eigenvalues, spectral_moment, y_n, Centering};

#[test]
fn fourth_moment_matches_direct_count() {
    // closed length-4 walks with vanishing mean phase: N(N-1)(2N-3)
    let n = 5usize;
    let cfg = RunConfig::new(n, 100_000, 50, "n_tau4");
    let est = run_ensemble(&cfg, 1, |s| Ok(vec![n as f64 * spectral_moment(&eigenvalues(&build_ume(&sample_phases(n, s)?))?, 4)])).unwrap();
    let want = (n * (n - 1) * (2 * n - 3)) as f64;
    assert!((est.mean[0] - want).abs() < 3.0 * est.stderr[0], "{} +- {} vs {want}", est.mean[0], est.stderr[0]);
}

#[test]
fn odd_gap_covariance_vanishes() {
    let n = 12usize;
    let cfg = RunConfig::new(n, 50_000, 51, "y3_y4");
    let est = covariance_estimate(&cfg, 2, |s| {
        let spec = eigenvalues(&build_ume(&sample_phases(n, s)?))?;
        Ok(vec![y_n(&spec, 3)?, y_n(&spec, 4)?])
    })
    .unwrap();
    let (c, se) = est.covariance.unwrap().get(0, 1);
    assert_eq!(covariance_formula(4, 3, n as f64), CovarianceFormula::Zero);
    assert!(c.abs() < 3.0 * se, "{c} +- {se}");
}

#[test]
fn y9_y3_covariance_matches_enumeration() {
    let n = 24usize;
    let nf = n as f64;
    let pairs = 9.0 * nf * (nf - 1.0) * (nf - 2.0) * (nf - 3.0);
    assert_eq!(enumerate_retracing_pairs(6, 9, 3).unwrap().count, 3240);
    // Cov(y_9, y_3) = Cov(Tr Y^9, Tr Y^3) / (N^2 (N-2)^6)
    let want = pairs / (nf * nf * (nf - 2.0).powi(6));
    let cfg = RunConfig::new(n, 100_000, 52, "y9_y3");
    let est = covariance_estimate(&cfg, 2, |s| {
        let spec = eigenvalues(&build_ume(&sample_phases(n, s)?))?;
        Ok(vec![y_n(&spec, 9)?, y_n(&spec, 3)?])
    })
    .unwrap();
    let (c, se) = est.covariance.unwrap().get(0, 1);
    assert!((c - want).abs() < 3.0 * se, "{c} +- {se} vs {want}");
}

#[test]
fn f3_variance_matches_exact_count() {
    // Var Tr T_3(W) = 3 N (N-1) / (4 (N-2)^2)
    let n = 20usize;
    let nf = n as f64;
    let cfg = RunConfig::new(n, 100_000, 53, "f3");
    let est = run_ensemble(&cfg, 2, |s| {
        let f = centered_chebyshev(&eigenvalues(&build_ume(&sample_phases(n, s)?))?, 3, Centering::ClosedForm)?;
        Ok(vec![f, f * f])
    })
    .unwrap();
    let q = est.count as f64;
    let v = est.jackknife(|m| (m[1] - m[0] * m[0]) * q / (q - 1.0));
    let want = 3.0 * nf * (nf - 1.0) / (4.0 * (nf - 2.0).powi(2));
    assert!((v.value - want).abs() < 3.0 * v.stderr, "{} +- {} vs {want}", v.value, v.stderr);
}
