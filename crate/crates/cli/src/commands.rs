use std::error::Error;

use rayon::prelude::*;
use umelab::brownian::{drift_diffusion_report, gaussianity_report, generator_survey, sample_f_vectors, wasserstein_to_gaussian, MotionConfig};
use umelab::density::{gue_finite_density, linspace, semicircle, ume_mean_density, DensityHistogram};
use umelab::ensemble::{build_gue, build_ume, sample_phases, scale_divisor, PhaseConfiguration, SeedSpec};
use umelab::formfactor::{form_factor_gue, form_factor_series, plateau_normalize, rms_to_gue};
use umelab::mcharness::{run_ensemble, RunConfig};
use umelab::nbwalks::{bass_comparison, enumerate_nbw, enumerate_zero_phase_walks, hashimoto};
use umelab::spectral::{eigenvalues, gue_moment, spectral_moment, Centering};
use umelab::{LabError, C64};

use crate::config::{Effective, Options};
use crate::output::{Check, ExperimentResult, Plot, Series, Style, Table};

pub type CmdResult = Result<ExperimentResult, Box<dyn Error>>;

pub fn defaults(command: &str) -> Options {
    let o = |n_dim: usize, replicas: u64| Options { n_dim: Some(n_dim), replicas: Some(replicas), ..Default::default() };
    match command {
        "moments" => o(5, 100_000),
        "density" => o(10, 20_000),
        "formfactor" => o(20, 100_000),
        "walks" => o(4, 100_000),
        "bass" => o(8, 10),
        "brownian" => o(20, 400),
        "gaussianity" => o(40, 10_000),
        _ => Options::default(),
    }
}

/// UME statistics need the scaled matrix, hence `N >= 3`.
fn require_ume(n_dim: usize) -> Result<(), LabError> {
    scale_divisor(n_dim).map(|_| ())
}

fn run_config(cfg: &Effective, n_dim: usize, statistic: &str) -> RunConfig {
    let mut rc = RunConfig::new(n_dim, cfg.replicas, cfg.seed, statistic);
    rc.workers = cfg.workers;
    rc
}

pub fn moments(cfg: &Effective) -> CmdResult {
    require_ume(cfg.n_dim)?;
    let mut res = ExperimentResult::new("moments", cfg);
    let n = cfg.n_dim;
    let est = run_ensemble(&run_config(cfg, n, "ume_traces"), 2, |s| {
        let spec = eigenvalues(&build_ume(&sample_phases(n, s)?))?;
        Ok(vec![spectral_moment(&spec, 2) * n as f64, spectral_moment(&spec, 4) * n as f64])
    })?;
    let nf = n as f64;
    let mut ume = Table::new("ume", &["k", "sampled", "stderr", "closed_form", "walk_count"]);
    let closed = [nf * (nf - 1.0), 2.0 * nf.powi(3) - 3.0 * nf * nf + nf];
    let counted = [nf * (nf - 1.0), nf * (nf - 1.0) * (2.0 * nf - 3.0)];
    for (i, k) in [2.0, 4.0].into_iter().enumerate() {
        ume.push(vec![k, est.mean[i], est.stderr[i], closed[i], counted[i]]);
    }
    res.checks.push(Check::within("Tr M^2 = N(N-1)", est.mean[0], closed[0], 1e-9 * closed[0]));
    res.checks.push(Check::within("<Tr M^4> = 2N^3 - 3N^2 + N (3 sigma)", est.mean[1], closed[1], 3.0 * est.stderr[1]));
    res.notes.push(format!(
        "direct count of cancelling length-4 walks gives N(N-1)(2N-3) = {}; sampled {:.3} +- {:.3}",
        counted[1], est.mean[1], est.stderr[1]
    ));

    let g = cfg.gue_dim;
    let gest = run_ensemble(&run_config(cfg, g, "gue_moments"), 5, |s| {
        let spec = eigenvalues(&build_gue(g, s)?)?;
        Ok((1..=5u32).map(|k| spectral_moment(&spec, 2 * k) / (g as f64).powi(k as i32)).collect())
    })?;
    let mut gue = Table::new("gue", &["k", "sampled", "stderr", "recurrence"]);
    for k in 1..=5u32 {
        let i = (k - 1) as usize;
        let want = gue_moment(k, g as f64);
        gue.push(vec![k as f64, gest.mean[i], gest.stderr[i], want]);
        res.checks.push(Check::within(format!("GUE m_{k} at N={g} (3 sigma)"), gest.mean[i], want, 3.0 * gest.stderr[i]));
    }
    res.tables.extend([ume, gue]);
    Ok(res)
}

pub fn density(cfg: &Effective) -> CmdResult {
    require_ume(cfg.n_dim)?;
    let mut res = ExperimentResult::new("density", cfg);
    let n = cfg.n_dim;
    if cfg.replicas == 0 {
        return Err(Box::new(LabError::Domain("need at least one replica".into())));
    }
    let spectra: Vec<Vec<f64>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| Ok(eigenvalues(&build_ume(&sample_phases(n, SeedSpec::new(cfg.seed, r))?))?.scaled))
        .collect::<umelab::Result<_>>()?;
    let samples = spectra.concat();
    let hist = DensityHistogram::from_samples(&samples, DensityHistogram::default_width(cfg.replicas), cfg.replicas)?;
    let d_mean = hist.l1_distance(|x| ume_mean_density(x, n), -0.8, 0.8);
    let d_semi = hist.l1_distance(semicircle, -0.8, 0.8);
    res.checks.push(Check::flag("L1(hist, mean density) < L1(hist, semicircle) on [-0.8, 0.8]", d_mean < d_semi));
    res.notes.push(format!("L1 to mean density {d_mean:.6}, to semicircle {d_semi:.6}"));

    let mut ht = Table::new("histogram", &["left", "right", "height"]);
    for (e, h) in hist.edges.windows(2).zip(&hist.heights) {
        ht.push(vec![e[0], e[1], *h]);
    }
    let xs = linspace(-1.0, 1.0, 401);
    let mut curves = Table::new("curves", &["eps", "mean_density", "semicircle", "gue_finite_n"]);
    for &x in &xs {
        // GUE on the same axis: x_gue = 2 eps
        curves.push(vec![x, ume_mean_density(x, n), semicircle(x), 2.0 * gue_finite_density(2.0 * x, n)]);
    }
    let mut hx = vec![hist.edges[0]];
    let mut hy = vec![0.0];
    for (e, h) in hist.edges.windows(2).zip(&hist.heights) {
        hx.push(e[0]);
        hy.push(*h);
        hx.push(e[1]);
        hy.push(*h);
    }
    res.plots.push(Plot {
        name: "figure".into(),
        title: format!("Eigenvalue density, N = {n}, {} realizations", cfg.replicas),
        x_label: "eps".into(),
        y_label: "density".into(),
        series: vec![
            Series { label: "histogram".into(), x: hx, y: hy, style: Style::Line },
            Series { label: "mean density".into(), x: xs.clone(), y: curves.column("mean_density"), style: Style::Line },
            Series { label: "semicircle".into(), x: xs.clone(), y: curves.column("semicircle"), style: Style::Line },
            Series { label: "GUE finite N".into(), x: xs, y: curves.column("gue_finite_n"), style: Style::Line },
        ],
    });
    res.tables.extend([ht, curves]);
    Ok(res)
}

pub fn formfactor(cfg: &Effective) -> CmdResult {
    require_ume(cfg.n_dim)?;
    let mut res = ExperimentResult::new("formfactor", cfg);
    let n = cfg.n_dim;
    if cfg.t_max < 3 * n {
        return Err(Box::new(LabError::Domain(format!("t_max must reach the plateau window (2N, 3N], i.e. at least {}", 3 * n))));
    }
    let series = form_factor_series(&run_config(cfg, n, "form_factor"), cfg.t_max)?;
    let (normalized, factor) = plateau_normalize(&series.connected, n)?;
    let t_cmp = (2 * n).min(cfg.t_max);
    let rms = rms_to_gue(&normalized, n, t_cmp);
    res.checks.push(Check::below(format!("RMS(normalized K2 - K2_GUE) over t <= {t_cmp}"), rms, 0.1));
    for t in 1..=12.min(cfg.t_max) {
        let (a, b) = (series.verbatim[t - 1], series.y_relation[t - 1]);
        res.checks.push(Check::within(
            format!("t={t}: verbatim vs y-relation (3 combined sigma)"),
            a.value,
            b.value,
            3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt(),
        ));
    }
    res.notes.push(format!("retained {} replicas, discarded {} ({:.3}%) as non-Ramanujan", series.retained, series.discarded, 100.0 * series.discard_fraction()));
    res.notes.push(format!("plateau normalization factor {factor:.6} (mean of the connected estimate over t in (2N, 3N])"));

    let mut table = Table::new(
        "series",
        &["t", "tau", "k2_normalized", "k2_gue", "connected", "connected_se", "raw", "raw_se", "verbatim", "y_relation", "y_relation_se", "path_difference", "path_difference_se"],
    );
    for (i, &t) in series.t.iter().enumerate() {
        let tau = t as f64 / n as f64;
        table.push(vec![
            t as f64,
            tau,
            normalized[i],
            form_factor_gue(tau),
            series.connected[i].value,
            series.connected[i].stderr,
            series.raw[i].value,
            series.raw[i].stderr,
            series.verbatim[i].value,
            series.y_relation[i].value,
            series.y_relation[i].stderr,
            series.path_difference[i].value,
            series.path_difference[i].stderr,
        ]);
    }
    let ts = table.column("t");
    res.plots.push(Plot {
        name: "figure".into(),
        title: format!("Form factor, N = {n}"),
        x_label: "t".into(),
        y_label: "K2".into(),
        series: vec![
            Series { label: "empirical (plateau normalized)".into(), x: ts.clone(), y: normalized, style: Style::Points },
            Series { label: "GUE".into(), x: ts, y: table.column("k2_gue"), style: Style::Line },
        ],
    });
    res.tables.push(table);
    Ok(res)
}

pub fn walks(cfg: &Effective) -> CmdResult {
    require_ume(cfg.n_dim)?;
    let mut res = ExperimentResult::new("walks", cfg);
    let n = cfg.n_dim;
    let mut counts = Table::new("counts", &["n_dim", "length", "nbw_count", "trace_y0", "zero_phase_count"]);
    let mut exact = true;
    for nd in 3..=n.min(5) {
        let traces = hashimoto(&PhaseConfiguration::zeros(nd)?)?.trace_powers(8);
        for len in 1..=8 {
            let c = enumerate_nbw(nd, len)?.count;
            let z = enumerate_zero_phase_walks(nd, len)?.count;
            exact &= (traces[len].re - c as f64).abs() < 1e-6;
            counts.push(vec![nd as f64, len as f64, c as f64, traces[len].re, z as f64]);
        }
    }
    res.checks.push(Check::flag(format!("enumerated counts equal Tr Y(0)^n for N <= {}, n <= 8", n.min(5)), exact));

    let short = (1..=8).map(|len| enumerate_zero_phase_walks(n, len).map(|t| t.count)).collect::<umelab::Result<Vec<_>>>()?;
    res.checks.push(Check::flag(format!("no cancelling walks of length <= 8 at N={n}"), short.iter().all(|&c| c == 0)));

    let len = cfg.length;
    let zero = enumerate_zero_phase_walks(n, len)?.count as f64;
    let est = run_ensemble(&run_config(cfg, n, "trace_y"), 1, |s| Ok(vec![hashimoto(&sample_phases(n, s)?)?.trace_power(len).re]))?;
    res.checks.push(Check::within(format!("zero-phase count ({n},{len}) vs <Tr Y^{len}> (3 sigma)"), est.mean[0], zero, 3.0 * est.stderr[0]));
    let mut mc = Table::new("monte_carlo", &["n_dim", "length", "zero_phase_count", "sampled_trace", "stderr"]);
    mc.push(vec![n as f64, len as f64, zero, est.mean[0], est.stderr[0]]);
    res.tables.extend([counts, mc]);
    Ok(res)
}

pub const BASS_ETAS: [(f64, f64); 5] = [(0.3, 0.7), (-1.1, 0.2), (0.5, -0.9), (1.7, 1.3), (-0.4, -0.6)];

pub fn bass(cfg: &Effective) -> CmdResult {
    let mut res = ExperimentResult::new("bass", cfg);
    let mut table = Table::new("residuals", &["n_dim", "draws", "max_residual", "overflowed"]);
    let mut worst = 0.0_f64;
    for n in 3..=cfg.n_dim.max(3) {
        let mut max_r = 0.0_f64;
        let mut over = 0u32;
        for r in 0..cfg.replicas {
            let phi = sample_phases(n, SeedSpec::new(cfg.seed, (n as u64) << 32 | r))?;
            for (re, im) in BASS_ETAS {
                let c = bass_comparison(&phi, C64::new(re, im))?;
                max_r = max_r.max(c.residual);
                over += c.overflow as u32;
            }
        }
        worst = worst.max(max_r);
        table.push(vec![n as f64, cfg.replicas as f64, max_r, over as f64]);
    }
    res.checks.push(Check::within("max Bass residual", worst, 0.0, 1e-8));
    res.tables.push(table);
    Ok(res)
}

pub fn brownian(cfg: &Effective) -> CmdResult {
    require_ume(cfg.n_dim)?;
    let mut res = ExperimentResult::new("brownian", cfg);
    let n = cfg.n_dim;
    let ns = [3usize, 4, 5];
    let motion = MotionConfig { delta_s: cfg.delta_s, replicas: cfg.replicas as usize, horizon_steps: 1, seed: SeedSpec::new(cfg.seed, 0), centering: Centering::ClosedForm };
    let report = drift_diffusion_report(n, &ns, cfg.configurations, &motion)?;
    let mut slopes = Table::new("slopes", &["n", "slope", "stderr", "target"]);
    for (i, &k) in ns.iter().enumerate() {
        let s = report.slopes[i];
        let target = -(k as f64);
        slopes.push(vec![k as f64, s.value, s.stderr, target]);
        res.checks.push(Check::within(format!("drift slope n={k} within 10%"), s.value, target, 0.1 * k as f64));
    }

    let survey = generator_survey(n, &ns, 40 * cfg.configurations, cfg.seed ^ 0x5eed, Centering::ClosedForm)?;
    let mut diffusion = Table::new("diffusion", &["n", "m", "monte_carlo", "monte_carlo_se", "exact_generator", "exact_generator_se", "target"]);
    for i in 0..ns.len() {
        for j in i..ns.len() {
            let (mc, ex) = (report.diffusion_at(i, j), survey.diffusion(i, j));
            let target = if i == j { (ns[i] * ns[i]) as f64 / 2.0 } else { 0.0 };
            diffusion.push(vec![ns[i] as f64, ns[j] as f64, mc.value, mc.stderr, ex.value, ex.stderr, target]);
            if i == j {
                res.checks.push(Check::within(format!("diffusion ({0},{0}) within 10%", ns[i]), ex.value, target, 0.1 * target));
            } else {
                res.checks.push(Check::within(format!("diffusion ({},{}) zero (3 sigma)", ns[i], ns[j]), ex.value, 0.0, 3.0 * ex.stderr));
            }
        }
    }
    res.notes.push(format!("diffusion verdicts use the exact generator averaged over {} configurations", survey.samples));

    let mut rem = Table::new("remainders", &["n_dim", "n", "m", "mean_abs_remainder", "stderr"]);
    let samples = 20 * cfg.configurations;
    let (a, b) = (generator_survey(n, &[6], samples, cfg.seed + 1, Centering::ClosedForm)?, generator_survey(2 * n, &[6], samples, cfg.seed + 2, Centering::ClosedForm)?);
    let (ra, rb) = (a.mean_abs_drift_remainder[0], b.mean_abs_drift_remainder[0]);
    rem.push(vec![n as f64, 6.0, 0.0, ra.value, ra.stderr]);
    rem.push(vec![(2 * n) as f64, 6.0, 0.0, rb.value, rb.stderr]);
    res.checks.push(Check::within(format!("<|R_6|> ratio N={n} to N={}", 2 * n), ra.value / rb.value, 2.0, 0.5));
    let (c, d) = (generator_survey(n, &[3], samples, cfg.seed + 3, Centering::ClosedForm)?, generator_survey(4 * n, &[3], samples.min(300), cfg.seed + 4, Centering::ClosedForm)?);
    let (rc, rd) = (c.diffusion_remainder(0, 0), d.diffusion_remainder(0, 0));
    rem.push(vec![n as f64, 3.0, 3.0, rc.value, rc.stderr]);
    rem.push(vec![(4 * n) as f64, 3.0, 3.0, rd.value, rd.stderr]);
    let ratio = rc.value / rd.value;
    res.checks.push(Check::within(format!("<|R_33|> ratio N={n} to N={}", 4 * n), ratio, 2f64.sqrt(), 0.25 * 2f64.sqrt()));
    res.tables.extend([slopes, diffusion, rem]);
    Ok(res)
}

pub fn gaussianity(cfg: &Effective) -> CmdResult {
    require_ume(cfg.n_dim)?;
    let mut res = ExperimentResult::new("gaussianity", cfg);
    let n = cfg.n_dim;
    let ns = [3usize, 4, 5, 6];
    let samples = sample_f_vectors(n, &ns, cfg.replicas as usize, cfg.seed, Centering::ClosedForm)?;
    let rep = gaussianity_report(&samples, &ns)?;
    let mut comps = Table::new(
        "components",
        &["n", "mean", "mean_se", "variance", "variance_se", "skewness", "skewness_se", "excess_kurtosis", "kurtosis_se", "wasserstein"],
    );
    for c in &rep.components {
        let m = c.moments;
        let k = c.n as f64;
        comps.push(vec![k, m.mean.value, m.mean.stderr, m.variance.value, m.variance.stderr, m.skewness.value, m.skewness.stderr, m.excess_kurtosis.value, m.excess_kurtosis.stderr, c.wasserstein]);
        res.checks.push(Check::within(format!("F_{} mean zero (3 sigma)", c.n), m.mean.value, 0.0, 3.0 * m.mean.stderr));
        res.checks.push(Check::within(format!("F_{} variance n/4 with finite-N allowance", c.n), m.variance.value, k / 4.0, 3.0 * m.variance.stderr + k * (k + 1.0) / (2.0 * n as f64)));
        res.checks.push(Check::within(format!("F_{} excess kurtosis", c.n), m.excess_kurtosis.value, 0.0, 0.1 + 3.0 * m.excess_kurtosis.stderr));
    }
    let mut cross = Table::new("cross_covariances", &["n", "m", "covariance", "stderr"]);
    for (a, b, e) in &rep.cross_covariances {
        cross.push(vec![*a as f64, *b as f64, e.value, e.stderr]);
    }
    let sizes = [n / 4, n / 2, n];
    let mut trend = Table::new("wasserstein_trend", &["n_dim", "wasserstein_f3"]);
    let mut w = Vec::new();
    for &nd in &sizes {
        let s = sample_f_vectors(nd.max(3), &[3], cfg.replicas as usize, cfg.seed + nd as u64, Centering::ClosedForm)?;
        let d = wasserstein_to_gaussian(&s.iter().map(|v| v[0]).collect::<Vec<_>>(), 0.75)?;
        trend.push(vec![nd as f64, d]);
        w.push(d);
    }
    res.checks.push(Check::flag(format!("d_W(F_3) strictly decreasing over N = {sizes:?}"), w.windows(2).all(|p| p[1] < p[0])));
    res.plots.push(Plot {
        name: "wasserstein".into(),
        title: "Wasserstein-1 distance of F_3 to N(0, 3/4)".into(),
        x_label: "N".into(),
        y_label: "d_W".into(),
        series: vec![Series { label: "F_3".into(), x: trend.column("n_dim"), y: w, style: Style::Line }],
    });
    res.tables.extend([comps, cross, trend]);
    Ok(res)
}
