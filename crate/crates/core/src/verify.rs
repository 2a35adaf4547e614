//! Verification suites: each acceptance criterion as a function returning a
//! pass/fail report, grouped into the named suites of the command line.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{params_from_h, KernelError};
use crate::moments::{
    bessel_product_identity, bessel_product_identity_lhs, cov_hermite, cumulant_limit_rosenblatt,
    cumulant_rosenblatt, relative_error, verify_scaling, verify_stationarity, MomentsError, Report,
    ReportRow,
};
use crate::quadrature::QuadratureSpec;
use crate::regress::{consistency_experiment, ExperimentConfig, RegressError};
use crate::simulate::{
    fbm_paths, k_statistics, simulate_tempered_rosenblatt, ChaosGrid, ChaosGridConfig, SimulateError,
};
use crate::specfun::{bessel_k, bessel_k_smallarg, BesselOrder, SpecfunError};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("unknown suite '{0}'")]
    UnknownSuite(String),
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Regress(#[from] RegressError),
}

pub type Result<T> = std::result::Result<T, VerifyError>;

/// Seed of every Monte Carlo criterion.
pub const VERIFY_SEED: u64 = 20240601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: usize,
    pub title: String,
    pub report: Report,
    pub seconds: f64,
    pub runtime_limit: Option<f64>,
}

impl CriterionOutcome {
    pub fn within_runtime(&self) -> bool {
        self.runtime_limit.is_none_or(|l| self.seconds <= l)
    }

    pub fn pass(&self) -> bool {
        self.report.pass() && self.within_runtime()
    }

    /// `PASS criterion 3 (title) 1.2s` style summary line.
    pub fn summary_line(&self) -> String {
        let failed: Vec<&str> = self
            .report
            .rows
            .iter()
            .filter(|r| !r.pass)
            .map(|r| r.name.as_str())
            .collect();
        let mut line = format!(
            "{} criterion {:>2} ({}) {:.1}s",
            if self.pass() { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.seconds
        );
        if let Some(limit) = self.runtime_limit {
            line.push_str(&format!(" [limit {limit}s]"));
        }
        if !failed.is_empty() {
            line.push_str(&format!(" failing: {}", failed.join("; ")));
        }
        if !self.within_runtime() {
            line.push_str(" runtime exceeded");
        }
        line
    }
}

fn timed(id: usize, title: &str, limit: Option<f64>, f: impl FnOnce() -> Result<Report>) -> Result<CriterionOutcome> {
    let start = Instant::now();
    let report = f()?;
    Ok(CriterionOutcome {
        id,
        title: title.to_string(),
        report,
        seconds: start.elapsed().as_secs_f64(),
        runtime_limit: limit,
    })
}

fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { hi } else { lo * (r * i as f64).exp() }).collect()
}

/// Pair-kernel identity against one-dimensional quadrature on 36 points.
pub fn criterion_1() -> Result<CriterionOutcome> {
    timed(1, "pair-kernel identity", Some(10.0), || {
        let spec = QuadratureSpec {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            ..QuadratureSpec::default()
        };
        let mut pts = Vec::new();
        for tau in [0.3, 0.375, 0.45] {
            for lambda in [0.1, 1.0, 10.0] {
                for gap in [0.01, 0.1, 1.0, 5.0] {
                    pts.push((tau, lambda, gap));
                }
            }
        }
        let rows: Vec<Result<ReportRow>> = pts
            .par_iter()
            .map(|&(tau, lambda, gap)| {
                let rhs = bessel_product_identity(tau, lambda, gap, 0.0)?;
                let lhs = bessel_product_identity_lhs(tau, lambda, gap, 0.0, &spec)?;
                Ok(ReportRow::new(
                    format!("tau={tau} lambda={lambda} gap={gap}"),
                    lhs.value,
                    rhs,
                    1e-6,
                ))
            })
            .collect();
        let mut report = Report::new("pair-kernel identity");
        for r in rows {
            report.push(r?);
        }
        Ok(report)
    })
}

/// Half-order closed form and the small-argument ratio.
pub fn criterion_2() -> Result<CriterionOutcome> {
    timed(2, "Bessel closed form and small argument", Some(1.0), || {
        let mut report = Report::new("Bessel K");
        let half = BesselOrder::new(0.5)?;
        for x in geomspace(0.01, 20.0, 20) {
            let closed = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp();
            report.push(ReportRow::new(format!("K_1/2({x:.5})"), bessel_k(half, x)?, closed, 1e-9));
        }
        for nu in [0.125, 0.25] {
            let order = BesselOrder::new(nu)?;
            let x = 1e-6;
            let ratio = bessel_k(order, x)? / bessel_k_smallarg(order, x)?;
            report.push(ReportRow::new(format!("small-argument ratio nu={nu} x=1e-6"), ratio, 1.0, 0.01));
        }
        Ok(report)
    })
}

fn criterion_3_grid() -> Vec<(f64, f64)> {
    let mut v = Vec::new();
    for h in [0.6, 0.75, 0.9] {
        for lambda in [0.5, 1.0] {
            v.push((h, lambda));
        }
    }
    v
}

/// Second cumulant against the covariance.
pub fn criterion_3() -> Result<CriterionOutcome> {
    timed(3, "variance-cumulant consistency", Some(60.0), || {
        let spec = QuadratureSpec::default();
        let rows: Vec<Result<ReportRow>> = criterion_3_grid()
            .par_iter()
            .map(|&(h, lambda)| {
                let p = params_from_h(2, h, lambda)?;
                let c2 = cumulant_rosenblatt(1.0, 2, &p, &spec)?;
                let v = cov_hermite(1.0, 1.0, &p, &spec)?;
                Ok(ReportRow::new(format!("H={h} lambda={lambda}"), c2, v, 1e-4))
            })
            .collect();
        let mut report = Report::new("C_2(1) vs cov(1, 1)");
        for r in rows {
            report.push(r?);
        }
        Ok(report)
    })
}

/// Scaling of the covariance and the third cumulant.
pub fn criterion_4() -> Result<CriterionOutcome> {
    timed(4, "scaling law", Some(300.0), || {
        let p = params_from_h(2, 0.75, 1.0)?;
        let spec = QuadratureSpec::default();
        let cum_spec = QuadratureSpec {
            rel_tol: 1e-5,
            ..spec
        };
        let reports: Vec<Result<Report>> = [0.5, 2.0, 10.0]
            .par_iter()
            .map(|&c| {
                let mut r = verify_scaling(&p, c, 1.0, &[], &spec)?;
                let cum = verify_scaling(&p, c, 1.0, &[3], &cum_spec)?;
                r.rows.extend(cum.rows.into_iter().filter(|row| row.name.starts_with("cumulant")));
                Ok(r)
            })
            .collect();
        let mut report = Report::new("scaling");
        for r in reports {
            report.rows.extend(r?.rows);
        }
        Ok(report)
    })
}

/// Increment variance does not depend on the starting time.
pub fn criterion_5() -> Result<CriterionOutcome> {
    timed(5, "stationarity", None, || {
        let p = params_from_h(2, 0.75, 1.0)?;
        Ok(verify_stationarity(
            &p,
            &[(0.5, 1.0), (2.0, 1.0), (5.0, 1.0)],
            &QuadratureSpec::default(),
        )?)
    })
}

/// Cumulant gaps to the untempered limit along decreasing lambda.
pub fn criterion_6() -> Result<CriterionOutcome> {
    timed(6, "lambda -> 0 limit", Some(600.0), || {
        let h = 0.75;
        let lambdas = [1.0, 0.3, 0.1, 0.03, 0.01];
        let spec = QuadratureSpec {
            rel_tol: 1e-6,
            ..QuadratureSpec::default()
        };
        let mut report = Report::new("limit cumulants");
        for m in [2usize, 3] {
            let d = params_from_h(2, h, 1.0)?.d();
            let limit = cumulant_limit_rosenblatt(1.0, m, d, &spec)?;
            let values: Vec<Result<f64>> = lambdas
                .par_iter()
                .map(|&l| Ok(cumulant_rosenblatt(1.0, m, &params_from_h(2, h, l)?, &spec)?))
                .collect();
            let mut gaps = Vec::new();
            for (l, v) in lambdas.iter().zip(values) {
                let v = v?;
                gaps.push((v - limit.value).abs());
                report.notes.push(format!(
                    "m={m} lambda={l}: C_m = {v:.10e}, limit = {:.10e}, relative gap {:.4}",
                    limit.value,
                    (v - limit.value).abs() / limit.value
                ));
            }
            for (i, w) in gaps.windows(2).enumerate() {
                report.push(ReportRow::with_pass(
                    format!("m={m} gap decreases {} -> {}", lambdas[i], lambdas[i + 1]),
                    w[1],
                    w[0],
                    0.0,
                    w[1] < w[0],
                ));
            }
            let last = *gaps.last().unwrap();
            report.push(ReportRow::with_pass(
                format!("m={m} gap at lambda=0.01 below 5% of limit"),
                last / limit.value,
                0.05,
                0.05,
                last / limit.value < 0.05,
            ));
        }
        Ok(report)
    })
}

/// Discrete trace cumulants at `n_right = 256`, with one refinement.
pub fn criterion_7() -> Result<CriterionOutcome> {
    timed(7, "discrete-chaos trace oracle", None, || {
        let p = params_from_h(2, 0.75, 1.0)?;
        let spec = QuadratureSpec::default();
        let exact = [cov_hermite(1.0, 1.0, &p, &spec)?, cumulant_rosenblatt(1.0, 3, &p, &spec)?];
        let grids: Vec<Result<ChaosGrid>> = [256usize, 512]
            .par_iter()
            .map(|&m| {
                let cfg = ChaosGridConfig {
                    n_right: m,
                    ..ChaosGridConfig::default()
                };
                Ok(ChaosGrid::new(&p, &cfg)?)
            })
            .collect();
        let grids: Vec<ChaosGrid> = grids.into_iter().collect::<Result<_>>()?;
        let mut report = Report::new("discrete cumulants");
        let rate = 4.0 * p.d() - 1.0;
        for (j, m) in [2usize, 3].into_iter().enumerate() {
            let coarse = grids[0].discrete_cumulant(1.0, m)?;
            let fine = grids[1].discrete_cumulant(1.0, m)?;
            report.push(ReportRow::new(format!("m={m} M=256"), coarse, exact[j], 0.01));
            let (ec, ef) = (relative_error(coarse, exact[j]), relative_error(fine, exact[j]));
            report.push(ReportRow::with_pass(
                format!("m={m} refinement to M=512 reduces the error"),
                ef,
                ec,
                0.0,
                ef < ec,
            ));
            let g = 2f64.powf(rate);
            let extrapolated = (g * fine - coarse) / (g - 1.0);
            report.notes.push(format!(
                "m={m}: M=256 {coarse:.8e} ({:+.3}%), M=512 {fine:.8e} ({:+.3}%), \
                 Richardson with exponent 4d-1: {extrapolated:.8e} ({:+.4}%)",
                100.0 * (coarse / exact[j] - 1.0),
                100.0 * (fine / exact[j] - 1.0),
                100.0 * (extrapolated / exact[j] - 1.0)
            ));
        }
        Ok(report)
    })
}

/// Monte Carlo variance and third cumulant at `n_right = 512`.
pub fn criterion_8() -> Result<CriterionOutcome> {
    timed(8, "simulation moments", Some(600.0), || {
        let p = params_from_h(2, 0.75, 1.0)?;
        let spec = QuadratureSpec::default();
        let grid = ChaosGrid::new(&p, &ChaosGridConfig::default())?;
        let reps = 20_000;
        let paths = simulate_tempered_rosenblatt(&[0.0, 1.0], &p, &grid, reps, VERIFY_SEED)?;
        let ks = k_statistics(&paths.column(1), 3)?;
        let mut report = Report::new("simulated moments");
        for (m, exact) in [(2usize, cov_hermite(1.0, 1.0, &p, &spec)?), (3, cumulant_rosenblatt(1.0, 3, &p, &spec)?)] {
            let k = ks[m - 1];
            let discrete = grid.discrete_cumulant(1.0, m)?;
            let bias = discrete - exact;
            let band = 4.0 * k.se + bias.abs();
            report.push(ReportRow::with_pass(
                format!("k{m} within 4 SE plus bias"),
                k.estimate,
                exact,
                band,
                (k.estimate - exact).abs() <= band,
            ));
            report.push(ReportRow::with_pass(
                format!("m={m} discretization bias below 2%"),
                discrete,
                exact,
                0.02,
                relative_error(discrete, exact) < 0.02,
            ));
            report.notes.push(format!(
                "k{m} = {:.6e} +- {:.3e} (SE), discrete {discrete:.6e}, analytic {exact:.6e}",
                k.estimate, k.se
            ));
        }
        Ok(report)
    })
}

/// fBm sample covariance on a 16-point grid.
pub fn criterion_9() -> Result<CriterionOutcome> {
    timed(9, "fBm covariance", None, || {
        let reps = 10_000;
        let mut report = Report::new("fBm covariance");
        for h in [0.5, 0.7] {
            let paths = fbm_paths(17, h, 1.0, reps, VERIFY_SEED)?;
            let cols: Vec<Vec<f64>> = (1..17).map(|j| paths.column(j)).collect();
            let mut worst: f64 = 0.0;
            for i in 0..16 {
                for j in i..16 {
                    let (t, s) = (paths.times[i + 1], paths.times[j + 1]);
                    let exact = 0.5 * (t.powf(2.0 * h) + s.powf(2.0 * h) - (t - s).abs().powf(2.0 * h));
                    let prod: Vec<f64> = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).collect();
                    let (mean, se) = crate::simulate::mean_and_se(&prod);
                    worst = worst.max((mean - exact).abs() / se);
                }
            }
            report.push(ReportRow::with_pass(
                format!("H={h} largest |z| over 136 entries"),
                worst,
                4.0,
                4.0,
                worst <= 4.0,
            ));
        }
        Ok(report)
    })
}

/// Regression consistency across sample sizes.
pub fn criterion_10() -> Result<CriterionOutcome> {
    timed(10, "regression consistency", Some(1200.0), || {
        let cfg = ExperimentConfig::default();
        let run = consistency_experiment(&cfg)?;
        let mut report = Report::new("regression");
        let last = *cfg.ns.last().unwrap();
        for (x, medians) in run.medians_by_x() {
            let mono = medians.windows(2).all(|w| w[1] < w[0]);
            report.push(ReportRow::with_pass(
                format!("x={x} medians decrease over n"),
                medians[medians.len() - 1],
                medians[0],
                0.0,
                mono,
            ));
            let m = medians[medians.len() - 1];
            report.push(ReportRow::with_pass(
                format!("x={x} median at n={last} below 0.1"),
                m,
                0.1,
                0.1,
                m < 0.1,
            ));
            report.notes.push(format!("x={x}: medians {medians:?}"));
        }
        Ok(report)
    })
}

pub const SUITES: [&str; 9] = [
    "specfun",
    "lemma-int",
    "covariance",
    "cumulants",
    "scaling",
    "stationarity",
    "limit",
    "simulation",
    "regression",
];

/// Criteria run by a named suite.
pub fn suite_criteria(name: &str) -> Result<Vec<usize>> {
    Ok(match name {
        "specfun" => vec![2],
        "lemma-int" => vec![1],
        "covariance" => vec![3],
        "cumulants" => vec![7],
        "scaling" => vec![4],
        "stationarity" => vec![5],
        "limit" => vec![6],
        "simulation" => vec![8, 9],
        "regression" => vec![10],
        other => return Err(VerifyError::UnknownSuite(other.to_string())),
    })
}

pub fn run_criterion(id: usize) -> Result<CriterionOutcome> {
    match id {
        1 => criterion_1(),
        2 => criterion_2(),
        3 => criterion_3(),
        4 => criterion_4(),
        5 => criterion_5(),
        6 => criterion_6(),
        7 => criterion_7(),
        8 => criterion_8(),
        9 => criterion_9(),
        10 => criterion_10(),
        _ => Err(VerifyError::UnknownSuite(format!("criterion {id}"))),
    }
}

pub fn run_suite(name: &str) -> Result<Vec<CriterionOutcome>> {
    suite_criteria(name)?.into_iter().map(run_criterion).collect()
}
