//! Fully resolved subcommand runs. A job holds every input that influences
//! the outputs, so that a manifest can replay it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tempered_hermite::kernels::ParamsConfig;
use tempered_hermite::moments::{
    cov_filtered_general, cov_filtered_hermite, cumulant_filtered_limit, cumulant_filtered_rosenblatt,
    cumulant_limit_rosenblatt, cumulant_rosenblatt, increment_cross_moment, CumulantReport,
    MAX_CUMULANT_ORDER,
};
use tempered_hermite::quadrature::QuadratureSpec;
use tempered_hermite::regress::{consistency_experiment, ExperimentConfig};
use tempered_hermite::simulate::{
    fbm_paths, mean_and_se, simulate_tempered_rosenblatt, ChaosGrid, ChaosGridConfig, SamplePaths,
    Scheme, StreamPurpose,
};
use tempered_hermite::verify::{run_suite, suite_criteria};

use crate::config::SimScheme;
use crate::error::{CliError, Result};
use crate::manifest::{manifest_path, with_suffix, Outputs, RunManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovJob {
    pub t: f64,
    pub s: f64,
    pub params: ParamsConfig,
    pub quadrature: QuadratureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CumulantsJob {
    pub t: f64,
    pub m_max: usize,
    /// Uniform cells of the discrete trace oracle on `[0, t]`.
    pub oracle_cells: usize,
    pub params: ParamsConfig,
    pub quadrature: QuadratureSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateJob {
    pub scheme: SimScheme,
    pub reps: usize,
    pub seed: u64,
    /// Output times of the chaos scheme.
    pub times: Vec<f64>,
    /// Grid of the fBm scheme.
    pub n_grid: usize,
    pub t_end: f64,
    pub csv: bool,
    pub binary: bool,
    pub params: ParamsConfig,
    pub grid: ChaosGridConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyJob {
    pub suite: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressJob {
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Job {
    Cov(CovJob),
    Cumulants(CumulantsJob),
    Simulate(SimulateJob),
    Verify(VerifyJob),
    Regress(RegressJob),
}

/// Printed text, files written and derived values of one run.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub stdout: String,
    pub outputs: Outputs,
    pub results: toml::Table,
    /// Set by `verify` when a criterion fails.
    pub failure: Option<String>,
}

fn table_of<T: Serialize>(v: &T) -> Result<toml::Table> {
    Ok(toml::Table::try_from(v)?)
}

fn check_seed(seed: u64) -> Result<()> {
    // manifests store integers as signed 64-bit values
    if seed > i64::MAX as u64 {
        return Err(CliError::Invalid(format!("seed {seed} exceeds {}", i64::MAX)));
    }
    Ok(())
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Cov(_) => "cov",
            Job::Cumulants(_) => "cumulants",
            Job::Simulate(_) => "simulate",
            Job::Verify(_) => "verify",
            Job::Regress(_) => "regress",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Job::Simulate(j) => j.seed,
            Job::Regress(j) => j.experiment.seed,
            _ => 0,
        }
    }

    pub fn streams(&self) -> Vec<String> {
        let label = |p: StreamPurpose, what: &str| {
            format!(
                "{}: ChaCha8 seeded from the top-level seed, stream ({} << 48) | {what}",
                p.label(),
                p as u64
            )
        };
        match self {
            Job::Simulate(j) => match j.scheme {
                SimScheme::Chaos => vec![label(StreamPurpose::Chaos, "replication")],
                SimScheme::Fbm => vec![label(StreamPurpose::Fbm, "replication")],
            },
            Job::Regress(_) => vec![
                label(StreamPurpose::Fbm, "seed index"),
                label(StreamPurpose::Chaos, "seed index"),
            ],
            _ => Vec::new(),
        }
    }

    pub fn to_table(&self) -> Result<toml::Table> {
        match self {
            Job::Cov(j) => table_of(j),
            Job::Cumulants(j) => table_of(j),
            Job::Simulate(j) => table_of(j),
            Job::Verify(j) => table_of(j),
            Job::Regress(j) => table_of(j),
        }
    }

    pub fn from_table(subcommand: &str, table: toml::Table) -> Result<Self> {
        let v = toml::Value::Table(table);
        Ok(match subcommand {
            "cov" => Job::Cov(v.try_into()?),
            "cumulants" => Job::Cumulants(v.try_into()?),
            "simulate" => Job::Simulate(v.try_into()?),
            "verify" => Job::Verify(v.try_into()?),
            "regress" => Job::Regress(v.try_into()?),
            other => return Err(CliError::Invalid(format!("unknown subcommand '{other}' in manifest"))),
        })
    }

    /// Whether `--out` names a file (`false`) or a prefix for several files.
    pub fn out_is_prefix(&self) -> bool {
        matches!(self, Job::Simulate(_) | Job::Regress(_))
    }

    pub fn validate(&self, out: Option<&Path>) -> Result<()> {
        check_seed(self.seed())?;
        if self.out_is_prefix() && out.is_none() {
            return Err(CliError::Invalid(format!("{} needs --out", self.name())));
        }
        match self {
            Job::Simulate(j) => {
                if j.reps == 0 {
                    return Err(CliError::Invalid("reps must be at least 1".into()));
                }
                if !j.csv && !j.binary {
                    return Err(CliError::Invalid("enable at least one of csv and binary".into()));
                }
            }
            Job::Cumulants(j) => {
                let max = if j.params.beta.is_some() { 3 } else { MAX_CUMULANT_ORDER };
                if j.m_max < 2 || j.m_max > max {
                    return Err(CliError::Invalid(format!(
                        "m_max = {} outside 2..={max}",
                        j.m_max
                    )));
                }
                if j.params.k != 2 {
                    return Err(CliError::Invalid("cumulants are available for k = 2 only".into()));
                }
            }
            Job::Verify(j) => {
                suite_criteria(&j.suite)?;
            }
            _ => {}
        }
        Ok(())
    }

    /// Runs the job, writing outputs under `out`, and returns the manifest
    /// path when a manifest was written.
    pub fn execute(&self, out: Option<&Path>) -> Result<(RunOutput, Option<PathBuf>)> {
        self.validate(out)?;
        let start = Instant::now();
        let mut run = match self {
            Job::Cov(j) => run_cov(j, out)?,
            Job::Cumulants(j) => run_cumulants(j, out)?,
            Job::Simulate(j) => run_simulate(j, out.expect("validated"))?,
            Job::Verify(j) => run_verify(j, out)?,
            Job::Regress(j) => run_regress(j, out.expect("validated"))?,
        };
        let manifest = match out {
            None => None,
            Some(out) => {
                let m = RunManifest {
                    subcommand: self.name().to_string(),
                    version: env!("CARGO_PKG_VERSION").to_string(),
                    seed: self.seed(),
                    wall_time_seconds: start.elapsed().as_secs_f64(),
                    threads: rayon::current_num_threads(),
                    out: Some(out.display().to_string()),
                    streams: self.streams(),
                    outputs: std::mem::take(&mut run.outputs.records),
                    job: self.to_table()?,
                    results: std::mem::take(&mut run.results),
                };
                let path = manifest_path(out);
                crate::manifest::write_atomic(&path, m.to_text()?.as_bytes())?;
                run.outputs.records = m.outputs;
                Some(path)
            }
        };
        Ok((run, manifest))
    }
}

fn run_cov(j: &CovJob, out: Option<&Path>) -> Result<RunOutput> {
    let mut run = RunOutput::default();
    let (value, error) = match j.params.filter()? {
        Some(fp) => {
            let v = cov_filtered_hermite(j.t, j.s, &fp, &j.quadrature)?;
            // no separate error estimate on this path; report the requested bound
            (v, j.quadrature.tolerance(v))
        }
        None => {
            let p = j.params.hermite()?;
            if j.t == 0.0 || j.s == 0.0 {
                p.require_tempered()?;
                (0.0, 0.0)
            } else if j.t < 0.0 || j.s < 0.0 {
                return Err(CliError::Invalid(format!("need t, s >= 0, got ({}, {})", j.t, j.s)));
            } else {
                let r = increment_cross_moment(0.0, j.t, 0.0, j.s, &p, &j.quadrature)?;
                (r.value, r.error_estimate)
            }
        }
    };
    writeln!(run.stdout, "value\t{value:.17e}").unwrap();
    writeln!(run.stdout, "error\t{error:.3e}").unwrap();
    if let Some(out) = out {
        let mut csv = String::from("t,s,k,H,lambda,beta,normalized,value,error\n");
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            j.t,
            j.s,
            j.params.k,
            j.params.hurst,
            j.params.lambda,
            j.params.beta.map_or(String::new(), |b| b.to_string()),
            j.params.normalized,
            value,
            error
        )
        .unwrap();
        run.outputs.write(out, csv.as_bytes())?;
    }
    Ok(run)
}

fn run_cumulants(j: &CumulantsJob, out: Option<&Path>) -> Result<RunOutput> {
    let mut run = RunOutput::default();
    let spec = &j.quadrature;
    let mut reports = Vec::new();
    match j.params.filter()? {
        Some(fp) => {
            for m in 2..=j.m_max {
                let analytic = cumulant_filtered_rosenblatt(j.t, m, &fp, spec)?;
                let limit_value = cumulant_filtered_limit(j.t, m, &fp, spec)?;
                let oracle = if m == 2 {
                    cov_filtered_general(j.t, j.t, &fp, spec)?
                } else {
                    f64::NAN
                };
                reports.push(CumulantReport {
                    order: m,
                    analytic,
                    limit_value,
                    oracle,
                    mc_estimate: None,
                    mc_se: None,
                });
            }
        }
        None => {
            let p = j.params.hermite()?;
            let grid = ChaosGrid::new(
                &p,
                &ChaosGridConfig {
                    t_max: j.t,
                    n_right: j.oracle_cells,
                    ..ChaosGridConfig::default()
                },
            )?;
            for m in 2..=j.m_max {
                reports.push(CumulantReport {
                    order: m,
                    analytic: cumulant_rosenblatt(j.t, m, &p, spec)?,
                    limit_value: cumulant_limit_rosenblatt(j.t, m, p.d(), spec)?.value,
                    oracle: grid.discrete_cumulant(j.t, m)?,
                    mc_estimate: None,
                    mc_se: None,
                });
            }
        }
    }
    let mut csv = String::from("order,analytic,limit,gap,oracle\n");
    for r in &reports {
        writeln!(
            csv,
            "{},{},{},{},{}",
            r.order,
            r.analytic,
            r.limit_value,
            r.analytic - r.limit_value,
            r.oracle
        )
        .unwrap();
    }
    run.stdout.push_str(&csv.replace(',', "\t"));
    if let Some(out) = out {
        run.outputs.write(out, csv.as_bytes())?;
    }
    Ok(run)
}

fn run_simulate(j: &SimulateJob, out: &Path) -> Result<RunOutput> {
    let mut run = RunOutput::default();
    let paths: SamplePaths = match j.scheme {
        SimScheme::Fbm => fbm_paths(j.n_grid, j.params.hurst, j.t_end, j.reps, j.seed)?,
        SimScheme::Chaos => {
            let p = j.params.hermite()?;
            let grid = ChaosGrid::new(&p, &j.grid)?;
            run.results.insert("left_truncation".into(), grid.left_truncation().into());
            run.results.insert("tail_bound".into(), grid.tail_bound().into());
            run.results.insert("n_left".into(), (grid.n_left() as i64).into());
            let paths = simulate_tempered_rosenblatt(&j.times, &p, &grid, j.reps, j.seed)?;
            writeln!(run.stdout, "t\tsample_var\tse\tdiscrete_var\tanalytic_var").unwrap();
            for (idx, &t) in j.times.iter().enumerate() {
                if t == 0.0 {
                    continue;
                }
                let sq: Vec<f64> = paths.column(idx).iter().map(|v| v * v).collect();
                let (m, se) = mean_and_se(&sq);
                let dv = grid.discrete_variance(t)?;
                let av = tempered_hermite::moments::cov_hermite(t, t, &p, &QuadratureSpec::default())?;
                writeln!(run.stdout, "{t}\t{m:.6e}\t{se:.3e}\t{dv:.6e}\t{av:.6e}").unwrap();
            }
            paths
        }
    };
    if let Scheme::Fbm {
        cholesky_fallback, hurst, ..
    } = paths.scheme
    {
        run.results.insert("cholesky_fallback".into(), cholesky_fallback.into());
        writeln!(run.stdout, "t\tsample_var\tse\texact_var").unwrap();
        for (idx, &t) in paths.times.iter().enumerate().skip(1) {
            let sq: Vec<f64> = paths.column(idx).iter().map(|v| v * v).collect();
            let (m, se) = mean_and_se(&sq);
            writeln!(run.stdout, "{t}\t{m:.6e}\t{se:.3e}\t{:.6e}", t.powf(2.0 * hurst)).unwrap();
        }
    }
    if j.csv {
        let mut buf = Vec::new();
        paths.write_csv(&mut buf)?;
        run.outputs.write(&with_suffix(out, "csv"), &buf)?;
    }
    if j.binary {
        let mut buf = Vec::new();
        paths.write_binary(&mut buf)?;
        run.outputs.write(&with_suffix(out, "bin"), &buf)?;
    }
    Ok(run)
}

fn run_verify(j: &VerifyJob, out: Option<&Path>) -> Result<RunOutput> {
    let mut run = RunOutput::default();
    let outcomes = run_suite(&j.suite)?;
    // The file omits timings so that reruns are byte-identical.
    let mut file = String::new();
    let mut failed = Vec::new();
    for o in &outcomes {
        writeln!(run.stdout, "{}", o.summary_line()).unwrap();
        run.stdout.push_str(&o.report.to_table());
        writeln!(
            file,
            "{} criterion {} ({})",
            if o.report.pass() { "PASS" } else { "FAIL" },
            o.id,
            o.title
        )
        .unwrap();
        file.push_str(&o.report.to_table());
        if !o.pass() {
            failed.push(format!("criterion {}", o.id));
        }
    }
    if let Some(out) = out {
        run.outputs.write(out, file.as_bytes())?;
    }
    if !failed.is_empty() {
        run.failure = Some(format!("suite {}: {}", j.suite, failed.join(", ")));
    }
    Ok(run)
}

fn run_regress(j: &RegressJob, out: &Path) -> Result<RunOutput> {
    let mut run = RunOutput::default();
    let result = consistency_experiment(&j.experiment)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    run.stdout.push_str(&String::from_utf8_lossy(&buf).replace(',', "\t"));
    writeln!(run.stdout, "monotone\t{}", result.monotone()).unwrap();
    run.outputs.write(&with_suffix(out, "csv"), &buf)?;
    let mut sizes = toml::Table::new();
    for s in &result.sizes {
        let mut t = toml::Table::new();
        t.insert("bandwidth".into(), s.bandwidth.into());
        t.insert("kappa_bound".into(), s.kappa.bound().into());
        if let Some(c) = &s.correlation {
            t.insert("l_R".into(), c.l_r.into());
            t.insert("faster_than_power".into(), c.faster_than_power.into());
        }
        if let Some(v) = s.s_n {
            t.insert("S_n".into(), v.into());
        }
        if let Some(v) = s.s_n_discrete {
            t.insert("S_n_discrete".into(), v.into());
        }
        let m2: Vec<toml::Value> = result
            .rows
            .iter()
            .filter(|r| r.n == s.n)
            .map(|r| toml::Value::from(r.median_abs_m2))
            .collect();
        t.insert("median_abs_m2".into(), toml::Value::Array(m2));
        sizes.insert(format!("n{}", s.n), t.into());
    }
    run.results.insert("sizes".into(), sizes.into());
    run.results.insert("monotone".into(), result.monotone().into());
    Ok(run)
}
