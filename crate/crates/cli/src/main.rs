mod config;
mod error;
mod jobs;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tempered_hermite::quadrature::QuadratureSpec;
use tempered_hermite::regress::{ExperimentConfig, Link, NoiseConfig, NoiseNormalization, SmoothingKernel};
use tempered_hermite::simulate::DiagonalPolicy;

use config::{FileConfig, ParamsSection, SimScheme};
use error::{CliError, Result};
use jobs::{CovJob, CumulantsJob, Job, RegressJob, SimulateJob, VerifyJob};
use manifest::RunManifest;

/// Environment variable overriding the worker thread count.
const THREADS_ENV: &str = "TEMPERED_HERMITE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "tempered-hermite", version, about = "Tempered Hermite process toolkit")]
struct Cli {
    /// TOML configuration file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file, or output prefix for `simulate` and `regress`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (overrides TEMPERED_HERMITE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct ParamArgs {
    #[arg(long)]
    k: Option<usize>,
    /// Hurst index.
    #[arg(long = "H")]
    hurst: Option<f64>,
    /// Tempering rate.
    #[arg(long)]
    lambda: Option<f64>,
    /// Filter exponent; selects the filtered process.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    normalized: Option<bool>,
}

impl ParamArgs {
    fn section(&self) -> ParamsSection {
        ParamsSection {
            k: self.k,
            hurst: self.hurst,
            lambda: self.lambda,
            beta: self.beta,
            normalized: self.normalized,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Covariance E[Z(t) Z(s)].
    Cov {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        s: Option<f64>,
    },
    /// Cumulants of orders 2..=m_max with their limit values and oracles.
    Cumulants {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        m_max: Option<usize>,
        #[arg(long)]
        oracle_cells: Option<usize>,
    },
    /// Sample paths of fBm or of the discretized chaos.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<SimScheme>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated output times (chaos scheme).
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        /// Grid points including 0 (fBm scheme).
        #[arg(long)]
        n_grid: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
        /// Uniform cells on [0, t_max] (chaos scheme).
        #[arg(long)]
        n_right: Option<usize>,
        #[arg(long, value_parser = parse_diagonal)]
        diagonal: Option<DiagonalPolicy>,
        #[arg(long)]
        csv: Option<bool>,
        #[arg(long)]
        binary: Option<bool>,
    },
    /// Runs a named verification suite.
    Verify {
        #[arg(long)]
        suite: String,
    },
    /// Consistency experiment of the kernel regression estimator.
    Regress {
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        x_eval: Option<Vec<f64>>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "H1")]
        h1: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long, value_parser = parse_kernel)]
        kernel: Option<SmoothingKernel>,
        #[arg(long, value_parser = parse_link)]
        link: Option<Link>,
        #[arg(long)]
        gamma_r: Option<f64>,
        #[arg(long, value_parser = parse_normalization)]
        normalization: Option<NoiseNormalization>,
        #[arg(long)]
        max_lag: Option<usize>,
        /// Include the chaos noise.
        #[arg(long)]
        noise: Option<bool>,
    },
    /// Re-runs a manifest and compares output digests.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for the replayed outputs (default: a temporary one).
        #[arg(long, conflicts_with = "in_place")]
        out_dir: Option<PathBuf>,
        /// Overwrite the original outputs.
        #[arg(long)]
        in_place: bool,
    },
}

fn parse_serde<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s))
        .map_err(|e| e.to_string())
}

fn parse_scheme(s: &str) -> std::result::Result<SimScheme, String> {
    parse_serde(s)
}

fn parse_diagonal(s: &str) -> std::result::Result<DiagonalPolicy, String> {
    parse_serde(s)
}

fn parse_kernel(s: &str) -> std::result::Result<SmoothingKernel, String> {
    parse_serde(s)
}

fn parse_link(s: &str) -> std::result::Result<Link, String> {
    parse_serde(s)
}

fn parse_normalization(s: &str) -> std::result::Result<NoiseNormalization, String> {
    parse_serde(s)
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Invalid(format!("{THREADS_ENV}={v} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Invalid("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    Ok(())
}

fn quadrature(file: &FileConfig) -> Result<QuadratureSpec> {
    let q = file.quadrature.unwrap_or_default();
    q.validate().map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(q)
}

fn build_job(command: Command, file: &FileConfig) -> Result<Job> {
    Ok(match command {
        Command::Cov { params, t, s } => Job::Cov(CovJob {
            t: t.or(file.cov.t).unwrap_or(1.0),
            s: s.or(file.cov.s).unwrap_or(1.0),
            params: params.section().apply(file.params.apply(Default::default())),
            quadrature: quadrature(file)?,
        }),
        Command::Cumulants {
            params,
            t,
            m_max,
            oracle_cells,
        } => Job::Cumulants(CumulantsJob {
            t: t.or(file.cumulants.t).unwrap_or(1.0),
            m_max: m_max.or(file.cumulants.m_max).unwrap_or(4),
            oracle_cells: oracle_cells.or(file.cumulants.oracle_cells).unwrap_or(512),
            params: params.section().apply(file.params.apply(Default::default())),
            quadrature: quadrature(file)?,
        }),
        Command::Simulate {
            params,
            scheme,
            reps,
            seed,
            times,
            n_grid,
            t_end,
            n_right,
            diagonal,
            csv,
            binary,
        } => {
            let sec = &file.simulate;
            let mut grid = file.grid.clone().unwrap_or_default();
            if let Some(n) = n_right {
                grid.n_right = n;
            }
            if let Some(d) = diagonal {
                grid.diagonal = d;
            }
            let times = times
                .or_else(|| sec.times.clone())
                .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75, 1.0]);
            // the grid must reach the last output time
            if let Some(t) = times.iter().cloned().reduce(f64::max) {
                grid.t_max = grid.t_max.max(t);
            }
            Job::Simulate(SimulateJob {
                scheme: scheme.or(sec.scheme).unwrap_or(SimScheme::Chaos),
                reps: reps.or(sec.reps).unwrap_or(1000),
                seed: seed.or(sec.seed).unwrap_or(1),
                times,
                n_grid: n_grid.or(sec.n_grid).unwrap_or(1025),
                t_end: t_end.or(sec.t_end).unwrap_or(1.0),
                csv: csv.or(sec.csv).unwrap_or(true),
                binary: binary.or(sec.binary).unwrap_or(false),
                params: params.section().apply(file.params.apply(Default::default())),
                grid,
            })
        }
        Command::Verify { suite } => Job::Verify(VerifyJob { suite }),
        Command::Regress {
            ns,
            x_eval,
            seeds,
            seed,
            h1,
            kappa,
            kernel,
            link,
            gamma_r,
            normalization,
            max_lag,
            noise,
        } => {
            let sec = &file.regress;
            let mut e = ExperimentConfig::default();
            if let Some(v) = ns.or_else(|| sec.ns.clone()) {
                e.ns = v;
            }
            if let Some(v) = x_eval.or_else(|| sec.x_eval.clone()) {
                e.x_eval = v;
            }
            if let Some(v) = seeds.or(sec.seeds) {
                e.seeds = v;
            }
            if let Some(v) = seed.or(sec.seed) {
                e.seed = v;
            }
            let b = &mut e.base;
            if let Some(v) = h1.or(sec.h1) {
                b.h1 = v;
            }
            if let Some(v) = kappa.or(sec.kappa) {
                b.kappa = v;
            }
            if let Some(v) = kernel.or(sec.kernel) {
                b.smoothing_kernel = v;
            }
            if let Some(v) = link.or(sec.link) {
                b.link = v;
            }
            if let Some(v) = gamma_r.or(sec.gamma_r) {
                b.gamma_r = v;
            }
            if let Some(v) = normalization.or(sec.normalization) {
                b.noise_normalization = v;
            }
            if let Some(v) = max_lag.or(sec.max_lag) {
                b.max_lag = v;
            }
            let with_noise = noise.or(sec.noise).unwrap_or(true);
            b.noise = if with_noise {
                Some(file.noise.clone().unwrap_or_else(NoiseConfig::default))
            } else {
                None
            };
            Job::Regress(RegressJob { experiment: e })
        }
        Command::Replay { .. } => unreachable!("replay is handled separately"),
    })
}

fn run_job(job: &Job, out: Option<&Path>) -> Result<()> {
    let (run, manifest) = job.execute(out)?;
    print!("{}", run.stdout);
    for r in &run.outputs.records {
        eprintln!("wrote {} sha256={}", r.path, r.sha256);
    }
    if let Some(m) = manifest {
        eprintln!("wrote {}", m.display());
    }
    match run.failure {
        Some(f) => Err(CliError::VerifyFailed(f)),
        None => Ok(()),
    }
}

fn replay(manifest_file: &Path, out_dir: Option<PathBuf>, in_place: bool) -> Result<()> {
    let recorded = RunManifest::read(manifest_file)?;
    let job = Job::from_table(&recorded.subcommand, recorded.job.clone())?;
    let original_out = recorded.out.as_ref().map(PathBuf::from);
    // keeps a temporary directory alive until the comparison is done
    let mut _tmp = None;
    let out = match (&original_out, in_place) {
        (None, _) => None,
        (Some(o), true) => Some(o.clone()),
        (Some(o), false) => {
            let dir = match out_dir {
                Some(d) => d,
                None => {
                    let t = tempfile::tempdir()?;
                    let p = t.path().to_path_buf();
                    _tmp = Some(t);
                    p
                }
            };
            let name = o
                .file_name()
                .ok_or_else(|| CliError::Invalid(format!("output '{}' has no file name", o.display())))?;
            Some(dir.join(name))
        }
    };
    let (run, _) = job.execute(out.as_deref())?;
    let got = &run.outputs.records;
    let want = &recorded.outputs;
    let mut mismatches = Vec::new();
    if got.len() != want.len() {
        mismatches.push(format!("{} outputs recorded, {} produced", want.len(), got.len()));
    }
    for (w, g) in want.iter().zip(got) {
        let same = w.sha256 == g.sha256;
        println!(
            "{} {} {}",
            if same { "identical" } else { "DIFFERENT" },
            w.path,
            g.sha256
        );
        if !same {
            mismatches.push(w.path.clone());
        }
    }
    if let Some(f) = run.failure {
        eprintln!("note: replayed run reports {f}");
    }
    if mismatches.is_empty() {
        println!("replay of {} matches", manifest_file.display());
        Ok(())
    } else {
        Err(CliError::VerifyFailed(format!("replay differs: {}", mismatches.join(", "))))
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Replay {
            manifest,
            out_dir,
            in_place,
        } => replay(&manifest, out_dir, in_place),
        command => {
            let file = FileConfig::load(cli.config.as_deref())?;
            let job = build_job(command, &file)?;
            run_job(&job, cli.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
