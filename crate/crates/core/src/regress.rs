//! Nonparametric regression along a fractional Brownian path with tempered
//! Rosenblatt noise: smoothing kernels, the Nadaraya-Watson estimator, its
//! signal/noise decomposition and the consistency experiment over `n`.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};
use thiserror::Error;

use crate::kernels::{HermiteParams, KernelError};
use crate::quadrature::QuadratureSpec;
use crate::simulate::{
    discrete_increment_scale, increment_correlation_exponent, increment_scale, noise_increment_row,
    stream_rng, ChaosGrid, ChaosGridConfig, CorrelationFit, DiagonalPolicy, FgnGenerator,
    SimulateError, StreamPurpose,
};

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bandwidth exponent rejected: {0}")]
    KappaConstraint(String),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

pub type Result<T> = std::result::Result<T, RegressError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKernel {
    Gaussian,
    Triangle,
    Epanechnikov,
    Quartic,
}

impl SmoothingKernel {
    pub const ALL: [SmoothingKernel; 4] = [
        SmoothingKernel::Gaussian,
        SmoothingKernel::Triangle,
        SmoothingKernel::Epanechnikov,
        SmoothingKernel::Quartic,
    ];

    pub fn eval(self, x: f64) -> f64 {
        let inside = x.abs() <= 1.0;
        match self {
            Self::Gaussian => (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            Self::Triangle if inside => 1.0 - x.abs(),
            Self::Epanechnikov if inside => 0.75 * (1.0 - x * x),
            Self::Quartic if inside => {
                let u = 1.0 - x * x;
                15.0 / 16.0 * u * u
            }
            _ => 0.0,
        }
    }

    /// Half-width of the support, `None` for the Gaussian.
    pub fn support(self) -> Option<f64> {
        match self {
            Self::Gaussian => None,
            _ => Some(1.0),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(Self::Gaussian),
            "triangle" => Ok(Self::Triangle),
            "epanechnikov" => Ok(Self::Epanechnikov),
            "quartic" => Ok(Self::Quartic),
            other => Err(RegressError::InvalidConfig(format!(
                "unknown smoothing kernel '{other}'"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Triangle => "triangle",
            Self::Epanechnikov => "epanechnikov",
            Self::Quartic => "quartic",
        }
    }
}

pub fn smoothing_kernel(kernel: SmoothingKernel, x: f64) -> f64 {
    kernel.eval(x)
}

/// Regression functions available from configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Sin,
    Cos,
    Identity,
    Abs,
    Zero,
}

impl Link {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Self::Sin => x.sin(),
            Self::Cos => x.cos(),
            Self::Identity => x,
            Self::Abs => x.abs(),
            Self::Zero => 0.0,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sin" => Ok(Self::Sin),
            "cos" => Ok(Self::Cos),
            "identity" => Ok(Self::Identity),
            "abs" => Ok(Self::Abs),
            "zero" => Ok(Self::Zero),
            other => Err(RegressError::InvalidConfig(format!("unknown link '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseNormalization {
    /// `S_n * dZ`, the literal reading of the model.
    MultiplyBySn,
    /// `dZ / S_n`, unit-variance noise.
    DivideBySn,
}

/// Which increment standard deviation plays the role of `S_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSource {
    /// `sqrt(E[Z(1/n)^2])` of the continuous process.
    Analytic,
    /// Exact standard deviation of the simulated increment on the grid.
    Discrete,
}

/// Tempered Rosenblatt noise and its simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    #[serde(rename = "H")]
    pub hurst: f64,
    pub lambda: f64,
    /// Uniform grid cells per observation step `1/n`.
    pub cells_per_step: usize,
    pub nodes_per_cell: usize,
    pub left_growth: f64,
    pub tail_fraction: f64,
    pub max_left_extent: f64,
    pub diagonal: DiagonalPolicy,
    pub scale_source: ScaleSource,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let g = ChaosGridConfig::default();
        Self {
            hurst: 0.75,
            lambda: 1.0,
            cells_per_step: 16,
            nodes_per_cell: g.nodes_per_cell,
            left_growth: g.left_growth,
            tail_fraction: g.tail_fraction,
            max_left_extent: g.max_left_extent,
            diagonal: g.diagonal,
            scale_source: ScaleSource::Discrete,
        }
    }
}

impl NoiseConfig {
    pub fn params(&self) -> Result<HermiteParams> {
        Ok(HermiteParams::from_hurst(2, self.hurst, self.lambda)?)
    }

    pub fn grid_config(&self, n: usize) -> ChaosGridConfig {
        ChaosGridConfig {
            t_max: 1.0,
            n_right: n * self.cells_per_step,
            nodes_per_cell: self.nodes_per_cell,
            left_growth: self.left_growth,
            tail_fraction: self.tail_fraction,
            max_left_extent: self.max_left_extent,
            diagonal: self.diagonal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionConfig {
    pub n: usize,
    #[serde(rename = "H1")]
    pub h1: f64,
    pub kappa: f64,
    pub smoothing_kernel: SmoothingKernel,
    pub link: Link,
    /// Declared Hoelder exponent of the link.
    pub gamma_r: f64,
    /// `None` switches the noise off. A missing entry in a configuration
    /// file also means no noise, so that configurations round-trip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseConfig>,
    pub noise_normalization: NoiseNormalization,
    /// Largest lag used when fitting `l_R`.
    pub max_lag: usize,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            n: 1024,
            h1: 0.7,
            kappa: 0.2,
            smoothing_kernel: SmoothingKernel::Gaussian,
            link: Link::Sin,
            gamma_r: 1.0,
            noise: Some(NoiseConfig::default()),
            noise_normalization: NoiseNormalization::DivideBySn,
            max_lag: 16,
        }
    }
}

impl RegressionConfig {
    pub fn bandwidth(&self) -> f64 {
        (self.n as f64).powf(-self.kappa)
    }

    fn check_basic(&self) -> Result<()> {
        if self.n < 2 {
            return Err(RegressError::InvalidConfig("n must be at least 2".into()));
        }
        if !(self.h1 > 0.0 && self.h1 < 1.0) {
            return Err(RegressError::InvalidConfig(format!("H1 = {} outside (0, 1)", self.h1)));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(RegressError::InvalidConfig(format!(
                "kappa = {} outside (0, 1)",
                self.kappa
            )));
        }
        if !(self.gamma_r > 0.0 && self.gamma_r <= 1.0) {
            return Err(RegressError::InvalidConfig(format!(
                "gamma_r = {} outside (0, 1]",
                self.gamma_r
            )));
        }
        Ok(())
    }
}

/// Outcome of the bandwidth-exponent check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaCheck {
    pub kappa: f64,
    pub half_h1: f64,
    pub h1_gamma: f64,
    /// `-2 l_R`, present when the fitted `l_R` lies in `(-1, 0)`.
    pub minus_two_lr: Option<f64>,
}

impl KappaCheck {
    pub fn bound(&self) -> f64 {
        let b = self.half_h1.min(self.h1_gamma);
        self.minus_two_lr.map_or(b, |m| b.min(m))
    }
}

/// `kappa < min{H1/2, H1 gamma_r, -2 l_R}`, the last term only when
/// `l_R` lies in `(-1, 0)`.
pub fn check_kappa(kappa: f64, h1: f64, gamma_r: f64, l_r: Option<f64>) -> Result<KappaCheck> {
    let check = KappaCheck {
        kappa,
        half_h1: 0.5 * h1,
        h1_gamma: h1 * gamma_r,
        minus_two_lr: l_r.filter(|l| *l > -1.0 && *l < 0.0).map(|l| -2.0 * l),
    };
    if !(kappa < check.half_h1) {
        return Err(RegressError::KappaConstraint(format!(
            "kappa = {kappa} violates kappa < H1/2 = {}",
            check.half_h1
        )));
    }
    if !(kappa < check.h1_gamma) {
        return Err(RegressError::KappaConstraint(format!(
            "kappa = {kappa} violates kappa < H1*gamma_r = {}",
            check.h1_gamma
        )));
    }
    if let Some(m) = check.minus_two_lr {
        if !(kappa < m) {
            return Err(RegressError::KappaConstraint(format!(
                "kappa = {kappa} violates kappa < -2*l_R = {m} (fitted l_R = {})",
                -0.5 * m
            )));
        }
    }
    Ok(check)
}

/// Observations `x_i = B(i/n)` and `Y_i = r(x_i) + noise_i`, `i = 0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
}

impl Dataset {
    pub fn from_parts(x: Vec<f64>, signal: Vec<f64>, noise: Vec<f64>) -> Self {
        let y = signal.iter().zip(&noise).map(|(s, e)| s + e).collect();
        Self { x, y, signal, noise }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Precomputed pieces shared by every seed at one sample size.
pub struct ModelGenerator {
    cfg: RegressionConfig,
    fgn: FgnGenerator,
    noise: Option<NoiseGenerator>,
}

struct NoiseGenerator {
    grid: ChaosGrid,
    scale: f64,
    s_n: f64,
    s_n_discrete: f64,
}

impl ModelGenerator {
    pub fn new(cfg: &RegressionConfig) -> Result<Self> {
        cfg.check_basic()?;
        let n = cfg.n;
        let fgn = FgnGenerator::new(n - 1, cfg.h1, 1.0 / n as f64)?;
        let noise = match &cfg.noise {
            None => None,
            Some(nc) => {
                let p = nc.params()?;
                let grid = ChaosGrid::new(&p, &nc.grid_config(n))?;
                let s_n = increment_scale(n, &p, &QuadratureSpec::default())?;
                let s_n_discrete = discrete_increment_scale(n, &grid)?;
                let s = match nc.scale_source {
                    ScaleSource::Analytic => s_n,
                    ScaleSource::Discrete => s_n_discrete,
                };
                let scale = match cfg.noise_normalization {
                    NoiseNormalization::MultiplyBySn => s,
                    NoiseNormalization::DivideBySn => 1.0 / s,
                };
                Some(NoiseGenerator {
                    grid,
                    scale,
                    s_n,
                    s_n_discrete,
                })
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            fgn,
            noise,
        })
    }

    /// `(S_n analytic, S_n discrete)` when noise is on.
    pub fn noise_scales(&self) -> Option<(f64, f64)> {
        self.noise.as_ref().map(|g| (g.s_n, g.s_n_discrete))
    }

    /// Dataset for seed index `index` under the top-level `seed`. The fBm and
    /// the noise use separate streams.
    pub fn generate(&self, seed: u64, index: u64) -> Result<Dataset> {
        let n = self.cfg.n;
        let mut rng = stream_rng(seed, StreamPurpose::Fbm, index);
        let mut x = Vec::with_capacity(n);
        x.push(0.0);
        let mut acc = 0.0;
        for v in self.fgn.sample(&mut rng) {
            acc += v;
            x.push(acc);
        }
        let signal: Vec<f64> = x.iter().map(|&b| self.cfg.link.eval(b)).collect();
        let noise = match &self.noise {
            None => vec![0.0; n],
            Some(g) => noise_increment_row(n, &g.grid, seed, index)?
                .into_iter()
                .map(|e| e * g.scale)
                .collect(),
        };
        Ok(Dataset::from_parts(x, signal, noise))
    }
}

pub fn generate_model(cfg: &RegressionConfig, seed: u64) -> Result<Dataset> {
    ModelGenerator::new(cfg)?.generate(seed, 0)
}

/// Nadaraya-Watson estimate with an arbitrary weight function; `None` when
/// all weights vanish.
pub fn nadaraya_watson_with<K: Fn(f64) -> f64>(x: f64, data: &Dataset, h: f64, weight: K) -> Option<f64> {
    let (num, den) = weighted_sums(x, &data.x, h, &weight, &data.y);
    (den > 0.0).then(|| num / den)
}

fn weighted_sums<K: Fn(f64) -> f64>(x: f64, at: &[f64], h: f64, weight: &K, values: &[f64]) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (b, v) in at.iter().zip(values) {
        let w = weight((x - b) / h);
        num += w * v;
        den += w;
    }
    (num, den)
}

pub fn nadaraya_watson(x: f64, data: &Dataset, h: f64, kernel: SmoothingKernel) -> Option<f64> {
    assert!(h > 0.0, "bandwidth must be positive");
    nadaraya_watson_with(x, data, h, |u| kernel.eval(u))
}

/// Signal part `M1` and noise part `M2` of the estimate at `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub m1: f64,
    pub m2: f64,
    pub estimate: f64,
}

pub fn decompose_m1_m2(x: f64, data: &Dataset, h: f64, kernel: SmoothingKernel) -> Option<Decomposition> {
    let w = |u: f64| kernel.eval(u);
    let (s1, den) = weighted_sums(x, &data.x, h, &w, &data.signal);
    if !(den > 0.0) {
        return None;
    }
    let (s2, _) = weighted_sums(x, &data.x, h, &w, &data.noise);
    let (sy, _) = weighted_sums(x, &data.x, h, &w, &data.y);
    Some(Decomposition {
        m1: s1 / den,
        m2: s2 / den,
        estimate: sy / den,
    })
}

/// The consistency experiment: one base configuration, several sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `n` of the base is ignored; the sizes come from `ns`.
    pub base: RegressionConfig,
    pub ns: Vec<usize>,
    pub x_eval: Vec<f64>,
    pub seeds: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base: RegressionConfig::default(),
            ns: vec![256, 1024, 4096],
            x_eval: vec![-0.5, 0.0, 0.5],
            seeds: 50,
            seed: 20240601,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub n: usize,
    pub x: f64,
    /// NaN when every seed had an empty window.
    pub median_abs_err: f64,
    pub iqr: f64,
    pub empty_window_count: usize,
    pub seed_count: usize,
    /// Median of `|M2|`.
    pub median_abs_m2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub n: usize,
    pub bandwidth: f64,
    pub kappa: KappaCheck,
    pub correlation: Option<CorrelationFit>,
    pub s_n: Option<f64>,
    pub s_n_discrete: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRun {
    pub config: ExperimentConfig,
    pub sizes: Vec<SizeSummary>,
    pub rows: Vec<RunRow>,
}

fn median_iqr(mut v: Vec<f64>) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    let mut d = Data::new(v);
    (d.median(), d.upper_quartile() - d.lower_quartile())
}

impl RegressionRun {
    fn row(&self, n: usize, x: f64) -> Option<&RunRow> {
        self.rows.iter().find(|r| r.n == n && r.x == x)
    }

    /// Median errors per evaluation point, ordered as `config.ns`.
    pub fn medians_by_x(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for &x in &self.config.x_eval {
            let v = self
                .config
                .ns
                .iter()
                .map(|&n| self.row(n, x).map_or(f64::NAN, |r| r.median_abs_err))
                .collect();
            out.insert(format!("{x}"), v);
        }
        out
    }

    /// Medians strictly decrease from each `n` to the next at every `x`.
    pub fn monotone(&self) -> bool {
        self.medians_by_x()
            .values()
            .all(|v| v.windows(2).all(|w| w[1] < w[0]))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n,x,median_abs_err,iqr,empty_window_count,seed_count")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.n, r.x, r.median_abs_err, r.iqr, r.empty_window_count, r.seed_count
            )?;
        }
        Ok(())
    }
}

/// Runs every sample size of the experiment. The bandwidth constraint is
/// checked for every size before any simulation starts.
pub fn consistency_experiment(cfg: &ExperimentConfig) -> Result<RegressionRun> {
    if cfg.ns.is_empty() || cfg.x_eval.is_empty() || cfg.seeds == 0 {
        return Err(RegressError::InvalidConfig(
            "need at least one n, one evaluation point and one seed".into(),
        ));
    }
    let base = &cfg.base;
    let mut sizes = Vec::with_capacity(cfg.ns.len());
    for &n in &cfg.ns {
        let size_cfg = RegressionConfig { n, ..base.clone() };
        size_cfg.check_basic()?;
        let correlation = match &base.noise {
            Some(nc) => Some(increment_correlation_exponent(
                &nc.params()?,
                n,
                base.max_lag,
                &QuadratureSpec::default(),
            )?),
            None => None,
        };
        let kappa = check_kappa(base.kappa, base.h1, base.gamma_r, correlation.as_ref().map(|c| c.l_r))?;
        sizes.push(SizeSummary {
            n,
            bandwidth: size_cfg.bandwidth(),
            kappa,
            correlation,
            s_n: None,
            s_n_discrete: None,
        });
    }

    let mut rows = Vec::new();
    for size in sizes.iter_mut() {
        let n = size.n;
        let size_cfg = RegressionConfig { n, ..base.clone() };
        let gen = ModelGenerator::new(&size_cfg)?;
        if let Some((a, d)) = gen.noise_scales() {
            size.s_n = Some(a);
            size.s_n_discrete = Some(d);
        }
        let h = size.bandwidth;
        let per_seed: Vec<Vec<Option<Decomposition>>> = (0..cfg.seeds)
            .into_par_iter()
            .map(|s| -> Result<Vec<Option<Decomposition>>> {
                let data = gen.generate(cfg.seed, s as u64)?;
                Ok(cfg
                    .x_eval
                    .iter()
                    .map(|&x| decompose_m1_m2(x, &data, h, base.smoothing_kernel))
                    .collect())
            })
            .collect::<Result<_>>()?;
        for (j, &x) in cfg.x_eval.iter().enumerate() {
            let truth = base.link.eval(x);
            let found: Vec<Decomposition> = per_seed.iter().filter_map(|v| v[j]).collect();
            let errs: Vec<f64> = found.iter().map(|d| (d.estimate - truth).abs()).collect();
            let m2: Vec<f64> = found.iter().map(|d| d.m2.abs()).collect();
            let (median, iqr) = median_iqr(errs);
            let (median_m2, _) = median_iqr(m2);
            rows.push(RunRow {
                n,
                x,
                median_abs_err: median,
                iqr,
                empty_window_count: cfg.seeds - found.len(),
                seed_count: cfg.seeds,
                median_abs_m2: median_m2,
            });
        }
    }
    Ok(RegressionRun {
        config: cfg.clone(),
        sizes,
        rows,
    })
}
