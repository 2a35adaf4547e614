//! Sample paths: exact fractional Brownian motion, the discrete-chaos
//! approximation of the tempered Rosenblatt process (k = 2), noise increments
//! for the regression model and k-statistics for moment checks.
//!
//! The chaos approximation expands the second-order Wiener integral on a
//! cell grid. Each time integral is replaced by a quadrature over nodes
//! `s_n`, and each Wiener integral over a cell by its Gaussian increment, so
//! that
//!
//! `Z(t) ~ sum_{s_n <= t} (Y_n^2 - E Y_n^2)`, with `Y_n = sum_i B_{n,i} xi_i`,
//!
//! where `B_{n,i} = sqrt(w_n) int_{cell i} (s_n - x)^{d-1} e^{-lambda (s_n - x)} dx / sqrt(|cell i|)`.
//! The resulting kernel `A = B^T B` is the cell projection of `h_t`, so the
//! discrete cumulants `2^{m-1}(m-1)! tr(A^m)` are available exactly.
//!
//! Cells on `[0, t_max]` are uniform, which makes the right block Toeplitz and
//! lets every replication use FFT convolutions. Cells left of the origin grow
//! geometrically up to the truncation point.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{power_exp_integral, HermiteParams, KernelError};
use crate::moments::{cov_hermite, cumulant_i2_discrete, increment_cross_moment, MomentsError};
use crate::quadrature::{gauss_legendre, QuadratureSpec};
use crate::specfun::{gamma, SpecfunError};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(
        "grid tail bound {bound:.3e} exceeds the allowed fraction {allowed:.3e} \
         (left extent {extent} reached the cap)"
    )]
    TailBound { bound: f64, allowed: f64, extent: f64 },
    #[error("correlation fit degenerate: {0}")]
    FitDegenerate(String),
    #[error("sample file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
}

pub type Result<T> = std::result::Result<T, SimulateError>;

/// Labels of the independent random streams drawn from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamPurpose {
    Fbm = 1,
    Chaos = 2,
}

impl StreamPurpose {
    pub fn label(self) -> &'static str {
        match self {
            StreamPurpose::Fbm => "fbm",
            StreamPurpose::Chaos => "chaos",
        }
    }
}

/// Generator for replication `index` of the given purpose.
///
/// ChaCha is counter based: the stream number selects an independent
/// keystream, so replication `r` does not depend on how many others were
/// drawn before it or on which thread draws it.
pub fn stream_rng(seed: u64, purpose: StreamPurpose, index: u64) -> ChaCha8Rng {
    assert!(index < (1u64 << 48), "replication index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | index);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalPolicy {
    /// `Y_n^2 - E Y_n^2`: the Wick square, whose law is exactly the second
    /// chaos element with kernel `A`.
    WickCentered,
    /// `Y_n^2 - sum_i B_{n,i}^2 xi_i^2`: the literal off-diagonal sum.
    ExcludeDiagonal,
}

impl DiagonalPolicy {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "wick" | "wick_centered" => Ok(Self::WickCentered),
            "exclude" | "exclude_diagonal" => Ok(Self::ExcludeDiagonal),
            other => Err(SimulateError::InvalidInput(format!(
                "unknown diagonal policy '{other}' (expected wick_centered or exclude_diagonal)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::WickCentered => "wick_centered",
            Self::ExcludeDiagonal => "exclude_diagonal",
        }
    }
}

/// How the sample paths were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Scheme {
    Fbm {
        hurst: f64,
        cholesky_fallback: bool,
    },
    DiscreteChaos {
        hurst: f64,
        lambda: f64,
        n_right: usize,
        nodes_per_cell: usize,
        n_left: usize,
        left_extent: f64,
        tail_bound: f64,
        diagonal: DiagonalPolicy,
    },
}

/// Replications of a process on a common time grid, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePaths {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

const BINARY_MAGIC: &[u8; 4] = b"THSP";
const BINARY_VERSION: u32 = 1;

impl SamplePaths {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn row(&self, rep: usize) -> &[f64] {
        let n = self.n_times();
        &self.values[rep * n..(rep + 1) * n]
    }

    pub fn value(&self, rep: usize, j: usize) -> f64 {
        self.values[rep * self.n_times() + j]
    }

    /// All replications at time index `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.reps).map(|r| self.value(r, j)).collect()
    }

    /// Header row with the times, then one row per replication. Values use
    /// the shortest representation that round-trips.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = self.times.iter().map(|t| format!("{t}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for r in 0..self.reps {
            let row: Vec<String> = self.row(r).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Little-endian dump: magic `THSP`, u32 version, u64 reps, u64 n_times,
    /// u64 seed, then `n_times` f64 times and `reps * n_times` f64 values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.reps as u64).to_le_bytes())?;
        w.write_all(&(self.n_times() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a binary dump. The scheme is not stored in the dump and comes
    /// back as the supplied descriptor.
    pub fn read_binary<R: Read>(mut r: R, scheme: Scheme) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(SimulateError::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != BINARY_VERSION {
            return Err(SimulateError::Format(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let reps = next_u64(&mut r)? as usize;
        let n = next_u64(&mut r)? as usize;
        let seed = next_u64(&mut r)?;
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count);
            let mut b = [0u8; 8];
            for _ in 0..count {
                r.read_exact(&mut b)?;
                out.push(f64::from_le_bytes(b));
            }
            Ok(out)
        };
        let times = read_f64s(n)?;
        let values = read_f64s(reps * n)?;
        Ok(Self {
            times,
            values,
            reps,
            seed,
            scheme,
        })
    }
}

fn check_reps(reps: usize) -> Result<()> {
    if reps == 0 {
        return Err(SimulateError::InvalidInput("reps must be at least 1".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Fractional Brownian motion

/// Autocovariance of fractional Gaussian noise with step `h` at lag `k`.
pub fn fgn_autocovariance(k: usize, hurst: f64, h: f64) -> f64 {
    let e = 2.0 * hurst;
    let kf = k as f64;
    let lag = |x: f64| x.abs().powf(e);
    0.5 * h.powf(e) * (lag(kf + 1.0) - 2.0 * lag(kf) + lag(kf - 1.0))
}

enum FgnMethod {
    Circulant {
        sqrt_eig: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky(DMatrix<f64>),
}

/// Fractional Gaussian noise sampler for a fixed length and step.
pub struct FgnGenerator {
    n: usize,
    method: FgnMethod,
}

impl FgnGenerator {
    pub fn new(n: usize, hurst: f64, h: f64) -> Result<Self> {
        if n == 0 {
            return Err(SimulateError::InvalidInput("need at least one increment".into()));
        }
        if !(hurst > 0.0 && hurst < 1.0) || !(h > 0.0) {
            return Err(SimulateError::InvalidInput(format!(
                "Hurst index {hurst} must lie in (0, 1) and step {h} must be positive"
            )));
        }
        let gam: Vec<f64> = (0..=n).map(|k| fgn_autocovariance(k, hurst, h)).collect();
        let m = 2 * n;
        let mut c: Vec<Complex64> = (0..m)
            .map(|j| Complex64::new(gam[if j <= n { j } else { m - j }], 0.0))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut c);
        let max = c.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
        let min = c.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if min >= -1e-10 * max {
            let sqrt_eig = c.iter().map(|z| z.re.max(0.0).sqrt()).collect();
            return Ok(Self {
                n,
                method: FgnMethod::Circulant { sqrt_eig, fft },
            });
        }
        let cov = DMatrix::from_fn(n, n, |i, j| gam[i.abs_diff(j)]);
        let chol = cov.cholesky().ok_or_else(|| {
            SimulateError::InvalidInput("fGn covariance is not positive definite".into())
        })?;
        Ok(Self {
            n,
            method: FgnMethod::Cholesky(chol.l()),
        })
    }

    pub fn uses_cholesky(&self) -> bool {
        matches!(self.method, FgnMethod::Cholesky(_))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.n;
        match &self.method {
            FgnMethod::Circulant { sqrt_eig, fft } => {
                let m = 2 * n;
                let mf = m as f64;
                let mut w = vec![Complex64::new(0.0, 0.0); m];
                w[0] = Complex64::new(sqrt_eig[0] / mf.sqrt() * normal(rng), 0.0);
                w[n] = Complex64::new(sqrt_eig[n] / mf.sqrt() * normal(rng), 0.0);
                for k in 1..n {
                    let s = sqrt_eig[k] / (2.0 * mf).sqrt();
                    let re = normal(rng);
                    let im = normal(rng);
                    w[k] = Complex64::new(s * re, s * im);
                    w[m - k] = w[k].conj();
                }
                fft.process(&mut w);
                w[..n].iter().map(|z| z.re).collect()
            }
            FgnMethod::Cholesky(l) => {
                let z = nalgebra::DVector::from_fn(n, |_, _| normal(rng));
                (l * z).iter().copied().collect()
            }
        }
    }
}

/// `reps` fBm paths on `n_grid` equally spaced times `0, ..., t_end`.
pub fn fbm_paths(n_grid: usize, hurst: f64, t_end: f64, reps: usize, seed: u64) -> Result<SamplePaths> {
    if n_grid < 2 {
        return Err(SimulateError::InvalidInput("n_grid must be at least 2".into()));
    }
    check_reps(reps)?;
    if !(t_end > 0.0) {
        return Err(SimulateError::InvalidInput(format!("horizon {t_end} must be positive")));
    }
    let n = n_grid - 1;
    let h = t_end / n as f64;
    let gen = FgnGenerator::new(n, hurst, h)?;
    let rows: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, StreamPurpose::Fbm, r as u64);
            let inc = gen.sample(&mut rng);
            let mut path = Vec::with_capacity(n_grid);
            path.push(0.0);
            let mut acc = 0.0;
            for x in inc {
                acc += x;
                path.push(acc);
            }
            path
        })
        .collect();
    let times = (0..n_grid).map(|j| if j == n { t_end } else { j as f64 * h }).collect();
    Ok(SamplePaths {
        times,
        values: rows.concat(),
        reps,
        seed,
        scheme: Scheme::Fbm {
            hurst,
            cholesky_fallback: gen.uses_cholesky(),
        },
    })
}

// ---------------------------------------------------------------------------
// Discrete chaos grid

/// Settings for [`ChaosGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChaosGridConfig {
    /// Right end of the uniform part `[0, t_max]`.
    pub t_max: f64,
    /// Number of uniform cells on `[0, t_max]`.
    pub n_right: usize,
    /// Time quadrature nodes per uniform cell.
    pub nodes_per_cell: usize,
    /// Width ratio of consecutive cells left of the origin.
    pub left_growth: f64,
    /// Largest allowed bound on the discarded share of `||h_{t_max}||^2`.
    pub tail_fraction: f64,
    /// Cap on `|L|`.
    pub max_left_extent: f64,
    pub diagonal: DiagonalPolicy,
}

impl Default for ChaosGridConfig {
    fn default() -> Self {
        Self {
            t_max: 1.0,
            n_right: 512,
            nodes_per_cell: 4,
            left_growth: 1.15,
            tail_fraction: 1e-4,
            max_left_extent: 1e3,
            diagonal: DiagonalPolicy::WickCentered,
        }
    }
}

/// Cells whose nodes use exact left rows; later nodes interpolate.
const EXACT_CELLS: usize = 64;
/// Ratio between consecutive interpolation anchors.
const ANCHOR_RATIO: f64 = 1.02;

/// Upper bound on the share of `||h_t||^2` carried by `x_1 < L` or `x_2 < L`.
///
/// For `x < L <= 0 < s` the time factor obeys
/// `(s - x)^{d-1} e^{-lambda (s - x)} <= |L|^{d-1} e^{lambda x} e^{-lambda s}`,
/// and the remaining pair integral is at most `t (Gamma(d) lambda^{-d})^2`.
pub fn chaos_tail_bound(left_extent: f64, t: f64, p: &HermiteParams, h_norm2: f64) -> Result<f64> {
    let d = p.d();
    let lambda = p.lambda();
    let g = gamma(d)?;
    let mass = left_extent.powf(2.0 * d - 2.0) * (-2.0 * lambda * left_extent).exp() / (2.0 * lambda)
        * t
        * g
        * g
        * lambda.powf(-2.0 * d);
    Ok(2.0 * mass / h_norm2)
}

/// Cubic Lagrange weights at `s` for the four points `x[0..4]`.
fn lagrange4(x: &[f64], s: f64) -> [f64; 4] {
    let mut c = [1.0; 4];
    for (i, ci) in c.iter_mut().enumerate() {
        for (j, xj) in x.iter().enumerate().take(4) {
            if i != j {
                *ci *= (s - xj) / (x[i] - xj);
            }
        }
    }
    c
}

/// Precomputed kernel rows for the discrete chaos approximation.
pub struct ChaosGrid {
    params: HermiteParams,
    config: ChaosGridConfig,
    delta: f64,
    /// Edges of the left cells, ascending, ending at 0.
    left_edges: Vec<f64>,
    tail_bound: f64,
    /// Offset of each node inside its cell, and its quadrature weight.
    node_offsets: Vec<f64>,
    node_weights: Vec<f64>,
    /// Right block per node index: `toeplitz[nu][j]` couples cell `c` to cell `c - j`.
    toeplitz: Vec<Vec<f64>>,
    fft_len: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    spectra: Vec<Vec<Complex64>>,
    spectra_sq: Vec<Vec<Complex64>>,
    /// Cells handled with exact left rows.
    exact_cells: usize,
    /// `exact_rows[(c * q + nu) * n_left + i]`, without the node weight.
    exact_rows: Vec<f64>,
    anchors: Vec<f64>,
    /// `anchor_rows[a * n_left + i]`.
    anchor_rows: Vec<f64>,
    /// For nodes past the exact cells: first anchor and cubic weights.
    interp: Vec<(usize, [f64; 4])>,
    /// `E Y_n^2` per node.
    ey2: Vec<f64>,
}

impl ChaosGrid {
    pub fn new(p: &HermiteParams, config: &ChaosGridConfig) -> Result<Self> {
        if p.k() != 2 {
            return Err(SimulateError::InvalidInput(format!(
                "discrete chaos simulation supports k = 2 only (got k = {})",
                p.k()
            )));
        }
        p.require_tempered()?;
        let cfg = *config;
        if cfg.n_right == 0 || cfg.nodes_per_cell == 0 {
            return Err(SimulateError::InvalidInput(
                "n_right and nodes_per_cell must be positive".into(),
            ));
        }
        if !(cfg.t_max > 0.0) || !(cfg.left_growth >= 1.0) || !(cfg.tail_fraction > 0.0) {
            return Err(SimulateError::InvalidInput(
                "t_max and tail_fraction must be positive and left_growth at least 1".into(),
            ));
        }
        let d = p.d();
        let lambda = p.lambda();
        let delta = cfg.t_max / cfg.n_right as f64;
        let q = cfg.nodes_per_cell;

        // Truncation point from the tail bound.
        let var = cov_hermite(cfg.t_max, cfg.t_max, p, &QuadratureSpec::default())?;
        let h_norm2 = 0.5 * var;
        let bound_at = |ext: f64| chaos_tail_bound(ext, cfg.t_max, p, h_norm2);
        let cap = cfg.max_left_extent.max(delta);
        let cap_bound = bound_at(cap)?;
        if cap_bound > cfg.tail_fraction {
            return Err(SimulateError::TailBound {
                bound: cap_bound,
                allowed: cfg.tail_fraction,
                extent: cap,
            });
        }
        let (mut lo, mut hi) = (delta.ln(), cap.ln());
        if bound_at(delta)? <= cfg.tail_fraction {
            hi = lo;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if bound_at(mid.exp())? > cfg.tail_fraction {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let extent = hi.exp();

        let mut left_edges = vec![0.0];
        let mut width = delta;
        let mut pos = 0.0;
        while pos < extent {
            pos += width;
            left_edges.push(-pos);
            width *= cfg.left_growth;
        }
        left_edges.reverse();
        let left_extent = -left_edges[0];
        let tail_bound = bound_at(left_extent)?;
        let n_left = left_edges.len() - 1;

        // Time nodes: Gauss-Legendre graded towards the left cell edge.
        let grade = (1.0 / d).min(4.0);
        let (x, w) = gauss_legendre(q);
        let mut node_offsets = Vec::with_capacity(q);
        let mut node_weights = Vec::with_capacity(q);
        for (xi, wi) in x.iter().zip(w.iter()) {
            let y = 0.5 * (xi + 1.0);
            node_offsets.push(delta * y.powf(grade));
            node_weights.push(delta * 0.5 * wi * grade * y.powf(grade - 1.0));
        }

        let left_row = |s: f64, out: &mut [f64]| -> Result<()> {
            for i in 0..n_left {
                let (a, b) = (left_edges[i], left_edges[i + 1]);
                out[i] = power_exp_integral(d, lambda, s - b, s - a)? / (b - a).sqrt();
            }
            Ok(())
        };

        // Right block.
        let toeplitz: Vec<Vec<f64>> = (0..q)
            .into_par_iter()
            .map(|nu| -> Result<Vec<f64>> {
                let off = node_offsets[nu];
                let scale = (node_weights[nu] / delta).sqrt();
                (0..cfg.n_right)
                    .map(|j| {
                        let hi = j as f64 * delta + off;
                        let lo = (hi - delta).max(0.0);
                        Ok(scale * power_exp_integral(d, lambda, lo, hi)?)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;

        let fft_len = 2 * cfg.n_right;
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(fft_len);
        let ifft = planner.plan_fft_inverse(fft_len);
        let spectrum = |vals: &mut dyn Iterator<Item = f64>| {
            let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
            for (b, v) in buf.iter_mut().zip(vals) {
                b.re = v;
            }
            fft.process(&mut buf);
            buf
        };
        let spectra: Vec<Vec<Complex64>> =
            toeplitz.iter().map(|t| spectrum(&mut t.iter().copied())).collect();
        let spectra_sq: Vec<Vec<Complex64>> = toeplitz
            .iter()
            .map(|t| spectrum(&mut t.iter().map(|v| v * v)))
            .collect();

        // Left block: exact rows for early cells, interpolation afterwards.
        let exact_cells = cfg.n_right.min(EXACT_CELLS);
        let mut exact_rows = vec![0.0; exact_cells * q * n_left];
        exact_rows
            .par_chunks_mut(n_left.max(1))
            .enumerate()
            .try_for_each(|(node, row)| {
                let (c, nu) = (node / q, node % q);
                left_row(c as f64 * delta + node_offsets[nu], row)
            })?;
        let mut anchors = Vec::new();
        let mut interp = Vec::new();
        let mut anchor_rows = Vec::new();
        if exact_cells < cfg.n_right {
            let s_c = exact_cells as f64 * delta;
            let mut a = s_c / (ANCHOR_RATIO * ANCHOR_RATIO);
            while anchors.len() < 4 || anchors[anchors.len() - 3] <= cfg.t_max {
                anchors.push(a);
                a *= ANCHOR_RATIO;
            }
            anchor_rows = vec![0.0; anchors.len() * n_left];
            anchor_rows
                .par_chunks_mut(n_left.max(1))
                .zip(anchors.par_iter())
                .try_for_each(|(row, &s)| left_row(s, row))?;
            for c in exact_cells..cfg.n_right {
                for off in &node_offsets {
                    let s = c as f64 * delta + off;
                    // anchors[k] <= s < anchors[k + 1] with k >= 2
                    let mut k = ((s / s_c).ln() / ANCHOR_RATIO.ln()).floor() as usize + 2;
                    while k + 1 < anchors.len() && anchors[k + 1] <= s {
                        k += 1;
                    }
                    while k > 1 && anchors[k] > s {
                        k -= 1;
                    }
                    let first = k - 1;
                    interp.push((first, lagrange4(&anchors[first..first + 4], s)));
                }
            }
        }

        let mut grid = Self {
            params: *p,
            config: cfg,
            delta,
            left_edges,
            tail_bound,
            node_offsets,
            node_weights,
            toeplitz,
            fft_len,
            fft,
            ifft,
            spectra,
            spectra_sq,
            exact_cells,
            exact_rows,
            anchors,
            anchor_rows,
            interp,
            ey2: Vec::new(),
        };
        grid.ey2 = grid.node_variances();
        Ok(grid)
    }

    pub fn params(&self) -> &HermiteParams {
        &self.params
    }

    pub fn config(&self) -> &ChaosGridConfig {
        &self.config
    }

    /// Spacing of the uniform cells.
    pub fn spacing(&self) -> f64 {
        self.delta
    }

    /// Node offsets inside a cell, measured from its left edge.
    pub fn node_offsets(&self) -> &[f64] {
        &self.node_offsets
    }

    /// Left truncation point `L < 0`.
    pub fn left_truncation(&self) -> f64 {
        self.left_edges[0]
    }

    /// Bound on the discarded share of the kernel mass.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn n_left(&self) -> usize {
        self.left_edges.len() - 1
    }

    pub fn n_right(&self) -> usize {
        self.config.n_right
    }

    pub fn n_cells(&self) -> usize {
        self.n_left() + self.n_right()
    }

    /// Cell midpoints from `L` to `t_max`.
    pub fn points(&self) -> Vec<f64> {
        let left = self.left_edges.windows(2).map(|e| 0.5 * (e[0] + e[1]));
        let right = (0..self.n_right()).map(|c| (c as f64 + 0.5) * self.delta);
        left.chain(right).collect()
    }

    /// Cell edge times `0, delta, ..., t_max` at which paths are available.
    pub fn edge_times(&self) -> Vec<f64> {
        (0..=self.n_right())
            .map(|c| {
                if c == self.n_right() {
                    self.config.t_max
                } else {
                    c as f64 * self.delta
                }
            })
            .collect()
    }

    /// Index of the cell edge equal to `t`.
    pub fn edge_index(&self, t: f64) -> Result<usize> {
        let pos = t / self.delta;
        let idx = pos.round();
        if !(idx >= 0.0) || idx > self.n_right() as f64 || (pos - idx).abs() > 1e-9 * pos.max(1.0) {
            return Err(SimulateError::InvalidInput(format!(
                "time {t} is not a cell edge of the grid (spacing {}, t_max {})",
                self.delta, self.config.t_max
            )));
        }
        Ok(idx as usize)
    }

    fn q(&self) -> usize {
        self.config.nodes_per_cell
    }

    /// Left part of row `node` (including the node weight) into `out`.
    fn left_part(&self, node: usize, out: &mut [f64]) {
        let q = self.q();
        let n_left = self.n_left();
        let sw = self.node_weights[node % q].sqrt();
        if node / q < self.exact_cells {
            let row = &self.exact_rows[node * n_left..(node + 1) * n_left];
            for (o, r) in out.iter_mut().zip(row) {
                *o = sw * r;
            }
        } else {
            let (first, c) = self.interp[node - self.exact_cells * q];
            out.iter_mut().for_each(|o| *o = 0.0);
            for (a, ca) in c.iter().enumerate() {
                let row = &self.anchor_rows[(first + a) * n_left..(first + a + 1) * n_left];
                for (o, r) in out.iter_mut().zip(row) {
                    *o += sw * ca * r;
                }
            }
        }
    }

    fn node_variances(&self) -> Vec<f64> {
        let q = self.q();
        let n_right = self.n_right();
        let n_left = self.n_left();
        let mut ey2 = vec![0.0; n_right * q];
        let mut row = vec![0.0; n_left];
        for (node, e) in ey2.iter_mut().enumerate() {
            self.left_part(node, &mut row);
            *e = row.iter().map(|v| v * v).sum();
        }
        for nu in 0..q {
            let mut acc = 0.0;
            for c in 0..n_right {
                acc += self.toeplitz[nu][c] * self.toeplitz[nu][c];
                ey2[c * q + nu] += acc;
            }
        }
        ey2
    }

    /// Causal convolution of each Toeplitz column with `v` through the FFT.
    fn convolve(&self, v: &[f64], spectra: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
        let n = self.n_right();
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft_len];
        for (b, x) in buf.iter_mut().zip(v) {
            b.re = *x;
        }
        self.fft.process(&mut buf);
        let scale = 1.0 / self.fft_len as f64;
        spectra
            .iter()
            .map(|s| {
                let mut prod: Vec<Complex64> = buf.iter().zip(s).map(|(a, b)| a * b).collect();
                self.ifft.process(&mut prod);
                prod[..n].iter().map(|z| z.re * scale).collect()
            })
            .collect()
    }

    /// One path at every cell edge, `Z(0) = 0` first.
    pub fn sample_edges(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let q = self.q();
        let n_right = self.n_right();
        let n_left = self.n_left();
        let xi_left: Vec<f64> = (0..n_left).map(|_| normal(rng)).collect();
        let xi_right: Vec<f64> = (0..n_right).map(|_| normal(rng)).collect();
        let dot = |row: &[f64], v: &[f64]| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();

        let y_right = self.convolve(&xi_right, &self.spectra);
        let exact_nodes = self.exact_cells * q;
        let mut y_left: Vec<f64> = (0..exact_nodes)
            .map(|node| {
                let row = &self.exact_rows[node * n_left..(node + 1) * n_left];
                self.node_weights[node % q].sqrt() * dot(row, &xi_left)
            })
            .collect();
        let y_anchor: Vec<f64> = (0..self.anchors.len())
            .map(|a| dot(&self.anchor_rows[a * n_left..(a + 1) * n_left], &xi_left))
            .collect();
        for (j, (first, c)) in self.interp.iter().enumerate() {
            let node = exact_nodes + j;
            let v: f64 = (0..4).map(|a| c[a] * y_anchor[first + a]).sum();
            y_left.push(self.node_weights[node % q].sqrt() * v);
        }

        let centre: Vec<f64> = match self.config.diagonal {
            DiagonalPolicy::WickCentered => self.ey2.clone(),
            DiagonalPolicy::ExcludeDiagonal => self.diagonal_terms(&xi_left, &xi_right),
        };

        let mut z = Vec::with_capacity(n_right + 1);
        z.push(0.0);
        let mut acc = 0.0;
        for c in 0..n_right {
            let mut inc = 0.0;
            for nu in 0..q {
                let node = c * q + nu;
                let y = y_left[node] + y_right[nu][c];
                inc += y * y - centre[node];
            }
            acc += inc;
            z.push(acc);
        }
        z
    }

    /// `sum_i B_{n,i}^2 xi_i^2` for every node.
    fn diagonal_terms(&self, xi_left: &[f64], xi_right: &[f64]) -> Vec<f64> {
        let q = self.q();
        let n_left = self.n_left();
        let sq_right: Vec<f64> = xi_right.iter().map(|x| x * x).collect();
        let sq_left: Vec<f64> = xi_left.iter().map(|x| x * x).collect();
        let right = self.convolve(&sq_right, &self.spectra_sq);
        let exact_nodes = self.exact_cells * q;
        let mut out = Vec::with_capacity(self.n_right() * q);
        for node in 0..exact_nodes {
            let row = &self.exact_rows[node * n_left..(node + 1) * n_left];
            let v: f64 = row.iter().zip(&sq_left).map(|(r, s)| r * r * s).sum();
            out.push(self.node_weights[node % q] * v);
        }
        if !self.interp.is_empty() {
            // Banded Gram of the anchor rows weighted by xi^2.
            let na = self.anchors.len();
            let mut band = vec![[0.0; 4]; na];
            for (a, b) in band.iter_mut().enumerate() {
                let ra = &self.anchor_rows[a * n_left..(a + 1) * n_left];
                for (off, slot) in b.iter_mut().enumerate() {
                    if a + off < na {
                        let rb = &self.anchor_rows[(a + off) * n_left..(a + off + 1) * n_left];
                        *slot = (0..n_left).map(|i| ra[i] * rb[i] * sq_left[i]).sum();
                    }
                }
            }
            for (j, (first, c)) in self.interp.iter().enumerate() {
                let node = exact_nodes + j;
                let mut v = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                        v += c[a] * c[b] * band[first + lo][hi - lo];
                    }
                }
                out.push(self.node_weights[node % q] * v);
            }
        }
        for (node, o) in out.iter_mut().enumerate() {
            *o += right[node % q][node / q];
        }
        out
    }

    /// Rows `B_{n, .}` for every node up to the edge `cells`, columns are
    /// the left cells followed by the first `cells` uniform cells.
    pub fn kernel_rows(&self, cells: usize) -> DMatrix<f64> {
        self.kernel_rows_between(0, cells)
    }

    /// Rows for the nodes of cells `first..last`, columns as in
    /// [`ChaosGrid::kernel_rows`] with `last` uniform cells.
    pub fn kernel_rows_between(&self, first: usize, last: usize) -> DMatrix<f64> {
        let q = self.q();
        let n_left = self.n_left();
        let last = last.min(self.n_right());
        let first = first.min(last);
        let mut b = DMatrix::zeros((last - first) * q, n_left + last);
        let mut row = vec![0.0; n_left];
        for c in first..last {
            for nu in 0..q {
                let node = c * q + nu;
                let r = (c - first) * q + nu;
                self.left_part(node, &mut row);
                for (i, v) in row.iter().enumerate() {
                    b[(r, i)] = *v;
                }
                for j in 0..=c {
                    b[(r, n_left + c - j)] = self.toeplitz[nu][j];
                }
            }
        }
        b
    }

    /// Exact variance of the discrete increment over cells `first..last`.
    pub fn increment_variance(&self, first: usize, last: usize) -> f64 {
        let b = self.kernel_rows_between(first, last);
        let gram = &b * b.transpose();
        let frob: f64 = gram.iter().map(|v| v * v).sum();
        match self.config.diagonal {
            DiagonalPolicy::WickCentered => 2.0 * frob,
            DiagonalPolicy::ExcludeDiagonal => {
                let diag: f64 = b
                    .column_iter()
                    .map(|c| c.iter().map(|v| v * v).sum::<f64>().powi(2))
                    .sum();
                2.0 * (frob - diag)
            }
        }
    }

    /// The discrete kernel `A(t) = B^T B` for the edge time `t`.
    pub fn kernel_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        let b = self.kernel_rows(self.edge_index(t)?);
        Ok(b.transpose() * b)
    }

    /// Exact cumulant of order `m` of the Wick-centred discrete `Z(t)`.
    pub fn discrete_cumulant(&self, t: f64, m: usize) -> Result<f64> {
        let b = self.kernel_rows(self.edge_index(t)?);
        let gram = if b.nrows() < b.ncols() {
            &b * b.transpose()
        } else {
            b.transpose() * &b
        };
        Ok(cumulant_i2_discrete(&gram, m))
    }

    /// Exact variance of the discrete `Z(t)` under the grid's diagonal policy.
    pub fn discrete_variance(&self, t: f64) -> Result<f64> {
        Ok(self.increment_variance(0, self.edge_index(t)?))
    }

    pub fn scheme(&self) -> Scheme {
        Scheme::DiscreteChaos {
            hurst: self.params.hurst(),
            lambda: self.params.lambda(),
            n_right: self.n_right(),
            nodes_per_cell: self.q(),
            n_left: self.n_left(),
            left_extent: -self.left_truncation(),
            tail_bound: self.tail_bound,
            diagonal: self.config.diagonal,
        }
    }
}

fn check_grid_params(p: &HermiteParams, grid: &ChaosGrid) -> Result<()> {
    let g = grid.params();
    if g.k() != p.k() || g.d() != p.d() || g.lambda() != p.lambda() {
        return Err(SimulateError::InvalidInput(
            "grid was built for different process parameters".into(),
        ));
    }
    Ok(())
}

/// Discrete-chaos paths of the tempered Rosenblatt process at `times`, which
/// must be cell edges of `grid`.
pub fn simulate_tempered_rosenblatt(
    times: &[f64],
    p: &HermiteParams,
    grid: &ChaosGrid,
    reps: usize,
    seed: u64,
) -> Result<SamplePaths> {
    check_reps(reps)?;
    check_grid_params(p, grid)?;
    if times.is_empty() {
        return Err(SimulateError::InvalidInput("no output times".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SimulateError::InvalidInput("times must be strictly increasing".into()));
    }
    let idx: Vec<usize> = times.iter().map(|&t| grid.edge_index(t)).collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, StreamPurpose::Chaos, r as u64);
            let z = grid.sample_edges(&mut rng);
            idx.iter().map(|&i| z[i]).collect()
        })
        .collect();
    Ok(SamplePaths {
        times: times.to_vec(),
        values: rows.concat(),
        reps,
        seed,
        scheme: grid.scheme(),
    })
}

/// Increments `Z((i+1)/n) - Z(i/n)`, `i = 0..n`, per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseIncrements {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Row-major `reps x n`.
    pub values: Vec<f64>,
    /// `sqrt(E[Z(1/n)^2])` from the analytic covariance.
    pub s_n: f64,
    /// Standard deviation of the last simulated increment, exact for the grid.
    pub s_n_discrete: f64,
}

impl NoiseIncrements {
    pub fn row(&self, rep: usize) -> &[f64] {
        &self.values[rep * self.n..(rep + 1) * self.n]
    }
}

/// Analytic increment scale `S_n = sqrt(E[Z(1/n)^2])`.
pub fn increment_scale(n: usize, p: &HermiteParams, spec: &QuadratureSpec) -> Result<f64> {
    let h = 1.0 / n as f64;
    Ok(cov_hermite(h, h, p, spec)?.sqrt())
}

/// A single replication of the noise increments, on the given stream index.
pub fn noise_increment_row(n: usize, grid: &ChaosGrid, seed: u64, index: u64) -> Result<Vec<f64>> {
    let step = noise_step(n, grid)?;
    let mut rng = stream_rng(seed, StreamPurpose::Chaos, index);
    let z = grid.sample_edges(&mut rng);
    Ok((0..n).map(|i| z[(i + 1) * step] - z[i * step]).collect())
}

/// Standard deviation of the discrete increment over `[(n-1)/n, 1]`, the
/// one furthest from the truncation point.
pub fn discrete_increment_scale(n: usize, grid: &ChaosGrid) -> Result<f64> {
    let step = noise_step(n, grid)?;
    Ok(grid.increment_variance((n - 1) * step, n * step).sqrt())
}

fn noise_step(n: usize, grid: &ChaosGrid) -> Result<usize> {
    if n == 0 {
        return Err(SimulateError::InvalidInput("n must be positive".into()));
    }
    let last = grid.edge_index(1.0)?;
    if last % n != 0 {
        return Err(SimulateError::InvalidInput(format!(
            "grid has {last} cells on [0, 1], not a multiple of n = {n}"
        )));
    }
    Ok(last / n)
}

pub fn tempered_noise_increments(
    n: usize,
    p: &HermiteParams,
    grid: &ChaosGrid,
    reps: usize,
    seed: u64,
) -> Result<NoiseIncrements> {
    check_reps(reps)?;
    check_grid_params(p, grid)?;
    noise_step(n, grid)?;
    let rows: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| noise_increment_row(n, grid, seed, r as u64))
        .collect::<Result<_>>()?;
    Ok(NoiseIncrements {
        n,
        reps,
        seed,
        values: rows.concat(),
        s_n: increment_scale(n, p, &QuadratureSpec::default())?,
        s_n_discrete: discrete_increment_scale(n, grid)?,
    })
}

/// Log-log fit of the increment correlation decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFit {
    /// Fitted exponent `l_R`.
    pub l_r: f64,
    /// `|l_R| > 1`: decay faster than any power the condition can use.
    pub faster_than_power: bool,
    /// Lags `0..=max_lag` and the normalized correlations `R(0, lag)`.
    pub lags: Vec<usize>,
    pub correlations: Vec<f64>,
    /// Lags that entered the fit.
    pub fitted_lags: usize,
}

/// Correlation of the increments over `[0, 1/n]` and `[j/n, (j+1)/n]`, fitted
/// as `|R| ~ C j^{l_R}` over `2 <= j <= max_lag`.
pub fn increment_correlation_exponent(
    p: &HermiteParams,
    n: usize,
    max_lag: usize,
    spec: &QuadratureSpec,
) -> Result<CorrelationFit> {
    p.require_tempered()?;
    if n == 0 || max_lag < 3 {
        return Err(SimulateError::InvalidInput(
            "need n >= 1 and max_lag >= 3 for a slope".into(),
        ));
    }
    let h = 1.0 / n as f64;
    let var = increment_cross_moment(0.0, h, 0.0, h, p, spec)?.value;
    let lags: Vec<usize> = (0..=max_lag).collect();
    let correlations: Vec<f64> = lags
        .par_iter()
        .map(|&j| -> Result<f64> {
            if j == 0 {
                return Ok(1.0);
            }
            let jf = j as f64;
            let c = increment_cross_moment(0.0, h, jf * h, (jf + 1.0) * h, p, spec)?;
            Ok(c.value / var)
        })
        .collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = lags
        .iter()
        .zip(&correlations)
        .filter(|(&j, r)| j >= 2 && r.abs() > f64::MIN_POSITIVE && r.is_finite())
        .map(|(&j, r)| ((j as f64).ln(), r.abs().ln()))
        .collect();
    if pts.len() < 2 {
        return Err(SimulateError::FitDegenerate(format!(
            "only {} usable lags in [2, {max_lag}]; correlations underflow",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let l_r = sxy / sxx;
    Ok(CorrelationFit {
        l_r,
        faster_than_power: l_r < -1.0,
        lags,
        correlations,
        fitted_lags: pts.len(),
    })
}

// ---------------------------------------------------------------------------
// k-statistics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KStatistic {
    pub order: usize,
    pub estimate: f64,
    /// Delete-one jackknife standard error.
    pub se: f64,
}

fn kstat_from_sums(order: usize, n: f64, s: [f64; 5]) -> f64 {
    let [_, s1, s2, s3, s4] = s;
    match order {
        1 => s1 / n,
        2 => (n * s2 - s1 * s1) / (n * (n - 1.0)),
        3 => (2.0 * s1.powi(3) - 3.0 * n * s1 * s2 + n * n * s3) / (n * (n - 1.0) * (n - 2.0)),
        4 => {
            (-6.0 * s1.powi(4) + 12.0 * n * s1 * s1 * s2 - 3.0 * n * (n - 1.0) * s2 * s2
                - 4.0 * n * (n + 1.0) * s1 * s3
                + n * n * (n + 1.0) * s4)
                / (n * (n - 1.0) * (n - 2.0) * (n - 3.0))
        }
        _ => unreachable!("order checked by caller"),
    }
}

/// Unbiased k-statistics of orders `1..=max_order` with jackknife errors.
pub fn k_statistics(samples: &[f64], max_order: usize) -> Result<Vec<KStatistic>> {
    if samples.len() < 100 {
        return Err(SimulateError::InvalidInput(format!(
            "k-statistics need at least 100 samples (got {})",
            samples.len()
        )));
    }
    if !(1..=4).contains(&max_order) {
        return Err(SimulateError::InvalidInput(format!(
            "max_order {max_order} outside 1..=4"
        )));
    }
    let n = samples.len();
    let nf = n as f64;
    let first = samples[0];
    let shift = if samples.iter().all(|&x| x == first) {
        first
    } else {
        samples.iter().sum::<f64>() / nf
    };
    let c: Vec<f64> = samples.iter().map(|x| x - shift).collect();
    let mut sums = [0.0; 5];
    for x in &c {
        let mut p = 1.0;
        for s in sums.iter_mut() {
            *s += p;
            p *= x;
        }
    }
    let mut out = Vec::with_capacity(max_order);
    for order in 1..=max_order {
        let full = kstat_from_sums(order, nf, sums);
        let loo: Vec<f64> = c
            .iter()
            .map(|x| {
                let mut s = sums;
                let mut p = 1.0;
                for v in s.iter_mut() {
                    *v -= p;
                    p *= x;
                }
                kstat_from_sums(order, nf - 1.0, s)
            })
            .collect();
        let mean = loo.iter().sum::<f64>() / nf;
        let ss: f64 = loo.iter().map(|v| (v - mean) * (v - mean)).sum();
        let se = ((nf - 1.0) / nf * ss).sqrt();
        let estimate = if order == 1 { full + shift } else { full };
        out.push(KStatistic { order, estimate, se });
    }
    Ok(out)
}

/// Sample mean and its standard error.
pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::params_from_h;

    fn params() -> HermiteParams {
        params_from_h(2, 0.75, 1.0).unwrap()
    }

    fn small_grid(n_right: usize, diagonal: DiagonalPolicy) -> ChaosGrid {
        let cfg = ChaosGridConfig {
            n_right,
            diagonal,
            ..ChaosGridConfig::default()
        };
        ChaosGrid::new(&params(), &cfg).unwrap()
    }

    #[test]
    fn stream_rng_is_independent_of_order() {
        use rand::Rng;
        let a: u64 = stream_rng(7, StreamPurpose::Chaos, 3).random();
        let _: u64 = stream_rng(7, StreamPurpose::Chaos, 2).random();
        let b: u64 = stream_rng(7, StreamPurpose::Chaos, 3).random();
        let c: u64 = stream_rng(7, StreamPurpose::Fbm, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fgn_autocovariance_brownian() {
        assert!((fgn_autocovariance(0, 0.5, 0.25) - 0.25).abs() < 1e-15);
        assert!(fgn_autocovariance(3, 0.5, 0.25).abs() < 1e-15);
    }

    #[test]
    fn fbm_starts_at_zero_and_uses_circulant() {
        let paths = fbm_paths(33, 0.7, 2.0, 5, 1).unwrap();
        assert!(matches!(
            paths.scheme,
            Scheme::Fbm {
                cholesky_fallback: false,
                ..
            }
        ));
        assert_eq!(paths.times[0], 0.0);
        assert_eq!(*paths.times.last().unwrap(), 2.0);
        for r in 0..5 {
            assert_eq!(paths.value(r, 0), 0.0);
        }
    }

    #[test]
    fn fbm_variance_matches_power_law() {
        let reps = 10_000;
        let paths = fbm_paths(9, 0.7, 1.0, reps, 11).unwrap();
        let end: Vec<f64> = paths.column(8).iter().map(|x| x * x).collect();
        let (m, se) = mean_and_se(&end);
        assert!((m - 1.0).abs() < 4.0 * se, "Var B(1) = {m} +- {se}");
    }

    #[test]
    fn kstats_constant_and_linear() {
        let k = k_statistics(&vec![0.3; 200], 4).unwrap();
        assert_eq!(k[0].estimate, 0.3);
        for s in &k[1..] {
            assert_eq!(s.estimate, 0.0);
        }
        // 1..=100: k2 is the unbiased variance n(n+1)/12
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let k = k_statistics(&xs, 3).unwrap();
        assert!((k[1].estimate - 100.0 * 101.0 / 12.0).abs() < 1e-9);
        assert!(k[2].estimate.abs() < 1e-8);
        assert!(k_statistics(&xs[..50], 2).is_err());
        assert!(k_statistics(&xs, 5).is_err());
    }

    #[test]
    fn grid_geometry() {
        let g = small_grid(128, DiagonalPolicy::WickCentered);
        assert!(g.left_truncation() < 0.0);
        assert!(g.tail_bound() <= 1e-4);
        assert_eq!(g.spacing(), 1.0 / 128.0);
        let pts = g.points();
        assert_eq!(pts.len(), g.n_cells());
        assert!(pts.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g.edge_index(0.5).unwrap(), 64);
        assert!(g.edge_index(0.3).is_err());
    }

    #[test]
    fn tail_cap_is_rejected() {
        let cfg = ChaosGridConfig {
            max_left_extent: 0.5,
            n_right: 16,
            ..ChaosGridConfig::default()
        };
        let err = ChaosGrid::new(&params(), &cfg).err().unwrap();
        assert!(matches!(err, SimulateError::TailBound { .. }));
    }

    #[test]
    fn interpolated_rows_match_exact_rows() {
        let g = small_grid(256, DiagonalPolicy::WickCentered);
        let q = g.q();
        let n_left = g.n_left();
        let mut row = vec![0.0; n_left];
        let mut exact = vec![0.0; n_left];
        let mut worst: f64 = 0.0;
        for node in [64 * q, 100 * q + 1, 255 * q + 3] {
            g.left_part(node, &mut row);
            let (c, nu) = (node / q, node % q);
            let s = c as f64 * g.delta + g.node_offsets[nu];
            let sw = g.node_weights[nu].sqrt();
            for i in 0..n_left {
                let (a, b) = (g.left_edges[i], g.left_edges[i + 1]);
                exact[i] = sw
                    * power_exp_integral(g.params.d(), 1.0, s - b, s - a).unwrap()
                    / (b - a).sqrt();
            }
            let norm: f64 = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err: f64 = row.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            worst = worst.max(err / norm);
        }
        assert!(worst < 1e-6, "interpolation error {worst}");
    }

    #[test]
    fn node_variances_match_kernel_rows() {
        let g = small_grid(96, DiagonalPolicy::WickCentered);
        let b = g.kernel_rows(96);
        for node in [0, 5, 200, 383] {
            let direct: f64 = b.row(node).iter().map(|v| v * v).sum();
            assert!((direct - g.ey2[node]).abs() < 1e-12 * direct);
        }
    }

    #[test]
    fn fft_paths_match_dense_rows() {
        for policy in [DiagonalPolicy::WickCentered, DiagonalPolicy::ExcludeDiagonal] {
            let g = small_grid(80, policy);
            let mut rng = stream_rng(5, StreamPurpose::Chaos, 0);
            let z = g.sample_edges(&mut rng);
            let mut rng = stream_rng(5, StreamPurpose::Chaos, 0);
            let xi: Vec<f64> = (0..g.n_cells()).map(|_| normal(&mut rng)).collect();
            let b = g.kernel_rows(80);
            let xi = nalgebra::DVector::from_vec(xi);
            let y = &b * &xi;
            let mut acc = 0.0;
            for c in 0..80 {
                for nu in 0..g.q() {
                    let node = c * g.q() + nu;
                    let centre = match policy {
                        DiagonalPolicy::WickCentered => g.ey2[node],
                        DiagonalPolicy::ExcludeDiagonal => b
                            .row(node)
                            .iter()
                            .zip(xi.iter())
                            .map(|(r, x)| r * r * x * x)
                            .sum(),
                    };
                    acc += y[node] * y[node] - centre;
                }
                assert!(
                    (acc - z[c + 1]).abs() < 1e-9 * (1.0 + acc.abs()),
                    "{policy:?} edge {c}: {acc} vs {}",
                    z[c + 1]
                );
            }
            assert_eq!(z[0], 0.0);
        }
    }

    #[test]
    fn discrete_variance_approaches_analytic_from_below() {
        let p = params();
        let exact = cov_hermite(1.0, 1.0, &p, &QuadratureSpec::default()).unwrap();
        let coarse = small_grid(64, DiagonalPolicy::WickCentered).discrete_variance(1.0).unwrap();
        let fine = small_grid(128, DiagonalPolicy::WickCentered).discrete_variance(1.0).unwrap();
        assert!(coarse < fine && fine < exact, "{coarse} {fine} {exact}");
    }

    #[test]
    fn increment_variance_agrees_with_kernel_matrix() {
        for policy in [DiagonalPolicy::WickCentered, DiagonalPolicy::ExcludeDiagonal] {
            let g = small_grid(64, policy);
            let a = g.kernel_matrix(1.0).unwrap();
            let frob: f64 = a.iter().map(|v| v * v).sum();
            let diag: f64 = a.diagonal().iter().map(|v| v * v).sum();
            let expect = match policy {
                DiagonalPolicy::WickCentered => 2.0 * frob,
                DiagonalPolicy::ExcludeDiagonal => 2.0 * (frob - diag),
            };
            let got = g.discrete_variance(1.0).unwrap();
            assert!((got - expect).abs() < 1e-10 * expect, "{policy:?}: {got} vs {expect}");
        }
    }

    #[test]
    fn binary_round_trip() {
        let paths = fbm_paths(5, 0.6, 1.0, 3, 2).unwrap();
        let mut buf = Vec::new();
        paths.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 24 + 8 * (5 + 15));
        let back = SamplePaths::read_binary(&buf[..], paths.scheme.clone()).unwrap();
        assert_eq!(back, paths);
        assert!(SamplePaths::read_binary(&b"XXXX0000"[..], paths.scheme.clone()).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let paths = fbm_paths(3, 0.5, 1.0, 2, 3).unwrap();
        let mut buf = Vec::new();
        paths.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "0,0.5,1");
        assert!(lines[1].starts_with("0,"));
    }

    #[test]
    fn correlation_lag_zero_is_one() {
        let fit = increment_correlation_exponent(&params(), 16, 6, &QuadratureSpec::default()).unwrap();
        assert_eq!(fit.correlations[0], 1.0);
        assert!(fit.correlations.windows(2).all(|w| w[1] < w[0]));
        assert!(fit.l_r < 0.0);
    }
}
