//! Configuration file: flat `key = value` lines grouped in sections, one per
//! module. Values given on the command line take precedence over the file,
//! and the file over built-in defaults.
//!
//! ```text
//! [params]       k, H, lambda, beta, normalized
//! [quadrature]   rel_tol, abs_tol, max_subdivisions, truncation_decades
//! [cov]          t, s
//! [cumulants]    t, m_max, oracle_cells
//! [simulate]     scheme, reps, seed, times, n_grid, t_end, csv, binary
//! [grid]         t_max, n_right, nodes_per_cell, left_growth, tail_fraction,
//!                max_left_extent, diagonal
//! [regress]      ns, x_eval, seeds, seed, H1, kappa, kernel, link, gamma_r,
//!                normalization, max_lag, noise
//! [noise]        H, lambda, cells_per_step, nodes_per_cell, left_growth,
//!                tail_fraction, max_left_extent, diagonal, scale_source
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use tempered_hermite::kernels::ParamsConfig;
use tempered_hermite::quadrature::QuadratureSpec;
use tempered_hermite::regress::{Link, NoiseConfig, NoiseNormalization, SmoothingKernel};
use tempered_hermite::simulate::ChaosGridConfig;

use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub k: Option<usize>,
    #[serde(rename = "H")]
    pub hurst: Option<f64>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub normalized: Option<bool>,
}

impl ParamsSection {
    /// Layer `self` over `base`.
    pub fn apply(&self, mut base: ParamsConfig) -> ParamsConfig {
        if let Some(k) = self.k {
            base.k = k;
        }
        if let Some(h) = self.hurst {
            base.hurst = h;
        }
        if let Some(l) = self.lambda {
            base.lambda = l;
        }
        if self.beta.is_some() {
            base.beta = self.beta;
        }
        if let Some(n) = self.normalized {
            base.normalized = n;
        }
        base
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovSection {
    pub t: Option<f64>,
    pub s: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CumulantsSection {
    pub t: Option<f64>,
    pub m_max: Option<usize>,
    pub oracle_cells: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimScheme {
    Chaos,
    Fbm,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub scheme: Option<SimScheme>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub times: Option<Vec<f64>>,
    pub n_grid: Option<usize>,
    pub t_end: Option<f64>,
    pub csv: Option<bool>,
    pub binary: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressSection {
    pub ns: Option<Vec<usize>>,
    pub x_eval: Option<Vec<f64>>,
    pub seeds: Option<usize>,
    pub seed: Option<u64>,
    #[serde(rename = "H1")]
    pub h1: Option<f64>,
    pub kappa: Option<f64>,
    pub kernel: Option<SmoothingKernel>,
    pub link: Option<Link>,
    pub gamma_r: Option<f64>,
    pub normalization: Option<NoiseNormalization>,
    pub max_lag: Option<usize>,
    /// Switch the chaos noise on or off.
    pub noise: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub params: ParamsSection,
    pub quadrature: Option<QuadratureSpec>,
    #[serde(default)]
    pub cov: CovSection,
    #[serde(default)]
    pub cumulants: CumulantsSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    pub grid: Option<ChaosGridConfig>,
    #[serde(default)]
    pub regress: RegressSection,
    pub noise: Option<NoiseConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Ok(toml::from_str(&text)?)
            }
        }
    }
}
