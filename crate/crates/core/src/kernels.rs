//! Parameter algebra and kernel functions: the generalized Hermite kernel
//! checks (homogeneity and the tempered integrability condition), the
//! product kernel `g(x) = prod x_j^{d-1}`, the tempered time-domain kernel
//! `h_t^lambda` and the fractional filter weight `l_t^beta`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{
    integrate_anchored, integrate_nested, gauss_legendre, AxisBounds, IntegrationResult,
    QuadratureSpec,
};
use crate::specfun::{lower_incomplete_gamma, SpecfunError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("integral diverges: {0}")]
    NonIntegrable(String),
    #[error("quadrature did not converge (value {value}, error estimate {error})")]
    NotConverged { value: f64, error: f64 },
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Parameters of the tempered Hermite process of order `k`.
///
/// `d = 1/2 - (1 - H)/k` and `alpha = H - k/2 - 1 = k (d - 1)` are derived
/// from `(k, H)`, so every constructed value satisfies the range constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteParams {
    k: usize,
    hurst: f64,
    d: f64,
    alpha: f64,
    lambda: f64,
}

/// Shorthand for [`HermiteParams::from_hurst`].
pub fn params_from_h(k: usize, hurst: f64, lambda: f64) -> Result<HermiteParams, KernelError> {
    HermiteParams::from_hurst(k, hurst, lambda)
}

impl HermiteParams {
    pub fn from_hurst(k: usize, hurst: f64, lambda: f64) -> Result<Self, KernelError> {
        if k == 0 {
            return Err(KernelError::InvalidParams("order k must be at least 1".into()));
        }
        if !(hurst > 0.5 && hurst < 1.0) {
            return Err(KernelError::InvalidParams(format!(
                "H must lie in (1/2, 1), got {hurst}"
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(KernelError::InvalidParams(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        let kf = k as f64;
        let d = 0.5 - (1.0 - hurst) / kf;
        let alpha = hurst - kf / 2.0 - 1.0;
        Ok(Self {
            k,
            hurst,
            d,
            alpha,
            lambda,
        })
    }

    /// Build from `(k, H, lambda)` and an optional explicit `d`, which must
    /// agree with the value implied by `H`.
    pub fn new(k: usize, hurst: f64, d: Option<f64>, lambda: f64) -> Result<Self, KernelError> {
        let p = Self::from_hurst(k, hurst, lambda)?;
        if let Some(d) = d {
            if (d - p.d).abs() > 1e-12 {
                return Err(KernelError::InvalidParams(format!(
                    "d = {d} is inconsistent with H = {hurst} and k = {k} (expected {})",
                    p.d
                )));
            }
        }
        Ok(p)
    }

    /// Same order and Hurst index with a different tempering parameter.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self, KernelError> {
        Self::from_hurst(self.k, self.hurst, lambda)
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn hurst(&self) -> f64 {
        self.hurst
    }
    pub fn d(&self) -> f64 {
        self.d
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Error unless `lambda > 0` (needed by every covariance evaluation).
    pub fn require_tempered(&self) -> Result<(), KernelError> {
        if self.lambda > 0.0 {
            Ok(())
        } else {
            Err(KernelError::InvalidParams(
                "lambda must be > 0 for covariance and cumulant evaluation".into(),
            ))
        }
    }

    /// Bessel order `1/2 - d` appearing in the covariance.
    pub fn bessel_nu(&self) -> f64 {
        0.5 - self.d
    }
}

/// Filtered variant: the indicator of `[0, t]` replaced by `l_t^beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    base: HermiteParams,
    beta: f64,
    normalized: bool,
}

impl FilterParams {
    /// Requires `-alpha - k/2 - 1 < beta < -alpha - k/2` and `beta != 0`,
    /// i.e. `beta` in `(-H, 1 - H)` without zero.
    pub fn new(base: HermiteParams, beta: f64, normalized: bool) -> Result<Self, KernelError> {
        let kf = base.k as f64;
        let hi = -base.alpha - kf / 2.0;
        let lo = hi - 1.0;
        if !(beta > lo && beta < hi) || beta == 0.0 {
            return Err(KernelError::InvalidParams(format!(
                "beta must lie in ({lo}, {hi}) and differ from 0, got {beta}"
            )));
        }
        let hf = beta + 1.0 + base.alpha + kf / 2.0;
        if !(hf > 0.0 && hf < 1.0) {
            return Err(KernelError::InvalidParams(format!(
                "filtered self-similarity exponent {hf} is outside (0, 1)"
            )));
        }
        Ok(Self {
            base,
            beta,
            normalized,
        })
    }

    pub fn base(&self) -> &HermiteParams {
        &self.base
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn normalized(&self) -> bool {
        self.normalized
    }

    /// Self-similarity exponent `beta + 1 + alpha + k/2 = beta + H`.
    pub fn hurst_filtered(&self) -> f64 {
        self.beta + 1.0 + self.base.alpha + self.base.k as f64 / 2.0
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, KernelError> {
        Self::new(self.base.with_lambda(lambda)?, self.beta, self.normalized)
    }

    pub fn with_normalized(&self, normalized: bool) -> Self {
        Self { normalized, ..*self }
    }

    /// Constant multiplying each filter factor: `1/beta` or 1.
    pub fn weight_factor(&self) -> f64 {
        if self.normalized {
            1.0 / self.beta
        } else {
            1.0
        }
    }
}

/// Plain-text configuration of the process parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub k: usize,
    #[serde(rename = "H")]
    pub hurst: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_normalized")]
    pub normalized: bool,
}

fn default_normalized() -> bool {
    true
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self {
            k: 2,
            hurst: 0.75,
            d: None,
            lambda: 1.0,
            beta: None,
            normalized: true,
        }
    }
}

impl ParamsConfig {
    pub fn from_params(p: &HermiteParams) -> Self {
        Self {
            k: p.k,
            hurst: p.hurst,
            d: Some(p.d),
            lambda: p.lambda,
            beta: None,
            normalized: true,
        }
    }

    pub fn from_filter(fp: &FilterParams) -> Self {
        Self {
            beta: Some(fp.beta),
            normalized: fp.normalized,
            ..Self::from_params(&fp.base)
        }
    }

    pub fn hermite(&self) -> Result<HermiteParams, KernelError> {
        HermiteParams::new(self.k, self.hurst, self.d, self.lambda)
    }

    /// Filter parameters when `beta` is present.
    pub fn filter(&self) -> Result<Option<FilterParams>, KernelError> {
        match self.beta {
            None => Ok(None),
            Some(b) => Ok(Some(FilterParams::new(self.hermite()?, b, self.normalized)?)),
        }
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("parameter config serializes")
    }

    pub fn from_config_str(text: &str) -> Result<Self, KernelError> {
        toml::from_str(text).map_err(|e| KernelError::Config(e.to_string()))
    }
}

/// Positive-part power `(x)_+^p` with `0^p := 0` for every `p`.
#[inline]
pub fn pos_pow(x: f64, p: f64) -> f64 {
    if x > 0.0 {
        x.powf(p)
    } else {
        0.0
    }
}

/// `prod_j (x_j)_+^{d-1}`; zero as soon as one coordinate is `<= 0`.
pub fn hermite_g(x: &[f64], d: f64) -> f64 {
    let mut acc = 1.0;
    for &xj in x {
        if xj <= 0.0 {
            return 0.0;
        }
        acc *= xj.powf(d - 1.0);
    }
    acc
}

/// A kernel `g` on the positive orthant of `R^k`.
pub trait GeneralizedKernel: Sync {
    fn order(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
    /// Exponent of the per-coordinate behaviour at `x_j -> 0`, used as a
    /// grading hint (0 when regular).
    fn boundary_exponent(&self) -> f64 {
        0.0
    }
}

/// The Hermite product kernel of order `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteKernel {
    pub k: usize,
    pub d: f64,
}

impl HermiteKernel {
    pub fn from_params(p: &HermiteParams) -> Self {
        Self { k: p.k, d: p.d }
    }
}

impl GeneralizedKernel for HermiteKernel {
    fn order(&self) -> usize {
        self.k
    }
    fn eval(&self, x: &[f64]) -> f64 {
        hermite_g(x, self.d)
    }
    fn boundary_exponent(&self) -> f64 {
        self.d - 1.0
    }
}

/// Adapter turning a closure into a [`GeneralizedKernel`].
pub struct FnKernel<F> {
    pub k: usize,
    pub f: F,
    pub boundary_exponent: f64,
}

impl<F: Fn(&[f64]) -> f64 + Sync> GeneralizedKernel for FnKernel<F> {
    fn order(&self) -> usize {
        self.k
    }
    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn boundary_exponent(&self) -> f64 {
        self.boundary_exponent
    }
}

/// One factor `g1` of a product kernel `g(x) = prod g1(x_j)`.
pub trait Kernel1d: Sync {
    fn eval(&self, x: f64) -> f64;
    /// Homogeneity degree `a` of `g1` (`g1(cx) = c^a g1(x)`); it also fixes
    /// the behaviour at the origin.
    fn homogeneity(&self) -> f64;
}

/// `g1(x) = x_+^{d-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerKernel1d {
    pub d: f64,
}

impl Kernel1d for PowerKernel1d {
    fn eval(&self, x: f64) -> f64 {
        pos_pow(x, self.d - 1.0)
    }
    fn homogeneity(&self) -> f64 {
        self.d - 1.0
    }
}

/// Per-sample outcome of [`check_h1`].
#[derive(Debug, Clone, PartialEq)]
pub struct H1Sample {
    pub c: f64,
    pub x: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct H1Report {
    pub samples: Vec<H1Sample>,
    pub max_violation: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Check the homogeneity `g(c x) = c^alpha g(x)` on the supplied samples.
pub fn check_h1(
    g: &dyn GeneralizedKernel,
    alpha: f64,
    samples: &[(f64, Vec<f64>)],
    tol: f64,
) -> H1Report {
    let mut out = Vec::with_capacity(samples.len());
    let mut max_violation: f64 = 0.0;
    for (c, x) in samples {
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let lhs = g.eval(&cx);
        let rhs = c.powf(alpha) * g.eval(x);
        let scale = rhs.abs().max(f64::MIN_POSITIVE);
        let viol = if lhs == rhs { 0.0 } else { (lhs - rhs).abs() / scale };
        let viol = if viol.is_nan() { f64::INFINITY } else { viol };
        max_violation = max_violation.max(viol);
        out.push(H1Sample {
            c: *c,
            x: x.clone(),
            lhs,
            rhs,
            rel_violation: viol,
        });
    }
    H1Report {
        samples: out,
        max_violation,
        tol,
        pass: max_violation <= tol,
    }
}

/// Evaluate `int_{R_+^k} |g(x) g(1 + x)| e^{-2 lambda u sum x} dx`.
///
/// With `lambda u > 0` each axis is truncated after
/// `spec.truncation_decades` e-folds of the tempering factor; with
/// `lambda u = 0` the half-line map is used. A `converged = false` result
/// flags failure of the integrability condition (or tolerance exhaustion)
/// at this `(lambda, u)`.
pub fn check_h2(
    g: &dyn GeneralizedKernel,
    k: usize,
    lambda: f64,
    u: f64,
    spec: &QuadratureSpec,
) -> Result<IntegrationResult, KernelError> {
    if k != g.order() || k == 0 || k > crate::quadrature::MAX_NESTED_DIM {
        return Err(KernelError::InvalidParams(format!(
            "kernel order {} does not match k = {k}",
            g.order()
        )));
    }
    if !(u > 0.0) || !(lambda >= 0.0) {
        return Err(KernelError::InvalidParams(
            "check_h2 needs u > 0 and lambda >= 0".into(),
        ));
    }
    let rate = 2.0 * lambda * u;
    let upper = if rate > 0.0 {
        spec.truncation_length(rate)
    } else {
        f64::INFINITY
    };
    let e = g.boundary_exponent();
    // Without tempering the per-axis tail behaves like x^{2e}; after the
    // half-line map that is a power singularity of order -2 - 2e at y = 1.
    let tail = if upper.is_infinite() { (-2.0 - 2.0 * e).min(0.0) } else { 0.0 };
    let bounds = |_level: usize, _prefix: &[f64]| AxisBounds::graded(0.0, upper, e, tail);
    let integrand = |x: &[f64]| {
        let mut shifted = [0.0; crate::quadrature::MAX_NESTED_DIM];
        for (s, xi) in shifted.iter_mut().zip(x) {
            *s = 1.0 + xi;
        }
        let sum: f64 = x.iter().sum();
        (g.eval(x) * g.eval(&shifted[..x.len()])).abs() * (-rate * sum).exp()
    };
    let r = integrate_nested(k, &bounds, &integrand, spec);
    if !r.value.is_finite() {
        return Ok(IntegrationResult {
            converged: false,
            ..r
        });
    }
    Ok(r)
}

/// The tempered time kernel
/// `h_t(x) = int_{max(0, max x_j)}^t prod_j (s - x_j)^{d-1} e^{-lambda (s - x_j)} ds`.
///
/// Returns 0 when `max x_j >= t`. On the set where several coordinates tie
/// at a nonnegative maximum the integral can diverge; that case is reported
/// as [`KernelError::NonIntegrable`].
pub fn tempered_time_kernel(
    t: f64,
    x: &[f64],
    p: &HermiteParams,
    spec: &QuadratureSpec,
) -> Result<f64, KernelError> {
    if !(t > 0.0) {
        return Err(KernelError::InvalidParams(format!("t must be > 0, got {t}")));
    }
    if x.len() != p.k {
        return Err(KernelError::InvalidParams(format!(
            "kernel of order {} evaluated at a point of dimension {}",
            p.k,
            x.len()
        )));
    }
    let xmax = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if xmax >= t {
        return Ok(0.0);
    }
    let lower = xmax.max(0.0);
    let ties = x.iter().filter(|&&v| v == xmax).count();
    let exponent = ties as f64 * (p.d - 1.0);
    if xmax >= 0.0 && exponent <= -1.0 {
        return Err(KernelError::NonIntegrable(format!(
            "{ties} coordinates coincide at {xmax} >= 0"
        )));
    }
    let offsets: Vec<f64> = x.iter().map(|&xj| xmax - xj).collect();
    let (d, lam) = (p.d, p.lambda);
    // r = s - max x_j; each factor is evaluated as (r + offset_j).
    let integrand = |r: f64| {
        let mut acc = 1.0;
        for &o in &offsets {
            let y = r + o;
            if y <= 0.0 {
                return 0.0;
            }
            acc *= y.powf(d - 1.0) * (-lam * y).exp();
        }
        acc
    };
    let res = integrate_anchored(integrand, lower - xmax, t - xmax, 0.0, exponent.max(-0.999), spec);
    if !res.converged {
        return Err(KernelError::NotConverged {
            value: res.value,
            error: res.error_estimate,
        });
    }
    Ok(res.value)
}

/// Fractional filter weight `l_t^beta(s) = c [(t - s)_+^beta - (-s)_+^beta]`
/// with `c = 1/beta` when `normalized` and `c = 1` otherwise.
pub fn filter_weight(t: f64, s: f64, beta: f64, normalized: bool) -> Result<f64, KernelError> {
    if beta == 0.0 || !beta.is_finite() {
        return Err(KernelError::InvalidParams(
            "beta must be finite and nonzero; use indicator_weight for beta = 0".into(),
        ));
    }
    let raw = filter_difference(t, s, beta);
    Ok(if normalized { raw / beta } else { raw })
}

/// `(t - s)_+^beta - (-s)_+^beta`, written as `b^beta expm1(beta ln1p(t/b))`
/// with `b = -s` when both terms are present, so the far tail keeps full
/// relative accuracy.
#[inline]
pub(crate) fn filter_difference(t: f64, s: f64, beta: f64) -> f64 {
    let a = t - s;
    let b = -s;
    if a > 0.0 && b > 0.0 {
        b.powf(beta) * (beta * (t / b).ln_1p()).exp_m1()
    } else {
        pos_pow(a, beta) - pos_pow(b, beta)
    }
}

/// Degenerate branch of the filter: the indicator of `[0, t]` (of `[t, 0]`
/// with a minus sign when `t < 0`).
pub fn indicator_weight(t: f64, s: f64) -> f64 {
    if t >= 0.0 {
        if s >= 0.0 && s <= t {
            1.0
        } else {
            0.0
        }
    } else if s >= t && s <= 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `int_lo^hi r^{d-1} e^{-lambda r} dr` for `0 <= lo <= hi`: the integral of
/// one tempered power factor over a cell.
pub fn power_exp_integral(d: f64, lambda: f64, lo: f64, hi: f64) -> Result<f64, KernelError> {
    if !(lo >= 0.0) || !(hi >= lo) {
        return Err(KernelError::InvalidParams(format!(
            "cell [{lo}, {hi}] must satisfy 0 <= lo <= hi"
        )));
    }
    if hi == lo {
        return Ok(0.0);
    }
    if lo > 0.0 && hi / lo <= 1.5 {
        // Narrow cell away from the origin: the integrand is analytic on a
        // neighbourhood of the interval and 10-point Gauss-Legendre is exact
        // to rounding, avoiding cancellation between incomplete gammas.
        let (nodes, weights) = gauss_legendre_10();
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(weights.iter()) {
            let r = mid + half * x;
            acc += w * r.powf(d - 1.0) * (-lambda * r).exp();
        }
        return Ok(acc * half);
    }
    if lambda == 0.0 {
        return Ok((hi.powf(d) - lo.powf(d)) / d);
    }
    let scale = lambda.powf(-d);
    let upper = lower_incomplete_gamma(d, lambda * hi)?;
    let lower = lower_incomplete_gamma(d, lambda * lo)?;
    Ok(scale * (upper - lower))
}

fn gauss_legendre_10() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: std::sync::OnceLock<(Vec<f64>, Vec<f64>)> = std::sync::OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(10))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{bessel_k, gamma, BesselOrder};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn parameter_algebra() {
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        assert!((p.d() - 0.375).abs() < 1e-15);
        assert!((p.alpha() + 1.25).abs() < 1e-15);
        let p = params_from_h(1, 0.75, 1.0).unwrap();
        assert!((p.d() - 0.25).abs() < 1e-15);
        assert!((p.alpha() + 0.75).abs() < 1e-15);
        assert!(params_from_h(2, 0.5, 1.0).is_err());
        assert!(params_from_h(2, 1.0, 1.0).is_err());
        assert!(params_from_h(0, 0.7, 1.0).is_err());
        assert!(params_from_h(2, 0.7, -1.0).is_err());
        assert!(HermiteParams::new(2, 0.75, Some(0.375), 1.0).is_ok());
        assert!(HermiteParams::new(2, 0.75, Some(0.3), 1.0).is_err());
        let p0 = params_from_h(2, 0.75, 0.0).unwrap();
        assert!(p0.require_tempered().is_err());
    }

    #[test]
    fn filter_range() {
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        // beta in (-H, 1 - H) = (-0.75, 0.25)
        assert!(FilterParams::new(p, 0.2, true).is_ok());
        assert!(FilterParams::new(p, -0.7, true).is_ok());
        assert!(FilterParams::new(p, 0.25, true).is_err());
        assert!(FilterParams::new(p, -0.75, true).is_err());
        assert!(FilterParams::new(p, 0.0, true).is_err());
        let fp = FilterParams::new(p, 0.1, false).unwrap();
        assert!((fp.hurst_filtered() - 0.85).abs() < 1e-15);
    }

    #[test]
    fn config_round_trip() {
        let p = params_from_h(2, 0.8, 0.5).unwrap();
        let fp = FilterParams::new(p, -0.2, false).unwrap();
        let text = ParamsConfig::from_filter(&fp).to_config_string();
        let back = ParamsConfig::from_config_str(&text).unwrap();
        assert_eq!(back.filter().unwrap().unwrap(), fp);
        let minimal = ParamsConfig::from_config_str("k = 2\nH = 0.75\nlambda = 1.0\n").unwrap();
        let q = minimal.hermite().unwrap();
        assert!((q.d() - 0.375).abs() < 1e-15);
        assert!(minimal.normalized);
        assert!(ParamsConfig::from_config_str("k = 2\nH = 0.75\nlambda = 1.0\nd = 0.2\n")
            .unwrap()
            .hermite()
            .is_err());
        assert!(ParamsConfig::from_config_str("k = 2\nH = 0.75\nlambda = 1.0\nfoo = 1\n").is_err());
    }

    #[test]
    fn hermite_g_values() {
        assert_eq!(hermite_g(&[1.0, 1.0], 0.375), 1.0);
        assert!(rel(hermite_g(&[4.0, 1.0], 0.375), 4f64.powf(-0.625)) < 1e-15);
        assert!(rel(hermite_g(&[4.0, 1.0], 0.375), 0.42044820762685725) < 1e-15);
        assert_eq!(hermite_g(&[1.0, -1.0], 0.375), 0.0);
        assert_eq!(hermite_g(&[0.0, 2.0], 0.375), 0.0);
    }

    #[test]
    fn h1_checks() {
        let g = HermiteKernel { k: 2, d: 0.375 };
        let samples: Vec<(f64, Vec<f64>)> = vec![
            (7.0, vec![1.0, 1.0]),
            (0.3, vec![0.2, 5.0]),
            (12.5, vec![3.0, 0.01]),
        ];
        let alpha = 2.0 * (0.375 - 1.0);
        let rep = check_h1(&g, alpha, &samples, 1e-12);
        assert!(rep.pass, "{rep:?}");
        assert!(rel(rep.samples[0].lhs, 7f64.powf(alpha)) < 1e-14);
        let bad = FnKernel {
            k: 2,
            f: |x: &[f64]| x.iter().map(|v| 1.0 + v).product(),
            boundary_exponent: 0.0,
        };
        let rep = check_h1(&bad, 2.0, &samples, 1e-6);
        assert!(!rep.pass);
        assert!(rep.max_violation > 1e-3);
    }

    fn h2_oracle_k1(d: f64, lu: f64) -> f64 {
        // int_0^inf w^{d-1}(w+1)^{d-1} e^{-2 lu w} dw via the Bessel identity
        let nu = BesselOrder::new(0.5 - d).unwrap();
        lu.exp() * (2.0 * lu).powf(0.5 - d) * gamma(d).unwrap() / std::f64::consts::PI.sqrt()
            * bessel_k(nu, lu).unwrap()
    }

    #[test]
    fn h2_checks() {
        let spec = QuadratureSpec::default();
        let d = 0.375;
        let g1 = HermiteKernel { k: 1, d };
        let r = check_h2(&g1, 1, 0.5, 1.0, &spec).unwrap();
        assert!(r.converged, "{r:?}");
        let want = h2_oracle_k1(d, 0.5);
        assert!(rel(r.value, want) < 1e-7, "{} vs {want}", r.value);
        let g2 = HermiteKernel { k: 2, d };
        let spec2 = QuadratureSpec { rel_tol: 1e-6, ..spec };
        let r2 = check_h2(&g2, 2, 0.5, 1.0, &spec2).unwrap();
        assert!(r2.converged, "{r2:?}");
        assert!(rel(r2.value, want * want) < 1e-5, "{} vs {}", r2.value, want * want);
        // pure power without tempering still integrable for d < 1/2
        let r0 = check_h2(&g1, 1, 0.0, 1.0, &spec).unwrap();
        assert!(r0.converged, "{r0:?}");
        let exact = gamma(d).unwrap() * gamma(1.0 - 2.0 * d).unwrap() / gamma(1.0 - d).unwrap();
        assert!(rel(r0.value, exact) < 1e-7, "{} vs {exact}", r0.value);
        let neg = FnKernel {
            k: 1,
            f: |x: &[f64]| if x[0] > 0.0 { x[0].powi(-2) } else { 0.0 },
            boundary_exponent: 0.0,
        };
        let r = check_h2(&neg, 1, 0.0, 1.0, &spec).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn time_kernel_basic_cases() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(1, 0.75, 0.0).unwrap();
        let d = p.d();
        let v = tempered_time_kernel(1.0, &[0.0], &p, &spec).unwrap();
        assert!(rel(v, 1.0 / d) < 1e-9);
        let p2 = params_from_h(2, 0.75, 1.0).unwrap();
        assert_eq!(tempered_time_kernel(1.0, &[1.5, 0.0], &p2, &spec).unwrap(), 0.0);
        assert_eq!(tempered_time_kernel(1.0, &[1.0, 0.2], &p2, &spec).unwrap(), 0.0);
        assert!(matches!(
            tempered_time_kernel(1.0, &[0.0, 0.0], &p2, &spec),
            Err(KernelError::NonIntegrable(_))
        ));
    }

    #[test]
    fn time_kernel_against_incomplete_gamma() {
        // k = 1, lambda > 0: h_t(x) = lambda^{-d} [gamma(d, lambda (t - x)) - gamma(d, lambda (0 - x)_+)]
        let spec = QuadratureSpec::default();
        let p = params_from_h(1, 0.75, 1.3).unwrap();
        for &x in &[-2.0, -0.01, 0.0, 0.4] {
            let v = tempered_time_kernel(1.0, &[x], &p, &spec).unwrap();
            let want = power_exp_integral(p.d(), p.lambda(), (0.0f64 - x).max(0.0), 1.0 - x).unwrap();
            assert!(rel(v, want) < 1e-9, "x={x}: {v} vs {want}");
        }
    }

    #[test]
    fn time_kernel_two_dim_against_direct_quadrature() {
        // Independent check with a plain adaptive rule at a tighter tolerance.
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let spec = QuadratureSpec::default();
        let tight = QuadratureSpec { rel_tol: 1e-12, abs_tol: 1e-14, max_subdivisions: 20000, ..spec };
        let d = p.d();
        for x in [[0.0f64, -0.5], [0.3, -1.0], [-0.2, -0.7]] {
            let lo = x[0].max(x[1]).max(0.0);
            // s = lo + w^{1/d} removes the endpoint singularity.
            let direct = crate::quadrature::integrate_1d(
                |w| {
                    let pw = 1.0 / d;
                    let (a, b) = ((lo - x[0]) + w.powf(pw), (lo - x[1]) + w.powf(pw));
                    if a <= 0.0 || b <= 0.0 {
                        return 0.0;
                    }
                    pw * w.powf(pw - 1.0) * a.powf(d - 1.0) * b.powf(d - 1.0) * (-a - b).exp()
                },
                0.0,
                (1.0 - lo).powf(d),
                &tight,
            );
            let v = tempered_time_kernel(1.0, &x, &p, &spec).unwrap();
            assert!(rel(v, direct.value) < 1e-8, "{x:?}: {v} vs {}", direct.value);
        }
    }

    #[test]
    fn time_kernel_scaling() {
        let spec = QuadratureSpec { rel_tol: 1e-11, abs_tol: 1e-14, ..Default::default() };
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let x = [-0.3, 0.2];
        for &c in &[0.5, 2.0, 10.0] {
            let lhs = tempered_time_kernel(c * 1.0, &[c * x[0], c * x[1]], &p, &spec).unwrap();
            let pc = p.with_lambda(c * p.lambda()).unwrap();
            let rhs = c.powf(p.alpha() + 1.0) * tempered_time_kernel(1.0, &x, &pc, &spec).unwrap();
            assert!(rel(lhs, rhs) < 1e-9, "c={c}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn filter_weight_values() {
        assert_eq!(filter_weight(1.0, 2.0, 0.3, true).unwrap(), 0.0);
        let v = filter_weight(1.0, 0.5, 0.3, true).unwrap();
        assert!(rel(v, 0.5f64.powf(0.3) / 0.3) < 1e-15);
        let v = filter_weight(1.0, -1.0, 0.3, true).unwrap();
        assert!(rel(v, (2f64.powf(0.3) - 1.0) / 0.3) < 1e-15);
        let u = filter_weight(1.0, -1.0, 0.3, false).unwrap();
        assert!(rel(u, 2f64.powf(0.3) - 1.0) < 1e-15);
        assert!(filter_weight(1.0, 0.5, 0.0, true).is_err());
        assert_eq!(indicator_weight(1.0, 0.5), 1.0);
        assert_eq!(indicator_weight(1.0, 1.5), 0.0);
    }

    #[test]
    fn filter_weight_tail_decay() {
        // l(s) ~ |s|^{beta - 1} as s -> -inf: successive ratios on a geometric
        // grid approach 10^{beta - 1}.
        for &beta in &[-0.4, 0.2] {
            let mut ratios = Vec::new();
            for e in 2..7 {
                let s1 = -(10f64.powi(e));
                let s2 = -(10f64.powi(e + 1));
                let r = filter_weight(1.0, s2, beta, true).unwrap() / filter_weight(1.0, s1, beta, true).unwrap();
                ratios.push(r);
            }
            let target = 10f64.powf(beta - 1.0);
            assert!(rel(*ratios.last().unwrap(), target) < 1e-5, "beta={beta} {ratios:?}");
            // far tail keeps full relative accuracy: l(s) ~ (-s)^{beta-1} (1 + (beta-1)/(2(-s)))
            let s = -1e12;
            let v = filter_weight(1.0, s, beta, true).unwrap();
            let want = (-s).powf(beta - 1.0) * (1.0 + (beta - 1.0) / (2.0 * -s));
            assert!(rel(v, want) < 1e-12, "{v} vs {want}");
        }
    }

    #[test]
    fn power_exp_integral_branches() {
        let d = 0.375;
        let lam = 2.0;
        let spec = QuadratureSpec { rel_tol: 1e-13, abs_tol: 1e-16, ..Default::default() };
        for &(lo, hi) in &[(0.0, 0.01), (0.0, 3.0), (0.5, 0.6), (2.0, 2.9), (0.1, 40.0), (30.0, 31.0)] {
            let v = power_exp_integral(d, lam, lo, hi).unwrap();
            let q = integrate_anchored(|r: f64| r.powf(d - 1.0) * (-lam * r).exp(), lo, hi, 0.0, d - 1.0, &spec);
            assert!(rel(v, q.value) < 1e-11, "[{lo},{hi}]: {v} vs {}", q.value);
        }
        let v = power_exp_integral(d, 0.0, 0.0, 2.0).unwrap();
        assert!(rel(v, 2f64.powf(d) / d) < 1e-14);
        assert!(power_exp_integral(d, 1.0, 1.0, 0.5).is_err());
    }
}
