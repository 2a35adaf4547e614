//! Second-order and cumulant structure of tempered Hermite processes.
//!
//! The covariance of `Z(t)` is `k! int_0^t int_0^s rho(|u - v|)^k dv du`,
//! where `rho(r) = int (u - x)_+^{d-1} (v - x)_+^{d-1} e^{-lambda(u - x)}
//! e^{-lambda(v - x)} dx` has the closed Bessel form of
//! [`bessel_product_identity`]. For `k = 2` the `m`-th cumulant is
//! `2^{m-1} (m-1)!` times the cyclic integral of `rho` over `[0, t]^m`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{FilterParams, HermiteParams, Kernel1d, KernelError};
use crate::quadrature::{
    integrate_1d_graded, integrate_2d_diag_singular_offset, integrate_anchored, integrate_half_line,
    integrate_md_shift_invariant, integrate_semi_infinite,
    IntegrationResult, QuadratureError, QuadratureSpec, Rect,
};
use crate::specfun::{bessel_k, gamma, BesselOrder, SpecfunError, BESSEL_X_FLOOR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentsError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("{what}: quadrature did not converge (value {value}, error estimate {error})")]
    NotConverged {
        what: String,
        value: f64,
        error: f64,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

type Result<T> = std::result::Result<T, MomentsError>;

/// Highest cumulant order handled by tensor quadrature.
pub const MAX_CUMULANT_ORDER: usize = 4;

fn require_converged(what: &str, r: IntegrationResult) -> Result<IntegrationResult> {
    // Accept a result whose error estimate is within a small multiple of the
    // requested tolerance even if the subdivision budget ran out.
    if r.converged && r.value.is_finite() {
        Ok(r)
    } else {
        Err(MomentsError::NotConverged {
            what: what.to_string(),
            value: r.value,
            error: r.error_estimate,
        })
    }
}

/// `rho(r) = (2 lambda)^{1/2 - tau} Gamma(tau)/sqrt(pi) K_{1/2 - tau}(lambda r) r^{tau - 1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairKernel {
    order: BesselOrder,
    tau: f64,
    lambda: f64,
    prefactor: f64,
    // two-term small-argument expansion of K_nu, used below the Bessel floor
    small_lead: f64,
    small_next: f64,
}

impl PairKernel {
    pub fn new(tau: f64, lambda: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 0.5) {
            return Err(MomentsError::InvalidInput(format!("tau must lie in (0, 1/2), got {tau}")));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(MomentsError::InvalidInput(format!(
                "lambda must be finite and > 0, got {lambda}"
            )));
        }
        let nu = 0.5 - tau;
        let prefactor = (2.0 * lambda).powf(nu) * gamma(tau)? / std::f64::consts::PI.sqrt();
        Ok(Self {
            order: BesselOrder::new(nu)?,
            tau,
            lambda,
            prefactor,
            small_lead: 0.5 * gamma(nu)? * 2f64.powf(nu),
            small_next: 0.5 * (gamma(1.0 - nu)? / -nu) * 2f64.powf(-nu),
        })
    }

    pub fn from_params(p: &HermiteParams) -> Result<Self> {
        Self::new(p.d(), p.lambda())
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    /// Constant `(2 lambda)^{1/2 - tau} Gamma(tau)/sqrt(pi)`.
    pub fn prefactor(&self) -> f64 {
        self.prefactor
    }

    /// `K_{1/2 - tau}(lambda r) r^{tau - 1/2}` for `r > 0`.
    pub fn bessel_part(&self, r: f64) -> f64 {
        let r = r.abs();
        let x = self.lambda * r;
        let nu = self.order.value();
        let k = if x < BESSEL_X_FLOOR {
            // K_nu(x) = Gamma(nu)/2 (x/2)^{-nu} + Gamma(-nu)/2 (x/2)^{nu} + O(x^{2 - nu})
            self.small_lead * x.powf(-nu) + self.small_next * x.powf(nu)
        } else {
            match bessel_k(self.order, x) {
                Ok(v) => v,
                Err(_) => 0.0,
            }
        };
        if k == 0.0 {
            return 0.0;
        }
        k * r.powf(self.tau - 0.5)
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.prefactor * self.bessel_part(r)
    }
}

/// Right-hand side of the product identity
/// `int e^{-lambda(u-x)_+} e^{-lambda(v-x)_+} (u-x)_+^{tau-1} (v-x)_+^{tau-1} dx
///  = (2 lambda)^{1/2-tau} Gamma(tau)/sqrt(pi) K_{1/2-tau}(lambda |u-v|) |u-v|^{tau-1/2}`.
pub fn bessel_product_identity(tau: f64, lambda: f64, u: f64, v: f64) -> Result<f64> {
    if u == v {
        return Err(MomentsError::InvalidInput(
            "the identity diverges at u = v; use the small-argument limit".into(),
        ));
    }
    Ok(PairKernel::new(tau, lambda)?.eval(u - v))
}

/// Left-hand side of the product identity by direct quadrature over `x`.
pub fn bessel_product_identity_lhs(
    tau: f64,
    lambda: f64,
    u: f64,
    v: f64,
    spec: &QuadratureSpec,
) -> Result<IntegrationResult> {
    if !(tau > 0.0 && tau < 0.5) || !(lambda > 0.0) || u == v {
        return Err(MomentsError::InvalidInput(format!(
            "need tau in (0, 1/2), lambda > 0, u != v; got tau = {tau}, lambda = {lambda}"
        )));
    }
    let r = (u - v).abs();
    // w = min(u, v) - x >= 0, the other factor sees w + r.
    let f = |w: f64| {
        if w <= 0.0 {
            return 0.0;
        }
        w.powf(tau - 1.0) * (w + r).powf(tau - 1.0) * (-lambda * (2.0 * w + r)).exp()
    };
    let split = r.min(spec.truncation_length(2.0 * lambda));
    let head = integrate_1d_graded(f, 0.0, split, tau - 1.0, 0.0, spec);
    let tail = integrate_semi_infinite(f, split, 2.0 * lambda, 0.0, spec);
    Ok(head.combine(tail))
}

/// `E[(Z(u1) - Z(u0)) (Z(v1) - Z(v0))]` for the tempered Hermite process.
pub fn increment_cross_moment(
    u0: f64,
    u1: f64,
    v0: f64,
    v1: f64,
    p: &HermiteParams,
    spec: &QuadratureSpec,
) -> Result<IntegrationResult> {
    p.require_tempered()?;
    let rho = PairKernel::from_params(p)?;
    let k = p.k() as i32;
    let kfact = factorial(p.k());
    let e = p.k() as f64 * (2.0 * p.d() - 1.0);
    let g = |_u: f64, delta: f64| {
        if delta == 0.0 {
            return 0.0;
        }
        rho.eval(delta).powi(k)
    };
    let inner_spec = QuadratureSpec {
        abs_tol: spec.abs_tol / kfact,
        ..*spec
    };
    let r = integrate_2d_diag_singular_offset(g, Rect::new(u0, u1, v0, v1), e, &inner_spec);
    require_converged("increment cross moment", r.scaled(kfact))
}

/// Covariance `E[Z(t) Z(s)]` of the tempered Hermite process.
pub fn cov_hermite(t: f64, s: f64, p: &HermiteParams, spec: &QuadratureSpec) -> Result<f64> {
    if !(t >= 0.0) || !(s >= 0.0) {
        return Err(MomentsError::InvalidInput(format!("need t, s >= 0, got ({t}, {s})")));
    }
    if t == 0.0 || s == 0.0 {
        return Ok(0.0);
    }
    Ok(increment_cross_moment(0.0, t, 0.0, s, p, spec)?.value)
}

/// Covariance for a product kernel `g(x) = prod g1(x_j)` through
/// `k! int int e^{-lambda k |u-v|} D(|u-v|)^k` with
/// `D(r) = int_0^inf g1(w) g1(r + w) e^{-2 lambda w} dw` by quadrature.
/// Slower than [`cov_hermite`]; it uses neither the Bessel identity nor
/// the power form of `g1`.
pub fn cov_general_product(
    t: f64,
    s: f64,
    g1: &dyn Kernel1d,
    p: &HermiteParams,
    spec: &QuadratureSpec,
) -> Result<f64> {
    p.require_tempered()?;
    if !(t >= 0.0) || !(s >= 0.0) {
        return Err(MomentsError::InvalidInput(format!("need t, s >= 0, got ({t}, {s})")));
    }
    if t == 0.0 || s == 0.0 {
        return Ok(0.0);
    }
    let lam = p.lambda();
    let k = p.k() as i32;
    let a = g1.homogeneity();
    let d_spec = spec.inner(0.05);
    let dfun = |r: f64| {
        let f = |w: f64| g1.eval(w) * g1.eval(r + w) * (-2.0 * lam * w).exp();
        integrate_semi_infinite(f, 0.0, 2.0 * lam, a.max(-0.999), &d_spec).value
    };
    let e = p.k() as f64 * (2.0 * a + 1.0);
    let g = |_u: f64, delta: f64| {
        if delta == 0.0 {
            return 0.0;
        }
        let r = delta.abs();
        ((-lam * r).exp() * dfun(r)).powi(k)
    };
    let kfact = factorial(p.k());
    let inner_spec = QuadratureSpec {
        abs_tol: spec.abs_tol / kfact,
        ..*spec
    };
    let r = integrate_2d_diag_singular_offset(g, Rect::new(0.0, t, 0.0, s), e, &inner_spec);
    Ok(require_converged("general product covariance", r.scaled(kfact))?.value)
}

/// Constant `c_beta` with `int ((t-u)_+^beta - (-u)_+^beta)^2 du = c_beta |t|^{2 beta + 1}`.
pub fn filter_norm_constant(beta: f64) -> Result<f64> {
    let h = beta + 0.5;
    Ok(gamma(beta + 1.0)?.powi(2) / (gamma(2.0 * beta + 2.0)? * (std::f64::consts::PI * h).sin()))
}

/// `int l_t(u) l_s(u - delta) du` in closed form.
pub fn filter_cross_closed(t: f64, s: f64, delta: f64, beta: f64, normalized: bool) -> Result<f64> {
    let a = 2.0 * beta + 1.0;
    let c = filter_norm_constant(beta)?;
    let r = |x: f64, y: f64| 0.5 * c * (x.abs().powf(a) + y.abs().powf(a) - (x - y).abs().powf(a));
    let raw = r(t, s + delta) - r(t, delta);
    Ok(if normalized { raw / (beta * beta) } else { raw })
}

/// `int prod_j l_t(u + a_j) du` over the real line by quadrature, for
/// nonnegative shifts `a_j`.
///
/// The line is cut at every point where a factor switches on or off. On each
/// piece the integrand is evaluated through the offset `y` from the nearest
/// cut, so factors that are singular there see their argument exactly.
pub fn filter_product_integral(
    t: f64,
    shifts: &[f64],
    beta: f64,
    normalized: bool,
    spec: &QuadratureSpec,
) -> IntegrationResult {
    if t == 0.0 || shifts.is_empty() {
        return IntegrationResult::zero();
    }
    let c = if normalized { 1.0 / beta } else { 1.0 };
    let n = shifts.len();
    let scale = c.powi(n as i32);
    let amax = shifts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let upper = t.max(0.0) - amax;
    let mut pts: Vec<f64> = shifts
        .iter()
        .flat_map(|&a| [t - a, -a])
        .filter(|&x| x < upper)
        .collect();
    pts.push(upper);
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    // Every factor switching on or off at a cut adds `beta` to the local
    // exponent there.
    let expo = |x: f64| {
        let hits = shifts
            .iter()
            .map(|&a| (t - a == x) as usize + (-a == x) as usize)
            .sum::<usize>();
        hits as f64 * beta
    };
    // Integrand at u = base + sign * y.
    let at = |base: f64, sign: f64, y: f64| {
        let mut acc = 1.0;
        for &a in shifts {
            let hi = (t - a - base) - sign * y;
            let lo = (-a - base) - sign * y;
            let v = shifted_filter_difference(hi, lo, t, beta);
            if v == 0.0 {
                return 0.0;
            }
            acc *= v;
        }
        acc
    };
    let piece_spec = spec.scaled(1.0 / (2.0 * pts.len() as f64 + 1.0));
    let mut total = IntegrationResult::zero();
    for w in pts.windows(2) {
        let half = 0.5 * (w[1] - w[0]);
        let left = integrate_anchored(|y| at(w[0], 1.0, y), 0.0, half, 0.0, expo(w[0]), &piece_spec);
        let right = integrate_anchored(|y| at(w[1], -1.0, y), 0.0, half, 0.0, expo(w[1]), &piece_spec);
        total = total.combine(left).combine(right);
    }
    // Tail (-inf, pts[0]] decays like |u|^{n (beta - 1)}.
    let b0 = pts[0];
    let tail_exp = n as f64 * (1.0 - beta) - 2.0;
    let tail = integrate_half_line(|x: f64| at(b0, -1.0, x), 0.0, expo(b0), tail_exp, &piece_spec);
    total.combine(tail).scaled(scale)
}

/// `hi_+^beta - lo_+^beta` where `hi - lo = t`, stable when both are positive.
#[inline]
fn shifted_filter_difference(hi: f64, lo: f64, t: f64, beta: f64) -> f64 {
    if hi > 0.0 && lo > 0.0 {
        lo.powf(beta) * (beta * (t / lo).ln_1p()).exp_m1()
    } else {
        let p = |x: f64| if x > 0.0 { x.powf(beta) } else { 0.0 };
        p(hi) - p(lo)
    }
}

/// Self-similarity prefactor exponent of the filtered covariance:
/// `Var Z(t) = C_{|t|} |t|^gamma` with `gamma = 2 beta + 2 + k (d - 1/2)`.
pub fn filtered_gamma_exponent(fp: &FilterParams) -> f64 {
    let p = fp.base();
    2.0 * fp.beta() + 2.0 + p.k() as f64 * (p.d() - 0.5)
}

/// `C_r = k! prefactor^k int int l_1(u) l_1(v) |u-v|^{k(d-1/2)} K^k(lambda r |u-v|) du dv`,
/// reduced to an integral over `delta = v - u` with the filter autocorrelation
/// evaluated by quadrature.
pub fn filtered_scale_constant(r: f64, fp: &FilterParams, spec: &QuadratureSpec) -> Result<f64> {
    let p = fp.base();
    p.require_tempered()?;
    if !(r > 0.0) {
        return Err(MomentsError::InvalidInput(format!("C_r needs r > 0, got {r}")));
    }
    let scaled = PairKernel::new(p.d(), p.lambda() * r)?;
    let k = p.k() as i32;
    let pref = PairKernel::from_params(p)?.prefactor();
    let beta = fp.beta();
    let w_spec = spec.inner(0.05);
    let f = |delta: f64| {
        if delta <= 0.0 {
            return 0.0;
        }
        // bessel_part at scaled lambda gives K(lambda r delta) delta^{d-1/2}
        let kern = scaled.bessel_part(delta).powi(k);
        if kern == 0.0 {
            return 0.0;
        }
        kern * filter_product_integral(1.0, &[0.0, delta], beta, fp.normalized(), &w_spec).value
    };
    let e0 = p.k() as f64 * (2.0 * p.d() - 1.0);
    let e1 = (2.0 * beta + 1.0).min(0.0);
    let rate = p.k() as f64 * p.lambda() * r;
    let tmax = spec.truncation_length(rate);
    let mut total = integrate_1d_graded(&f, 0.0, tmax.min(1.0), e0, if tmax > 1.0 { e1 } else { 0.0 }, spec);
    if tmax > 1.0 {
        total = total.combine(integrate_1d_graded(&f, 1.0, tmax, e1, 0.0, spec));
    }
    let total = require_converged("filtered scale constant", total)?;
    Ok(factorial(p.k()) * pref.powi(k) * 2.0 * total.value)
}

/// Covariance of the filtered process:
/// `1/2 [C_{|t|} |t|^g + C_{|s|} |s|^g - C_{|t-s|} |t-s|^g]`.
pub fn cov_filtered_hermite(t: f64, s: f64, fp: &FilterParams, spec: &QuadratureSpec) -> Result<f64> {
    let g = filtered_gamma_exponent(fp);
    let term = |r: f64| -> Result<f64> {
        let r = r.abs();
        if r == 0.0 {
            Ok(0.0)
        } else {
            Ok(filtered_scale_constant(r, fp, spec)? * r.powf(g))
        }
    };
    let vt = term(t)?;
    if t == s {
        return Ok(vt);
    }
    let vs = if s.abs() == t.abs() { vt } else { term(s)? };
    let vd = term(t - s)?;
    Ok(0.5 * (vt + vs - vd))
}

/// Filtered covariance straight from `k! int int l_t(u) l_s(v) rho(u - v)^k du dv`
/// with `rho` from its defining integral (no Bessel function) and the
/// `u` integral in closed form. Serves as an independent check of
/// [`cov_filtered_hermite`].
pub fn cov_filtered_general(t: f64, s: f64, fp: &FilterParams, spec: &QuadratureSpec) -> Result<f64> {
    let p = fp.base();
    p.require_tempered()?;
    let (d, lam, k) = (p.d(), p.lambda(), p.k() as i32);
    let beta = fp.beta();
    let rho_spec = spec.inner(0.05);
    let rho = |r: f64| {
        let f = |w: f64| {
            if w <= 0.0 {
                return 0.0;
            }
            w.powf(d - 1.0) * (w + r).powf(d - 1.0) * (-lam * (2.0 * w + r)).exp()
        };
        let split = r.min(1.0);
        integrate_1d_graded(f, 0.0, split, d - 1.0, 0.0, &rho_spec)
            .combine(integrate_semi_infinite(f, split, 2.0 * lam, 0.0, &rho_spec))
            .value
    };
    let weight = |delta: f64| filter_cross_closed(t, s, delta, beta, fp.normalized()).unwrap_or(f64::NAN);
    let f = |delta: f64| {
        if delta == 0.0 {
            return 0.0;
        }
        rho(delta.abs()).powi(k) * weight(delta)
    };
    let e0 = p.k() as f64 * (2.0 * d - 1.0);
    let ek = (2.0 * beta + 1.0).min(0.0);
    let mut pts = vec![0.0, t, -s, t - s];
    pts.sort_by(|a, b| a.total_cmp(b));
    pts.dedup();
    let expo = |x: f64| if x == 0.0 { e0 } else { ek };
    let piece = spec.scaled(1.0 / (pts.len() as f64 + 1.0));
    let rate = p.k() as f64 * lam;
    let mut total = IntegrationResult::zero();
    for w in pts.windows(2) {
        total = total.combine(integrate_1d_graded(&f, w[0], w[1], expo(w[0]), expo(w[1]), &piece));
    }
    let lo = pts[0];
    let hi = *pts.last().unwrap();
    let right = integrate_1d_graded(&f, hi, hi + piece.truncation_length(rate), expo(hi), 0.0, &piece);
    let left = integrate_1d_graded(&f, lo - piece.truncation_length(rate), lo, 0.0, expo(lo), &piece);
    total = total.combine(right).combine(left);
    let total = require_converged("filtered covariance (direct)", total)?;
    Ok(factorial(p.k()) * total.value)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|j| j as f64).product()
}

/// `2^{m-1} (m-1)!`, the second-chaos cumulant constant.
pub fn chaos2_cumulant_constant(m: usize) -> f64 {
    2f64.powi(m as i32 - 1) * factorial(m - 1)
}

fn check_order(m: usize, max: usize) -> Result<()> {
    if m < 2 || m > max {
        return Err(MomentsError::InvalidInput(format!(
            "cumulant order must lie in [2, {max}], got {m}"
        )));
    }
    Ok(())
}

/// `int_{[0,t]^m} prod_{cyclic} psi(|s_i - s_{i+1}|) ds` for a pair function
/// with `psi(r) ~ r^e` at 0.
pub fn cyclic_chain_integral<P: Fn(f64) -> f64 + Sync>(
    psi: P,
    e: f64,
    t: f64,
    m: usize,
    spec: &QuadratureSpec,
) -> Result<IntegrationResult> {
    check_order(m, MAX_CUMULANT_ORDER)?;
    let r = match m {
        2 => integrate_md_shift_invariant(|g: &[f64]| psi(g[0]).powi(2), 2, t, 2.0 * e, spec)?,
        3 => integrate_md_shift_invariant(
            |g: &[f64]| psi(g[0]) * psi(g[1]) * psi(g[0] + g[1]),
            3,
            t,
            e,
            spec,
        )?,
        _ => integrate_md_shift_invariant(
            |g: &[f64]| {
                // sorted points 0 < y1 < y2 < y3; the 24 orderings fall into
                // three cyclic classes of 8
                let (a, b, c) = (g[0], g[1], g[2]);
                let p_ab = psi(a + b);
                let p_bc = psi(b + c);
                let p_abc = psi(a + b + c);
                let (pa, pb, pc) = (psi(a), psi(b), psi(c));
                (pa * pb * pc * p_abc + pa * p_bc * pc * p_ab + p_ab * pb * p_bc * p_abc) / 3.0
            },
            4,
            t,
            e,
            spec,
        )?,
    };
    require_converged("cyclic chain integral", r)
}

/// Cumulant of order `m` of the tempered Rosenblatt variable `Z(t)` (`k = 2`).
pub fn cumulant_rosenblatt(t: f64, m: usize, p: &HermiteParams, spec: &QuadratureSpec) -> Result<f64> {
    if p.k() != 2 {
        return Err(MomentsError::InvalidInput(format!(
            "cumulant chains need k = 2, got k = {}",
            p.k()
        )));
    }
    p.require_tempered()?;
    check_order(m, MAX_CUMULANT_ORDER)?;
    if !(t > 0.0) {
        return Err(MomentsError::InvalidInput(format!("need t > 0, got {t}")));
    }
    let rho = PairKernel::from_params(p)?;
    let chain = cyclic_chain_integral(|r| rho.eval(r), 2.0 * p.d() - 1.0, t, m, spec)?;
    Ok(chaos2_cumulant_constant(m) * chain.value)
}

/// `2^{m-1} (m-1)! tr(A^m)`: cumulant of `xi' A xi - tr(A)` for i.i.d.
/// standard Gaussian `xi` and symmetric `A`.
pub fn cumulant_i2_discrete(a: &DMatrix<f64>, m: usize) -> f64 {
    assert!(m >= 1, "cumulant order must be positive");
    assert!(a.is_square(), "matrix must be square");
    if m == 1 {
        return 0.0;
    }
    let mut power = a.clone();
    for _ in 1..m - 1 {
        power = &power * a;
    }
    // tr(A^{m-1} A) without forming the last product
    let tr = power.component_mul(&a.transpose()).sum();
    chaos2_cumulant_constant(m) * tr
}

/// Rosenblatt (lambda = 0) cumulant with both candidate constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCumulant {
    pub m: usize,
    pub t: f64,
    /// `int_{[0,t]^m} prod_{cyclic} |s_i - s_{i+1}|^{2d - 1} ds`
    pub integral: f64,
    /// `2^{m-1} (m-1)! B(d, 1 - 2d)^m`, the `lambda -> 0` limit of the
    /// tempered cumulant constant.
    pub constant: f64,
    /// `(m-1)!/2 (Gamma(d) Gamma(d - 1/2)/sqrt(pi))^m`.
    pub constant_printed: f64,
    /// `constant * integral`
    pub value: f64,
    /// `constant_printed * integral`
    pub value_printed: f64,
}

/// Limit of [`cumulant_rosenblatt`] as `lambda -> 0`.
pub fn cumulant_limit_rosenblatt(t: f64, m: usize, d: f64, spec: &QuadratureSpec) -> Result<LimitCumulant> {
    check_order(m, MAX_CUMULANT_ORDER)?;
    if !(d > 0.25 && d < 0.5) {
        return Err(MomentsError::InvalidInput(format!("d must lie in (1/4, 1/2), got {d}")));
    }
    if !(t > 0.0) {
        return Err(MomentsError::InvalidInput(format!("need t > 0, got {t}")));
    }
    let e = 2.0 * d - 1.0;
    let integral = cyclic_chain_integral(|r: f64| r.powf(e), e, t, m, spec)?.value;
    let beta_fn = gamma(d)? * gamma(1.0 - 2.0 * d)? / gamma(1.0 - d)?;
    let constant = chaos2_cumulant_constant(m) * beta_fn.powi(m as i32);
    let gamma_shift = gamma(d + 0.5)? / (d - 0.5);
    let constant_printed = 0.5
        * factorial(m - 1)
        * (gamma(d)? * gamma_shift / std::f64::consts::PI.sqrt()).powi(m as i32);
    Ok(LimitCumulant {
        m,
        t,
        integral,
        constant,
        constant_printed,
        value: constant * integral,
        value_printed: constant_printed * integral,
    })
}

/// Filtered chain `2^{m-1}(m-1)! int prod l_t(u_j) prod_{cyclic} psi(|u_i - u_{i+1}|) du`
/// over the real line; `decay` is the tempering parameter (0 for the power law).
fn filtered_chain<P: Fn(f64) -> f64 + Sync>(
    psi: P,
    e: f64,
    decay: f64,
    t: f64,
    m: usize,
    beta: f64,
    normalized: bool,
    spec: &QuadratureSpec,
) -> Result<f64> {
    check_order(m, 3)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let w_spec = spec.inner(0.05);
    let at = t.abs();
    let r = match m {
        2 => {
            let f = |delta: f64| {
                if delta <= 0.0 {
                    return 0.0;
                }
                let ps = psi(delta);
                if ps == 0.0 {
                    return 0.0;
                }
                ps * ps * filter_product_integral(t, &[0.0, delta], beta, normalized, &w_spec).value
            };
            let ek = (2.0 * beta + 1.0).min(0.0);
            let head = integrate_1d_graded(&f, 0.0, at, 2.0 * e, ek, spec);
            let tail = if decay > 0.0 {
                let b = at + spec.truncation_length(2.0 * decay);
                integrate_1d_graded(&f, at, b, ek, 0.0, spec)
            } else {
                // integrand ~ delta^{2e + 2 beta - 1} at infinity
                let p = 1.0 - 2.0 * beta - 2.0 * e;
                integrate_half_line(|x: f64| f(at + x), 0.0, ek, p - 2.0, spec)
            };
            // the integrand is even in delta
            head.combine(tail).scaled(2.0)
        }
        _ => {
            let upper = if decay > 0.0 {
                at + spec.truncation_length(2.0 * decay)
            } else {
                f64::INFINITY
            };
            // W3 = int l(u) l(u + g1) l(u + g1 + g2) du is non-smooth where
            // g1, g2 or g1 + g2 equals |t|; those lines are used as cuts.
            let ek = (2.0 * beta + 1.0).min(0.0);
            let tail = if upper.is_infinite() { (-2.0 - 3.0 * e - beta).min(0.0) } else { 0.0 };
            let inner_spec = spec.inner(0.1);
            let ok = std::cell::Cell::new(true);
            let inner = |g1: f64| {
                let p1 = psi(g1);
                if p1 == 0.0 {
                    return 0.0;
                }
                let f = |g2: f64| {
                    let chain = psi(g2) * psi(g1 + g2);
                    if chain == 0.0 {
                        return 0.0;
                    }
                    chain * filter_product_integral(t, &[0.0, g1, g1 + g2], beta, normalized, &w_spec).value
                };
                let mut cuts = vec![(0.0, e)];
                if at - g1 > 0.0 {
                    cuts.push((at - g1, ek));
                }
                if at > 0.0 && at != at - g1 {
                    cuts.push((at, ek));
                }
                cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut r = IntegrationResult::zero();
                for w in cuts.windows(2) {
                    r = r.combine(integrate_1d_graded(&f, w[0].0, w[1].0, w[0].1, w[1].1, &inner_spec));
                }
                let (last, el) = *cuts.last().unwrap();
                let rest = if upper.is_finite() {
                    integrate_1d_graded(&f, last, upper, el, 0.0, &inner_spec)
                } else {
                    integrate_half_line(|x: f64| f(last + x), 0.0, el, tail, &inner_spec)
                };
                r = r.combine(rest);
                if !r.converged {
                    ok.set(false);
                }
                p1 * r.value
            };
            let head = integrate_1d_graded(&inner, 0.0, at, e, ek, spec);
            let rest = if upper.is_finite() {
                integrate_1d_graded(&inner, at, upper, ek, 0.0, spec)
            } else {
                integrate_half_line(|x: f64| inner(at + x), 0.0, ek, tail, spec)
            };
            let mut r = head.combine(rest);
            r.converged = r.converged && ok.get();
            // all six orderings of three points give the same cyclic product
            r.scaled(6.0)
        }
    };
    let r = require_converged("filtered cumulant chain", r)?;
    Ok(chaos2_cumulant_constant(m) * r.value)
}

/// Cumulant of order `m` in {2, 3} of the filtered tempered Rosenblatt variable.
///
/// For `m = 3` every outer point needs a fresh triple filter integral, so
/// this runs for seconds even at `rel_tol = 1e-3`.
pub fn cumulant_filtered_rosenblatt(t: f64, m: usize, fp: &FilterParams, spec: &QuadratureSpec) -> Result<f64> {
    let p = fp.base();
    if p.k() != 2 {
        return Err(MomentsError::InvalidInput(format!("cumulant chains need k = 2, got k = {}", p.k())));
    }
    p.require_tempered()?;
    let rho = PairKernel::from_params(p)?;
    filtered_chain(
        |r| rho.eval(r),
        2.0 * p.d() - 1.0,
        p.lambda(),
        t,
        m,
        fp.beta(),
        fp.normalized(),
        spec,
    )
}

/// `lambda -> 0` limit of [`cumulant_filtered_rosenblatt`]: the same chain
/// with `rho(r) = B(d, 1 - 2d) r^{2d - 1}`.
pub fn cumulant_filtered_limit(t: f64, m: usize, fp: &FilterParams, spec: &QuadratureSpec) -> Result<f64> {
    let p = fp.base();
    if p.k() != 2 {
        return Err(MomentsError::InvalidInput(format!("cumulant chains need k = 2, got k = {}", p.k())));
    }
    let d = p.d();
    let e = 2.0 * d - 1.0;
    let b = gamma(d)? * gamma(1.0 - 2.0 * d)? / gamma(1.0 - d)?;
    filtered_chain(|r: f64| b * r.powf(e), e, 0.0, t, m, fp.beta(), fp.normalized(), spec)
}

/// One cumulant with its analytic value, limit, discrete oracle and Monte
/// Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantReport {
    pub order: usize,
    pub analytic: f64,
    pub limit_value: f64,
    pub oracle: f64,
    pub mc_estimate: Option<f64>,
    pub mc_se: Option<f64>,
}

/// One comparison in a verification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
    pub tol: f64,
    pub pass: bool,
}

impl ReportRow {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64) -> Self {
        let rel_err = relative_error(lhs, rhs);
        Self {
            name: name.into(),
            lhs,
            rhs,
            rel_err,
            tol,
            pass: rel_err <= tol,
        }
    }

    /// Row whose pass/fail is decided by the caller, for checks that are not
    /// a relative tolerance (standard-error bands, orderings, runtimes).
    pub fn with_pass(name: impl Into<String>, lhs: f64, rhs: f64, tol: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            rel_err: relative_error(lhs, rhs),
            tol,
            pass,
        }
    }
}

/// `|a - b| / |b|`, with 0 when both vanish and infinity for non-finite input.
pub fn relative_error(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let e = (a - b).abs() / b.abs();
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    pub rows: Vec<ReportRow>,
    /// Diagnostics that do not affect pass/fail.
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_err).fold(0.0, f64::max)
    }

    /// Tab-separated table with a header line.
    pub fn to_table(&self) -> String {
        let mut out = String::from("name\tlhs\trhs\trel_err\tpass\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{:.17e}\t{:.17e}\t{:.3e}\t{}\n",
                r.name, r.lhs, r.rhs, r.rel_err, r.pass
            ));
        }
        for n in &self.notes {
            out.push_str(&format!("# {n}\n"));
        }
        out
    }
}

/// Relative tolerance of the stationarity check.
pub const STATIONARITY_TOL: f64 = 1e-5;
/// Relative tolerance of covariance scaling checks.
pub const SCALING_COV_TOL: f64 = 1e-5;
/// Relative tolerance of filtered covariance scaling checks.
pub const SCALING_FILTERED_TOL: f64 = 1e-4;
/// Relative tolerance of cumulant scaling checks for `m >= 3`.
pub const SCALING_CUMULANT_TOL: f64 = 1e-3;

/// Compare `E[(Z(t+h) - Z(t))^2]` from the covariance with `Var Z(h)` for
/// each `(t, h)`.
pub fn verify_stationarity(p: &HermiteParams, pairs: &[(f64, f64)], spec: &QuadratureSpec) -> Result<Report> {
    p.require_tempered()?;
    let rows: Vec<Result<ReportRow>> = pairs
        .par_iter()
        .map(|&(t, h)| {
            if h == 0.0 {
                return Ok(ReportRow::new(format!("increment t={t} h=0"), 0.0, 0.0, STATIONARITY_TOL));
            }
            let c11 = cov_hermite(t + h, t + h, p, spec)?;
            let c10 = cov_hermite(t + h, t, p, spec)?;
            let c00 = cov_hermite(t, t, p, spec)?;
            let inc = c11 - 2.0 * c10 + c00;
            let var_h = cov_hermite(h, h, p, spec)?;
            Ok(ReportRow::new(format!("increment t={t} h={h}"), inc, var_h, STATIONARITY_TOL))
        })
        .collect();
    let mut report = Report::new("stationarity");
    for r in rows {
        report.push(r?);
    }
    Ok(report)
}

/// Check `Var Z(ct; lambda) = c^{2H} Var Z(t; c lambda)` and the matching
/// cumulant law `C_m(ct; lambda) = c^{mH} C_m(t; c lambda)` (`k = 2`).
pub fn verify_scaling(
    p: &HermiteParams,
    c: f64,
    t: f64,
    orders: &[usize],
    spec: &QuadratureSpec,
) -> Result<Report> {
    p.require_tempered()?;
    if !(c > 0.0) || !(t > 0.0) {
        return Err(MomentsError::InvalidInput("need c > 0 and t > 0".into()));
    }
    let h = p.hurst();
    let pc = p.with_lambda(c * p.lambda())?;
    let mut report = Report::new("scaling");
    let (lhs, rhs) = if c == 1.0 {
        let v = cov_hermite(t, t, p, spec)?;
        (v, v)
    } else {
        let (a, b) = rayon::join(|| cov_hermite(c * t, c * t, p, spec), || cov_hermite(t, t, &pc, spec));
        (a?, c.powf(2.0 * h) * b?)
    };
    report.push(ReportRow::new(format!("cov c={c} t={t}"), lhs, rhs, SCALING_COV_TOL));
    for &m in orders {
        let (lhs, rhs) = if c == 1.0 {
            let v = cumulant_rosenblatt(t, m, p, spec)?;
            (v, v)
        } else {
            let (a, b) = rayon::join(
                || cumulant_rosenblatt(c * t, m, p, spec),
                || cumulant_rosenblatt(t, m, &pc, spec),
            );
            (a?, c.powf(m as f64 * h) * b?)
        };
        let tol = if m == 2 { SCALING_COV_TOL } else { SCALING_CUMULANT_TOL };
        report.push(ReportRow::new(format!("cumulant m={m} c={c} t={t}"), lhs, rhs, tol));
    }
    Ok(report)
}

/// Filtered covariance law `Var Z(ct; lambda) = c^{2 H_f} Var Z(t; c lambda)`
/// with `H_f = beta + 1 + alpha + k/2`.
pub fn verify_scaling_filtered(fp: &FilterParams, c: f64, t: f64, spec: &QuadratureSpec) -> Result<Report> {
    if !(c > 0.0) || !(t > 0.0) {
        return Err(MomentsError::InvalidInput("need c > 0 and t > 0".into()));
    }
    let hf = fp.hurst_filtered();
    let fc = fp.with_lambda(c * fp.base().lambda())?;
    let (a, b) = rayon::join(
        || cov_filtered_hermite(c * t, c * t, fp, spec),
        || cov_filtered_hermite(t, t, &fc, spec),
    );
    let mut report = Report::new("filtered scaling");
    report.push(ReportRow::new(
        format!("filtered cov c={c} t={t}"),
        a?,
        c.powf(2.0 * hf) * b?,
        SCALING_FILTERED_TOL,
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{params_from_h, PowerKernel1d};

    fn rel(a: f64, b: f64) -> f64 {
        relative_error(a, b)
    }

    #[test]
    fn identity_matches_lhs_quadrature() {
        let spec = QuadratureSpec::default();
        let lhs = bessel_product_identity_lhs(0.375, 1.0, 1.0, 0.0, &spec).unwrap();
        let rhs = bessel_product_identity(0.375, 1.0, 1.0, 0.0).unwrap();
        assert!(rel(lhs.value, rhs) < 1e-7, "{} vs {rhs}", lhs.value);
        // value frozen from a 20-digit evaluation
        assert!(rel(rhs, 0.617_545_610_808_610_3) < 1e-12);
        let a = bessel_product_identity(0.375, 1.0, 0.3, 1.7).unwrap();
        let b = bessel_product_identity(0.375, 1.0, 1.7, 0.3).unwrap();
        assert_eq!(a, b);
        let first = bessel_product_identity(0.375, 2.0, 1.0, 0.0).unwrap();
        let second = bessel_product_identity(0.375, 1.0, 2.0, 0.0).unwrap();
        // substituting w -> w/2 in the left-hand side gives the factor 2^{1 - 2 tau}
        assert!(rel(first, 2f64.powf(1.0 - 2.0 * 0.375) * second) < 1e-13);
        assert!(bessel_product_identity(0.375, 1.0, 1.0, 1.0).is_err());
        assert!(bessel_product_identity(0.6, 1.0, 1.0, 0.0).is_err());
        assert!(bessel_product_identity(0.3, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn pair_kernel_small_argument_branch_is_continuous() {
        let k = PairKernel::new(0.375, 1.0).unwrap();
        // just above and just below the Bessel floor
        let above = k.eval(2e-300);
        let below = k.eval(5e-301);
        let ratio = above / below;
        let want = (2e-300f64 / 5e-301).powf(2.0 * 0.375 - 1.0);
        assert!(rel(ratio, want) < 1e-6, "{ratio} vs {want}");
    }

    #[test]
    fn covariance_trivial_cases() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        assert_eq!(cov_hermite(0.0, 1.0, &p, &spec).unwrap(), 0.0);
        assert_eq!(cov_hermite(1.0, 0.0, &p, &spec).unwrap(), 0.0);
        let a = cov_hermite(1.0, 0.4, &p, &spec).unwrap();
        let b = cov_hermite(0.4, 1.0, &p, &spec).unwrap();
        assert!(rel(a, b) < 1e-9);
        let p0 = params_from_h(2, 0.75, 0.0).unwrap();
        assert!(cov_hermite(1.0, 1.0, &p0, &spec).is_err());
    }

    #[test]
    fn covariance_frozen_values() {
        // 20-digit reference values from an independent arbitrary-precision
        // evaluation of k! int int rho^k.
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let v = cov_hermite(1.0, 1.0, &p, &spec).unwrap();
        assert!(rel(v, 47.235_798_907_910_36) < 1e-7, "{v}");
        let v = cov_hermite(1.0, 0.4, &p, &spec).unwrap();
        assert!(rel(v, 18.606_533_140_416_5) < 1e-7, "{v}");
        let p1 = params_from_h(1, 0.75, 1.0).unwrap();
        let v = cov_hermite(1.0, 1.0, &p1, &spec).unwrap();
        assert!(rel(v, 9.209_974_965_963_002) < 1e-7, "{v}");
        let p3 = params_from_h(3, 0.75, 0.5).unwrap();
        let v = cov_hermite(2.0, 1.0, &p3, &spec).unwrap();
        assert!(rel(v, 811.641_389_373_868_2) < 1e-7, "{v}");
    }

    #[test]
    fn general_product_path_agrees() {
        let spec = QuadratureSpec { rel_tol: 1e-8, ..Default::default() };
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let g1 = PowerKernel1d { d: p.d() };
        let a = cov_general_product(1.0, 1.0, &g1, &p, &spec).unwrap();
        let b = cov_hermite(1.0, 1.0, &p, &spec).unwrap();
        assert!(rel(a, b) < 1e-6, "{a} vs {b}");
        assert_eq!(cov_general_product(0.0, 0.0, &g1, &p, &spec).unwrap(), 0.0);
    }

    #[test]
    fn k1_variance_matches_time_kernel_square_integral() {
        // Var Z(t) = int h_t(x)^2 dx with h_t evaluated by its own quadrature.
        let spec = QuadratureSpec::default();
        let p = params_from_h(1, 0.75, 1.0).unwrap();
        let hspec = spec.inner(0.01);
        let f = |x: f64| {
            let h = crate::kernels::tempered_time_kernel(1.0, &[x], &p, &hspec).unwrap();
            h * h
        };
        let inner = integrate_1d_graded(&f, 0.0, 1.0, 0.0, 2.0 * p.d(), &spec);
        let tail = integrate_1d_graded(&f, -spec.truncation_length(2.0), 0.0, 0.0, 0.0, &spec);
        let direct = inner.value + tail.value;
        let v = cov_hermite(1.0, 1.0, &p, &spec).unwrap();
        assert!(rel(direct, v) < 1e-6, "{direct} vs {v}");
    }

    #[test]
    fn filter_autocorrelation_closed_form() {
        let spec = QuadratureSpec::default();
        for &beta in &[-0.4, -0.1, 0.2] {
            for &delta in &[0.0, 0.3, 1.0, 2.5] {
                let num = filter_product_integral(1.0, &[0.0, delta], beta, true, &spec);
                let closed = filter_cross_closed(1.0, 1.0, -delta, beta, true).unwrap();
                assert!(rel(num.value, closed) < 1e-7, "beta={beta} delta={delta}: {} vs {closed}", num.value);
            }
        }
        // beta = 0 limit of the constant is the Lebesgue measure of [0, 1]
        assert!(rel(filter_norm_constant(1e-9).unwrap(), 1.0) < 1e-8);
    }

    #[test]
    fn filtered_covariance_oracle() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        for &beta in &[0.1, -0.3] {
            let fp = FilterParams::new(p, beta, true).unwrap();
            let a = cov_filtered_hermite(1.0, 1.0, &fp, &spec).unwrap();
            let b = cov_filtered_general(1.0, 1.0, &fp, &spec).unwrap();
            assert!(rel(a, b) < 1e-4, "beta={beta}: {a} vs {b}");
            let a = cov_filtered_hermite(1.0, 0.4, &fp, &spec).unwrap();
            let b = cov_filtered_general(1.0, 0.4, &fp, &spec).unwrap();
            assert!(rel(a, b) < 1e-4, "beta={beta} (1, 0.4): {a} vs {b}");
            let c = cov_filtered_hermite(0.4, 1.0, &fp, &spec).unwrap();
            assert!(rel(a, c) < 1e-12);
        }
    }

    #[test]
    fn cumulant_two_is_variance() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let c2 = cumulant_rosenblatt(1.0, 2, &p, &spec).unwrap();
        let v = cov_hermite(1.0, 1.0, &p, &spec).unwrap();
        assert!(rel(c2, v) < 1e-7, "{c2} vs {v}");
    }

    #[test]
    fn cumulant_three_frozen() {
        let spec = QuadratureSpec { rel_tol: 1e-7, ..Default::default() };
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let c3 = cumulant_rosenblatt(1.0, 3, &p, &spec).unwrap();
        assert!(rel(c3, 421.028_751_790_887_86) < 1e-6, "{c3}");
    }

    #[test]
    fn cumulant_guards() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        assert!(cumulant_rosenblatt(1.0, 5, &p, &spec).is_err());
        assert!(cumulant_rosenblatt(1.0, 1, &p, &spec).is_err());
        let p3 = params_from_h(3, 0.75, 1.0).unwrap();
        assert!(cumulant_rosenblatt(1.0, 2, &p3, &spec).is_err());
    }

    #[test]
    fn discrete_cumulant_trivial_and_direct() {
        let z = DMatrix::<f64>::zeros(4, 4);
        assert_eq!(cumulant_i2_discrete(&z, 3), 0.0);
        let id = DMatrix::<f64>::identity(5, 5);
        assert_eq!(cumulant_i2_discrete(&id, 2), 10.0);
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 2.0, 0.5, -0.2, 0.5, -1.0]);
        let mut direct = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    direct += a[(i, j)] * a[(j, l)] * a[(l, i)];
                }
            }
        }
        assert!(rel(cumulant_i2_discrete(&a, 3), 8.0 * direct) < 1e-14);
    }

    #[test]
    fn limit_cumulant_m2_closed_form() {
        let spec = QuadratureSpec::default();
        let d = 0.375;
        let lim = cumulant_limit_rosenblatt(1.0, 2, d, &spec).unwrap();
        let want_integral = 2.0 / ((4.0 * d - 1.0) * (4.0 * d));
        assert!(rel(lim.integral, want_integral) < 1e-8, "{} vs {want_integral}", lim.integral);
        let lim2 = cumulant_limit_rosenblatt(2.0, 2, d, &spec).unwrap();
        assert!(rel(lim2.integral, 2f64.powf(2.0 * 2.0 * d) * lim.integral) < 1e-8);
        // the two constants disagree; the derived one carries B(d, 1-2d)
        assert!(rel(lim.constant, lim.constant_printed) > 0.01);
        assert!(cumulant_limit_rosenblatt(1.0, 2, 0.2, &spec).is_err());
    }

    #[test]
    fn stationarity_report() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let rep = verify_stationarity(&p, &[(0.5, 1.0), (2.0, 1.0), (0.3, 0.0)], &spec).unwrap();
        assert!(rep.pass(), "{}", rep.to_table());
        assert_eq!(rep.rows[2].lhs, 0.0);
        let table = rep.to_table();
        assert!(table.starts_with("name\tlhs\trhs\trel_err\tpass\n"));
        assert_eq!(table.lines().count(), 4);
    }

    #[test]
    fn scaling_report() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let rep = verify_scaling(&p, 1.0, 1.0, &[2], &spec).unwrap();
        assert!(rep.rows.iter().all(|r| r.rel_err == 0.0));
        let rep = verify_scaling(&p, 2.0, 1.0, &[2], &spec).unwrap();
        assert!(rep.pass(), "{}", rep.to_table());
    }

    #[test]
    fn filtered_cumulant_two_is_filtered_variance() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let fp = FilterParams::new(p, 0.1, true).unwrap();
        let c2 = cumulant_filtered_rosenblatt(1.0, 2, &fp, &spec).unwrap();
        let v = cov_filtered_hermite(1.0, 1.0, &fp, &spec).unwrap();
        assert!(rel(c2, v) < 1e-3, "{c2} vs {v}");
        let un = fp.with_normalized(false);
        let c2u = cumulant_filtered_rosenblatt(1.0, 2, &un, &spec).unwrap();
        assert!(rel(c2, c2u * (1.0f64 / 0.1).powi(2)) < 1e-12);
    }

    #[test]
    fn filtered_cumulant_three_flag_and_sign() {
        // the nested evaluation is costly; a loose tolerance keeps this quick
        let spec = QuadratureSpec { rel_tol: 1e-3, ..Default::default() };
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let fp = FilterParams::new(p, -0.2, true).unwrap();
        let c3 = cumulant_filtered_rosenblatt(1.0, 3, &fp, &spec).unwrap();
        let c3u = cumulant_filtered_rosenblatt(1.0, 3, &fp.with_normalized(false), &spec).unwrap();
        assert!(c3.is_finite() && c3 != 0.0);
        assert!(rel(c3, c3u * (1.0f64 / -0.2).powi(3)) < 1e-12);
    }

    #[test]
    fn filtered_limit_is_approached() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let fp = FilterParams::new(p, 0.1, true).unwrap();
        let lim = cumulant_filtered_limit(1.0, 2, &fp, &spec).unwrap();
        let mut last = f64::INFINITY;
        for &lam in &[1.0, 0.1, 0.01] {
            let c = cumulant_filtered_rosenblatt(1.0, 2, &fp.with_lambda(lam).unwrap(), &spec).unwrap();
            let gap = (c - lim).abs();
            assert!(gap < last, "lambda={lam}: gap {gap} not below {last}");
            last = gap;
        }
    }

    #[test]
    fn filtered_scaling_report() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let fp = FilterParams::new(p, -0.3, true).unwrap();
        let rep = verify_scaling_filtered(&fp, 2.0, 1.0, &spec).unwrap();
        assert!(rep.pass(), "{}", rep.to_table());
    }

    #[test]
    fn tempered_cumulants_approach_derived_limit_constant() {
        // The gap closes like lambda^{1 - 2d}; two small lambdas and that
        // rate extrapolate to the limit, which must match the derived
        // constant and not the printed one.
        let spec = QuadratureSpec::default();
        let d = 0.375;
        let (l1, l2) = (1e-6, 1e-8);
        let c = |lam: f64| cumulant_rosenblatt(1.0, 2, &params_from_h(2, 0.75, lam).unwrap(), &spec).unwrap();
        let (c1, c2) = (c(l1), c(l2));
        let r = (l2 / l1).powf(1.0 - 2.0 * d);
        let extrapolated = (c2 - r * c1) / (1.0 - r);
        let lim = cumulant_limit_rosenblatt(1.0, 2, d, &spec).unwrap();
        assert!(rel(extrapolated, lim.value) < 5e-3, "{extrapolated} vs {}", lim.value);
        assert!(rel(extrapolated, lim.value_printed) > 0.03);
    }

    #[test]
    fn even_cumulants_positive() {
        let spec = QuadratureSpec { rel_tol: 1e-5, ..Default::default() };
        let p = params_from_h(2, 0.7, 1.0).unwrap();
        let c4 = cumulant_rosenblatt(1.0, 4, &p, &spec).unwrap();
        let c2 = cumulant_rosenblatt(1.0, 2, &p, &spec).unwrap();
        assert!(c4 > 0.0 && c2 > 0.0);
    }

    #[test]
    fn gram_matrix_is_positive_semidefinite() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.8, 0.7).unwrap();
        let times = [0.1, 0.35, 0.8, 1.5, 2.2, 3.0];
        let n = times.len();
        let mut g = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = cov_hermite(times[i], times[j], &p, &spec).unwrap();
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        let eig = g.symmetric_eigenvalues();
        let max = eig.max();
        assert!(eig.min() >= -1e-8 * max, "{eig:?}");
    }

    #[test]
    fn increment_moments_obey_holder_bound() {
        let spec = QuadratureSpec::default();
        let p = params_from_h(2, 0.75, 1.0).unwrap();
        let hs = [1e-3, 1e-2, 0.1, 0.5, 1.0];
        let ratios: Vec<f64> = hs
            .iter()
            .map(|&h| cov_hermite(h, h, &p, &spec).unwrap() / h.powf(2.0 * p.hurst()))
            .collect();
        // the constant is fixed at the smallest lag; tempering only lowers it
        let c = ratios[0] * 1.01;
        for (h, r) in hs.iter().zip(&ratios) {
            assert!(*r <= c, "h={h}: ratio {r} exceeds {c}");
        }
    }
}
