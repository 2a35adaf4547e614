//! Deterministic integration engines: adaptive Gauss-Kronrod in 1D with
//! endpoint grading, a 2D engine for integrands singular on the diagonal,
//! nested adaptive integration over variable boxes, and m-dimensional cube
//! integration (ordered-simplex tensor method or randomized quasi-Monte Carlo).

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest dimension accepted by the m-dimensional engines.
pub const MAX_MD_DIM: usize = 5;
/// Largest depth accepted by [`integrate_nested`].
pub const MAX_NESTED_DIM: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(String),
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("dimension {0} exceeds the supported maximum")]
    DimensionTooLarge(usize),
}

/// Tolerances and limits shared by all engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// Number of e-folds of a tempering factor kept when an integral over a
    /// half-line is truncated.
    pub truncation_decades: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 2000,
            truncation_decades: 40.0,
        }
    }
}

impl QuadratureSpec {
    pub fn new(
        abs_tol: f64,
        rel_tol: f64,
        max_subdivisions: usize,
        truncation_decades: f64,
    ) -> Result<Self, QuadratureError> {
        let spec = Self {
            abs_tol,
            rel_tol,
            max_subdivisions,
            truncation_decades,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), QuadratureError> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(QuadratureError::InvalidSpec(format!(
                "tolerances must be positive (abs_tol = {}, rel_tol = {})",
                self.abs_tol, self.rel_tol
            )));
        }
        if self.max_subdivisions < 1 {
            return Err(QuadratureError::InvalidSpec(
                "max_subdivisions must be at least 1".into(),
            ));
        }
        if !(self.truncation_decades >= 10.0) {
            return Err(QuadratureError::InvalidSpec(format!(
                "truncation_decades must be at least 10, got {}",
                self.truncation_decades
            )));
        }
        Ok(())
    }

    /// Acceptance threshold `max(abs_tol, rel_tol |value|)`.
    pub fn tolerance(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }

    /// Same limits with both tolerances multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            abs_tol: (self.abs_tol * factor).max(1e-300),
            rel_tol: (self.rel_tol * factor).max(1e-14),
            ..*self
        }
    }

    /// Spec for inner integrals of a nested scheme: tolerances scaled by
    /// `factor` and a reduced subdivision budget, so a non-convergent inner
    /// integral cannot multiply the cost of the outer one unboundedly.
    pub fn inner(&self, factor: f64) -> Self {
        Self {
            max_subdivisions: (self.max_subdivisions / 40).max(50).min(self.max_subdivisions),
            ..self.scaled(factor)
        }
    }

    /// Length of half-line kept for a factor `e^{-rate w}`.
    pub fn truncation_length(&self, rate: f64) -> f64 {
        self.truncation_decades / rate
    }
}

/// Value of an integral with its error estimate and bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationResult {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl IntegrationResult {
    pub fn zero() -> Self {
        Self {
            value: 0.0,
            error_estimate: 0.0,
            evaluations: 0,
            converged: true,
        }
    }

    /// Multiply the value and error by a constant.
    pub fn scaled(self, c: f64) -> Self {
        Self {
            value: self.value * c,
            error_estimate: self.error_estimate * c.abs(),
            ..self
        }
    }

    /// Sum of two independent pieces.
    pub fn combine(self, other: Self) -> Self {
        Self {
            value: self.value + other.value,
            error_estimate: self.error_estimate + other.error_estimate,
            evaluations: self.evaluations + other.evaluations,
            converged: self.converged && other.converged,
        }
    }
}

/// Neumaier compensated sum of a sequence.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208980245537,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], ...
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        // Largest error first; ties broken by position for determinism.
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc * WGK[10];
    let mut resg = 0.0;
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = resk * half;
    let resabs = resabs * half.abs();
    let resasc = resasc * half.abs();
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (value, err)
}

/// Adaptive integration of `f` over `[a, b]` by bisection of the panel with
/// the largest error estimate, using the 21-point Gauss-Kronrod rule.
///
/// Integrable endpoint singularities are handled by repeated bisection. For
/// strong ones prefer [`integrate_1d_graded`].
pub fn integrate_1d<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> IntegrationResult {
    if a == b {
        return IntegrationResult::zero();
    }
    if a > b {
        return integrate_1d(f, b, a, spec).scaled(-1.0);
    }
    let (v, e) = gk21(&f, a, b);
    let mut evaluations = 21;
    let mut heap = BinaryHeap::new();
    let mut finished: Vec<Panel> = Vec::new();
    heap.push(Panel { a, b, value: v, error: e });
    let mut total_value = v;
    let mut total_error = e;
    let mut subdivisions = 0;
    let mut converged = !(total_error > spec.tolerance(total_value)) && v.is_finite();
    while !converged && subdivisions < spec.max_subdivisions {
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) || (worst.b - worst.a) <= 4.0 * f64::EPSILON * worst.a.abs().max(worst.b.abs()) {
            // Cannot be split further in floating point.
            finished.push(worst);
            continue;
        }
        let (v1, e1) = gk21(&f, worst.a, mid);
        let (v2, e2) = gk21(&f, mid, worst.b);
        evaluations += 42;
        subdivisions += 1;
        total_value += v1 + v2 - worst.value;
        total_error += e1 + e2 - worst.error;
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2 });
        // Drift in the running totals is corrected periodically.
        if subdivisions % 64 == 0 {
            total_error = compensated_sum(heap.iter().chain(finished.iter()).map(|p| p.error));
            total_value = compensated_sum(heap.iter().chain(finished.iter()).map(|p| p.value));
        }
        converged = total_error <= spec.tolerance(total_value);
    }
    let mut panels: Vec<Panel> = heap.into_vec();
    panels.extend(finished);
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let value = compensated_sum(panels.iter().map(|p| p.value));
    let error_estimate = compensated_sum(panels.iter().map(|p| p.error));
    let converged = value.is_finite() && error_estimate <= spec.tolerance(value);
    IntegrationResult {
        value,
        error_estimate,
        evaluations,
        converged,
    }
}

/// Power used to grade toward an endpoint where the integrand behaves like
/// `|x - anchor|^exponent`.
fn grading_power(exponent: f64) -> f64 {
    if exponent == 0.0 || exponent >= 1.0 || exponent <= -1.0 {
        1.0
    } else {
        (2.0 / (1.0 + exponent)).min(40.0)
    }
}

/// Integrate over `[a, b]` an integrand behaving like `|x - anchor|^exponent`
/// where the anchor lies at or outside the interval, via `x = anchor +- w^p`.
pub fn integrate_anchored<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    anchor: f64,
    exponent: f64,
    spec: &QuadratureSpec,
) -> IntegrationResult {
    anchored_impl(&f, a, b, anchor, exponent, spec)
}

fn anchored_impl(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    anchor: f64,
    exponent: f64,
    spec: &QuadratureSpec,
) -> IntegrationResult {
    if a == b {
        return IntegrationResult::zero();
    }
    if a > b {
        return anchored_impl(f, b, a, anchor, exponent, spec).scaled(-1.0);
    }
    let p = grading_power(exponent);
    if p == 1.0 {
        return integrate_1d(f, a, b, spec);
    }
    if anchor <= a {
        let w0 = (a - anchor).powf(1.0 / p);
        let w1 = (b - anchor).powf(1.0 / p);
        integrate_1d(
            |w| {
                let x = anchor + w.powf(p);
                if x == anchor {
                    // w^p below the resolution of the anchor: the mapped
                    // integrand vanishes like w there.
                    return 0.0;
                }
                f(x.clamp(a, b)) * p * w.powf(p - 1.0)
            },
            w0,
            w1,
            spec,
        )
    } else if anchor >= b {
        let w0 = (anchor - b).powf(1.0 / p);
        let w1 = (anchor - a).powf(1.0 / p);
        integrate_1d(
            |w| {
                let x = anchor - w.powf(p);
                if x == anchor {
                    return 0.0;
                }
                f(x.clamp(a, b)) * p * w.powf(p - 1.0)
            },
            w0,
            w1,
            spec,
        )
    } else {
        anchored_impl(f, a, anchor, anchor, exponent, spec)
            .combine(anchored_impl(f, anchor, b, anchor, exponent, spec))
    }
}

/// Adaptive integration with power grading toward endpoints at which the
/// integrand behaves like `(x - a)^left_exponent` or `(b - x)^right_exponent`
/// (exponents in `(-1, 0]`; zero means regular).
pub fn integrate_1d_graded<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    left_exponent: f64,
    right_exponent: f64,
    spec: &QuadratureSpec,
) -> IntegrationResult {
    if a == b {
        return IntegrationResult::zero();
    }
    if a > b {
        return integrate_1d_graded(f, b, a, right_exponent, left_exponent, spec).scaled(-1.0);
    }
    let left = grading_power(left_exponent) != 1.0;
    let right = grading_power(right_exponent) != 1.0;
    match (left, right) {
        (false, false) => integrate_1d(f, a, b, spec),
        (true, false) => integrate_anchored(f, a, b, a, left_exponent, spec),
        (false, true) => integrate_anchored(f, a, b, b, right_exponent, spec),
        (true, true) => {
            let m = 0.5 * (a + b);
            integrate_anchored(&f, a, m, a, left_exponent, spec)
                .combine(integrate_anchored(&f, m, b, b, right_exponent, spec))
        }
    }
}

/// Integral over `[a, inf)` of an integrand carrying a factor `e^{-rate x}`,
/// truncated after `spec.truncation_decades` e-folds.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    rate: f64,
    left_exponent: f64,
    spec: &QuadratureSpec,
) -> IntegrationResult {
    assert!(rate > 0.0, "decay rate must be positive");
    let b = a + spec.truncation_length(rate);
    integrate_1d_graded(f, a, b, left_exponent, 0.0, spec)
}

/// Integral over `[a, inf)` without truncation: `[a, a + 1]` directly and
/// the tail through `x = a + 1/t`, `t in (0, 1]`. `right_exponent` is the
/// exponent of `t` in `f(a + 1/t)/t^2` near `t = 0` (`p - 2` for an
/// integrand decaying like `x^{-p}`), when known.
pub fn integrate_half_line<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    left_exponent: f64,
    right_exponent: f64,
    spec: &QuadratureSpec,
) -> IntegrationResult {
    let half = spec.scaled(0.5);
    let head = integrate_1d_graded(&f, a, a + 1.0, left_exponent, 0.0, &half);
    let tail = anchored_impl(
        &|t: f64| {
            let x = a + 1.0 / t;
            if !x.is_finite() {
                return 0.0;
            }
            let v = f(x) / (t * t);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        0.0,
        right_exponent,
        &half,
    );
    head.combine(tail)
}

/// Axis-aligned rectangle `[u0, u1] x [v0, v1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
}

impl Rect {
    pub fn new(u0: f64, u1: f64, v0: f64, v1: f64) -> Self {
        Self { u0, u1, v0, v1 }
    }
}

/// Integrate `f(u, v)` over a rectangle for integrands bounded by
/// `C |u - v|^singular_exponent` near the diagonal.
///
/// Since `f` only sees `v = u + delta` after rounding, the attainable
/// accuracy is limited by roughly `(eps |u|)^{1 + singular_exponent}`;
/// integrands that depend on `u - v` should use
/// [`integrate_2d_diag_singular_offset`].
///
/// The outer `u` integral is adaptive with breakpoints where the diagonal
/// meets the rectangle; each inner `v` integral is split at `v = u` and
/// graded toward the diagonal.
pub fn integrate_2d_diag_singular<F: Fn(f64, f64) -> f64>(
    f: F,
    rect: Rect,
    singular_exponent: f64,
    spec: &QuadratureSpec,
) -> IntegrationResult {
    integrate_2d_diag_singular_offset(
        |u, delta| {
            let v = u + delta;
            if v == u {
                // below the floating-point resolution of the diagonal
                return 0.0;
            }
            f(u, v)
        },
        rect,
        singular_exponent,
        spec,
    )
}

/// Same as [`integrate_2d_diag_singular`] for an integrand written as
/// `g(u, delta)` with `v = u + delta`. The offset is passed without the
/// cancellation that `v - u` would suffer near the diagonal, which matters
/// for integrands depending on `|u - v|` only.
pub fn integrate_2d_diag_singular_offset<F: Fn(f64, f64) -> f64>(
    g: F,
    rect: Rect,
    singular_exponent: f64,
    spec: &QuadratureSpec,
) -> IntegrationResult {
    let Rect { u0, u1, v0, v1 } = rect;
    if u0 == u1 || v0 == v1 {
        return IntegrationResult::zero();
    }
    if u0 > u1 {
        return integrate_2d_diag_singular_offset(g, Rect::new(u1, u0, v0, v1), singular_exponent, spec)
            .scaled(-1.0);
    }
    if v0 > v1 {
        return integrate_2d_diag_singular_offset(g, Rect::new(u0, u1, v1, v0), singular_exponent, spec)
            .scaled(-1.0);
    }
    let e = singular_exponent.min(0.0);
    let inner_spec = spec.inner(0.1);
    let inner_spec = QuadratureSpec {
        abs_tol: inner_spec.abs_tol / (u1 - u0),
        ..inner_spec
    };
    let evals = Cell::new(0usize);
    let inner_ok = Cell::new(true);
    let inner = |u: f64| -> f64 {
        let h = |delta: f64| g(u, delta);
        let r = anchored_impl(&h, v0 - u, v1 - u, 0.0, e, &inner_spec);
        evals.set(evals.get() + r.evaluations);
        if !r.converged {
            inner_ok.set(false);
        }
        r.value
    };
    let mut breaks = vec![u0];
    for &c in &[v0, v1] {
        if c > u0 && c < u1 && !breaks.contains(&c) {
            breaks.push(c);
        }
    }
    breaks.push(u1);
    breaks.sort_by(|a, b| a.total_cmp(b));
    // The inner integral behaves like |u - c|^{1+e} where the diagonal
    // meets the rectangle at u = c.
    let kink = |x: f64| if x == v0 || x == v1 { 1.0 + e } else { 0.0 };
    let mut total = IntegrationResult::zero();
    for w in breaks.windows(2) {
        let r = integrate_1d_graded(&inner, w[0], w[1], kink(w[0]), kink(w[1]), spec);
        total = total.combine(r);
    }
    total.evaluations = evals.get();
    total.converged = total.converged && inner_ok.get();
    total
}

/// Bounds of one axis in a nested integral, with grading hints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBounds {
    pub lower: f64,
    /// May be `f64::INFINITY`, in which case the half-line map is used.
    pub upper: f64,
    pub lower_exponent: f64,
    pub upper_exponent: f64,
}

impl AxisBounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            lower_exponent: 0.0,
            upper_exponent: 0.0,
        }
    }

    pub fn graded(lower: f64, upper: f64, lower_exponent: f64, upper_exponent: f64) -> Self {
        Self {
            lower,
            upper,
            lower_exponent,
            upper_exponent,
        }
    }
}

/// Nested adaptive integration over a region described axis by axis:
/// `bounds(level, x[..level])` gives the range of coordinate `level` given
/// the outer coordinates. Inner levels run at tighter tolerances.
pub fn integrate_nested<B, F>(dim: usize, bounds: &B, f: &F, spec: &QuadratureSpec) -> IntegrationResult
where
    B: Fn(usize, &[f64]) -> AxisBounds,
    F: Fn(&[f64]) -> f64,
{
    assert!(dim >= 1 && dim <= MAX_NESTED_DIM, "nested dimension out of range");
    let evals = Cell::new(0usize);
    let ok = Cell::new(true);
    let prefix = [0.0f64; MAX_NESTED_DIM];
    let value = nested_level(0, dim, prefix, bounds, f, spec, &evals, &ok);
    IntegrationResult {
        value: value.value,
        error_estimate: value.error_estimate,
        evaluations: evals.get(),
        converged: value.converged && ok.get(),
    }
}

#[allow(clippy::too_many_arguments)]
fn nested_level<B, F>(
    level: usize,
    dim: usize,
    prefix: [f64; MAX_NESTED_DIM],
    bounds: &B,
    f: &F,
    spec: &QuadratureSpec,
    evals: &Cell<usize>,
    ok: &Cell<bool>,
) -> IntegrationResult
where
    B: Fn(usize, &[f64]) -> AxisBounds,
    F: Fn(&[f64]) -> f64,
{
    let ax = bounds(level, &prefix[..level]);
    if !(ax.upper > ax.lower) {
        return IntegrationResult::zero();
    }
    let inner_spec = spec.inner(0.2);
    let g = |x: f64| -> f64 {
        let mut p = prefix;
        p[level] = x;
        if level + 1 == dim {
            evals.set(evals.get() + 1);
            f(&p[..dim])
        } else {
            let r = nested_level(level + 1, dim, p, bounds, f, &inner_spec, evals, ok);
            if !r.converged {
                ok.set(false);
            }
            r.value
        }
    };
    if ax.upper.is_infinite() {
        integrate_half_line(g, ax.lower, ax.lower_exponent, ax.upper_exponent, spec)
    } else {
        integrate_1d_graded(g, ax.lower, ax.upper, ax.lower_exponent, ax.upper_exponent, spec)
    }
}

/// Method for [`integrate_md`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MdMethod {
    /// Ordered-simplex decomposition with graded nested adaptive quadrature.
    Tensor,
    /// Halton points with Cranley-Patterson random shifts; the error estimate
    /// is the standard error across shifted replicates.
    QuasiRandom {
        points: usize,
        replicates: usize,
        seed: u64,
    },
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    // Heap's algorithm, iterative.
    let mut a: Vec<usize> = (0..m).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0usize; m];
    let mut i = 0;
    while i < m {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// All permutations of `0..m` (m! of them), in a fixed order.
pub fn all_permutations(m: usize) -> Vec<Vec<usize>> {
    permutations(m)
}

/// Integrate `f` over the cube `[0, t]^m` (m <= 5).
///
/// The tensor method splits the cube into the m! ordered simplices,
/// parametrizes each by its first point and the m - 1 gaps between
/// consecutive sorted points, and grades every gap axis toward zero with the
/// caller-supplied `singular_exponent` (pass 0 for smooth integrands).
pub fn integrate_md<F: Fn(&[f64]) -> f64>(
    f: F,
    m: usize,
    t: f64,
    method: MdMethod,
    singular_exponent: f64,
    spec: &QuadratureSpec,
) -> Result<IntegrationResult, QuadratureError> {
    if m == 0 || m > MAX_MD_DIM {
        return Err(QuadratureError::DimensionTooLarge(m));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(QuadratureError::InvalidDomain(format!("cube side must be finite and >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(IntegrationResult::zero());
    }
    match method {
        MdMethod::Tensor => Ok(md_tensor(&f, m, t, singular_exponent, spec)),
        MdMethod::QuasiRandom { points, replicates, seed } => {
            if points == 0 || replicates < 2 {
                return Err(QuadratureError::InvalidSpec(
                    "quasi-random integration needs points >= 1 and replicates >= 2".into(),
                ));
            }
            Ok(md_quasi_random(&f, m, t, points, replicates, seed, spec))
        }
    }
}

fn md_tensor<F: Fn(&[f64]) -> f64>(f: &F, m: usize, t: f64, e: f64, spec: &QuadratureSpec) -> IntegrationResult {
    if m == 1 {
        return integrate_1d(|x| f(&[x]), 0.0, t, spec);
    }
    let perms = permutations(m);
    // Coordinates: gaps g_1..g_{m-1} (outer), then the first point a (inner).
    let bounds = |level: usize, prefix: &[f64]| {
        let used: f64 = prefix.iter().sum();
        let room = (t - used).max(0.0);
        if level < m - 1 {
            AxisBounds::graded(0.0, room, e, 0.0)
        } else {
            AxisBounds::new(0.0, room)
        }
    };
    let integrand = |z: &[f64]| {
        let mut sorted = [0.0f64; MAX_MD_DIM];
        sorted[0] = z[m - 1];
        for j in 1..m {
            sorted[j] = sorted[j - 1] + z[j - 1];
        }
        let mut x = [0.0f64; MAX_MD_DIM];
        let mut acc = 0.0;
        for p in &perms {
            for j in 0..m {
                x[p[j]] = sorted[j];
            }
            acc += f(&x[..m]);
        }
        acc
    };
    integrate_nested(m, &bounds, &integrand, spec)
}

/// Integral over `[0, t]^m` of a permutation-symmetric, translation-invariant
/// integrand given through its values on sorted points. `f_gaps` receives the
/// m - 1 gaps between consecutive sorted points; the position of the first
/// point is integrated analytically (weight `t - sum of gaps`).
pub fn integrate_md_shift_invariant<F: Fn(&[f64]) -> f64>(
    f_gaps: F,
    m: usize,
    t: f64,
    singular_exponent: f64,
    spec: &QuadratureSpec,
) -> Result<IntegrationResult, QuadratureError> {
    if m < 2 || m > MAX_MD_DIM {
        return Err(QuadratureError::DimensionTooLarge(m));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(QuadratureError::InvalidDomain(format!("cube side must be finite and >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(IntegrationResult::zero());
    }
    let factorial: f64 = (1..=m).map(|j| j as f64).product();
    let bounds = |_level: usize, prefix: &[f64]| {
        let used: f64 = prefix.iter().sum();
        AxisBounds::graded(0.0, (t - used).max(0.0), singular_exponent, 0.0)
    };
    let integrand = |g: &[f64]| {
        let span: f64 = g.iter().sum();
        let w = t - span;
        if w <= 0.0 {
            0.0
        } else {
            w * f_gaps(g)
        }
    };
    let inner = QuadratureSpec { abs_tol: spec.abs_tol / factorial, ..*spec };
    let r = integrate_nested(m - 1, &bounds, &integrand, &inner);
    Ok(r.scaled(factorial))
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

const HALTON_BASES: [u64; MAX_MD_DIM] = [2, 3, 5, 7, 11];

fn md_quasi_random<F: Fn(&[f64]) -> f64>(
    f: &F,
    m: usize,
    t: f64,
    points: usize,
    replicates: usize,
    seed: u64,
    spec: &QuadratureSpec,
) -> IntegrationResult {
    let volume = t.powi(m as i32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimates = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let shift: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let mut x = [0.0f64; MAX_MD_DIM];
        let mut vals = Vec::with_capacity(points);
        for i in 0..points {
            for j in 0..m {
                let u = (radical_inverse(i as u64 + 1, HALTON_BASES[j]) + shift[j]).fract();
                x[j] = u * t;
            }
            let v = f(&x[..m]);
            vals.push(if v.is_finite() { v } else { 0.0 });
        }
        estimates.push(volume * compensated_sum(vals) / points as f64);
    }
    let n = replicates as f64;
    let mean = compensated_sum(estimates.iter().copied()) / n;
    let var = compensated_sum(estimates.iter().map(|e| (e - mean) * (e - mean))) / (n - 1.0);
    let se = (var / n).sqrt();
    IntegrationResult {
        value: mean,
        error_estimate: se,
        evaluations: points * replicates,
        converged: se <= spec.tolerance(mean),
    }
}

/// Nodes and weights of the n-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        // Tricomi initial guess followed by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}
