//! Gradient ascent of a convex function on the unit sphere.
//!
//! Each step jumps to the normalized gradient, `v <- grad(v) / |grad(v)|`.
//! That point maximizes the linear minorizer
//! `G(u, v) = psi(v) + grad(v)'(u - v)` over the sphere, so the criterion
//! never decreases and `|v' - v|^2 <= 2 (psi(v') - psi(v)) / delta` whenever
//! `delta` bounds the gradient norms from below.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Absolute part of the tolerance on criterion decreases.
pub const MONOTONE_TOL: f64 = 1e-12;
/// Allowed negative slack in either half of the sandwich inequality.
pub const SANDWICH_TOL: f64 = 1e-12;

/// A convex, continuously differentiable criterion on the unit sphere.
pub trait GradientOracle: Sync {
    fn dim(&self) -> usize;

    fn value(&self, v: &DVector<f64>) -> Result<f64>;

    fn gradient(&self, v: &DVector<f64>) -> Result<DVector<f64>>;

    /// `psi(to) - psi(from)`. Implementations with structure should compute
    /// this without cancellation.
    fn increment(&self, from: &DVector<f64>, to: &DVector<f64>) -> Result<f64> {
        Ok(self.value(to)? - self.value(from)?)
    }

    /// A lower bound on every gradient norm met along a run started at a
    /// point with criterion `psi0`, if one is known in closed form.
    fn gradient_floor(&self, _psi0: f64) -> Option<f64> {
        None
    }

    /// Factor applied to `psi` before comparing gains with `epsilon`.
    fn epsilon_scale(&self) -> f64 {
        1.0
    }
}

/// Amount of runtime verification performed while iterating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub enum AssertLevel {
    Off,
    /// Monotonicity and the step-norm bound.
    #[default]
    Cheap,
    /// Additionally the sandwich inequality through the minorizer.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    pub assert_level: AssertLevel,
}

impl Default for SphereConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-10,
            max_iter: 10_000,
            assert_level: AssertLevel::Cheap,
        }
    }
}

/// Per-iteration record of a run. `psi[0]` is the starting value and
/// `psi[s + 1]` the value after step `s`; the other per-step vectors are
/// indexed by `s`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub psi: Vec<f64>,
    pub delta_psi: Vec<f64>,
    pub step_norm: Vec<f64>,
    /// Right side of the step bound, `2 delta_psi / delta`.
    pub bound: Vec<f64>,
    /// `(G(f(v), v) - psi(v), psi(f(v)) - G(f(v), v))`; both are
    /// non-negative in exact arithmetic. Only filled at `AssertLevel::Full`.
    pub sandwich_gaps: Vec<(f64, f64)>,
    pub sandwich_ok: Vec<bool>,
    /// The gradient-norm floor used in `bound`.
    pub delta: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `|f(v) - v|` at the returned point.
    pub fixed_point_residual: f64,
    pub warnings: Vec<String>,
}

impl SolverTrace {
    pub fn psi_final(&self) -> f64 {
        *self.psi.last().expect("trace always holds the starting value")
    }

    pub fn psi_initial(&self) -> f64 {
        self.psi[0]
    }
}

fn monotone_tolerance(psi: f64) -> f64 {
    MONOTONE_TOL + 16.0 * f64::EPSILON * psi.abs()
}

fn unit_gradient(oracle: &dyn GradientOracle, v: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let g = oracle.gradient(v)?;
    let norm = g.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InternalAssertion(format!(
            "gradient norm is {norm}; the sphere iteration needs a non-zero gradient"
        )));
    }
    Ok((g, norm))
}

/// Runs the normalized-gradient iteration from `v0` until the criterion
/// gains at most `epsilon` and the fixed-point residual is below
/// `sqrt(2 epsilon / delta)`, or `max_iter` steps were taken. Both tests
/// are taken on the scale given by `GradientOracle::epsilon_scale`.
///
/// Hitting `max_iter` is not an error: the last iterate is returned with
/// `converged = false`.
pub fn sphere_maximize(
    oracle: &dyn GradientOracle,
    v0: &DVector<f64>,
    config: &SphereConfig,
) -> Result<(DVector<f64>, SolverTrace)> {
    if !(config.epsilon > 0.0) {
        return Err(Error::Argument(format!(
            "epsilon must be positive, got {}",
            config.epsilon
        )));
    }
    if config.max_iter == 0 {
        return Err(Error::Argument("max_iter must be at least 1".into()));
    }
    if v0.len() != oracle.dim() {
        return Err(Error::Dimension(format!(
            "start has {} entries, criterion expects {}",
            v0.len(),
            oracle.dim()
        )));
    }

    let mut v = v0.clone();
    let mut psi = oracle.value(&v)?;
    if !(psi > 0.0) {
        return Err(Error::BadStart(format!(
            "criterion at the start is {psi}, must be positive"
        )));
    }
    let floor = oracle.gradient_floor(psi);
    let tol = config.epsilon / oracle.epsilon_scale();
    let (mut grad, mut grad_norm) = unit_gradient(oracle, &v)?;
    let mut running_min = grad_norm;

    let mut trace = SolverTrace {
        psi: vec![psi],
        ..Default::default()
    };

    for s in 0..config.max_iter {
        running_min = running_min.min(grad_norm);
        let delta = floor.unwrap_or(running_min);
        let next = &grad / grad_norm;
        let diff = &next - &v;
        let step = diff.norm();
        let dpsi = oracle.increment(&v, &next)?;
        let psi_next = oracle.value(&next)?;
        let bound = 2.0 * dpsi / delta;

        trace.psi.push(psi_next);
        trace.delta_psi.push(dpsi);
        trace.step_norm.push(step);
        trace.bound.push(bound);
        trace.iterations = s + 1;

        if config.assert_level >= AssertLevel::Cheap {
            if dpsi < -monotone_tolerance(psi) {
                return Err(Error::InternalAssertion(format!(
                    "criterion decreased by {} at iteration {s}",
                    -dpsi
                )));
            }
            // Normalization rounding perturbs both sides by O(eps * |grad| / delta).
            let slack = 64.0 * f64::EPSILON * (grad_norm / delta).max(1.0);
            if step * step > bound + slack {
                return Err(Error::InternalAssertion(format!(
                    "step bound violated at iteration {s}: |dv|^2 = {} > {bound}",
                    step * step
                )));
            }
        }
        if config.assert_level >= AssertLevel::Full {
            let lower = grad.dot(&diff);
            let upper = dpsi - lower;
            let ok = lower >= -SANDWICH_TOL && upper >= -SANDWICH_TOL;
            trace.sandwich_gaps.push((lower, upper));
            trace.sandwich_ok.push(ok);
            if !ok {
                return Err(Error::InternalAssertion(format!(
                    "sandwich inequality violated at iteration {s}: gaps ({lower}, {upper})"
                )));
            }
        }

        let (g, gn) = unit_gradient(oracle, &next)?;
        v = next;
        psi = psi_next;
        grad = g;
        grad_norm = gn;
        trace.delta = delta;

        if dpsi <= tol {
            let residual = (&grad / grad_norm - &v).norm();
            let threshold = (2.0 * tol / floor.unwrap_or(running_min.min(grad_norm))).sqrt();
            if residual <= threshold {
                trace.converged = true;
                break;
            }
        }
    }

    trace.fixed_point_residual = (&grad / grad_norm - &v).norm();
    Ok((v, trace))
}
