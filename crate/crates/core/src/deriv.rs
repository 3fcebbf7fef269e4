//! Derivatives of the yield.
//!
//! With Gaussian uncertainty the gradient and Hessian of the yield with
//! respect to the distribution mean reduce to moments of the accepted sample
//! set, so they come for free with every Monte Carlo estimate:
//!
//! ```text
//! grad Y = Y * C^-1 (m_S - m)
//! hess Y = Y * C^-1 (C_S + (m_S - m)(m_S - m)^T - C) C^-1
//! ```
//!
//! where `m`, `C` are the distribution mean and covariance and `m_S`, `C_S`
//! the mean and (population) covariance of the accepted samples. Both
//! formulas are total: an empty accepted set has `Y = 0` and `m_S = m`, which
//! makes them vanish.
//!
//! Deterministic parameters get no such shortcut; their yield derivatives
//! come from central finite differences over a frozen sample set, so the
//! Monte Carlo noise cancels between the two sides of each difference.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::YieldEstimate;
use crate::uq::UncertainSpec;

/// Yield gradient with respect to the distribution mean, from the accepted
/// sample statistics of `estimate`. Zero when fewer than 2 samples were
/// accepted: a single point carries no usable direction, only noise.
pub fn grad_yield_mean(estimate: &YieldEstimate, uncertain: &UncertainSpec) -> DVector<f64> {
    if estimate.accepted.degenerate {
        return DVector::zeros(uncertain.mean().len());
    }
    let delta = &estimate.accepted.mean - uncertain.mean();
    estimate.value * (uncertain.covariance_inverse() * delta)
}

/// Yield Hessian with respect to the distribution mean, from the accepted
/// sample statistics of `estimate`. Symmetric by construction; zero when the
/// accepted set is degenerate (fewer than 2 samples).
pub fn hess_yield_mean(estimate: &YieldEstimate, uncertain: &UncertainSpec) -> DMatrix<f64> {
    if estimate.accepted.degenerate {
        let n = uncertain.mean().len();
        return DMatrix::zeros(n, n);
    }
    let inv = uncertain.covariance_inverse();
    let delta = &estimate.accepted.mean - uncertain.mean();
    let mut inner = estimate.accepted.covariance.clone() - uncertain.covariance();
    inner.ger(1.0, &delta, &delta, 1.0);
    let h = estimate.value * (inv * inner * inv);
    // the algebra is symmetric; make it exact so downstream Cholesky calls
    // never see asymmetry from floating point round-off
    0.5 * (&h + h.transpose())
}

/// Yield gradient with respect to the mean and the deterministic parameters.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub grad_mean: DVector<f64>,
    pub grad_det: DVector<f64>,
    /// The mean part came from a degenerate accepted set and is zero.
    pub degenerate: bool,
}

impl GradientBundle {
    /// Stacked `[grad_mean; grad_det]` in the optimizer's variable order.
    pub fn concatenated(&self) -> DVector<f64> {
        let n = self.grad_mean.len() + self.grad_det.len();
        let mut g = DVector::zeros(n);
        g.rows_mut(0, self.grad_mean.len()).copy_from(&self.grad_mean);
        g.rows_mut(self.grad_mean.len(), self.grad_det.len())
            .copy_from(&self.grad_det);
        g
    }
}

/// Default central-difference steps: `max(1e-3 |x_j|, 1e-3)` per coordinate.
pub fn default_fd_steps(x: &DVector<f64>) -> DVector<f64> {
    x.map(|v| (1e-3 * v.abs()).max(1e-3))
}

/// Central-difference gradient of an arbitrary scalar function.
///
/// `f` is evaluated at `x0 +- steps[j] e_j`, never at `x0` itself. Callers
/// estimating a yield should evaluate every trial point on the same frozen
/// sample set so the noise cancels inside each difference.
pub fn fd_grad_with<F>(mut f: F, x0: &DVector<f64>, steps: &DVector<f64>) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    if steps.len() != x0.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            got: steps.len(),
        });
    }
    if steps.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
        return Err(Error::InvalidParameter(
            "finite-difference steps must be positive and finite".into(),
        ));
    }
    let mut grad = DVector::zeros(x0.len());
    let mut x = x0.clone();
    for j in 0..x0.len() {
        let h = steps[j];
        x[j] = x0[j] + h;
        let up = f(&x)?;
        x[j] = x0[j] - h;
        let down = f(&x)?;
        x[j] = x0[j];
        grad[j] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// BFGS approximation of the Hessian of the *negated* yield, kept directly
/// (not as an inverse) because the mixed Hessian overwrites part of it.
#[derive(Debug, Clone)]
pub struct BfgsState {
    h: DMatrix<f64>,
}

impl BfgsState {
    pub fn new(dim: usize) -> Self {
        Self {
            h: DMatrix::identity(dim, dim),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Standard BFGS update from a step `x` and the corresponding gradient
    /// difference `g`:
    ///
    /// ```text
    /// H_+ = H + g g^T / (g.x) - (H x)(H x)^T / (x^T H x)
    /// ```
    ///
    /// Skipped (returns false, `H` untouched) when the curvature `g.x` is not
    /// safely positive, which keeps `H` positive definite.
    pub fn update(&mut self, x: &DVector<f64>, g: &DVector<f64>) -> bool {
        let curvature = g.dot(x);
        if curvature <= 1e-10 * g.norm() * x.norm() {
            return false;
        }
        let hx = &self.h * x;
        let xhx = x.dot(&hx);
        if !(xhx > 0.0) {
            return false;
        }
        self.h.ger(1.0 / curvature, g, g, 1.0);
        self.h.ger(-1.0 / xhx, &hx, &hx, 1.0);
        // rank-one updates of a symmetric matrix stay symmetric on paper;
        // enforce it against round-off
        self.h = 0.5 * (&self.h + self.h.transpose());
        true
    }
}

/// Combine the BFGS matrix (over all variables, negated-yield convention)
/// with the analytic block for the leading mean coordinates, then regularize
/// to positive definiteness.
///
/// `analytic` must already be in the same negated-objective convention as the
/// BFGS matrix, i.e. the caller passes minus the yield Hessian. The leading
/// block of the BFGS matrix is replaced by it, the result is symmetrized, and
/// the smallest shift `tau` from the ladder `0, 1e-8, 1e-6, ...` (factors of
/// 100) with `H + tau I` positive definite is applied. Returns the shifted
/// matrix and the `tau` used.
pub fn assemble_mixed_hessian(
    bfgs: &BfgsState,
    analytic: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, f64)> {
    let n = bfgs.h.nrows();
    let np = analytic.nrows();
    if analytic.ncols() != np || np > n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: np.max(analytic.ncols()),
        });
    }
    let mut h = bfgs.h.clone();
    h.view_mut((0, 0), (np, np)).copy_from(analytic);
    h = 0.5 * (&h + h.transpose());

    // exponent-generated ladder so the shifts are the exact decimal values
    // 1e-8, 1e-6, ... rather than an accumulating product
    let mut rung = 0;
    loop {
        let tau = if rung == 0 {
            0.0
        } else {
            10.0_f64.powi(2 * rung - 10)
        };
        if tau > 1e10 {
            return Err(Error::InvalidParameter(
                "mixed Hessian cannot be regularized; entries are likely not finite".into(),
            ));
        }
        let mut shifted = h.clone();
        for i in 0..n {
            shifted[(i, i)] += tau;
        }
        if Cholesky::new(shifted.clone()).is_some() {
            return Ok((shifted, tau));
        }
        rung += 1;
    }
}
