//! Analytic test models with closed-form yields and derivatives.
//!
//! These exist to validate the Monte Carlo estimators and the optimizer
//! against exact answers; they are cheap linear functions of the parameters,
//! not physical device models.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::qoi::{check_dims, QoiModel};
use crate::uq::UncertainSpec;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Q(p) = normal . p`, independent of `d` and `r`. Against a threshold `c`
/// (the half-space offset) the safe domain is the half-space
/// `normal . p <= c`, whose Gaussian measure is known in closed form.
#[derive(Debug)]
pub struct HalfspaceOracle {
    normal: DVector<f64>,
    offset: f64,
    count: AtomicU64,
}

impl HalfspaceOracle {
    pub fn new(normal: DVector<f64>, offset: f64) -> Result<Self> {
        if normal.norm() == 0.0 || normal.is_empty() {
            return Err(Error::InvalidParameter(
                "half-space normal must be a nonzero vector".into(),
            ));
        }
        if !offset.is_finite() {
            return Err(Error::InvalidParameter("half-space offset must be finite".into()));
        }
        Ok(Self {
            normal,
            offset,
            count: AtomicU64::new(0),
        })
    }

    /// The threshold the half-space was built around; use it as the
    /// performance-spec threshold to make the closed forms below apply.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    fn standardized(&self, spec: &UncertainSpec) -> Result<(f64, f64)> {
        if spec.dim() != self.normal.len() {
            return Err(Error::DimensionMismatch {
                expected: self.normal.len(),
                got: spec.dim(),
            });
        }
        // s^2 = n^T Sigma n, z = (c - n^T mean) / s
        let s = (self.normal.dot(&(spec.covariance() * &self.normal))).sqrt();
        let z = (self.offset - self.normal.dot(spec.mean())) / s;
        Ok((z, s))
    }

    /// Exact yield of the untruncated Gaussian: `Phi((c - n.mean)/s)`.
    pub fn closed_form_yield(&self, spec: &UncertainSpec) -> Result<f64> {
        let (z, _) = self.standardized(spec)?;
        Ok(normal_cdf(z))
    }

    /// Exact gradient of the yield with respect to the mean:
    /// `-phi(z)/s * normal`.
    pub fn closed_form_gradient(&self, spec: &UncertainSpec) -> Result<DVector<f64>> {
        let (z, s) = self.standardized(spec)?;
        Ok(&self.normal * (-normal_pdf(z) / s))
    }

    /// Exact Hessian of the yield with respect to the mean:
    /// `-z*phi(z)/s^2 * normal normal^T`.
    pub fn closed_form_hessian(&self, spec: &UncertainSpec) -> Result<DMatrix<f64>> {
        let (z, s) = self.standardized(spec)?;
        let outer = &self.normal * self.normal.transpose();
        Ok(outer * (-z * normal_pdf(z) / (s * s)))
    }
}

impl QoiModel for HalfspaceOracle {
    fn uncertain_dim(&self) -> usize {
        self.normal.len()
    }

    fn deterministic_dim(&self) -> usize {
        0
    }

    fn evaluate(&self, p: &DVector<f64>, d: &DVector<f64>, _r: f64) -> Result<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        check_dims(self, p, d)?;
        Ok(self.normal.dot(p))
    }

    fn eval_count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

/// `Q(p, d) = p - d` in one dimension, independent of `r`. With threshold 0
/// the yield is `Phi((d - mean)/s)`, which makes the deterministic-parameter
/// finite differences checkable against an exact derivative.
#[derive(Debug, Default)]
pub struct ShiftedOracle {
    count: AtomicU64,
}

impl ShiftedOracle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Exact yield for threshold 0: `Phi((d - mean)/s)`.
    pub fn closed_form_yield(&self, spec: &UncertainSpec, d: f64) -> Result<f64> {
        let (z, _) = self.standardized(spec, d)?;
        Ok(normal_cdf(z))
    }

    /// Exact derivative of the yield in `d`: `phi(z)/s`.
    pub fn closed_form_dyield_dd(&self, spec: &UncertainSpec, d: f64) -> Result<f64> {
        let (z, s) = self.standardized(spec, d)?;
        Ok(normal_pdf(z) / s)
    }

    fn standardized(&self, spec: &UncertainSpec, d: f64) -> Result<(f64, f64)> {
        if spec.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: spec.dim(),
            });
        }
        let s = spec.covariance()[(0, 0)].sqrt();
        Ok(((d - spec.mean()[0]) / s, s))
    }
}

impl QoiModel for ShiftedOracle {
    fn uncertain_dim(&self) -> usize {
        1
    }

    fn deterministic_dim(&self) -> usize {
        1
    }

    fn evaluate(&self, p: &DVector<f64>, d: &DVector<f64>, _r: f64) -> Result<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        check_dims(self, p, d)?;
        Ok(p[0] - d[0])
    }

    fn eval_count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn spec_2d(mean: Vec<f64>) -> UncertainSpec {
        UncertainSpec::new(
            DVector::from_vec(mean),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.81, 0.81])),
            DVector::from_vec(vec![3.0, 3.0]),
        )
        .unwrap()
    }

    #[test]
    fn closed_form_yield_on_the_benchmark_numbers() {
        let oracle = HalfspaceOracle::new(DVector::from_vec(vec![1.0, 0.0]), 9.5).unwrap();
        let spec = spec_2d(vec![9.0, 5.0]);
        let y = oracle.closed_form_yield(&spec).unwrap();
        // Phi((9.5 - 9) / 0.9) = Phi(0.5555...)
        assert_relative_eq!(y, normal_cdf(0.5 / 0.9), max_relative = 1e-14);
    }

    #[test]
    fn unit_case_matches_pinned_normal_values() {
        let oracle = HalfspaceOracle::new(DVector::from_vec(vec![1.0]), 1.0).unwrap();
        let spec = UncertainSpec::new(
            DVector::from_vec(vec![0.0]),
            DMatrix::from_vec(1, 1, vec![1.0]),
            DVector::from_vec(vec![8.0]),
        )
        .unwrap();
        // the reference is exact; the erf behind normal_cdf is only good to
        // about 1e-11 of relative error
        assert_relative_eq!(
            oracle.closed_form_yield(&spec).unwrap(),
            0.8413447460685429,
            max_relative = 1e-9
        );
        let g = oracle.closed_form_gradient(&spec).unwrap();
        assert_relative_eq!(g[0], -0.24197072451914337, max_relative = 1e-12);
        let h = oracle.closed_form_hessian(&spec).unwrap();
        assert_relative_eq!(h[(0, 0)], -0.24197072451914337, max_relative = 1e-12);
    }

    #[test]
    fn halfspace_crossing_the_threshold() {
        let oracle = HalfspaceOracle::new(DVector::from_vec(vec![1.0, 0.0]), 9.5).unwrap();
        let d = DVector::zeros(0);
        let q_in = oracle.evaluate(&DVector::from_vec(vec![9.0, 5.0]), &d, 0.0).unwrap();
        let q_out = oracle.evaluate(&DVector::from_vec(vec![9.9, 5.0]), &d, 0.0).unwrap();
        assert!(q_in <= 9.5 && q_out > 9.5);
        assert_eq!(oracle.eval_count(), 2);
    }

    #[test]
    fn shifted_oracle_derivative_at_the_mean() {
        let oracle = ShiftedOracle::new();
        let spec = UncertainSpec::new(
            DVector::from_vec(vec![3.0]),
            DMatrix::from_vec(1, 1, vec![1.0]),
            DVector::from_vec(vec![8.0]),
        )
        .unwrap();
        // d at the mean: z = 0, so dY/dd = phi(0) = 0.398942...
        assert_relative_eq!(
            oracle.closed_form_dyield_dd(&spec, 3.0).unwrap(),
            0.3989422804014327,
            max_relative = 1e-12
        );
        assert_relative_eq!(oracle.closed_form_yield(&spec, 3.0).unwrap(), 0.5, max_relative = 1e-14);
    }
}
