//! Yield estimation: classic Monte Carlo and the surrogate-assisted hybrid.
//!
//! The yield of a design is the probability that a manufactured parameter
//! vector lands in the safe domain. The Monte Carlo estimator classifies `n`
//! truncated-Gaussian samples and reports the acceptance fraction together
//! with the statistics of the accepted subset, which feed the closed-form
//! derivative estimators.

mod gpr;
mod hybrid;

pub use gpr::{fit_gpr, GprHyperparameters, GprSurrogate};
pub use hybrid::{
    estimate_yield_hybrid, hybrid_classify_set, HybridDiagnostics, SharedClassifyReport,
    SharedSurrogate,
};

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::parallel::try_map_ordered;
use crate::qoi::{is_in_safe_domain, PerformanceSpec, QoiModel};
use crate::uq::{sample_truncated, RngStream, UncertainSample, UncertainSpec};

/// Mean and covariance of the accepted (safe) samples.
///
/// The covariance uses the population convention (divide by the count, not
/// count - 1), matching the derivative estimators built on it.
#[derive(Debug, Clone)]
pub struct AcceptedStatistics {
    pub count: usize,
    /// Mean of the accepted samples in absolute coordinates; equal to the
    /// spec mean (zero shift) when nothing was accepted.
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Fewer than 2 accepted points: the covariance carries no information.
    pub degenerate: bool,
}

impl AcceptedStatistics {
    fn from_indicators(
        samples: &[UncertainSample],
        indicators: &[bool],
        fallback_mean: &DVector<f64>,
    ) -> Self {
        let dim = fallback_mean.len();
        let count = indicators.iter().filter(|&&b| b).count();
        if count == 0 {
            return Self {
                count,
                mean: fallback_mean.clone(),
                covariance: DMatrix::zeros(dim, dim),
                degenerate: true,
            };
        }
        let mut mean = DVector::zeros(dim);
        for (s, &ok) in samples.iter().zip(indicators) {
            if ok {
                mean += s;
            }
        }
        mean /= count as f64;
        let mut covariance = DMatrix::zeros(dim, dim);
        for (s, &ok) in samples.iter().zip(indicators) {
            if ok {
                let d = s - &mean;
                covariance.ger(1.0, &d, &d, 1.0);
            }
        }
        covariance /= count as f64;
        Self {
            count,
            mean,
            covariance,
            degenerate: count < 2,
        }
    }
}

/// One Monte Carlo yield estimate.
#[derive(Debug, Clone)]
pub struct YieldEstimate {
    /// Acceptance fraction; `value * n_samples as f64` is an integer.
    pub value: f64,
    /// Estimator standard deviation `sqrt(value*(1-value)/n)`.
    pub sigma: f64,
    pub n_samples: usize,
    pub accepted: AcceptedStatistics,
    /// Classifications made: one per (sample, grid point) pair, whether the
    /// classification came from the true model or a surrogate.
    pub qoi_evals: u64,
    /// True-model evaluations only. Equal to `qoi_evals` for classic MC,
    /// much smaller for the hybrid estimator.
    pub full_model_evals: u64,
}

/// The retained sample set of one estimate, stored as residuals about the
/// mean it was drawn around. Re-centring the same residuals on a trial mean
/// reuses the noise realization (common random numbers), which is what the
/// line search and the finite differences in `d` rely on.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub mean: DVector<f64>,
    pub residuals: Vec<DVector<f64>>,
    /// Indicator per sample at the (mean, d) the estimate was made at.
    pub indicators: Vec<bool>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    /// Absolute sample positions for a given mean.
    pub fn points_at(&self, mean: &DVector<f64>) -> Vec<DVector<f64>> {
        self.residuals.iter().map(|r| mean + r).collect()
    }
}

/// `sqrt(y*(1-y)/n)`: standard deviation of the Monte Carlo yield estimator.
pub fn sigma_mc(y: f64, n: usize) -> f64 {
    assert!(n >= 1, "sample count must be at least 1");
    assert!((0.0..=1.0).contains(&y), "yield must lie in [0, 1], got {y}");
    (y * (1.0 - y) / n as f64).sqrt()
}

/// Smallest `n` with `sigma_mc(y, n) <= sigma_max` for every `y`, i.e.
/// `ceil(0.25 / sigma_max^2)` from the worst case `y = 1/2`.
pub fn worst_case_sample_size(sigma_max: f64) -> usize {
    assert!(sigma_max > 0.0, "sigma_max must be positive");
    // subtract an epsilon so representation error in the division cannot
    // push an exact integer (0.25/0.01^2 = 2500) over the next ceil step
    (0.25 / (sigma_max * sigma_max) - 1e-9).ceil() as usize
}

/// Classify every point against the performance spec with the true model.
/// Runs data-parallel (feature `parallel`), output in input order.
pub fn classify_set(
    model: &dyn QoiModel,
    spec: &PerformanceSpec,
    d: &DVector<f64>,
    points: &[UncertainSample],
) -> Result<Vec<bool>> {
    try_map_ordered(points, |p| is_in_safe_domain(model, spec, p, d).map(|c| c.safe))
}

/// Build the estimate and retained sample set from classified samples.
pub(crate) fn assemble_estimate(
    samples: Vec<UncertainSample>,
    indicators: Vec<bool>,
    uncertain: &UncertainSpec,
    qoi_evals: u64,
    full_model_evals: u64,
) -> (YieldEstimate, SampleSet) {
    let n = samples.len();
    let accepted = AcceptedStatistics::from_indicators(&samples, &indicators, uncertain.mean());
    let value = accepted.count as f64 / n as f64;
    let estimate = YieldEstimate {
        value,
        sigma: sigma_mc(value, n),
        n_samples: n,
        accepted,
        qoi_evals,
        full_model_evals,
    };
    let residuals = samples.iter().map(|s| s - uncertain.mean()).collect();
    let set = SampleSet {
        mean: uncertain.mean().clone(),
        residuals,
        indicators,
    };
    (estimate, set)
}

/// Classic Monte Carlo yield estimate at design `(uncertain.mean(), d)`.
///
/// Returns the estimate and the retained, index-ordered sample set. The draw
/// is a pure function of `(uncertain, n, stream)`, so repeated calls with the
/// same arguments are bit-identical.
pub fn estimate_yield_mc(
    model: &dyn QoiModel,
    spec: &PerformanceSpec,
    uncertain: &UncertainSpec,
    d: &DVector<f64>,
    n: usize,
    stream: RngStream,
) -> Result<(YieldEstimate, SampleSet)> {
    assert!(n >= 1, "sample count must be at least 1");
    let samples = sample_truncated(uncertain, n, stream)?;
    let indicators = classify_set(model, spec, d, &samples)?;
    let classifications = (n * spec.grid.len()) as u64;
    Ok(assemble_estimate(
        samples,
        indicators,
        uncertain,
        classifications,
        classifications,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qoi::{HalfspaceOracle, RangeGrid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec_1d(mean: f64, var: f64, halfwidth: f64) -> UncertainSpec {
        UncertainSpec::new(
            DVector::from_vec(vec![mean]),
            DMatrix::from_vec(1, 1, vec![var]),
            DVector::from_vec(vec![halfwidth]),
        )
        .unwrap()
    }

    fn single_point_spec(threshold: f64) -> PerformanceSpec {
        PerformanceSpec::new(RangeGrid::equidistant(0.0, 0.0, 1).unwrap(), threshold).unwrap()
    }

    #[test]
    fn sigma_values_are_pinned() {
        // worst case at the benchmark accuracy target, exact in f64
        assert_eq!(sigma_mc(0.5, 2500), 0.01);
        assert_relative_eq!(sigma_mc(0.428, 100), 0.049478884385159686, max_relative = 1e-12);
        assert_eq!(sigma_mc(0.0, 10), 0.0);
        assert_eq!(sigma_mc(1.0, 10), 0.0);
    }

    #[test]
    fn worst_case_size_matches_accuracy_target() {
        assert_eq!(worst_case_sample_size(0.01), 2500);
        assert_eq!(worst_case_sample_size(0.02), 625);
        assert_eq!(worst_case_sample_size(0.1), 25);
    }

    #[test]
    fn constant_safe_model_gives_yield_one() {
        let oracle = HalfspaceOracle::new(DVector::from_vec(vec![1.0]), 1e9).unwrap();
        let spec = single_point_spec(1e9);
        let uspec = spec_1d(0.0, 1.0, 8.0);
        let d = DVector::zeros(0);
        let (est, set) = estimate_yield_mc(&oracle, &spec, &uspec, &d, 200, RngStream::new(1, 0)).unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.sigma, 0.0);
        assert_eq!(est.accepted.count, 200);
        assert!(!est.accepted.degenerate);
        assert_eq!(set.len(), 200);
        assert!(set.indicators.iter().all(|&b| b));
        assert_eq!(est.qoi_evals, 200);
        assert_eq!(est.full_model_evals, 200);
        assert_eq!(oracle.eval_count(), 200);
    }

    #[test]
    fn halfspace_estimate_near_closed_form() {
        let oracle = HalfspaceOracle::new(DVector::from_vec(vec![1.0]), 1.0).unwrap();
        let spec = single_point_spec(oracle.offset());
        let uspec = spec_1d(0.0, 1.0, 8.0);
        let d = DVector::zeros(0);
        let (est, _) = estimate_yield_mc(&oracle, &spec, &uspec, &d, 2500, RngStream::new(42, 0)).unwrap();
        let exact = oracle.closed_form_yield(&uspec).unwrap();
        assert!(
            (est.value - exact).abs() <= 4.0 * sigma_mc(exact, 2500),
            "estimate {} too far from {}",
            est.value,
            exact
        );
    }

    #[test]
    fn estimate_is_reproducible_bitwise() {
        let oracle = HalfspaceOracle::new(DVector::from_vec(vec![1.0]), 0.3).unwrap();
        let spec = single_point_spec(oracle.offset());
        let uspec = spec_1d(0.0, 1.0, 8.0);
        let d = DVector::zeros(0);
        let stream = RngStream::new(9, 3);
        let (a, set_a) = estimate_yield_mc(&oracle, &spec, &uspec, &d, 500, stream).unwrap();
        let (b, set_b) = estimate_yield_mc(&oracle, &spec, &uspec, &d, 500, stream).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.accepted.mean, b.accepted.mean);
        assert_eq!(a.accepted.covariance, b.accepted.covariance);
        assert_eq!(set_a.residuals, set_b.residuals);
        assert_eq!(set_a.indicators, set_b.indicators);
    }

    #[test]
    fn sigma_recomputation_is_bitwise_consistent() {
        let oracle = HalfspaceOracle::new(DVector::from_vec(vec![1.0]), 0.2).unwrap();
        let spec = single_point_spec(oracle.offset());
        let uspec = spec_1d(0.0, 1.0, 8.0);
        let d = DVector::zeros(0);
        let (est, _) = estimate_yield_mc(&oracle, &spec, &uspec, &d, 777, RngStream::new(5, 5)).unwrap();
        assert_eq!(est.sigma, sigma_mc(est.value, est.n_samples));
        let count = (est.value * est.n_samples as f64).round();
        assert_eq!(est.value, count / est.n_samples as f64);
    }

    #[test]
    fn degenerate_accepted_set_is_flagged() {
        // threshold far below everything: nothing accepted
        let oracle = HalfspaceOracle::new(DVector::from_vec(vec![1.0]), -1e9).unwrap();
        let spec = single_point_spec(oracle.offset());
        let uspec = spec_1d(0.0, 1.0, 8.0);
        let d = DVector::zeros(0);
        let (est, _) = estimate_yield_mc(&oracle, &spec, &uspec, &d, 50, RngStream::new(2, 0)).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(est.accepted.degenerate);
        assert_eq!(est.accepted.count, 0);
        assert_eq!(est.accepted.mean, *uspec.mean());
    }

    proptest! {
        #[test]
        fn sigma_is_symmetric_and_bounded(y in 0.0f64..=1.0, n in 1usize..10_000) {
            let s = sigma_mc(y, n);
            prop_assert!(s >= 0.0);
            prop_assert!(s <= 0.5 / (n as f64).sqrt() + 1e-15);
            prop_assert!((s - sigma_mc(1.0 - y, n)).abs() <= 1e-15);
        }

        #[test]
        fn worst_case_size_is_sufficient_and_tight(sigma in 0.001f64..0.5) {
            let n = worst_case_sample_size(sigma);
            prop_assert!(sigma_mc(0.5, n) <= sigma + 1e-12);
            if n > 1 {
                prop_assert!(sigma_mc(0.5, n - 1) > sigma - 1e-12);
            }
        }
    }
}
