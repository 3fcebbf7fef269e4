//! Yield maximization drivers.
//!
//! Two drivers share the telemetry format: a globalized Newton ascent using
//! the mixed derivative strategy (analytic in the distribution mean, BFGS
//! plus finite differences in the deterministic parameters), and a
//! Nelder-Mead reference that treats the yield as a black box. The Newton
//! driver comes in a non-adaptive flavor (sample size fixed from the worst
//! case error bound) and an adaptive one (sample size grows only when the
//! Monte Carlo noise dominates observed progress), optionally with the
//! surrogate-assisted estimator.

mod nelder_mead;
mod newton;

pub use nelder_mead::nelder_mead_reference;
pub use newton::newton_mixed;

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimate::{
    assemble_estimate, estimate_yield_mc, worst_case_sample_size, SampleSet, SharedSurrogate,
    YieldEstimate,
};
use crate::qoi::{DesignPoint, PerformanceSpec, QoiModel};
use crate::uq::{sample_truncated, RngStream, UncertainSample, UncertainSpec};

/// One optimization problem: the model, what counts as safe, how the
/// uncertain parameters scatter, and where the deterministic parameters
/// start. The mean of `uncertain` is the initial design mean.
#[derive(Clone)]
pub struct Problem {
    pub model: Arc<dyn QoiModel>,
    pub spec: PerformanceSpec,
    pub uncertain: UncertainSpec,
    pub initial_det: DVector<f64>,
}

impl Problem {
    pub fn new(
        model: Arc<dyn QoiModel>,
        spec: PerformanceSpec,
        uncertain: UncertainSpec,
        initial_det: DVector<f64>,
    ) -> Result<Self> {
        if uncertain.mean().len() != model.uncertain_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.uncertain_dim(),
                got: uncertain.mean().len(),
            });
        }
        if initial_det.len() != model.deterministic_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.deterministic_dim(),
                got: initial_det.len(),
            });
        }
        Ok(Self {
            model,
            spec,
            uncertain,
            initial_det,
        })
    }

    pub fn initial_design(&self) -> DesignPoint {
        DesignPoint {
            uncertain_mean: self.uncertain.mean().clone(),
            deterministic: self.initial_det.clone(),
        }
    }
}

/// Driver settings. The defaults reproduce the benchmark setup: a 1 %
/// estimator accuracy target, 100 initial samples growing to at most 2500.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Largest acceptable estimator standard deviation.
    pub sigma_max: f64,
    /// Starting sample size for the adaptive driver.
    pub n_initial: usize,
    /// Sample-size cap; also the size of the final verification estimate.
    pub n_max: usize,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Minimum cosine between gradient and Newton direction before falling
    /// back to steepest ascent.
    pub angle_threshold: f64,
    /// Classify with the surrogate-assisted estimator instead of classic MC.
    pub hybrid: bool,
    /// Width of the surrogate's uncertain band, in predictive standard
    /// deviations.
    pub gamma: f64,
    /// Deterministic points seeding the shared surrogate's training set.
    pub initial_design_size: usize,
    /// Finite-difference steps for the deterministic parameters; `None`
    /// applies `max(1e-3 |d_j|, 1e-3)` per coordinate.
    pub fd_steps: Option<DVector<f64>>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            sigma_max: 0.01,
            n_initial: 100,
            n_max: 2500,
            max_iterations: 50,
            gradient_tolerance: 1e-3,
            step_tolerance: 1e-6,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 20,
            angle_threshold: 1e-4,
            hybrid: false,
            gamma: 3.0,
            initial_design_size: 24,
            fd_steps: None,
            seed: 42,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        fn bad(msg: String) -> Result<()> {
            Err(Error::InvalidParameter(msg))
        }
        if !(self.sigma_max > 0.0) || !self.sigma_max.is_finite() {
            return bad(format!("sigma_max must be positive, got {}", self.sigma_max));
        }
        if self.n_initial == 0 {
            return bad("n_initial must be at least 1".into());
        }
        if self.n_initial > self.n_max {
            return bad(format!(
                "n_initial ({}) must not exceed n_max ({})",
                self.n_initial, self.n_max
            ));
        }
        if self.max_iterations == 0 || self.max_iterations > 100_000 {
            return bad(format!(
                "max_iterations must lie in 1..=100000, got {}",
                self.max_iterations
            ));
        }
        if !(self.gradient_tolerance > 0.0) {
            return bad("gradient_tolerance must be positive".into());
        }
        if !(self.step_tolerance > 0.0) {
            return bad("step_tolerance must be positive".into());
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad(format!("armijo_c1 must lie in (0, 1), got {}", self.armijo_c1));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad(format!(
                "backtrack_factor must lie in (0, 1), got {}",
                self.backtrack_factor
            ));
        }
        if self.max_backtracks == 0 {
            return bad("max_backtracks must be at least 1".into());
        }
        if !(self.angle_threshold > 0.0 && self.angle_threshold < 1.0) {
            return bad(format!(
                "angle_threshold must lie in (0, 1), got {}",
                self.angle_threshold
            ));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.initial_design_size < 2 {
            return bad("initial_design_size must be at least 2".into());
        }
        if let Some(steps) = &self.fd_steps {
            if steps.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
                return bad("fd_steps must be positive and finite".into());
            }
        }
        Ok(())
    }
}

/// Sample size of the non-adaptive driver: enough for the worst-case yield
/// to meet `sigma_max`, capped at `n_max`.
pub fn non_adaptive_sample_size(config: &OptimizerConfig) -> usize {
    worst_case_sample_size(config.sigma_max).min(config.n_max)
}

/// The four benchmark strategies, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Nelder-Mead on the plain MC yield, the derivative-free reference.
    DfoReference,
    /// Mixed-derivative Newton at the worst-case fixed sample size.
    MixedNonAdaptive,
    /// Mixed-derivative Newton with the adaptive sample-size controller.
    MixedAdaptive,
    /// Adaptive Newton with surrogate-assisted estimation.
    MixedAdaptiveHybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::DfoReference,
        Strategy::MixedNonAdaptive,
        Strategy::MixedAdaptive,
        Strategy::MixedAdaptiveHybrid,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Strategy::DfoReference => "dfo-reference",
            Strategy::MixedNonAdaptive => "mixed-non-adaptive",
            Strategy::MixedAdaptive => "mixed-adaptive",
            Strategy::MixedAdaptiveHybrid => "mixed-adaptive-hybrid",
        }
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalStatus {
    /// Gradient below tolerance, step below tolerance, or no improving step
    /// left at the target accuracy.
    Converged,
    /// Iteration or evaluation budget exhausted.
    MaxIterations,
    /// No improving step found and the accuracy target is unreachable at the
    /// allowed sample size.
    Degenerate,
}

impl TerminalStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminalStatus::Converged => "converged",
            TerminalStatus::MaxIterations => "max-iterations",
            TerminalStatus::Degenerate => "degenerate",
        }
    }
}

/// One telemetry row. Newton drivers log one row per outer iteration (at the
/// point the iteration started from), the Nelder-Mead reference one row per
/// yield evaluation; every run appends one last row for the final
/// verification estimate at `n_max` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iteration: usize,
    pub mean: DVector<f64>,
    pub det: DVector<f64>,
    pub yield_value: f64,
    pub sigma: f64,
    pub n_samples: usize,
    /// Norm of the estimated yield gradient; 0 for derivative-free rows and
    /// the verification row.
    pub grad_norm: f64,
    /// Norm of the accepted step (Newton) or current simplex diameter
    /// (Nelder-Mead); 0 when no step was taken.
    pub step_norm: f64,
    /// The logged direction was the steepest-ascent fallback.
    pub used_steepest: bool,
    /// Full-sample-set classifications so far, including finite-difference
    /// and line-search trial evaluations.
    pub cum_yield_evals: u64,
    /// (sample, grid point) classifications so far, surrogate or true model.
    pub cum_qoi_evals: u64,
    /// True-model evaluations so far.
    pub cum_full_model_evals: u64,
}

/// Full telemetry of one optimization run. The cumulative counters of the
/// last row equal the totals stored here.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub status: TerminalStatus,
    pub rows: Vec<IterationRow>,
    pub final_design: DesignPoint,
    /// Yield of the final verification estimate (`n_max` samples).
    pub final_yield: f64,
    pub final_sigma: f64,
    pub yield_evals: u64,
    pub qoi_evals: u64,
    pub full_model_evals: u64,
}

/// Result of one strategy inside a comparison run.
#[derive(Debug)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub result: Result<RunRecord>,
}

/// Run one strategy with the settings it stands for (the `hybrid` flag in
/// `config` is overridden accordingly).
pub fn run_strategy(
    problem: &Problem,
    config: &OptimizerConfig,
    strategy: Strategy,
) -> Result<RunRecord> {
    let mut cfg = config.clone();
    cfg.hybrid = matches!(strategy, Strategy::MixedAdaptiveHybrid);
    match strategy {
        Strategy::DfoReference => nelder_mead_reference(problem, &cfg).map(|(r, _)| r),
        Strategy::MixedNonAdaptive => newton_mixed(problem, &cfg, false).map(|(r, _)| r),
        Strategy::MixedAdaptive | Strategy::MixedAdaptiveHybrid => {
            newton_mixed(problem, &cfg, true).map(|(r, _)| r)
        }
    }
}

/// Run the given strategies under one master seed. Strategies draw from
/// disjoint stream namespaces, so each one's record is the same whether run
/// alone or in a comparison; a failing strategy is recorded and does not
/// abort the rest.
pub fn compare_strategies(
    problem: &Problem,
    config: &OptimizerConfig,
    strategies: &[Strategy],
) -> Vec<StrategyOutcome> {
    strategies
        .iter()
        .map(|&strategy| StrategyOutcome {
            strategy,
            result: run_strategy(problem, config, strategy),
        })
        .collect()
}

/// Stream id layout: one namespace per driver flavor, iteration or
/// evaluation index as offset, far-away offset for the verification draw.
pub(crate) const STREAM_NAMESPACE_DFO: u64 = 0;
pub(crate) const STREAM_NAMESPACE_NON_ADAPTIVE: u64 = 1_000_000;
pub(crate) const STREAM_NAMESPACE_ADAPTIVE: u64 = 2_000_000;
pub(crate) const STREAM_NAMESPACE_ADAPTIVE_HYBRID: u64 = 3_000_000;
pub(crate) const STREAM_NAMESPACE_NON_ADAPTIVE_HYBRID: u64 = 4_000_000;
pub(crate) const VERIFICATION_STREAM_OFFSET: u64 = 500_000;

pub(crate) fn stream_namespace(adaptive: bool, hybrid: bool) -> u64 {
    match (adaptive, hybrid) {
        (false, false) => STREAM_NAMESPACE_NON_ADAPTIVE,
        (true, false) => STREAM_NAMESPACE_ADAPTIVE,
        (true, true) => STREAM_NAMESPACE_ADAPTIVE_HYBRID,
        (false, true) => STREAM_NAMESPACE_NON_ADAPTIVE_HYBRID,
    }
}

/// Concatenate the uncertain-mean and deterministic parts into the full
/// optimization variable.
pub(crate) fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

/// How a driver classifies sample sets: directly, or through the surrogate
/// that persists across the whole run so its training amortizes over every
/// estimate, finite difference, and line-search trial.
pub(crate) enum Classifier {
    Classic,
    Hybrid(SharedSurrogate),
}

impl Classifier {
    pub(crate) fn from_config(problem: &Problem, config: &OptimizerConfig) -> Result<Self> {
        Ok(if config.hybrid {
            Classifier::Hybrid(SharedSurrogate::new(
                &problem.spec,
                config.gamma,
                config.initial_design_size,
            )?)
        } else {
            Classifier::Classic
        })
    }

    pub(crate) fn estimate(
        &mut self,
        problem: &Problem,
        uncertain: &UncertainSpec,
        det: &DVector<f64>,
        n: usize,
        stream: RngStream,
    ) -> Result<(YieldEstimate, SampleSet)> {
        match self {
            Classifier::Classic => {
                estimate_yield_mc(problem.model.as_ref(), &problem.spec, uncertain, det, n, stream)
            }
            Classifier::Hybrid(surrogate) => {
                assert!(n >= 1, "sample count must be at least 1");
                let samples = sample_truncated(uncertain, n, stream)?;
                let (indicators, report) =
                    surrogate.classify(problem.model.as_ref(), det, &samples)?;
                let qoi_evals = (n * problem.spec.grid.len()) as u64;
                Ok(assemble_estimate(
                    samples,
                    indicators,
                    uncertain,
                    qoi_evals,
                    report.full_model_evals,
                ))
            }
        }
    }

    /// Classify a frozen point set at a trial design; returns the accepted
    /// count plus the (qoi, full-model) evaluation cost.
    pub(crate) fn classify(
        &mut self,
        problem: &Problem,
        det: &DVector<f64>,
        points: &[UncertainSample],
    ) -> Result<(usize, u64, u64)> {
        let classifications = (points.len() * problem.spec.grid.len()) as u64;
        match self {
            Classifier::Classic => {
                let safe =
                    crate::estimate::classify_set(problem.model.as_ref(), &problem.spec, det, points)?;
                let accepted = safe.iter().filter(|&&b| b).count();
                Ok((accepted, classifications, classifications))
            }
            Classifier::Hybrid(surrogate) => {
                let (safe, report) = surrogate.classify(problem.model.as_ref(), det, points)?;
                let accepted = safe.iter().filter(|&&b| b).count();
                Ok((accepted, classifications, report.full_model_evals))
            }
        }
    }
}

/// Running totals for one driver run.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Counters {
    pub yield_evals: u64,
    pub qoi_evals: u64,
    pub full_model_evals: u64,
}

impl Counters {
    pub(crate) fn record_estimate(&mut self, est: &YieldEstimate) {
        self.yield_evals += 1;
        self.qoi_evals += est.qoi_evals;
        self.full_model_evals += est.full_model_evals;
    }

    pub(crate) fn record_classification(&mut self, qoi: u64, full: u64) {
        self.yield_evals += 1;
        self.qoi_evals += qoi;
        self.full_model_evals += full;
    }

    /// A trial evaluation that aborted on a model domain error still spent
    /// budget; count the attempt but no classifications (partial work is
    /// not reported to keep counters scheduling-independent).
    pub(crate) fn record_failed_trial(&mut self) {
        self.yield_evals += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qoi::{HalfspaceOracle, RangeGrid};
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn toy_problem() -> Problem {
        let oracle = HalfspaceOracle::new(v(&[1.0]), 0.0).unwrap();
        let spec =
            PerformanceSpec::new(RangeGrid::equidistant(0.0, 0.0, 1).unwrap(), 0.0).unwrap();
        let uncertain = UncertainSpec::new(
            v(&[0.0]),
            DMatrix::from_vec(1, 1, vec![1.0]),
            v(&[8.0]),
        )
        .unwrap();
        Problem::new(Arc::new(oracle), spec, uncertain, DVector::zeros(0)).unwrap()
    }

    #[test]
    fn default_config_mirrors_the_benchmark() {
        let c = OptimizerConfig::default();
        assert_eq!(c.sigma_max, 0.01);
        assert_eq!(c.n_initial, 100);
        assert_eq!(c.n_max, 2500);
        assert_eq!(c.max_iterations, 50);
        assert_eq!(c.gradient_tolerance, 1e-3);
        assert_eq!(c.step_tolerance, 1e-6);
        assert_eq!(c.armijo_c1, 1e-4);
        assert_eq!(c.backtrack_factor, 0.5);
        assert_eq!(c.max_backtracks, 20);
        assert_eq!(c.angle_threshold, 1e-4);
        assert!(!c.hybrid);
        assert_eq!(c.gamma, 3.0);
        assert_eq!(c.initial_design_size, 24);
        assert!(c.fd_steps.is_none());
        assert!(c.validate().is_ok());
    }

    #[test]
    fn non_adaptive_size_resolves_the_worst_case() {
        let mut c = OptimizerConfig::default();
        assert_eq!(non_adaptive_sample_size(&c), 2500);
        c.sigma_max = 0.02;
        assert_eq!(non_adaptive_sample_size(&c), 625);
        c.sigma_max = 0.001;
        assert_eq!(non_adaptive_sample_size(&c), 2500); // capped by n_max
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let base = OptimizerConfig::default();
        let cases: Vec<Box<dyn Fn(&mut OptimizerConfig)>> = vec![
            Box::new(|c| c.sigma_max = 0.0),
            Box::new(|c| c.n_initial = 0),
            Box::new(|c| c.n_initial = c.n_max + 1),
            Box::new(|c| c.max_iterations = 0),
            Box::new(|c| c.gradient_tolerance = -1.0),
            Box::new(|c| c.step_tolerance = 0.0),
            Box::new(|c| c.armijo_c1 = 1.0),
            Box::new(|c| c.backtrack_factor = 0.0),
            Box::new(|c| c.max_backtracks = 0),
            Box::new(|c| c.angle_threshold = 1.0),
            Box::new(|c| c.gamma = 0.0),
            Box::new(|c| c.initial_design_size = 1),
            Box::new(|c| c.fd_steps = Some(v(&[0.0]))),
        ];
        for mutate in cases {
            let mut c = base.clone();
            mutate(&mut c);
            assert!(c.validate().is_err(), "accepted invalid config {c:?}");
        }
    }

    #[test]
    fn strategy_labels_are_distinct_and_ordered() {
        let labels: Vec<&str> = Strategy::ALL.iter().map(|s| s.label()).collect();
        assert_eq!(
            labels,
            vec![
                "dfo-reference",
                "mixed-non-adaptive",
                "mixed-adaptive",
                "mixed-adaptive-hybrid"
            ]
        );
    }

    #[test]
    fn problem_rejects_dimension_mismatches() {
        let oracle = HalfspaceOracle::new(v(&[1.0]), 0.0).unwrap();
        let spec =
            PerformanceSpec::new(RangeGrid::equidistant(0.0, 0.0, 1).unwrap(), 0.0).unwrap();
        let two_dim = UncertainSpec::new(
            v(&[0.0, 0.0]),
            DMatrix::identity(2, 2),
            v(&[8.0, 8.0]),
        )
        .unwrap();
        assert!(Problem::new(Arc::new(oracle), spec.clone(), two_dim, DVector::zeros(0)).is_err());
        let oracle = HalfspaceOracle::new(v(&[1.0]), 0.0).unwrap();
        let one_dim = UncertainSpec::new(
            v(&[0.0]),
            DMatrix::from_vec(1, 1, vec![1.0]),
            v(&[8.0]),
        )
        .unwrap();
        assert!(Problem::new(Arc::new(oracle), spec, one_dim, v(&[1.0])).is_err());
    }

    #[test]
    fn comparison_runs_strategies_independently() {
        let problem = toy_problem();
        let mut config = OptimizerConfig::default();
        config.sigma_max = 0.05;
        config.n_max = 400;
        config.n_initial = 100;
        config.max_iterations = 10;
        let outcomes = compare_strategies(&problem, &config, &Strategy::ALL);
        assert_eq!(outcomes.len(), 4);
        for (outcome, expected) in outcomes.iter().zip(Strategy::ALL) {
            assert_eq!(outcome.strategy, expected);
            let record = outcome.result.as_ref().expect("strategy failed");
            let last = record.rows.last().unwrap();
            assert_eq!(last.cum_yield_evals, record.yield_evals);
            assert_eq!(last.cum_qoi_evals, record.qoi_evals);
            assert_eq!(last.cum_full_model_evals, record.full_model_evals);
            assert!(record.final_yield >= 0.0 && record.final_yield <= 1.0);
        }
        // a strategy's record does not depend on what else ran
        let solo = run_strategy(&problem, &config, Strategy::MixedAdaptive).unwrap();
        let in_comparison = outcomes[2].result.as_ref().unwrap();
        assert_eq!(solo.rows, in_comparison.rows);
        assert_eq!(solo.final_yield, in_comparison.final_yield);
    }
}
