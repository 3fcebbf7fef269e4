//! Globalized Newton ascent with the mixed derivative strategy.
//!
//! Each outer iteration draws a fresh sample set at the current design,
//! estimates the yield, and assembles the gradient from the closed-form
//! expression in the distribution mean plus central differences in the
//! deterministic parameters. The search direction solves the mixed Hessian
//! system (analytic block for the mean, BFGS everywhere else) and a
//! backtracking line search re-classifies the same sample set, recentered on
//! the trial mean, so the acceptance decision compares like with like.

use nalgebra::{Cholesky, DVector};

use crate::deriv::{
    assemble_mixed_hessian, default_fd_steps, fd_grad_with, grad_yield_mean, hess_yield_mean,
    BfgsState, GradientBundle,
};
use crate::error::Result;
use crate::estimate::YieldEstimate;
use crate::qoi::DesignPoint;
use crate::uq::RngStream;

use super::{
    non_adaptive_sample_size, stack, stream_namespace, Classifier, Counters, IterationRow,
    OptimizerConfig, Problem, RunRecord, TerminalStatus, VERIFICATION_STREAM_OFFSET,
};

/// Newton directions longer than this multiple of the gradient norm are
/// treated as unreliable and replaced by steepest ascent. The regularization
/// ladder makes the mixed Hessian positive definite, but when the true
/// curvature vanishes (yield locally linear) the shifted solve returns a
/// direction whose length is set by the shift, not by the problem, and the
/// line search would waste its whole budget walking it back in.
const MAX_NEWTON_STEP_RATIO: f64 = 1e3;

/// What to do after a line search found no acceptable step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ZeroStepAction {
    /// Estimator noise is already at the target: nothing left to resolve.
    Converge,
    /// Grow the sample set and retry from the same design.
    Grow(usize),
    /// The sample size is pinned and too noisy to make progress.
    Degenerate,
}

fn zero_step_action(
    adaptive: bool,
    sigma: f64,
    sigma_max: f64,
    n: usize,
    n_max: usize,
) -> ZeroStepAction {
    if sigma <= sigma_max {
        ZeroStepAction::Converge
    } else if adaptive {
        ZeroStepAction::Grow((2 * n).min(n_max))
    } else {
        ZeroStepAction::Degenerate
    }
}

fn make_row(
    iteration: usize,
    mean: &DVector<f64>,
    det: &DVector<f64>,
    est: &YieldEstimate,
    grad_norm: f64,
    step_norm: f64,
    used_steepest: bool,
    counters: &Counters,
) -> IterationRow {
    IterationRow {
        iteration,
        mean: mean.clone(),
        det: det.clone(),
        yield_value: est.value,
        sigma: est.sigma,
        n_samples: est.n_samples,
        grad_norm,
        step_norm,
        used_steepest,
        cum_yield_evals: counters.yield_evals,
        cum_qoi_evals: counters.qoi_evals,
        cum_full_model_evals: counters.full_model_evals,
    }
}

/// Maximize the yield over `(mean, d)` starting from the problem's initial
/// design. Returns the run telemetry and the final design; the reported
/// final yield always comes from a fresh verification estimate at
/// `config.n_max` samples.
pub fn newton_mixed(
    problem: &Problem,
    config: &OptimizerConfig,
    adaptive: bool,
) -> Result<(RunRecord, DesignPoint)> {
    config.validate()?;
    let mut classifier = Classifier::from_config(problem, config)?;
    let namespace = stream_namespace(adaptive, config.hybrid);
    let np = problem.model.uncertain_dim();
    let nd = problem.model.deterministic_dim();
    let mut n = if adaptive {
        config.n_initial
    } else {
        non_adaptive_sample_size(config)
    };
    let mut mean = problem.uncertain.mean().clone();
    let mut det = problem.initial_det.clone();
    let mut counters = Counters::default();
    let mut rows: Vec<IterationRow> = Vec::new();
    let mut bfgs = BfgsState::new(np + nd);
    // previous iterate and its gradient of -Y, for the BFGS secant pair
    let mut previous: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut status = TerminalStatus::MaxIterations;

    for iteration in 0..config.max_iterations {
        let uncertain = problem.uncertain.with_mean(mean.clone())?;
        let stream = RngStream::new(config.seed, namespace + iteration as u64);
        let (est, set) = classifier.estimate(problem, &uncertain, &det, n, stream)?;
        counters.record_estimate(&est);

        let points = set.points_at(&mean);
        let grad_det = if nd == 0 {
            DVector::zeros(0)
        } else {
            let steps = config
                .fd_steps
                .clone()
                .unwrap_or_else(|| default_fd_steps(&det));
            fd_grad_with(
                |trial_det| {
                    let (count, qoi, full) = classifier.classify(problem, trial_det, &points)?;
                    counters.record_classification(qoi, full);
                    Ok(count as f64 / points.len() as f64)
                },
                &det,
                &steps,
            )?
        };
        let bundle = GradientBundle {
            grad_mean: grad_yield_mean(&est, &uncertain),
            grad_det,
            degenerate: est.accepted.degenerate,
        };
        let grad = bundle.concatenated();
        let grad_norm = grad.norm();

        let x = stack(&mean, &det);
        if let Some((x_prev, descent_grad_prev)) = previous.take() {
            bfgs.update(&(&x - &x_prev), &(-&grad - descent_grad_prev));
        }
        previous = Some((x, -&grad));

        if grad_norm <= config.gradient_tolerance {
            rows.push(make_row(iteration, &mean, &det, &est, grad_norm, 0.0, false, &counters));
            status = TerminalStatus::Converged;
            break;
        }

        let mut dir = grad.clone();
        let mut used_steepest = true;
        let neg_hess = -hess_yield_mean(&est, &uncertain);
        if let Ok((h, _shift)) = assemble_mixed_hessian(&bfgs, &neg_hess) {
            if let Some(chol) = Cholesky::new(h) {
                let s = chol.solve(&grad);
                let s_norm = s.norm();
                if s_norm.is_finite()
                    && s_norm > 0.0
                    && grad.dot(&s) >= config.angle_threshold * grad_norm * s_norm
                    && s_norm <= MAX_NEWTON_STEP_RATIO * grad_norm
                {
                    dir = s;
                    used_steepest = false;
                }
            }
        }
        let dir_mean = dir.rows(0, np).into_owned();
        let dir_det = dir.rows(np, nd).into_owned();
        let slope = grad.dot(&dir);

        // backtracking line search on the recentered frozen sample set; a
        // trial that leaves the model's domain just fails the trial
        let mut t = 1.0_f64;
        let mut accepted = None;
        for _ in 0..config.max_backtracks {
            let trial_mean = &mean + &dir_mean * t;
            let trial_det = &det + &dir_det * t;
            let trial_points = set.points_at(&trial_mean);
            match classifier.classify(problem, &trial_det, &trial_points) {
                Ok((count, qoi, full)) => {
                    counters.record_classification(qoi, full);
                    let trial_yield = count as f64 / n as f64;
                    if trial_yield >= est.value + config.armijo_c1 * t * slope {
                        accepted = Some((trial_mean, trial_det, trial_yield, t));
                        break;
                    }
                }
                Err(_) => counters.record_failed_trial(),
            }
            t *= config.backtrack_factor;
        }

        match accepted {
            Some((new_mean, new_det, trial_yield, t)) => {
                let step_norm = t * dir.norm();
                rows.push(make_row(
                    iteration,
                    &mean,
                    &det,
                    &est,
                    grad_norm,
                    step_norm,
                    used_steepest,
                    &counters,
                ));
                let gain = trial_yield - est.value;
                mean = new_mean;
                det = new_det;
                if step_norm < config.step_tolerance {
                    status = TerminalStatus::Converged;
                    break;
                }
                // progress below the noise floor: buy accuracy before
                // trusting another step
                if adaptive && est.sigma > config.sigma_max && gain.abs() < 2.0 * est.sigma {
                    n = (2 * n).min(config.n_max);
                }
            }
            None => {
                rows.push(make_row(
                    iteration,
                    &mean,
                    &det,
                    &est,
                    grad_norm,
                    0.0,
                    used_steepest,
                    &counters,
                ));
                match zero_step_action(adaptive, est.sigma, config.sigma_max, n, config.n_max) {
                    ZeroStepAction::Converge => {
                        status = TerminalStatus::Converged;
                        break;
                    }
                    ZeroStepAction::Grow(next) => n = next,
                    ZeroStepAction::Degenerate => {
                        status = TerminalStatus::Degenerate;
                        break;
                    }
                }
            }
        }
    }

    let uncertain = problem.uncertain.with_mean(mean.clone())?;
    let stream = RngStream::new(config.seed, namespace + VERIFICATION_STREAM_OFFSET);
    let (verification, _) =
        classifier.estimate(problem, &uncertain, &det, config.n_max, stream)?;
    counters.record_estimate(&verification);
    let next_iteration = rows.last().map_or(0, |row| row.iteration + 1);
    rows.push(make_row(
        next_iteration,
        &mean,
        &det,
        &verification,
        0.0,
        0.0,
        false,
        &counters,
    ));

    let design = DesignPoint {
        uncertain_mean: mean,
        deterministic: det,
    };
    let record = RunRecord {
        status,
        rows,
        final_design: design.clone(),
        final_yield: verification.value,
        final_sigma: verification.sigma,
        yield_evals: counters.yield_evals,
        qoi_evals: counters.qoi_evals,
        full_model_evals: counters.full_model_evals,
    };
    Ok((record, design))
}
