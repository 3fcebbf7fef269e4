//! Derivative-free reference driver.
//!
//! A textbook Nelder-Mead simplex search on the concatenated (mean, d)
//! vector, minimizing the negative Monte Carlo yield at a fixed sample
//! size. It exists as the baseline the derivative-based drivers are
//! measured against, so it logs one telemetry row per yield evaluation.

use nalgebra::DVector;

use crate::error::Result;
use crate::estimate::estimate_yield_mc;
use crate::qoi::DesignPoint;
use crate::uq::RngStream;

use super::{
    stack, Counters, IterationRow, OptimizerConfig, Problem, RunRecord, TerminalStatus,
    STREAM_NAMESPACE_DFO, VERIFICATION_STREAM_OFFSET,
};

/// Hard budget on yield evaluations.
const MAX_YIELD_EVALS: usize = 200;
/// Simplex diameter below which the search stops.
const DIAMETER_TOLERANCE: f64 = 1e-3;

const REFLECTION: f64 = 1.0;
const EXPANSION: f64 = 2.0;
const CONTRACTION: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct SimplexOutcome {
    best: DVector<f64>,
    best_value: f64,
    /// Simplex diameter at the time of each objective evaluation, in
    /// evaluation order.
    diameters: Vec<f64>,
    converged: bool,
}

/// Objective calls with a hard cap; records the simplex diameter alongside
/// each evaluation so callers can reconstruct the search's progress.
struct EvalBudget<'a> {
    f: &'a mut dyn FnMut(&DVector<f64>) -> f64,
    diameters: Vec<f64>,
    cap: usize,
}

impl EvalBudget<'_> {
    fn eval(&mut self, x: &DVector<f64>, current_diameter: f64) -> Option<f64> {
        if self.diameters.len() >= self.cap {
            return None;
        }
        self.diameters.push(current_diameter);
        Some((self.f)(x))
    }
}

fn diameter(vertices: &[DVector<f64>]) -> f64 {
    let mut longest = 0.0_f64;
    for i in 0..vertices.len() {
        for j in i + 1..vertices.len() {
            longest = longest.max((&vertices[i] - &vertices[j]).norm());
        }
    }
    longest
}

/// Stable sort by value; ties keep insertion order so reruns are identical.
fn sorted_by_value(
    vertices: Vec<DVector<f64>>,
    values: Vec<f64>,
) -> (Vec<DVector<f64>>, Vec<f64>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vertices = order.iter().map(|&i| vertices[i].clone()).collect();
    let values = order.iter().map(|&i| values[i]).collect();
    (vertices, values)
}

fn centroid_of(vertices: &[DVector<f64>]) -> DVector<f64> {
    let mut c = DVector::zeros(vertices[0].len());
    for v in vertices {
        c += v;
    }
    c / vertices.len() as f64
}

/// Minimize `f` with the standard reflection/expansion/contraction/shrink
/// moves. Failed objective evaluations are expected to surface as infinite
/// values; they repel the simplex like any bad vertex.
fn simplex_minimize(
    f: &mut dyn FnMut(&DVector<f64>) -> f64,
    x0: &DVector<f64>,
    edges: &DVector<f64>,
    diameter_tol: f64,
    max_evals: usize,
) -> SimplexOutcome {
    debug_assert!(x0.len() >= 1, "simplex needs at least one dimension");
    debug_assert_eq!(edges.len(), x0.len());
    let mut budget = EvalBudget {
        f,
        diameters: Vec::new(),
        cap: max_evals,
    };

    let mut vertices: Vec<DVector<f64>> = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut v = x0.clone();
        v[i] += edges[i];
        vertices.push(v);
    }
    let initial_diameter = diameter(&vertices);
    let mut values: Vec<f64> = Vec::with_capacity(vertices.len());
    for v in &vertices {
        match budget.eval(v, initial_diameter) {
            Some(value) => values.push(value),
            None => {
                // budget too small for even one simplex; report the best of
                // what was evaluated
                vertices.truncate(values.len());
                let (vertices, values) = sorted_by_value(vertices, values);
                return SimplexOutcome {
                    best: vertices.first().cloned().unwrap_or_else(|| x0.clone()),
                    best_value: values.first().copied().unwrap_or(f64::INFINITY),
                    diameters: budget.diameters,
                    converged: false,
                };
            }
        }
    }

    let converged = 'search: loop {
        (vertices, values) = sorted_by_value(vertices, values);
        let current = diameter(&vertices);
        if current < diameter_tol {
            break true;
        }
        let worst = vertices.len() - 1;
        let centroid = centroid_of(&vertices[..worst]);

        let reflected = &centroid + (&centroid - &vertices[worst]) * REFLECTION;
        let Some(f_reflected) = budget.eval(&reflected, current) else {
            break false;
        };

        if f_reflected < values[0] {
            let expanded = &centroid + (&reflected - &centroid) * EXPANSION;
            match budget.eval(&expanded, current) {
                Some(f_expanded) if f_expanded < f_reflected => {
                    vertices[worst] = expanded;
                    values[worst] = f_expanded;
                }
                Some(_) => {
                    vertices[worst] = reflected;
                    values[worst] = f_reflected;
                }
                None => {
                    // keep the completed reflection before bailing out
                    vertices[worst] = reflected;
                    values[worst] = f_reflected;
                    break false;
                }
            }
        } else if f_reflected < values[worst - 1] {
            vertices[worst] = reflected;
            values[worst] = f_reflected;
        } else {
            // contraction, outside when the reflection at least beat the
            // worst vertex, inside otherwise; the inside acceptance is
            // strict so a flat objective falls through to the shrink step
            let outside = f_reflected < values[worst];
            let contracted = if outside {
                &centroid + (&reflected - &centroid) * CONTRACTION
            } else {
                &centroid + (&vertices[worst] - &centroid) * CONTRACTION
            };
            let Some(f_contracted) = budget.eval(&contracted, current) else {
                if outside {
                    vertices[worst] = reflected;
                    values[worst] = f_reflected;
                }
                break false;
            };
            let accept = if outside {
                f_contracted <= f_reflected
            } else {
                f_contracted < values[worst]
            };
            if accept {
                vertices[worst] = contracted;
                values[worst] = f_contracted;
            } else {
                // shrink everything toward the best vertex
                for i in 1..vertices.len() {
                    let shrunk = &vertices[0] + (&vertices[i] - &vertices[0]) * SHRINK;
                    let shrink_diameter = diameter(&vertices);
                    match budget.eval(&shrunk, shrink_diameter) {
                        Some(f_shrunk) => {
                            vertices[i] = shrunk;
                            values[i] = f_shrunk;
                        }
                        None => break 'search false,
                    }
                }
            }
        }
    };

    let (vertices, values) = sorted_by_value(vertices, values);
    SimplexOutcome {
        best: vertices[0].clone(),
        best_value: values[0],
        diameters: budget.diameters,
        converged,
    }
}

struct EvalLog {
    mean: DVector<f64>,
    det: DVector<f64>,
    yield_value: f64,
    sigma: f64,
    cum_yield_evals: u64,
    cum_qoi_evals: u64,
    cum_full_model_evals: u64,
}

/// Maximize the yield with Nelder-Mead at the fixed sample size
/// `config.n_max`, one fresh sample stream per evaluation. Evaluations that
/// fail inside the model count against the budget and enter the simplex as
/// an infinite objective; their telemetry rows carry NaN yields.
pub fn nelder_mead_reference(
    problem: &Problem,
    config: &OptimizerConfig,
) -> Result<(RunRecord, DesignPoint)> {
    config.validate()?;
    let np = problem.model.uncertain_dim();
    let nd = problem.model.deterministic_dim();
    let n = config.n_max;
    let x0 = stack(problem.uncertain.mean(), &problem.initial_det);
    let edges = x0.map(|c| (0.05 * c.abs()).max(0.1));

    let mut counters = Counters::default();
    let mut logs: Vec<EvalLog> = Vec::new();
    let mut objective = |x: &DVector<f64>| -> f64 {
        let mean = x.rows(0, np).into_owned();
        let det = x.rows(np, nd).into_owned();
        let stream = RngStream::new(config.seed, STREAM_NAMESPACE_DFO + logs.len() as u64);
        let outcome = problem.uncertain.with_mean(mean.clone()).and_then(|u| {
            estimate_yield_mc(problem.model.as_ref(), &problem.spec, &u, &det, n, stream)
        });
        let (yield_value, sigma, objective_value) = match outcome {
            Ok((est, _)) => {
                counters.record_estimate(&est);
                (est.value, est.sigma, -est.value)
            }
            Err(_) => {
                counters.record_failed_trial();
                (f64::NAN, f64::NAN, f64::INFINITY)
            }
        };
        logs.push(EvalLog {
            mean,
            det,
            yield_value,
            sigma,
            cum_yield_evals: counters.yield_evals,
            cum_qoi_evals: counters.qoi_evals,
            cum_full_model_evals: counters.full_model_evals,
        });
        objective_value
    };

    let outcome = simplex_minimize(&mut objective, &x0, &edges, DIAMETER_TOLERANCE, MAX_YIELD_EVALS);

    let mut rows: Vec<IterationRow> = logs
        .iter()
        .zip(&outcome.diameters)
        .enumerate()
        .map(|(i, (log, &diam))| IterationRow {
            iteration: i,
            mean: log.mean.clone(),
            det: log.det.clone(),
            yield_value: log.yield_value,
            sigma: log.sigma,
            n_samples: n,
            grad_norm: 0.0,
            step_norm: diam,
            used_steepest: false,
            cum_yield_evals: log.cum_yield_evals,
            cum_qoi_evals: log.cum_qoi_evals,
            cum_full_model_evals: log.cum_full_model_evals,
        })
        .collect();

    let status = if outcome.converged {
        TerminalStatus::Converged
    } else if outcome.best_value.is_finite() {
        TerminalStatus::MaxIterations
    } else {
        TerminalStatus::Degenerate
    };

    let best_mean = outcome.best.rows(0, np).into_owned();
    let best_det = outcome.best.rows(np, nd).into_owned();
    let uncertain = problem.uncertain.with_mean(best_mean.clone())?;
    let stream = RngStream::new(config.seed, STREAM_NAMESPACE_DFO + VERIFICATION_STREAM_OFFSET);
    let (verification, _) = estimate_yield_mc(
        problem.model.as_ref(),
        &problem.spec,
        &uncertain,
        &best_det,
        config.n_max,
        stream,
    )?;
    counters.record_estimate(&verification);
    rows.push(IterationRow {
        iteration: rows.len(),
        mean: best_mean.clone(),
        det: best_det.clone(),
        yield_value: verification.value,
        sigma: verification.sigma,
        n_samples: config.n_max,
        grad_norm: 0.0,
        step_norm: 0.0,
        used_steepest: false,
        cum_yield_evals: counters.yield_evals,
        cum_qoi_evals: counters.qoi_evals,
        cum_full_model_evals: counters.full_model_evals,
    });

    let design = DesignPoint {
        uncertain_mean: best_mean,
        deterministic: best_det,
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
