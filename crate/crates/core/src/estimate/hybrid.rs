//! Surrogate-assisted yield estimation.
//!
//! The classic estimator spends one true-model run per (sample, grid point)
//! pair. Here a Gaussian process trained on a small space-filling design
//! classifies each sample instead, and only samples the surrogate cannot
//! classify confidently (some grid point within `gamma` predictive standard
//! deviations of the threshold) are escalated to the true model. The yield
//! value is still a plain acceptance fraction, so the estimator error bound
//! `sigma_mc` applies unchanged.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimate::{fit_gpr, GprHyperparameters, GprSurrogate, SampleSet, YieldEstimate};
use crate::parallel::try_map_ordered;
use crate::qoi::{PerformanceSpec, QoiModel};
use crate::uq::{sample_truncated, RngStream, UncertainSample, UncertainSpec};

/// How the hybrid classifier spent its evaluations. Indices refer to the
/// classified point list, so callers can audit exactly which samples touched
/// the true model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HybridDiagnostics {
    /// Samples used as surrogate training points (true-evaluated).
    pub design_indices: Vec<usize>,
    /// Samples the surrogate could not classify, re-run on the true model.
    pub critical_indices: Vec<usize>,
    /// Number of samples classified by the surrogate alone.
    pub surrogate_samples: usize,
    /// True-model runs: `(design + critical count) * grid size`.
    pub full_model_evals: u64,
}

impl HybridDiagnostics {
    pub fn design_points(&self) -> usize {
        self.design_indices.len()
    }

    pub fn critical_samples(&self) -> usize {
        self.critical_indices.len()
    }
}

/// Margins above this are clipped before the exponential link is applied,
/// bounding the training targets for models with unbounded safe headroom.
/// The bound keeps deep-violation tails from dominating the fitted signal
/// variance, which the classification band width tracks.
const TRAINING_MARGIN_CAP: f64 = 7.0;

/// Map a raw margin to its surrogate training target through the link
/// t = 10^(m/10) - 1, capped above at m = 7.
///
/// Margins from decibel-scale responses carry nulls, noise floors, and
/// absolute-value kinks that no stationary kernel tracks well; the link
/// restores the underlying power scale, where reflection-type responses
/// are smooth (|S|^2 rather than 20 log10 |S|), and saturates deep nulls
/// at -1 so floor artifacts vanish from the training set. The link is
/// monotone with t = 0 exactly at m = 0, so the classification boundary
/// is unchanged. Margins of order one, as the analytic oracles produce,
/// pass through nearly linearly (t ~ m ln10/10).
fn training_target(margin: f64) -> f64 {
    10f64.powf(margin.min(TRAINING_MARGIN_CAP) / 10.0) - 1.0
}

/// Greedy farthest-point subset: start from the first point, then repeatedly
/// add the point with the largest distance to the chosen set. Ties resolve to
/// the lowest index; exact duplicates of the chosen set are never added.
fn farthest_point_design(points: &[UncertainSample], m: usize) -> Vec<usize> {
    let mut chosen = vec![0usize];
    let mut min_dist: Vec<f64> = points
        .iter()
        .map(|p| (p - &points[0]).norm_squared())
        .collect();
    while chosen.len() < m.min(points.len()) {
        let mut best = 0;
        let mut best_dist = 0.0;
        for (i, &dist) in min_dist.iter().enumerate() {
            if dist > best_dist {
                best_dist = dist;
                best = i;
            }
        }
        if best_dist == 0.0 {
            break;
        }
        chosen.push(best);
        for (i, md) in min_dist.iter_mut().enumerate() {
            *md = md.min((&points[i] - &points[best]).norm_squared());
        }
    }
    chosen
}

enum SampleClass {
    /// Training point, classification known from its training targets.
    Design(bool),
    /// Surrogate is unsure at some grid point; needs the true model.
    Critical,
    /// Confident surrogate classification at every grid point.
    Surrogate(bool),
}

/// Classify every point against the performance spec, using the true model
/// only for the training design and for critical samples.
///
/// Each call is self-contained: it trains a fresh surrogate on the given
/// points at the given `d`, so moving `d` (finite differences, line-search
/// trials) never reuses a stale fit.
pub fn hybrid_classify_set(
    model: &dyn QoiModel,
    spec: &PerformanceSpec,
    d: &DVector<f64>,
    points: &[UncertainSample],
    gamma: f64,
    initial_design: usize,
) -> Result<(Vec<bool>, HybridDiagnostics)> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "classification band width gamma must be finite and nonnegative, got {gamma}"
        )));
    }
    if initial_design < 2 {
        return Err(Error::InvalidParameter(
            "surrogate design needs at least two points".into(),
        ));
    }
    let grid = spec.grid.len();
    if points.len() <= initial_design {
        // too few samples to be worth a surrogate: classify directly
        let safe = crate::estimate::classify_set(model, spec, d, points)?;
        let diag = HybridDiagnostics {
            design_indices: (0..points.len()).collect(),
            critical_indices: Vec::new(),
            surrogate_samples: 0,
            full_model_evals: (points.len() * grid) as u64,
        };
        return Ok((safe, diag));
    }

    let design = farthest_point_design(points, initial_design);
    let per_point: Vec<Vec<f64>> = try_map_ordered(&design, |&idx| {
        spec.grid
            .points()
            .iter()
            .map(|&r| model.evaluate(&points[idx], d, r))
            .collect::<Result<Vec<f64>>>()
    })?;

    let mut design_class: Vec<Option<bool>> = vec![None; points.len()];
    let dim = points[0].len();
    let mut inputs = Vec::with_capacity(design.len() * grid);
    let mut targets = Vec::with_capacity(design.len() * grid);
    for (&idx, qs) in design.iter().zip(&per_point) {
        design_class[idx] = Some(qs.iter().all(|&q| q <= spec.threshold));
        for (&r, &q) in spec.grid.points().iter().zip(qs) {
            let mut x = DVector::zeros(dim + 1);
            x.rows_mut(0, dim).copy_from(&points[idx]);
            x[dim] = r;
            inputs.push(x);
            targets.push(training_target(q - spec.threshold));
        }
    }
    // A constant response is its own surrogate. This is the zero-variance
    // limit of the fit: the predictive mean is the constant and the spread
    // is zero, so no sample is ever critical.
    if targets.iter().all(|&t| t == targets[0]) {
        let safe_const = targets[0] <= 0.0;
        let safe: Vec<bool> = (0..points.len())
            .map(|i| design_class[i].unwrap_or(safe_const))
            .collect();
        let diag = HybridDiagnostics {
            surrogate_samples: points.len() - design.len(),
            full_model_evals: (design.len() * grid) as u64,
            design_indices: design,
            critical_indices: Vec::new(),
        };
        return Ok((safe, diag));
    }

    let hp = GprHyperparameters::from_data(&inputs, &targets)?;
    let gpr = fit_gpr(&inputs, &targets, hp)?;

    let classes: Vec<SampleClass> = try_map_ordered(
        &(0..points.len()).collect::<Vec<_>>(),
        |&i| -> Result<SampleClass> {
            if let Some(safe) = design_class[i] {
                return Ok(SampleClass::Design(safe));
            }
            let mut x = DVector::zeros(dim + 1);
            x.rows_mut(0, dim).copy_from(&points[i]);
            let mut safe = true;
            for &r in spec.grid.points() {
                x[dim] = r;
                // the surrogate predicts the transformed margin, so the band
                // rule compares against zero
                let (mu, sd) = gpr.predict(&x)?;
                if mu.abs() <= gamma * sd {
                    return Ok(SampleClass::Critical);
                }
                safe &= mu <= 0.0;
            }
            Ok(SampleClass::Surrogate(safe))
        },
    )?;

    let critical: Vec<usize> = classes
        .iter()
        .enumerate()
        .filter_map(|(i, c)| matches!(c, SampleClass::Critical).then_some(i))
        .collect();
    let critical_points: Vec<UncertainSample> =
        critical.iter().map(|&i| points[i].clone()).collect();
    let critical_safe = crate::estimate::classify_set(model, spec, d, &critical_points)?;

    let mut safe = Vec::with_capacity(points.len());
    let mut next_critical = 0;
    for class in &classes {
        safe.push(match class {
            SampleClass::Design(s) | SampleClass::Surrogate(s) => *s,
            SampleClass::Critical => {
                let s = critical_safe[next_critical];
                next_critical += 1;
                s
            }
        });
    }
    let diag = HybridDiagnostics {
        surrogate_samples: points.len() - design.len() - critical.len(),
        full_model_evals: ((design.len() + critical.len()) * grid) as u64,
        design_indices: design,
        critical_indices: critical,
    };
    Ok((safe, diag))
}

/// Hybrid counterpart of [`crate::estimate::estimate_yield_mc`]: same draw,
/// same estimate semantics, classification via [`hybrid_classify_set`].
#[allow(clippy::too_many_arguments)]
pub fn estimate_yield_hybrid(
    model: &dyn QoiModel,
    spec: &PerformanceSpec,
    uncertain: &UncertainSpec,
    d: &DVector<f64>,
    n: usize,
    stream: RngStream,
    gamma: f64,
    initial_design: usize,
) -> Result<(YieldEstimate, SampleSet, HybridDiagnostics)> {
    assert!(n >= 1, "sample count must be at least 1");
    let samples = sample_truncated(uncertain, n, stream)?;
    let (indicators, diag) = hybrid_classify_set(model, spec, d, &samples, gamma, initial_design)?;
    let qoi_evals = (n * spec.grid.len()) as u64;
    let (estimate, set) = crate::estimate::assemble_estimate(
        samples,
        indicators,
        uncertain,
        qoi_evals,
        diag.full_model_evals,
    );
    Ok((estimate, set, diag))
}

/// Deterministic-parameter offsets in the seeding design, as a fraction of
/// `1 + |d_k|`. The first estimate's samples all share one `d`; without
/// probes at shifted `d` the kernel would have no basis for a length scale
/// in those directions and could not honestly widen its uncertainty when the
/// optimizer moves `d`. The offset also sets that scale's magnitude, so it
/// should be of the order of the steps an optimizer actually takes;
/// far-too-small offsets make every trial step look like extrapolation and
/// every sample critical. Stencil sites the model rejects (outside its
/// domain) are skipped.
const DESIGN_D_OFFSET: f64 = 0.4;
/// Refit once this many new probes accumulated since the last fit.
const REFIT_BATCH: usize = 24;
/// Bound on the training set, so refits and predictive-variance queries
/// stay affordable.
const MAX_TRAIN_PROBES: usize = 192;
/// Probes closer than this to an already admitted probe, in scaled
/// distance, add nothing at the kernel's resolution and are left out.
const MIN_TRAIN_SPACING: f64 = 0.25;
/// Length-scale medians are computed on at most this many training rows.
const MAX_SCALE_ROWS: usize = 600;

/// One true-model evaluation site: stacked `(p, d)` coordinates and the raw
/// margin per grid point.
struct Probe {
    x: DVector<f64>,
    margins: Vec<f64>,
}

/// Cost breakdown of one [`SharedSurrogate::classify`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SharedClassifyReport {
    /// Samples the band rule escalated to the true model in this call.
    pub critical_samples: usize,
    /// True-model QoI calls spent in this call, including the seeding
    /// design on the first call.
    pub full_model_evals: u64,
}

/// Surrogate state shared across the yield evaluations of one optimization
/// run: one Gaussian process per problem, with the deterministic parameters
/// and the range point as input features next to the uncertain parameters.
///
/// The fit is frozen while one sample set is classified, so each estimate is
/// a pure function of the state before it. Samples escalated to the true
/// model are retained and folded in by a refit between estimations; training
/// capital therefore accumulates, and regions already paid for in true-model
/// calls classify almost for free on every later visit.
pub struct SharedSurrogate {
    gamma: f64,
    initial_design: usize,
    threshold: f64,
    grid: Vec<f64>,
    /// Every true-model probe so far, in evaluation order.
    probes: Vec<Probe>,
    gpr: Option<GprSurrogate>,
    fitted_probes: usize,
}

impl SharedSurrogate {
    pub fn new(spec: &PerformanceSpec, gamma: f64, initial_design: usize) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "classification band width gamma must be positive, got {gamma}"
            )));
        }
        if initial_design < 2 {
            return Err(Error::InvalidParameter(
                "surrogate design needs at least two points".into(),
            ));
        }
        Ok(Self {
            gamma,
            initial_design,
            threshold: spec.threshold,
            grid: spec.grid.points().to_vec(),
            probes: Vec::new(),
            gpr: None,
            fitted_probes: 0,
        })
    }

    /// Number of true-model probes accumulated so far.
    pub fn probe_count(&self) -> usize {
        self.probes.len()
    }

    fn evaluate_probe(
        &self,
        model: &dyn QoiModel,
        p: &UncertainSample,
        d: &DVector<f64>,
    ) -> Result<Probe> {
        let mut margins = Vec::with_capacity(self.grid.len());
        for &r in &self.grid {
            margins.push(model.evaluate(p, d, r)? - self.threshold);
        }
        let mut x = DVector::zeros(p.len() + d.len());
        x.rows_mut(0, p.len()).copy_from(p);
        x.rows_mut(p.len(), d.len()).copy_from(d);
        Ok(Probe { x, margins })
    }

    /// Initial design: a space-filling subset of the first sample set, with
    /// the deterministic coordinates cycled through a plus/minus stencil.
    fn seed(
        &mut self,
        model: &dyn QoiModel,
        d: &DVector<f64>,
        points: &[UncertainSample],
    ) -> Result<u64> {
        let design = farthest_point_design(points, self.initial_design);
        let nd = d.len();
        let period = 2 * nd + 1;
        let sites: Vec<(UncertainSample, DVector<f64>)> = design
            .iter()
            .enumerate()
            .map(|(j, &idx)| {
                let mut dj = d.clone();
                let k = j % period;
                if k >= 1 {
                    let axis = (k - 1) % nd;
                    let sign = if k <= nd { 1.0 } else { -1.0 };
                    dj[axis] += sign * DESIGN_D_OFFSET * (1.0 + dj[axis].abs());
                }
                (points[idx].clone(), dj)
            })
            .collect();
        // a stencil site outside the model's domain is dropped, same as a
        // failed line-search trial; the sample itself stays at the plain `d`
        let probes: Vec<Option<Probe>> = try_map_ordered(&sites, |(p, dj)| {
            match self.evaluate_probe(model, p, dj) {
                Ok(probe) => Ok(Some(probe)),
                Err(_) if dj != d => Ok(None),
                Err(err) => Err(err),
            }
        })?;
        let probes: Vec<Probe> = probes.into_iter().flatten().collect();
        let spent = (probes.len() * self.grid.len()) as u64;
        self.probes.extend(probes);
        if self.probes.len() < 2 {
            return Err(Error::InvalidParameter(
                "surrogate design needs at least two evaluable points".into(),
            ));
        }
        Ok(spent)
    }

    fn refit(&mut self) -> Result<()> {
        let t0 = std::time::Instant::now();
        let dim = self.probes[0].x.len();
        let per_probe = self.grid.len().max(1);

        // provisional length scales from a bounded, deterministic probe
        // subset; they only weight the admission metric below
        let max_scale_probes = (MAX_SCALE_ROWS / per_probe).max(2);
        let stride = self.probes.len().div_ceil(max_scale_probes);
        let mut scale_inputs = Vec::new();
        let mut scale_targets = Vec::new();
        for probe in self.probes.iter().step_by(stride) {
            for (gi, &r) in self.grid.iter().enumerate() {
                scale_inputs.push(augment(&probe.x, r));
                scale_targets.push(training_target(probe.margins[gi]));
            }
        }
        let provisional = GprHyperparameters::from_data(&scale_inputs, &scale_targets)?;

        // two-tier admission under the cap: the newest probes carry the
        // region the optimizer is working in right now and are kept densely;
        // the remaining slots go to a farthest-point sweep over the rest so
        // regions paid for earlier are never forgotten. Probes within the
        // kernel's resolution of an admitted one add nothing and are skipped.
        let scaled_d2 = |a: usize, b: usize| -> f64 {
            let mut dist = 0.0;
            for k in 0..dim {
                let delta =
                    (self.probes[a].x[k] - self.probes[b].x[k]) / provisional.length_scales[k];
                dist += delta * delta;
            }
            dist
        };
        let spacing2 = MIN_TRAIN_SPACING * MIN_TRAIN_SPACING;
        let mut admitted: Vec<usize> = Vec::new();
        let mut min_d2 = vec![f64::INFINITY; self.probes.len()];
        let mut admit = |i: usize, admitted: &mut Vec<usize>, min_d2: &mut Vec<f64>| {
            admitted.push(i);
            for (j, md) in min_d2.iter_mut().enumerate() {
                *md = md.min(scaled_d2(j, i));
            }
        };
        for i in (0..self.probes.len()).rev() {
            if admitted.len() >= MAX_TRAIN_PROBES / 2 {
                break;
            }
            if min_d2[i] >= spacing2 {
                admit(i, &mut admitted, &mut min_d2);
            }
        }
        while admitted.len() < MAX_TRAIN_PROBES.min(self.probes.len()) {
            let mut best = 0;
            let mut best_d2 = 0.0;
            for (i, &dist) in min_d2.iter().enumerate() {
                if dist > best_d2 {
                    best_d2 = dist;
                    best = i;
                }
            }
            if best_d2 < spacing2 {
                break;
            }
            admit(best, &mut admitted, &mut min_d2);
        }

        let mut inputs = Vec::with_capacity(admitted.len() * per_probe);
        let mut targets = Vec::with_capacity(admitted.len() * per_probe);
        for &i in &admitted {
            for (gi, &r) in self.grid.iter().enumerate() {
                inputs.push(augment(&self.probes[i].x, r));
                targets.push(training_target(self.probes[i].margins[gi]));
            }
        }
        // final hyperparameters come from what the model will actually be
        // fit on; the provisional ones above saw every probe, including the
        // dense clusters the admission pass just thinned away. The median
        // computation is quadratic in rows, so large training sets are
        // strided down, stepping off the grid period so the frequency
        // coordinate still varies within the subset.
        let hp = if inputs.len() <= MAX_SCALE_ROWS {
            GprHyperparameters::from_data(&inputs, &targets)?
        } else {
            let mut step = inputs.len().div_ceil(MAX_SCALE_ROWS);
            if per_probe > 1 && step % per_probe == 0 {
                step += 1;
            }
            let hp_inputs: Vec<_> = inputs.iter().step_by(step).cloned().collect();
            let hp_targets: Vec<_> = targets.iter().step_by(step).copied().collect();
            GprHyperparameters::from_data(&hp_inputs, &hp_targets)?
        };
        self.gpr = Some(fit_gpr(&inputs, &targets, hp)?);
        self.fitted_probes = self.probes.len();
        eprintln!(
            "refit: probes {} admitted {} rows {} took {:?}",
            self.probes.len(),
            admitted.len(),
            inputs.len(),
            t0.elapsed()
        );
        Ok(())
    }

    /// Classify a frozen sample set at `d`. The first call seeds the design
    /// from its own points; later calls reuse everything learned so far.
    ///
    /// The fit stays frozen for the whole call: every sample is judged
    /// against the same posterior, and every band-critical sample goes to
    /// the true model. The critical probes join the training set through a
    /// refit between estimations, never during one, so each estimate is a
    /// pure function of the surrogate state it started from.
    pub fn classify(
        &mut self,
        model: &dyn QoiModel,
        d: &DVector<f64>,
        points: &[UncertainSample],
    ) -> Result<(Vec<bool>, SharedClassifyReport)> {
        if points.is_empty() {
            return Ok((
                Vec::new(),
                SharedClassifyReport {
                    critical_samples: 0,
                    full_model_evals: 0,
                },
            ));
        }
        let mut full = 0u64;
        if self.gpr.is_none() {
            full += self.seed(model, d, points)?;
            self.refit()?;
        }

        let mut indicators = vec![false; points.len()];
        let mut critical: Vec<usize> = Vec::new();
        {
            let gpr = self.gpr.as_ref().expect("fitted above");
            let verdicts: Vec<Verdict> = try_map_ordered(points, |p| {
                classify_against(gpr, &self.grid, self.gamma, p, d)
            })?;
            for (i, verdict) in verdicts.iter().enumerate() {
                match verdict {
                    Verdict::Safe => indicators[i] = true,
                    Verdict::Unsafe => indicators[i] = false,
                    Verdict::Critical => critical.push(i),
                }
            }
        }
        let new_probes: Vec<Probe> =
            try_map_ordered(&critical, |&i| self.evaluate_probe(model, &points[i], d))?;
        full += (critical.len() * self.grid.len()) as u64;
        for (&i, probe) in critical.iter().zip(&new_probes) {
            indicators[i] = probe.margins.iter().all(|&m| m <= 0.0);
        }
        self.probes.extend(new_probes);

        // fold the new evidence in before the next estimation opens
        if self.probes.len() - self.fitted_probes >= REFIT_BATCH {
            self.refit()?;
        }
        let report = SharedClassifyReport {
            critical_samples: critical.len(),
            full_model_evals: full,
        };
        eprintln!(
            "classify: {} pts, {} critical, full {}",
            points.len(),
            critical.len(),
            full
        );
        Ok((indicators, report))
    }
}

enum Verdict {
    /// Some grid point confidently violates the spec; no other point matters.
    Unsafe,
    /// Every grid point is confidently on the safe side.
    Safe,
    /// Unsure at some grid point and never confidently violating; the true
    /// model decides.
    Critical,
}

fn classify_against(
    gpr: &GprSurrogate,
    grid: &[f64],
    gamma: f64,
    p: &UncertainSample,
    d: &DVector<f64>,
) -> Result<Verdict> {
    let np = p.len();
    let nd = d.len();
    let mut x = DVector::zeros(np + nd + 1);
    x.rows_mut(0, np).copy_from(p);
    x.rows_mut(np, nd).copy_from(d);
    let mut unsure = false;
    for &r in grid {
        x[np + nd] = r;
        // the surrogate predicts the transformed margin, so everything
        // compares against zero
        let (mu, sd) = gpr.predict(&x)?;
        if mu > gamma * sd {
            return Ok(Verdict::Unsafe);
        }
        unsure |= mu.abs() <= gamma * sd;
    }
    // without a violation or an unsure point, every mu sits below -gamma sd
    Ok(if unsure {
        Verdict::Critical
    } else {
        Verdict::Safe
    })
}

fn augment(x: &DVector<f64>, r: f64) -> DVector<f64> {
    let mut out = DVector::zeros(x.len() + 1);
    out.rows_mut(0, x.len()).copy_from(x);
    out[x.len()] = r;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{classify_set, estimate_yield_mc};
    use crate::qoi::{waveguide_model, HalfspaceOracle, RangeGrid, ShiftedOracle, WaveguideConfig};
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn spec_1d(threshold: f64) -> PerformanceSpec {
        PerformanceSpec::new(RangeGrid::equidistant(0.0, 0.0, 1).unwrap(), threshold).unwrap()
    }

    fn gauss_1d(mean: f64) -> UncertainSpec {
        UncertainSpec::new(
            v(&[mean]),
            DMatrix::from_vec(1, 1, vec![1.0]),
            v(&[8.0]),
        )
        .unwrap()
    }

    #[test]
    fn farthest_point_picks_spread_out_points() {
        let pts = vec![v(&[0.0]), v(&[1.0]), v(&[10.0]), v(&[5.0])];
        assert_eq!(farthest_point_design(&pts, 3), vec![0, 2, 3]);
        // tie between indices 1 and 2 resolves to the lower one
        let tie = vec![v(&[0.0]), v(&[2.0]), v(&[-2.0])];
        assert_eq!(farthest_point_design(&tie, 2), vec![0, 1]);
        // duplicates never enter the design
        let dup = vec![v(&[3.0]), v(&[3.0]), v(&[3.0])];
        assert_eq!(farthest_point_design(&dup, 3), vec![0]);
    }

    #[test]
    fn matches_direct_classification_on_a_smooth_model() {
        let oracle = HalfspaceOracle::new(v(&[1.0]), 0.4).unwrap();
        let spec = spec_1d(oracle.offset());
        let uspec = gauss_1d(0.0);
        let d = DVector::zeros(0);
        let samples = sample_truncated(&uspec, 300, RngStream::new(11, 0)).unwrap();
        let direct = classify_set(&oracle, &spec, &d, &samples).unwrap();
        let (hybrid, diag) = hybrid_classify_set(&oracle, &spec, &d, &samples, 3.0, 10).unwrap();
        assert_eq!(hybrid, direct);
        assert_eq!(diag.design_points(), 10);
        assert_eq!(
            diag.design_points() + diag.critical_samples() + diag.surrogate_samples,
            300
        );
        assert!(diag.surrogate_samples > 0, "surrogate never used");
    }

    #[test]
    fn small_sets_skip_the_surrogate() {
        let oracle = HalfspaceOracle::new(v(&[1.0]), 0.0).unwrap();
        let spec = spec_1d(oracle.offset());
        let uspec = gauss_1d(0.0);
        let d = DVector::zeros(0);
        let samples = sample_truncated(&uspec, 5, RngStream::new(3, 0)).unwrap();
        let direct = classify_set(&oracle, &spec, &d, &samples).unwrap();
        let (hybrid, diag) = hybrid_classify_set(&oracle, &spec, &d, &samples, 3.0, 10).unwrap();
        assert_eq!(hybrid, direct);
        assert_eq!(diag.design_indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(diag.surrogate_samples, 0);
        assert_eq!(diag.full_model_evals, 5);
    }

    #[test]
    fn waveguide_counters_add_up() {
        let model = waveguide_model(WaveguideConfig::default()).unwrap();
        let twopi = 2.0 * std::f64::consts::PI;
        let spec = PerformanceSpec::new(
            RangeGrid::equidistant(twopi * 6.5e9, twopi * 7.5e9, 11).unwrap(),
            -24.0,
        )
        .unwrap();
        let uspec = UncertainSpec::new(
            v(&[9.0, 5.0]),
            DMatrix::from_diagonal(&v(&[0.81, 0.81])),
            v(&[3.0 * 0.9, 3.0 * 0.9]),
        )
        .unwrap();
        let d = v(&[1.0, 1.0]);
        let (est, set, diag) =
            estimate_yield_hybrid(&model, &spec, &uspec, &d, 60, RngStream::new(7, 0), 3.0, 10)
                .unwrap();
        assert_eq!(est.qoi_evals, 60 * 11);
        assert_eq!(
            diag.full_model_evals,
            ((diag.design_points() + diag.critical_samples()) * 11) as u64
        );
        assert_eq!(model.eval_count(), diag.full_model_evals);
        assert!(
            est.full_model_evals < est.qoi_evals,
            "hybrid spent {} of {} true-model runs",
            est.full_model_evals,
            est.qoi_evals
        );
        assert_eq!(set.len(), 60);
        let accepted = set.indicators.iter().filter(|&&b| b).count();
        assert_eq!(est.value, accepted as f64 / 60.0);
    }

    #[test]
    fn hybrid_estimate_is_reproducible_bitwise() {
        let oracle = HalfspaceOracle::new(v(&[1.0]), 0.2).unwrap();
        let spec = spec_1d(oracle.offset());
        let uspec = gauss_1d(0.0);
        let d = DVector::zeros(0);
        let stream = RngStream::new(21, 4);
        let (a, set_a, diag_a) =
            estimate_yield_hybrid(&oracle, &spec, &uspec, &d, 250, stream, 3.0, 8).unwrap();
        let (b, set_b, diag_b) =
            estimate_yield_hybrid(&oracle, &spec, &uspec, &d, 250, stream, 3.0, 8).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(set_a.indicators, set_b.indicators);
        assert_eq!(diag_a, diag_b);
    }

    #[test]
    fn hybrid_and_classic_agree_on_the_yield_value() {
        let oracle = HalfspaceOracle::new(v(&[1.0]), 0.5).unwrap();
        let spec = spec_1d(oracle.offset());
        let uspec = gauss_1d(0.0);
        let d = DVector::zeros(0);
        let stream = RngStream::new(5, 0);
        let (classic, _) = estimate_yield_mc(&oracle, &spec, &uspec, &d, 400, stream).unwrap();
        let (hybrid, _, _) =
            estimate_yield_hybrid(&oracle, &spec, &uspec, &d, 400, stream, 3.0, 12).unwrap();
        assert_eq!(hybrid.value, classic.value);
        assert_eq!(hybrid.n_samples, classic.n_samples);
    }

    #[test]
    fn rejects_bad_settings() {
        let oracle = HalfspaceOracle::new(v(&[1.0]), 0.0).unwrap();
        let spec = spec_1d(0.0);
        let d = DVector::zeros(0);
        let pts = vec![v(&[0.0]), v(&[1.0])];
        assert!(hybrid_classify_set(&oracle, &spec, &d, &pts, -1.0, 5).is_err());
        assert!(hybrid_classify_set(&oracle, &spec, &d, &pts, f64::NAN, 5).is_err());
        assert!(hybrid_classify_set(&oracle, &spec, &d, &pts, f64::INFINITY, 5).is_err());
        assert!(hybrid_classify_set(&oracle, &spec, &d, &pts, 3.0, 0).is_err());
        assert!(hybrid_classify_set(&oracle, &spec, &d, &pts, 3.0, 1).is_err());
        assert!(SharedSurrogate::new(&spec, f64::NAN, 8).is_err());
        assert!(SharedSurrogate::new(&spec, 3.0, 1).is_err());
    }

    #[test]
    fn zero_gamma_trusts_the_surrogate_for_every_sample() {
        let oracle = HalfspaceOracle::new(v(&[1.0]), 0.3).unwrap();
        let spec = spec_1d(oracle.offset());
        let uspec = gauss_1d(0.0);
        let d = DVector::zeros(0);
        let (_, _, diag) = estimate_yield_hybrid(
            &oracle,
            &spec,
            &uspec,
            &d,
            120,
            RngStream::new(17, 0),
            0.0,
            10,
        )
        .unwrap();
        assert_eq!(diag.critical_samples(), 0);
        assert_eq!(diag.surrogate_samples, 120 - diag.design_points());
        assert_eq!(diag.full_model_evals, diag.design_points() as u64);
    }

    struct ConstModel(f64);

    impl QoiModel for ConstModel {
        fn uncertain_dim(&self) -> usize {
            1
        }
        fn deterministic_dim(&self) -> usize {
            0
        }
        fn evaluate(&self, _: &DVector<f64>, _: &DVector<f64>, _: f64) -> Result<f64> {
            Ok(self.0)
        }
        fn eval_count(&self) -> u64 {
            0
        }
    }

    /// A response that never moves leaves the surrogate with zero predictive
    /// spread, so nothing is critical and every sample passes a threshold
    /// above the constant value.
    #[test]
    fn constant_model_yields_one_without_criticals() {
        let model = ConstModel(-30.0);
        let spec = spec_1d(-24.0);
        let uspec = gauss_1d(0.0);
        let d = DVector::zeros(0);
        let (est, _, diag) = estimate_yield_hybrid(
            &model,
            &spec,
            &uspec,
            &d,
            80,
            RngStream::new(23, 0),
            3.0,
            8,
        )
        .unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(diag.critical_samples(), 0);
        assert_eq!(
            diag.full_model_evals,
            (diag.design_points() * spec.grid.len()) as u64
        );
    }

    #[test]
    fn shared_surrogate_amortizes_across_calls() {
        let oracle = ShiftedOracle::new();
        let spec = spec_1d(0.0);
        let uspec = gauss_1d(0.0);
        let d = v(&[1.5]);
        let first = sample_truncated(&uspec, 200, RngStream::new(9, 0)).unwrap();
        let second = sample_truncated(&uspec, 200, RngStream::new(9, 1)).unwrap();

        let mut surrogate = SharedSurrogate::new(&spec, 3.0, 8).unwrap();
        let (ind_a, rep_a) = surrogate.classify(&oracle, &d, &first).unwrap();
        let (ind_b, rep_b) = surrogate.classify(&oracle, &d, &second).unwrap();
        assert_eq!(ind_a, classify_set(&oracle, &spec, &d, &first).unwrap());
        assert_eq!(ind_b, classify_set(&oracle, &spec, &d, &second).unwrap());
        assert!(
            rep_b.full_model_evals < rep_a.full_model_evals,
            "second call should reuse the training paid for by the first, \
             spent {} then {}",
            rep_a.full_model_evals,
            rep_b.full_model_evals
        );
        assert!(
            rep_b.full_model_evals < second.len() as u64,
            "surrogate never classified anything on its own"
        );
    }

    #[test]
    fn shared_surrogate_widens_at_unseen_deterministic_points() {
        // Q = p - d: a fit trained only near d = 0 predicts margin p there,
        // which at d = 3 would misclassify every sample in (0, 3]. Honest
        // predictive variance has to flag the unfamiliar region instead.
        let oracle = ShiftedOracle::new();
        let spec = spec_1d(0.0);
        let uspec = gauss_1d(0.0);
        let samples = sample_truncated(&uspec, 150, RngStream::new(13, 2)).unwrap();

        let mut surrogate = SharedSurrogate::new(&spec, 3.0, 8).unwrap();
        let near = v(&[0.0]);
        let far = v(&[3.0]);
        surrogate.classify(&oracle, &near, &samples).unwrap();
        let (ind_far, rep_far) = surrogate.classify(&oracle, &far, &samples).unwrap();
        assert_eq!(ind_far, classify_set(&oracle, &spec, &far, &samples).unwrap());
        assert!(
            rep_far.full_model_evals > 0,
            "moving d this far must cost true-model probes"
        );
    }

    #[test]
    fn shared_surrogate_is_deterministic() {
        let oracle = ShiftedOracle::new();
        let spec = spec_1d(0.0);
        let uspec = gauss_1d(0.0);
        let first = sample_truncated(&uspec, 120, RngStream::new(31, 0)).unwrap();
        let second = sample_truncated(&uspec, 80, RngStream::new(31, 1)).unwrap();
        let run = || {
            let mut surrogate = SharedSurrogate::new(&spec, 3.0, 8).unwrap();
            let a = surrogate.classify(&oracle, &v(&[0.5]), &first).unwrap();
            let b = surrogate.classify(&oracle, &v(&[0.8]), &second).unwrap();
            (a, b, surrogate.probe_count())
        };
        assert_eq!(run(), run());
    }
}
