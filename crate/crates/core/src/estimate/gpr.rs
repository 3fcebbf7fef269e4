//! Exact Gaussian process regression with a squared-exponential kernel.
//!
//! Small and dense on purpose: the hybrid estimator trains on at most a few
//! hundred points, so a Cholesky solve of the full kernel matrix is the
//! right tool. Targets are centred on their mean, so far from the data the
//! predictive mean reverts to the target mean and the predictive standard
//! deviation to the prior signal standard deviation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Kernel hyperparameters. `jitter` is relative to `signal_variance`; it is
/// added to the kernel diagonal and escalated by factors of 100 (up to 1e-4)
/// if the factorization fails.
#[derive(Debug, Clone, PartialEq)]
pub struct GprHyperparameters {
    pub length_scales: DVector<f64>,
    pub signal_variance: f64,
    pub jitter: f64,
}

const JITTER_CEILING: f64 = 1e-4;

impl GprHyperparameters {
    pub fn new(length_scales: DVector<f64>, signal_variance: f64, jitter: f64) -> Result<Self> {
        if length_scales.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidParameter(
                "length scales must be positive and finite".into(),
            ));
        }
        if !(signal_variance > 0.0) || !signal_variance.is_finite() {
            return Err(Error::InvalidParameter(
                "signal variance must be positive and finite".into(),
            ));
        }
        if !(jitter > 0.0) || jitter > JITTER_CEILING {
            return Err(Error::InvalidParameter(format!(
                "jitter must lie in (0, {JITTER_CEILING}], got {jitter}"
            )));
        }
        Ok(Self {
            length_scales,
            signal_variance,
            jitter,
        })
    }

    /// Defaults from the training data: per-dimension length scales from the
    /// median of nonzero pairwise coordinate distances, signal variance from
    /// the target variance, jitter 1e-8. Falls back to 1.0 where the data is
    /// degenerate (a constant coordinate or constant targets).
    pub fn from_data(inputs: &[DVector<f64>], targets: &[f64]) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::InvalidParameter(
                "hyperparameter defaults need matching, nonempty training data".into(),
            ));
        }
        let dim = inputs[0].len();
        let mut scales = DVector::from_element(dim, 1.0);
        let mut dists = Vec::new();
        for k in 0..dim {
            dists.clear();
            for i in 0..inputs.len() {
                for j in (i + 1)..inputs.len() {
                    let d = (inputs[i][k] - inputs[j][k]).abs();
                    if d > 0.0 {
                        dists.push(d);
                    }
                }
            }
            if !dists.is_empty() {
                dists.sort_unstable_by(|a, b| a.total_cmp(b));
                scales[k] = dists[dists.len() / 2];
            }
        }
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
        let signal = if var > 0.0 { var } else { 1.0 };
        Self::new(scales, signal, 1e-8)
    }
}

#[derive(Debug, Clone)]
pub struct GprSurrogate {
    inputs: Vec<DVector<f64>>,
    chol: Cholesky<f64, Dyn>,
    /// `K^-1 (y - y_mean)`
    alpha: DVector<f64>,
    y_mean: f64,
    hp: GprHyperparameters,
}

fn kernel(hp: &GprHyperparameters, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let mut q = 0.0;
    for k in 0..a.len() {
        let d = (a[k] - b[k]) / hp.length_scales[k];
        q += d * d;
    }
    hp.signal_variance * (-0.5 * q).exp()
}

/// Fit the exact GPR. Duplicate inputs are collapsed to their first
/// occurrence (later targets at the same input are dropped), since exact
/// duplicates make the kernel matrix singular up to jitter.
pub fn fit_gpr(
    inputs: &[DVector<f64>],
    targets: &[f64],
    hp: GprHyperparameters,
) -> Result<GprSurrogate> {
    if inputs.len() < 2 {
        return Err(Error::InvalidParameter(
            "GPR needs at least two training points".into(),
        ));
    }
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    let dim = inputs[0].len();
    if dim != hp.length_scales.len() {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: hp.length_scales.len(),
        });
    }
    let mut xs: Vec<DVector<f64>> = Vec::with_capacity(inputs.len());
    let mut ys: Vec<f64> = Vec::with_capacity(targets.len());
    for (x, &y) in inputs.iter().zip(targets) {
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SurrogateFit("non-finite training data".into()));
        }
        if !xs.iter().any(|seen| seen == x) {
            xs.push(x.clone());
            ys.push(y);
        }
    }
    let n = xs.len();
    let y_mean = ys.iter().sum::<f64>() / n as f64;
    let centered = DVector::from_iterator(n, ys.iter().map(|y| y - y_mean));

    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel(&hp, &xs[i], &xs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }

    let mut jitter = hp.jitter;
    let chol = loop {
        let mut kj = k.clone();
        let nugget = jitter * hp.signal_variance;
        for i in 0..n {
            kj[(i, i)] += nugget;
        }
        match Cholesky::new(kj) {
            Some(c) => break c,
            None if jitter < JITTER_CEILING => jitter = (jitter * 100.0).min(JITTER_CEILING),
            None => {
                return Err(Error::SurrogateFit(format!(
                    "kernel factorization failed even at jitter {JITTER_CEILING}"
                )))
            }
        }
    };
    let alpha = chol.solve(&centered);
    Ok(GprSurrogate {
        inputs: xs,
        chol,
        alpha,
        y_mean,
        hp,
    })
}

impl GprSurrogate {
    pub fn train_len(&self) -> usize {
        self.inputs.len()
    }

    pub fn hyperparameters(&self) -> &GprHyperparameters {
        &self.hp
    }

    /// Predictive mean and standard deviation at a query point.
    pub fn predict(&self, x: &DVector<f64>) -> Result<(f64, f64)> {
        if x.len() != self.hp.length_scales.len() {
            return Err(Error::DimensionMismatch {
                expected: self.hp.length_scales.len(),
                got: x.len(),
            });
        }
        let kstar = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|xi| kernel(&self.hp, xi, x)),
        );
        let mean = self.y_mean + kstar.dot(&self.alpha);
        // k** - kstar^T K^-1 kstar via one forward substitution: the solve
        // reads only the lower triangle, so the factor's garbage upper half
        // is harmless
        let var = match self.chol.l_dirty().solve_lower_triangular(&kstar) {
            Some(v) => (self.hp.signal_variance - v.norm_squared()).max(0.0),
            None => self.hp.signal_variance,
        };
        Ok((mean, var.sqrt()))
    }
}
