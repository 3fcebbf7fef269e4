//! Gaussian uncertainty model with box truncation and reproducible sampling.
//!
//! Manufactured parameters are modeled as `p ~ N(mean, covariance)` restricted
//! to a box `|p_j - mean_j| <= truncation_halfwidth_j`. The box is tied to the
//! mean, so moving the mean (as the optimizer does) moves the box with it.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A single realization of the uncertain parameters.
pub type UncertainSample = DVector<f64>;

/// Identifies one reproducible random stream. A `(seed, stream_id)` pair fully
/// determines the draw sequence, independent of platform and thread count:
/// parallel consumers take distinct `stream_id`s instead of sharing one rng.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Gaussian spec for the uncertain parameters, with a truncation box centered
/// on the mean. The covariance is validated to be symmetric positive definite
/// at construction and its Cholesky factor is cached for sampling and density
/// evaluation.
#[derive(Debug, Clone)]
pub struct UncertainSpec {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    truncation_halfwidth: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    inverse: DMatrix<f64>,
}

impl UncertainSpec {
    pub fn new(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        truncation_halfwidth: DVector<f64>,
    ) -> Result<Self> {
        let n = mean.len();
        if covariance.nrows() != n || covariance.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: covariance.nrows().max(covariance.ncols()),
            });
        }
        if truncation_halfwidth.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: truncation_halfwidth.len(),
            });
        }
        if n == 0 {
            return Err(Error::InvalidParameter(
                "uncertain dimension must be at least 1".into(),
            ));
        }
        if truncation_halfwidth.iter().any(|&h| !(h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidParameter(
                "truncation halfwidths must be positive and finite".into(),
            ));
        }
        // Cholesky only reads one triangle, so check symmetry explicitly.
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in (i + 1)..n {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::NonSpdCovariance);
                }
            }
        }
        let chol = Cholesky::new(covariance.clone()).ok_or(Error::NonSpdCovariance)?;
        let inverse = chol.inverse();
        Ok(Self {
            mean,
            covariance,
            truncation_halfwidth,
            chol,
            inverse,
        })
    }

    /// Same covariance and truncation box, recentred on a new mean.
    pub fn with_mean(&self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: mean.len(),
            });
        }
        let mut out = self.clone();
        out.mean = mean;
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Inverse of the covariance, cached at construction.
    pub fn covariance_inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn truncation_halfwidth(&self) -> &DVector<f64> {
        &self.truncation_halfwidth
    }

    pub(crate) fn cholesky_l(&self) -> nalgebra::DMatrix<f64> {
        self.chol.l()
    }

    fn in_box(&self, point: &DVector<f64>) -> bool {
        point
            .iter()
            .zip(self.mean.iter())
            .zip(self.truncation_halfwidth.iter())
            .all(|((&x, &m), &h)| (x - m).abs() <= h)
    }
}

/// Normalized Gaussian density of the spec's untruncated distribution.
///
/// The truncation box does not renormalize this density; it only restricts
/// which points `sample_truncated` returns.
pub fn gaussian_pdf(spec: &UncertainSpec, point: &DVector<f64>) -> Result<f64> {
    if point.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: point.len(),
        });
    }
    let diff = point - &spec.mean;
    let quad = diff.dot(&spec.chol.solve(&diff));
    let n = spec.dim() as f64;
    let det = spec.chol.determinant();
    let norm = ((2.0 * std::f64::consts::PI).powf(n) * det).sqrt();
    Ok((-0.5 * quad).exp() / norm)
}

// Once this many proposals have been made, an acceptance rate below 1e-3
// means the box is so small relative to the Gaussian that rejection sampling
// is hopeless; give up instead of spinning.
const DEGENERACY_CHECK_AFTER: u64 = 10_000;
const DEGENERATE_ACCEPTANCE: f64 = 1e-3;

/// Draw `n` samples of the truncated Gaussian by rejection against the box.
///
/// Draws are a pure function of `(spec, n, stream)`: the proposal sequence
/// comes from the stream's ChaCha generator alone, so repeated calls are
/// bit-identical and distinct `stream_id`s give independent sample sets.
pub fn sample_truncated(
    spec: &UncertainSpec,
    n: usize,
    stream: RngStream,
) -> Result<Vec<UncertainSample>> {
    let mut rng = stream.rng();
    let dim = spec.dim();
    let l = spec.cholesky_l();
    let mut out = Vec::with_capacity(n);
    let mut proposals: u64 = 0;
    let mut z = DVector::zeros(dim);
    while out.len() < n {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        let candidate = &spec.mean + &l * &z;
        proposals += 1;
        if spec.in_box(&candidate) {
            out.push(candidate);
        }
        if proposals >= DEGENERACY_CHECK_AFTER {
            let rate = out.len() as f64 / proposals as f64;
            if rate < DEGENERATE_ACCEPTANCE {
                return Err(Error::DegenerateTruncation { rate, proposals });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec_2d() -> UncertainSpec {
        UncertainSpec::new(
            DVector::from_vec(vec![9.0, 5.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.81, 0.81])),
            DVector::from_vec(vec![3.0, 3.0]),
        )
        .unwrap()
    }

    fn spec_1d(mean: f64, var: f64, halfwidth: f64) -> UncertainSpec {
        UncertainSpec::new(
            DVector::from_vec(vec![mean]),
            DMatrix::from_vec(1, 1, vec![var]),
            DVector::from_vec(vec![halfwidth]),
        )
        .unwrap()
    }

    #[test]
    fn pdf_at_mean_matches_closed_form() {
        let spec = spec_2d();
        let v = gaussian_pdf(&spec, spec.mean()).unwrap();
        // density at the mean: exponential term is 1, so the value is the
        // normalization constant 1 / (2*pi*sqrt(det)) = 1 / (2*pi*0.81)
        assert_relative_eq!(v, 1.0 / (2.0 * std::f64::consts::PI * 0.81), max_relative = 1e-12);
    }

    #[test]
    fn pdf_standard_normal_values() {
        let spec = spec_1d(0.0, 1.0, 10.0);
        let at0 = gaussian_pdf(&spec, &DVector::from_vec(vec![0.0])).unwrap();
        assert_relative_eq!(at0, 0.3989422804014327, max_relative = 1e-12);
        // phi(1), pinned from an independent high-precision evaluation
        let at1 = gaussian_pdf(&spec, &DVector::from_vec(vec![1.0])).unwrap();
        assert_relative_eq!(at1, 0.24197072451914337, max_relative = 1e-12);
    }

    #[test]
    fn pdf_correlated_covariance() {
        // hand-checked 2x2 with correlation: det = 1*1 - 0.5^2 = 0.75
        let spec = UncertainSpec::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_vec(2, 2, vec![1.0, 0.5, 0.5, 1.0]),
            DVector::from_vec(vec![10.0, 10.0]),
        )
        .unwrap();
        let v = gaussian_pdf(&spec, &DVector::from_vec(vec![0.0, 0.0])).unwrap();
        assert_relative_eq!(
            v,
            1.0 / (2.0 * std::f64::consts::PI * 0.75f64.sqrt()),
            max_relative = 1e-12
        );
    }

    #[test]
    fn non_spd_covariance_rejected() {
        let r = UncertainSpec::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        );
        assert!(matches!(r, Err(Error::NonSpdCovariance)));
        let r = UncertainSpec::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::from_vec(2, 2, vec![1.0, 0.2, -0.2, 1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        );
        assert!(matches!(r, Err(Error::NonSpdCovariance)));
    }

    #[test]
    fn samples_stay_in_box_and_reproduce() {
        let spec = spec_2d();
        let stream = RngStream::new(7, 0);
        let a = sample_truncated(&spec, 100, stream).unwrap();
        assert_eq!(a.len(), 100);
        for s in &a {
            assert!((s[0] - 9.0).abs() <= 3.0 && (s[1] - 5.0).abs() <= 3.0);
        }
        let b = sample_truncated(&spec, 100, stream).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x, y, "same stream must reproduce bit-identically");
        }
        let c = sample_truncated(&spec, 100, RngStream::new(7, 1)).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x != y));
    }

    #[test]
    fn empirical_moments_match_spec() {
        let spec = spec_2d();
        let samples = sample_truncated(&spec, 1_000_000, RngStream::new(3, 0)).unwrap();
        let n = samples.len() as f64;
        let mut mean = DVector::zeros(2);
        for s in &samples {
            mean += s;
        }
        mean /= n;
        // truncation at +-3.33 sigma shifts the mean negligibly
        assert!((mean[0] - 9.0).abs() < 0.02, "mean[0] = {}", mean[0]);
        assert!((mean[1] - 5.0).abs() < 0.02, "mean[1] = {}", mean[1]);
        let mut var = DVector::zeros(2);
        for s in &samples {
            let d = s - &mean;
            var[0] += d[0] * d[0];
            var[1] += d[1] * d[1];
        }
        var /= n;
        // the box shrinks the variance slightly (about 0.3% at 3.33 sigma)
        for j in 0..2 {
            assert!((var[j] - 0.81).abs() / 0.81 < 0.02, "var[{j}] = {}", var[j]);
        }
    }

    #[test]
    fn degenerate_truncation_detected() {
        let spec = spec_1d(0.0, 1.0, 1e-4);
        let r = sample_truncated(&spec, 100, RngStream::new(1, 0));
        assert!(matches!(r, Err(Error::DegenerateTruncation { .. })));
    }

    #[test]
    fn with_mean_moves_the_box() {
        let spec = spec_2d();
        let moved = spec.with_mean(DVector::from_vec(vec![20.0, -4.0])).unwrap();
        let samples = sample_truncated(&moved, 50, RngStream::new(11, 4)).unwrap();
        for s in &samples {
            assert!((s[0] - 20.0).abs() <= 3.0 && (s[1] + 4.0).abs() <= 3.0);
        }
        assert!(spec.with_mean(DVector::from_vec(vec![1.0])).is_err());
    }
}
