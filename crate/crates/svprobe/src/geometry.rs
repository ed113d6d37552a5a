//! Sphere and linear-algebra primitives shared by every other module.
//!
//! All operations are pure given their inputs; random streams are passed
//! explicitly and never shared.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Norm slack tolerated on a unit vector.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Relative singular-value cutoff for pseudo-inverse rank decisions.
pub const SVD_RELATIVE_CUTOFF: f64 = 1e-12;

/// A point on the unit hypersphere `S^{d-1}`, `d >= 2`.
///
/// Houses speaker templates, recovered vectors and attack latents.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitFeature {
    coords: DVector<f64>,
}

impl UnitFeature {
    /// Wraps a vector that is already unit-norm (within [`UNIT_NORM_TOL`]).
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::DegenerateInput(format!(
                "unit feature needs dimension >= 2, got {}",
                coords.len()
            )));
        }
        if !coords.iter().all(|x| x.is_finite()) {
            return Err(Error::DegenerateInput("non-finite coordinate".into()));
        }
        let norm = coords.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::DegenerateInput(format!(
                "norm {norm} is not 1 within {UNIT_NORM_TOL}"
            )));
        }
        Ok(Self { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        self.coords.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.coords
    }
}

/// A bounded real vector standing in for audio; amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: DVector<f64>,
}

impl Waveform {
    /// Wraps samples that are already within the amplitude box.
    pub fn new(samples: DVector<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::DegenerateInput("empty waveform".into()));
        }
        if !samples.iter().all(|x| x.is_finite() && (-1.0..=1.0).contains(x)) {
            return Err(Error::OutOfRange(
                "waveform samples must be finite and in [-1, 1]".into(),
            ));
        }
        Ok(Self { samples })
    }

    /// Clips arbitrary finite samples into the amplitude box.
    pub fn clip_from(samples: DVector<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::DegenerateInput("empty waveform".into()));
        }
        if !samples.iter().all(|x| x.is_finite()) {
            return Err(Error::DegenerateInput("non-finite sample".into()));
        }
        Ok(Self {
            samples: samples.map(|x| x.clamp(-1.0, 1.0)),
        })
    }

    pub fn dim(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[f64] {
        self.samples.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.samples
    }
}

/// An inner product of two unit vectors; always in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    /// Accepts a value in `[-1, 1]`, tolerating float excursions up to 1e-12.
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value.abs() > 1.0 + 1e-12 {
            return Err(Error::OutOfRange(format!(
                "similarity score {value} outside [-1, 1]"
            )));
        }
        Ok(Self(value.clamp(-1.0, 1.0)))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// `v / ||v||`. Errors on (near-)zero input.
pub fn normalize(v: &DVector<f64>) -> Result<UnitFeature> {
    let norm = v.norm();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(Error::DegenerateInput(format!(
            "cannot normalize vector with norm {norm}"
        )));
    }
    UnitFeature::new(v / norm)
}

/// Cosine similarity `<u, v>` of two unit features.
pub fn cosine(u: &UnitFeature, v: &UnitFeature) -> Result<SimilarityScore> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    SimilarityScore::new(u.as_vector().dot(v.as_vector()))
}

/// Rotates `x` by `theta` degrees toward a uniformly random direction
/// orthogonal to `x`, so that `<x, x'> = cos theta` exactly.
///
/// The orthogonal direction is a standard Gaussian with its `x`-component
/// removed, renormalized; near-zero residuals are resampled.
pub fn perturb_angular<R: Rng + ?Sized>(
    x: &UnitFeature,
    theta_degrees: f64,
    rng: &mut R,
) -> Result<UnitFeature> {
    if !(0.0..=180.0).contains(&theta_degrees) {
        return Err(Error::OutOfRange(format!(
            "angle {theta_degrees} outside [0, 180] degrees"
        )));
    }
    if theta_degrees == 0.0 {
        return Ok(x.clone());
    }
    let d = x.dim();
    let u = loop {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let residual = &g - x.as_vector() * g.dot(x.as_vector());
        let norm = residual.norm();
        if norm > 1e-9 {
            break residual / norm;
        }
    };
    let theta = theta_degrees.to_radians();
    let rotated = x.as_vector() * theta.cos() + u * theta.sin();
    normalize(&rotated)
}

/// Minimum-norm least-squares solution of `A x = y` via SVD.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: DVector<f64>,
    pub residual: f64,
}

/// Solves `min ||A x - y||` for the minimum-norm `x`, truncating singular
/// values below `SVD_RELATIVE_CUTOFF * sigma_max`.
pub fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquares> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::DegenerateInput("empty matrix".into()));
    }
    if y.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: y.len(),
        });
    }
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max <= 0.0 || !sigma_max.is_finite() {
        return Err(Error::DegenerateInput("all-singular matrix".into()));
    }
    let cutoff = SVD_RELATIVE_CUTOFF * sigma_max;
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    // x = V diag(1/sigma_i) U^T y over singular values above the cutoff.
    let uty = u.transpose() * y;
    let mut scaled = DVector::zeros(svd.singular_values.len());
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if s > cutoff {
            scaled[i] = uty[i] / s;
        }
    }
    let solution = v_t.transpose() * scaled;
    let residual = (a * &solution - y).norm();
    Ok(LeastSquares { solution, residual })
}

/// Moore-Penrose pseudo-inverse with the same relative singular-value cutoff
/// as [`least_squares`].
pub fn pseudo_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::DegenerateInput("empty matrix".into()));
    }
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max <= 0.0 || !sigma_max.is_finite() {
        return Err(Error::DegenerateInput("all-singular matrix".into()));
    }
    let cutoff = SVD_RELATIVE_CUTOFF * sigma_max;
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let mut inv_sigma = DMatrix::zeros(v_t.nrows(), u.ncols());
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if s > cutoff {
            inv_sigma[(i, i)] = 1.0 / s;
        }
    }
    Ok(v_t.transpose() * inv_sigma * u.transpose())
}

/// Spectral condition number `sigma_max / sigma_min` over nonzero singular
/// values (relative cutoff as in [`least_squares`]).
pub fn condition_number(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::DegenerateInput("empty matrix".into()));
    }
    let svd = a.clone().svd(false, false);
    let sigma_max = svd.singular_values.max();
    if sigma_max <= 0.0 || !sigma_max.is_finite() {
        return Err(Error::DegenerateInput("zero matrix".into()));
    }
    let cutoff = SVD_RELATIVE_CUTOFF * sigma_max;
    let sigma_min = svd
        .singular_values
        .iter()
        .copied()
        .filter(|s| *s > cutoff)
        .fold(f64::INFINITY, f64::min);
    Ok(sigma_max / sigma_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn vec(values: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(values)
    }

    #[test]
    fn normalize_pythagorean_triple() {
        let u = normalize(&vec(&[3.0, 4.0])).unwrap();
        assert_abs_diff_eq!(u.coords()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(u.coords()[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn normalize_rejects_zero_vector() {
        assert!(matches!(
            normalize(&vec(&[0.0, 0.0])),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn cosine_basis_examples() {
        let e1 = normalize(&vec(&[1.0, 0.0])).unwrap();
        let e2 = normalize(&vec(&[0.0, 1.0])).unwrap();
        assert_eq!(cosine(&e1, &e1).unwrap().value(), 1.0);
        assert_eq!(cosine(&e1, &e2).unwrap().value(), 0.0);
        let u = normalize(&vec(&[0.6, 0.8])).unwrap();
        assert_abs_diff_eq!(cosine(&u, &e1).unwrap().value(), 0.6, epsilon = 1e-15);
    }

    #[test]
    fn cosine_rejects_dimension_mismatch() {
        let u = normalize(&vec(&[1.0, 0.0])).unwrap();
        let v = normalize(&vec(&[1.0, 0.0, 0.0])).unwrap();
        assert!(matches!(
            cosine(&u, &v),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn perturb_angular_hits_requested_angle() {
        let mut rng = rng_from(11);
        let x = normalize(&vec(&[1.0, 2.0, -0.5, 0.25])).unwrap();
        for theta in [0.0, 30.0, 90.0, 180.0] {
            let y = perturb_angular(&x, theta, &mut rng).unwrap();
            let c = cosine(&x, &y).unwrap().value();
            assert_abs_diff_eq!(c, theta.to_radians().cos(), epsilon = 1e-9);
        }
    }

    #[test]
    fn perturb_angular_rejects_out_of_range() {
        let mut rng = rng_from(1);
        let x = normalize(&vec(&[1.0, 0.0])).unwrap();
        assert!(perturb_angular(&x, -1.0, &mut rng).is_err());
        assert!(perturb_angular(&x, 180.5, &mut rng).is_err());
    }

    #[test]
    fn least_squares_identity_system() {
        let a = DMatrix::identity(3, 3);
        let y = vec(&[1.0, 2.0, 3.0]);
        let ls = least_squares(&a, &y).unwrap();
        assert_abs_diff_eq!((ls.solution - y).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ls.residual, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_inconsistent_third_row() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let y = vec(&[1.0, 2.0, 5.0]);
        let ls = least_squares(&a, &y).unwrap();
        assert_abs_diff_eq!(ls.solution[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ls.solution[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ls.residual, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_recovers_planted_solution() {
        let mut rng = rng_from(42);
        let a = DMatrix::from_fn(20, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x_star = DVector::from_fn(8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &a * &x_star;
        let ls = least_squares(&a, &y).unwrap();
        assert!((ls.solution - &x_star).norm() <= 1e-9);
        assert!(ls.residual <= 1e-9 * y.norm());
    }

    #[test]
    fn least_squares_rejects_zero_matrix() {
        let a = DMatrix::zeros(3, 2);
        let y = vec(&[1.0, 1.0, 1.0]);
        assert!(least_squares(&a, &y).is_err());
    }

    #[test]
    fn condition_number_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(condition_number(&a).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn condition_number_isometry_is_one() {
        // Orthonormal rows: scaled Hadamard pattern.
        let s = 0.5;
        let a = DMatrix::from_row_slice(2, 4, &[s, s, s, s, s, -s, s, -s]);
        assert_abs_diff_eq!(condition_number(&a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn condition_number_rejects_zero_matrix() {
        assert!(condition_number(&DMatrix::zeros(2, 2)).is_err());
    }

    /// Independent singular-value oracle: one-sided Jacobi eigenvalue sweep on
    /// A^T A, avoiding the production SVD path entirely.
    fn jacobi_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
        let mut m = a.transpose() * a;
        let n = m.nrows();
        for _ in 0..200 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += m[(p, q)].abs();
                }
            }
            if off < 1e-14 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if m[(p, q)].abs() < 1e-30 {
                        continue;
                    }
                    let theta = 0.5 * (2.0 * m[(p, q)]).atan2(m[(p, p)] - m[(q, q)]);
                    let (c, s) = (theta.cos(), theta.sin());
                    for k in 0..n {
                        let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                        m[(k, p)] = c * mkp + s * mkq;
                        m[(k, q)] = -s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                        m[(p, k)] = c * mpk + s * mqk;
                        m[(q, k)] = -s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut sv: Vec<f64> = (0..n).map(|i| m[(i, i)].max(0.0).sqrt()).collect();
        sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
        sv
    }

    #[test]
    fn condition_number_matches_independent_jacobi_sweep() {
        let mut rng = rng_from(7);
        let a = DMatrix::from_fn(10, 5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sv = jacobi_singular_values(&a);
        let expected = sv[0] / sv[sv.len() - 1];
        let got = condition_number(&a).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-8 * expected);
    }

    #[test]
    fn perturbation_bound_holds_over_random_trials() {
        // ||x' - x||/||x|| <= cond(A) * ||y' - y||/||y|| for consistent y.
        let mut rng = rng_from(99);
        for trial in 0..1000 {
            let m = 3 + (trial % 8);
            let d = 2 + (trial % 3).min(m - 1);
            let a = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            if condition_number(&a).unwrap() > 1e6 {
                continue;
            }
            let x_star = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &a * &x_star;
            let eps = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)) * 1e-3;
            let y_pert = &y + &eps;
            let x = least_squares(&a, &y).unwrap().solution;
            let x_pert = least_squares(&a, &y_pert).unwrap().solution;
            let lhs = (&x_pert - &x).norm() / x.norm();
            let rhs = condition_number(&a).unwrap() * (&y_pert - &y).norm() / y.norm();
            assert!(
                lhs <= rhs * (1.0 + 1e-9),
                "bound violated at trial {trial}: {lhs} > {rhs}"
            );
        }
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(values in proptest::collection::vec(-100.0f64..100.0, 2..16)) {
            let v = vec(&values);
            prop_assume!(v.norm() > 1e-6);
            let once = normalize(&v).unwrap();
            let twice = normalize(once.as_vector()).unwrap();
            let diff = (once.as_vector() - twice.as_vector()).norm();
            prop_assert!(diff <= 1e-12);
        }

        #[test]
        fn perturbed_cosine_tracks_angle(
            seed in 0u64..1000,
            theta in 0.0f64..180.0,
            dim in 2usize..12,
        ) {
            let mut rng = rng_from(seed);
            let raw = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            prop_assume!(raw.norm() > 1e-6);
            let x = normalize(&raw).unwrap();
            let y = perturb_angular(&x, theta, &mut rng).unwrap();
            let c = cosine(&x, &y).unwrap().value();
            prop_assert!((c - theta.to_radians().cos()).abs() <= 1e-9);
        }

        #[test]
        fn consistent_systems_have_tiny_residual(seed in 0u64..500) {
            let mut rng = rng_from(seed);
            let a = DMatrix::from_fn(6, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x_star = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &a * &x_star;
            prop_assume!(y.norm() > 1e-9);
            let ls = least_squares(&a, &y).unwrap();
            prop_assert!(ls.residual <= 1e-9 * y.norm());
        }
    }
}
