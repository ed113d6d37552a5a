//! The non-adaptive subspace-projection attack: build a set of waveforms
//! whose local features are pairwise near-orthogonal, query the target once
//! per member, recover the enrolled template by least squares, and invert it.
//!
//! The query list is fixed before any response is seen, so the attack is
//! non-adaptive by construction: the ordered member list is a pure function
//! of (pool seed, delta, m, local extractor).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{condition_number, least_squares, normalize, UnitFeature, Waveform};
use crate::inverse::InverseModel;
use crate::oracle::VerificationOracle;
use crate::seed::substream;
use crate::synthworld::{FeatureExtractor, Population};

/// A delta-orthogonal set: selected waveforms, their local features (rows of
/// `A`), and the certified pairwise bound.
#[derive(Debug, Clone)]
pub struct OrthogonalSet {
    members: Vec<Waveform>,
    features: DMatrix<f64>,
    member_indices: Vec<usize>,
    pool_seed: u64,
    delta: f64,
    max_abs_cos: f64,
}

impl OrthogonalSet {
    pub fn members(&self) -> &[Waveform] {
        &self.members
    }

    /// Row i is the local feature of member i.
    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn member_indices(&self) -> &[usize] {
        &self.member_indices
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Brute-force certified maximum off-diagonal |cosine|.
    pub fn max_abs_cos(&self) -> f64 {
        self.max_abs_cos
    }

    pub fn to_doc(&self) -> OrthogonalSetDoc {
        OrthogonalSetDoc {
            version: 1,
            pool_seed: self.pool_seed,
            indices: self.member_indices.clone(),
            delta: self.delta,
            m: self.members.len(),
            max_abs_cos: self.max_abs_cos,
        }
    }
}

/// Versioned JSON form: pool seed plus member indices reproduce the set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrthogonalSetDoc {
    pub version: u32,
    pub pool_seed: u64,
    pub indices: Vec<usize>,
    pub delta: f64,
    pub m: usize,
    pub max_abs_cos: f64,
}

fn brute_force_max_abs_cos(features: &[UnitFeature]) -> f64 {
    let mut max = 0.0f64;
    for i in 0..features.len() {
        for j in (i + 1)..features.len() {
            let c = features[i].as_vector().dot(features[j].as_vector()).abs();
            max = max.max(c);
        }
    }
    max
}

/// Greedy delta-orthogonal-set construction over a pool, visiting members in
/// a seeded random order and admitting a sample iff its feature's |cosine|
/// with every admitted feature stays within `delta`. The finished set is
/// re-verified by brute force.
pub fn build_delta_obs(
    pool: &Population,
    extractor: &FeatureExtractor,
    delta: f64,
    m: usize,
) -> Result<OrthogonalSet> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::OutOfRange(format!("delta {delta} outside [0, 1)")));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("need m >= 1".into()));
    }
    if pool.is_empty() {
        return Err(Error::DegenerateInput("empty pool".into()));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = substream(pool.seed(), "obs-order", 0);
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut admitted: Vec<(usize, UnitFeature)> = Vec::with_capacity(m);
    for idx in order {
        let f = extractor.extract(&pool.waveforms()[idx])?;
        let compatible = admitted
            .iter()
            .all(|(_, a)| f.as_vector().dot(a.as_vector()).abs() <= delta);
        if compatible {
            admitted.push((idx, f));
            if admitted.len() == m {
                break;
            }
        }
    }
    if admitted.len() < m {
        return Err(Error::InfeasibleDelta {
            found: admitted.len(),
            requested: m,
            delta,
        });
    }
    let features: Vec<UnitFeature> = admitted.iter().map(|(_, f)| f.clone()).collect();
    let max_abs_cos = brute_force_max_abs_cos(&features);
    if max_abs_cos > delta {
        return Err(Error::DegenerateInput(format!(
            "certification failed: max |cos| {max_abs_cos} exceeds delta {delta}"
        )));
    }
    let d = extractor.feature_dim();
    let mut a = DMatrix::zeros(m, d);
    for (row, (_, f)) in admitted.iter().enumerate() {
        for col in 0..d {
            a[(row, col)] = f.coords()[col];
        }
    }
    Ok(OrthogonalSet {
        members: admitted
            .iter()
            .map(|(idx, _)| pool.waveforms()[*idx].clone())
            .collect(),
        features: a,
        member_indices: admitted.into_iter().map(|(idx, _)| idx).collect(),
        pool_seed: pool.seed(),
        delta,
        max_abs_cos,
    })
}

/// Outcome of the template-recovery step.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    /// Raw least-squares solution before normalization.
    pub raw: DVector<f64>,
    /// Normalized template estimate.
    pub recovered: UnitFeature,
    /// Scores returned by the target, in member order.
    pub scores: Vec<f64>,
    pub residual: f64,
    pub cond: f64,
    pub queries_used: u64,
}

/// The full non-adaptive attack: query every set member (exactly `m`
/// queries), solve `A r = s` by least squares, normalize, and invert.
pub fn sp_attack(
    oracle: &VerificationOracle,
    model: &InverseModel,
    obs: &OrthogonalSet,
) -> Result<(RecoveryResult, Waveform)> {
    if obs.is_empty() {
        return Err(Error::DegenerateInput("empty orthogonal set".into()));
    }
    let mut scores = Vec::with_capacity(obs.len());
    for member in obs.members() {
        scores.push(oracle.query_score(member)?.value());
    }
    let y = DVector::from_column_slice(&scores);
    let solution = least_squares(obs.features(), &y)?;
    if solution.solution.norm() <= 1e-12 {
        return Err(Error::DegenerateRecovery(
            "recovered vector is numerically zero".into(),
        ));
    }
    let recovered = normalize(&solution.solution)?;
    let attack_waveform = model.invert(&recovered)?;
    Ok((
        RecoveryResult {
            raw: solution.solution,
            recovered,
            scores,
            residual: solution.residual,
            cond: condition_number(obs.features())?,
            queries_used: obs.len() as u64,
        },
        attack_waveform,
    ))
}

/// Verifies the perturbation bound
/// `||x' - x|| / ||x|| <= cond(A) * ||y' - y|| / ||y||`
/// over random score perturbations of fixed relative size; returns the
/// maximum observed ratio of the two sides.
///
/// The bound is the classical consistent-system result: it is certified for
/// `y` in the range of `A` (the noiseless-score case); far outside the range
/// the left side's denominator shrinks and the ratio can exceed one.
pub fn recovery_error_check(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    noise_level: f64,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if noise_level <= 0.0 || trials == 0 {
        return Err(Error::InvalidConfig(
            "need positive noise_level and at least one trial".into(),
        ));
    }
    let svd_rank = {
        let svd = a.clone().svd(false, false);
        let max = svd.singular_values.max();
        svd.singular_values
            .iter()
            .filter(|s| **s > 1e-12 * max)
            .count()
    };
    if svd_rank < a.ncols() {
        return Err(Error::DegenerateInput("rank-deficient matrix".into()));
    }
    let cond = condition_number(a)?;
    let base = least_squares(a, y)?;
    let x_norm = base.solution.norm();
    let y_norm = y.norm();
    if x_norm <= 0.0 || y_norm <= 0.0 {
        return Err(Error::DegenerateInput("zero solution or score vector".into()));
    }
    let mut max_ratio = 0.0f64;
    for _ in 0..trials {
        let direction = DVector::from_fn(y.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps = &direction * (noise_level * y_norm / direction.norm());
        let perturbed = least_squares(a, &(y + &eps))?;
        let lhs = (&perturbed.solution - &base.solution).norm() / x_norm;
        let rhs = cond * eps.norm() / y_norm;
        max_ratio = max_ratio.max(lhs / rhs);
    }
    Ok(max_ratio)
}
