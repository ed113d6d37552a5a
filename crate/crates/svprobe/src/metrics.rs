//! Verification-performance and attack-evaluation metrics.
//!
//! FAR/FRR are step functions of the threshold, so sweeping the midpoints
//! between adjacent distinct pooled scores (plus the `-1`/`+1` sentinels) is
//! exhaustive and exact. Ties are broken toward smaller FAR, then smaller
//! threshold, so outputs are deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SimilarityScore;

/// Genuine (same-identity) and impostor (different-identity) score lists.
#[derive(Debug, Clone)]
pub struct ScoreSample {
    genuine: Vec<f64>,
    impostor: Vec<f64>,
}

impl ScoreSample {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self> {
        if genuine.is_empty() || impostor.is_empty() {
            return Err(Error::DegenerateInput(
                "score sample needs non-empty genuine and impostor lists".into(),
            ));
        }
        for s in genuine.iter().chain(impostor.iter()) {
            if !s.is_finite() || s.abs() > 1.0 + 1e-12 {
                return Err(Error::OutOfRange(format!("score {s} outside [-1, 1]")));
            }
        }
        Ok(Self { genuine, impostor })
    }

    pub fn from_scores(genuine: &[SimilarityScore], impostor: &[SimilarityScore]) -> Result<Self> {
        Self::new(
            genuine.iter().map(|s| s.value()).collect(),
            impostor.iter().map(|s| s.value()).collect(),
        )
    }

    pub fn genuine(&self) -> &[f64] {
        &self.genuine
    }

    pub fn impostor(&self) -> &[f64] {
        &self.impostor
    }
}

/// A threshold together with the error rates it induces on the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub tau: f64,
    pub far: f64,
    pub frr: f64,
}

/// False-acceptance and false-rejection rates at threshold `tau`
/// (accept-on-high similarity convention: accept iff score >= tau).
pub fn far_frr(sample: &ScoreSample, tau: f64) -> (f64, f64) {
    let far = sample.impostor.iter().filter(|s| **s >= tau).count() as f64
        / sample.impostor.len() as f64;
    let frr =
        sample.genuine.iter().filter(|s| **s < tau).count() as f64 / sample.genuine.len() as f64;
    (far, frr)
}

/// Candidate thresholds: midpoints of adjacent distinct pooled scores plus
/// the `-1` and `+1` sentinels.
pub fn candidate_thresholds(sample: &ScoreSample) -> Vec<f64> {
    let mut pooled: Vec<f64> = sample
        .genuine
        .iter()
        .chain(sample.impostor.iter())
        .copied()
        .collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pooled.dedup();
    let mut candidates = vec![-1.0];
    for w in pooled.windows(2) {
        candidates.push(0.5 * (w[0] + w[1]));
    }
    candidates.push(1.0);
    candidates
}

/// Equal error rate: `(FAR + FRR) / 2` at the swept threshold minimizing
/// `|FAR - FRR|`.
pub fn eer(sample: &ScoreSample) -> (f64, OperatingPoint) {
    let mut best: Option<(f64, OperatingPoint)> = None;
    for tau in candidate_thresholds(sample) {
        let (far, frr) = far_frr(sample, tau);
        let gap = (far - frr).abs();
        let better = match &best {
            None => true,
            Some((best_gap, best_op)) => {
                gap < *best_gap
                    || (gap == *best_gap
                        && (far < best_op.far || (far == best_op.far && tau < best_op.tau)))
            }
        };
        if better {
            best = Some((gap, OperatingPoint { tau, far, frr }));
        }
    }
    let (_, op) = best.expect("candidate sweep is never empty");
    (0.5 * (op.far + op.frr), op)
}

/// Minimum detection cost over the same candidate sweep:
/// `c_miss * FRR * (1 - p_target) + c_fa * FAR * p_target`.
pub fn min_dcf(
    sample: &ScoreSample,
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
) -> Result<(f64, OperatingPoint)> {
    if !(0.0..1.0).contains(&p_target) || p_target <= 0.0 {
        return Err(Error::OutOfRange(format!(
            "p_target {p_target} outside (0, 1)"
        )));
    }
    if c_miss <= 0.0 || c_fa <= 0.0 {
        return Err(Error::OutOfRange("costs must be positive".into()));
    }
    let mut best: Option<(f64, OperatingPoint)> = None;
    for tau in candidate_thresholds(sample) {
        let (far, frr) = far_frr(sample, tau);
        let dcf = c_miss * frr * (1.0 - p_target) + c_fa * far * p_target;
        let better = match &best {
            None => true,
            Some((best_dcf, best_op)) => dcf < *best_dcf || (dcf == *best_dcf && tau < best_op.tau),
        };
        if better {
            best = Some((dcf, OperatingPoint { tau, far, frr }));
        }
    }
    Ok(best.expect("candidate sweep is never empty"))
}

/// Attack success rate: fraction of final scores at or above the threshold.
pub fn asr(final_scores: &[f64], tau: f64) -> Result<f64> {
    if final_scores.is_empty() {
        return Err(Error::DegenerateInput("empty score list".into()));
    }
    Ok(final_scores.iter().filter(|s| **s >= tau).count() as f64 / final_scores.len() as f64)
}

/// Local-vs-target score discrepancy statistics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoreDiscrepancy {
    /// Mean of `|local_i - target_i|`.
    pub mean_abs: f64,
    /// Population standard deviation of `|local_i - target_i|`.
    pub std_abs: f64,
    /// Pearson correlation of the (local, target) pairs.
    pub pearson_r: f64,
}

pub fn score_discrepancy(local: &[f64], target: &[f64]) -> Result<ScoreDiscrepancy> {
    if local.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: local.len(),
            actual: target.len(),
        });
    }
    if local.len() < 2 {
        return Err(Error::DegenerateInput(
            "score discrepancy needs at least 2 pairs".into(),
        ));
    }
    let n = local.len() as f64;
    let abs_diffs: Vec<f64> = local
        .iter()
        .zip(target)
        .map(|(l, t)| (l - t).abs())
        .collect();
    let mean_abs = abs_diffs.iter().sum::<f64>() / n;
    let var_abs = abs_diffs
        .iter()
        .map(|d| (d - mean_abs).powi(2))
        .sum::<f64>()
        / n;
    let mean_l = local.iter().sum::<f64>() / n;
    let mean_t = target.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_l = 0.0;
    let mut var_t = 0.0;
    for (l, t) in local.iter().zip(target) {
        cov += (l - mean_l) * (t - mean_t);
        var_l += (l - mean_l).powi(2);
        var_t += (t - mean_t).powi(2);
    }
    if var_l <= 0.0 || var_t <= 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok(ScoreDiscrepancy {
        mean_abs,
        std_abs: var_abs.sqrt(),
        pearson_r: cov / (var_l.sqrt() * var_t.sqrt()),
    })
}

/// JSON-serializable calibration record emitted by the harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eer: f64,
    pub tau_e: f64,
    pub min_dcf: f64,
    pub tau_m: f64,
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
    pub genuine_count: usize,
    pub impostor_count: usize,
}

impl MetricsReport {
    pub fn from_sample(
        sample: &ScoreSample,
        p_target: f64,
        c_miss: f64,
        c_fa: f64,
    ) -> Result<Self> {
        let (eer_value, eer_op) = eer(sample);
        let (dcf_value, dcf_op) = min_dcf(sample, p_target, c_miss, c_fa)?;
        Ok(Self {
            eer: eer_value,
            tau_e: eer_op.tau,
            min_dcf: dcf_value,
            tau_m: dcf_op.tau,
            p_target,
            c_miss,
            c_fa,
            genuine_count: sample.genuine().len(),
            impostor_count: sample.impostor().len(),
        })
    }
}
