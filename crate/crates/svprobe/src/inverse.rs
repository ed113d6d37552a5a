//! Inverse models and their evaluation: round-trip protocol, identity and
//! structure losses, desk-scale training, and angular robustness.
//!
//! The trained inverse is a single affine map followed by a clip: the smallest
//! family that can be exactly correct for linear extractors. The fixed
//! conditioning vector stands in for constant text conditioning; it is stored,
//! added to every output, and never trained.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cosine, perturb_angular, UnitFeature, Waveform};
use crate::seed::substream;
use crate::synthworld::{FeatureExtractor, Nonlinearity, Population};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseKind {
    Analytic,
    Trained,
}

/// Feature-to-waveform map `x -> clip(M x + b + context)`.
#[derive(Debug, Clone)]
pub struct InverseModel {
    kind: InverseKind,
    map: DMatrix<f64>,
    offset: DVector<f64>,
    context: DVector<f64>,
    source_extractor_seed: u64,
}

impl InverseModel {
    pub fn new(
        kind: InverseKind,
        map: DMatrix<f64>,
        offset: DVector<f64>,
        context: DVector<f64>,
        source_extractor_seed: u64,
    ) -> Result<Self> {
        if offset.len() != map.nrows() || context.len() != map.nrows() {
            return Err(Error::DimensionMismatch {
                expected: map.nrows(),
                actual: offset.len().max(context.len()),
            });
        }
        Ok(Self {
            kind,
            map,
            offset,
            context,
            source_extractor_seed,
        })
    }

    pub fn kind(&self) -> InverseKind {
        self.kind
    }

    /// Latent/feature dimension `d`.
    pub fn feature_dim(&self) -> usize {
        self.map.ncols()
    }

    /// Waveform dimension `n`.
    pub fn output_dim(&self) -> usize {
        self.map.nrows()
    }

    pub fn source_extractor_seed(&self) -> u64 {
        self.source_extractor_seed
    }

    pub fn map(&self) -> &DMatrix<f64> {
        &self.map
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn context(&self) -> &DVector<f64> {
        &self.context
    }

    /// Decodes a unit feature into a waveform; deterministic.
    pub fn invert(&self, x: &UnitFeature) -> Result<Waveform> {
        if x.dim() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                actual: x.dim(),
            });
        }
        Waveform::clip_from(&self.map * x.as_vector() + &self.offset + &self.context)
    }

    pub fn to_doc(&self) -> InverseModelDoc {
        InverseModelDoc {
            version: 1,
            kind: self.kind,
            n: self.output_dim(),
            d: self.feature_dim(),
            map_row_major: self.map.transpose().as_slice().to_vec(),
            offset: self.offset.as_slice().to_vec(),
            context: self.context.as_slice().to_vec(),
            source_extractor_seed: self.source_extractor_seed,
        }
    }

    pub fn from_doc(doc: &InverseModelDoc) -> Result<Self> {
        if doc.map_row_major.len() != doc.n * doc.d {
            return Err(Error::InvalidConfig("map length does not match n*d".into()));
        }
        let map = DMatrix::from_row_slice(doc.n, doc.d, &doc.map_row_major);
        Self::new(
            doc.kind,
            map,
            DVector::from_column_slice(&doc.offset),
            DVector::from_column_slice(&doc.context),
            doc.source_extractor_seed,
        )
    }
}

/// Versioned JSON form of a trained or analytic inverse model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseModelDoc {
    pub version: u32,
    pub kind: InverseKind,
    pub n: usize,
    pub d: usize,
    pub map_row_major: Vec<f64>,
    pub offset: Vec<f64>,
    pub context: Vec<f64>,
    pub source_extractor_seed: u64,
}

/// Training hyperparameters. Defaults follow the reference recipe:
/// identity weight 5, structure weight 1, batch 64.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_ic: f64,
    pub lambda_sc: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_ic: 5.0,
            lambda_sc: 1.0,
            batch_size: 64,
            steps: 600,
            lr_initial: 0.5,
            lr_final: 0.02,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_ic < 0.0 || self.lambda_sc < 0.0 || self.lambda_ic + self.lambda_sc <= 0.0 {
            return Err(Error::InvalidConfig(
                "need lambda_ic, lambda_sc >= 0 with a positive sum".into(),
            ));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig("batch_size and steps must be >= 1".into()));
        }
        if self.lr_initial <= 0.0 || self.lr_final <= 0.0 || self.lr_final > self.lr_initial {
            return Err(Error::InvalidConfig(
                "need 0 < lr_final <= lr_initial".into(),
            ));
        }
        Ok(())
    }
}

struct Forward {
    features: Vec<DVector<f64>>,
    pre_clip: Vec<DVector<f64>>,
    clipped: Vec<DVector<f64>>,
    unit_outputs: Vec<DVector<f64>>,
    norms: Vec<f64>,
    round_trip: Vec<f64>,
}

fn forward_pass(
    extractor: &FeatureExtractor,
    model: &InverseModel,
    batch: &[Waveform],
) -> Result<Forward> {
    let mut features = Vec::with_capacity(batch.len());
    let mut pre_clip = Vec::with_capacity(batch.len());
    let mut clipped = Vec::with_capacity(batch.len());
    let mut unit_outputs = Vec::with_capacity(batch.len());
    let mut norms = Vec::with_capacity(batch.len());
    let mut round_trip = Vec::with_capacity(batch.len());
    for w in batch {
        let x = extractor.extract(w)?;
        let u = model.map() * x.as_vector() + model.offset() + model.context();
        let a = u.map(|v| v.clamp(-1.0, 1.0));
        let p = match extractor.kind() {
            Nonlinearity::Linear => a.clone(),
            Nonlinearity::Saturating => a.map(f64::tanh),
        };
        let g = extractor.weight() * p;
        let norm = g.norm();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateInput(
                "inverse output maps to a zero feature".into(),
            ));
        }
        let yhat = g / norm;
        round_trip.push(x.as_vector().dot(&yhat));
        features.push(x.into_vector());
        pre_clip.push(u);
        clipped.push(a);
        unit_outputs.push(yhat);
        norms.push(norm);
    }
    Ok(Forward {
        features,
        pre_clip,
        clipped,
        unit_outputs,
        norms,
        round_trip,
    })
}

/// Identity-constraint loss: mean of `1 - <F(aud_i), F(inv(F(aud_i)))>`.
pub fn loss_ic(
    extractor: &FeatureExtractor,
    model: &InverseModel,
    batch: &[Waveform],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::DegenerateInput("empty batch".into()));
    }
    let fwd = forward_pass(extractor, model, batch)?;
    Ok(fwd.round_trip.iter().map(|s| 1.0 - s).sum::<f64>() / batch.len() as f64)
}

/// Structure-constraint loss: mean absolute deviation between the pairwise
/// similarity matrices of originals and reconstructions (diagonal included;
/// it contributes zero).
pub fn loss_sc(
    extractor: &FeatureExtractor,
    model: &InverseModel,
    batch: &[Waveform],
) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::DegenerateInput(
            "structure loss needs a batch of at least 2".into(),
        ));
    }
    let fwd = forward_pass(extractor, model, batch)?;
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = fwd.features[i].dot(&fwd.features[j]);
            let s_tilde = fwd.unit_outputs[i].dot(&fwd.unit_outputs[j]);
            total += (s - s_tilde).abs();
        }
    }
    Ok(total / (n * n) as f64)
}

/// Weighted combination `lambda_ic * L_IC + lambda_sc * L_SC`. A zero weight
/// skips the corresponding component (and its preconditions).
pub fn loss_total(
    extractor: &FeatureExtractor,
    model: &InverseModel,
    batch: &[Waveform],
    config: &TrainConfig,
) -> Result<f64> {
    config.validate()?;
    let mut total = 0.0;
    if config.lambda_ic != 0.0 {
        total += config.lambda_ic * loss_ic(extractor, model, batch)?;
    }
    if config.lambda_sc != 0.0 {
        total += config.lambda_sc * loss_sc(extractor, model, batch)?;
    }
    Ok(total)
}

/// Losses and their analytic gradients with respect to the trainable
/// parameters (map and offset).
pub struct LossGradients {
    pub loss_ic: f64,
    pub loss_sc: f64,
    pub grad_map: DMatrix<f64>,
    pub grad_offset: DVector<f64>,
}

/// Analytic gradients of `lambda_ic * L_IC + lambda_sc * L_SC` via the chain
/// rule through the normalization, the extractor nonlinearity, and the clip
/// (slope 1 strictly inside (-1, 1), 0 at and beyond the boundary).
pub fn loss_gradients(
    extractor: &FeatureExtractor,
    model: &InverseModel,
    batch: &[Waveform],
    lambda_ic: f64,
    lambda_sc: f64,
) -> Result<LossGradients> {
    if batch.is_empty() {
        return Err(Error::DegenerateInput("empty batch".into()));
    }
    if lambda_sc != 0.0 && batch.len() < 2 {
        return Err(Error::DegenerateInput(
            "structure loss needs a batch of at least 2".into(),
        ));
    }
    let fwd = forward_pass(extractor, model, batch)?;
    let n = batch.len();
    let nf = n as f64;
    let l_ic = fwd.round_trip.iter().map(|s| 1.0 - s).sum::<f64>() / nf;

    let mut l_sc = 0.0;
    let mut sign_matrix = vec![vec![0.0f64; n]; n];
    if lambda_sc != 0.0 || n >= 2 {
        for i in 0..n {
            for j in 0..n {
                let s = fwd.features[i].dot(&fwd.features[j]);
                let s_tilde = fwd.unit_outputs[i].dot(&fwd.unit_outputs[j]);
                let diff = s_tilde - s;
                l_sc += diff.abs();
                // Deadband so float noise at an exact fixed point picks the
                // zero element of the |.| subgradient.
                sign_matrix[i][j] = if diff > 1e-12 {
                    1.0
                } else if diff < -1e-12 {
                    -1.0
                } else {
                    0.0
                };
            }
        }
        l_sc /= nf * nf;
    }

    let mut grad_map = DMatrix::zeros(model.output_dim(), model.feature_dim());
    let mut grad_offset = DVector::zeros(model.output_dim());
    for i in 0..n {
        // dL/dyhat_i
        let mut d_yhat = DVector::zeros(extractor.feature_dim());
        if lambda_ic != 0.0 {
            d_yhat -= &fwd.features[i] * (lambda_ic / nf);
        }
        if lambda_sc != 0.0 {
            let mut acc = DVector::zeros(extractor.feature_dim());
            for j in 0..n {
                if sign_matrix[i][j] != 0.0 {
                    acc += &fwd.unit_outputs[j] * sign_matrix[i][j];
                }
            }
            d_yhat += acc * (2.0 * lambda_sc / (nf * nf));
        }
        // Through the normalization: dL/dg = (I - yhat yhat^T) dL/dyhat / ||g||.
        let yhat = &fwd.unit_outputs[i];
        let d_g = (&d_yhat - yhat * yhat.dot(&d_yhat)) / fwd.norms[i];
        // Through the extractor weight.
        let mut d_a = extractor.weight().transpose() * d_g;
        // Through the extractor nonlinearity.
        if extractor.kind() == Nonlinearity::Saturating {
            for (k, v) in d_a.iter_mut().enumerate() {
                let t = fwd.clipped[i][k].tanh();
                *v *= 1.0 - t * t;
            }
        }
        // Through the clip.
        for (k, v) in d_a.iter_mut().enumerate() {
            if fwd.pre_clip[i][k].abs() >= 1.0 {
                *v = 0.0;
            }
        }
        grad_offset += &d_a;
        grad_map += d_a * fwd.features[i].transpose();
    }
    Ok(LossGradients {
        loss_ic: l_ic,
        loss_sc: l_sc,
        grad_map,
        grad_offset,
    })
}

/// Trains an affine inverse from a seeded random initialization.
pub fn train_inverse(
    extractor: &FeatureExtractor,
    pool: &Population,
    config: &TrainConfig,
) -> Result<(InverseModel, Vec<f64>)> {
    config.validate()?;
    let n = extractor.input_dim();
    let d = extractor.feature_dim();
    let mut rng = substream(config.seed, "inverse-init", 0);
    let map = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.3);
    let init = InverseModel::new(
        InverseKind::Trained,
        map,
        DVector::zeros(n),
        DVector::zeros(n),
        extractor.seed(),
    )?;
    train_inverse_from(extractor, pool, config, init)
}

/// Trains starting from an explicit model (e.g. the analytic inverse, which
/// is a fixed point of the loss).
pub fn train_inverse_from(
    extractor: &FeatureExtractor,
    pool: &Population,
    config: &TrainConfig,
    init: InverseModel,
) -> Result<(InverseModel, Vec<f64>)> {
    config.validate()?;
    if pool.len() < config.batch_size {
        return Err(Error::InvalidConfig(format!(
            "pool size {} smaller than batch size {}",
            pool.len(),
            config.batch_size
        )));
    }
    let mut map = init.map().clone();
    let mut offset = init.offset().clone();
    let context = init.context().clone();
    let mut history = Vec::with_capacity(config.steps);
    let mut best: Option<(f64, DMatrix<f64>, DVector<f64>)> = None;
    let mut batch_rng = substream(config.seed, "inverse-batches", 0);
    let decay = if config.steps > 1 {
        (config.lr_final / config.lr_initial).powf(1.0 / (config.steps as f64 - 1.0))
    } else {
        1.0
    };
    let mut lr = config.lr_initial;
    for step in 0..config.steps {
        let batch: Vec<Waveform> = (0..config.batch_size)
            .map(|_| pool.waveforms()[batch_rng.random_range(0..pool.len())].clone())
            .collect();
        let model = InverseModel::new(
            InverseKind::Trained,
            map.clone(),
            offset.clone(),
            context.clone(),
            init.source_extractor_seed(),
        )?;
        let grads = loss_gradients(extractor, &model, &batch, config.lambda_ic, config.lambda_sc)?;
        let loss = config.lambda_ic * grads.loss_ic + config.lambda_sc * grads.loss_sc;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, history });
        }
        history.push(loss);
        if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
            best = Some((loss, map.clone(), offset.clone()));
        }
        map -= &grads.grad_map * lr;
        offset -= &grads.grad_offset * lr;
        lr = (lr * decay).max(config.lr_final);
    }
    let (_, best_map, best_offset) = best.expect("steps >= 1");
    let model = InverseModel::new(
        InverseKind::Trained,
        best_map,
        best_offset,
        context,
        init.source_extractor_seed(),
    )?;
    Ok((model, history))
}

/// Mean / population-std / extrema of a score list.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Round-trip scores of a pool under local and transfer extractors, with
/// same-/different-identity reference distributions.
#[derive(Debug, Clone)]
pub struct RoundTripReport {
    pub local_scores: Vec<f64>,
    pub transfer_scores: Vec<f64>,
    pub positive_ref: Vec<f64>,
    pub negative_ref: Vec<f64>,
}

impl RoundTripReport {
    pub fn local_stats(&self) -> SummaryStats {
        SummaryStats::of(&self.local_scores)
    }

    pub fn transfer_stats(&self) -> SummaryStats {
        SummaryStats::of(&self.transfer_scores)
    }

    pub fn positive_stats(&self) -> SummaryStats {
        SummaryStats::of(&self.positive_ref)
    }

    pub fn negative_stats(&self) -> SummaryStats {
        SummaryStats::of(&self.negative_ref)
    }
}

/// Runs the round-trip protocol over a pool.
///
/// The inverse is conditioned on `cond_extractor` features; `local_scores`
/// are measured under `cond_extractor` and `transfer_scores` under
/// `eval_extractor`. References use all same-identity pairs and an
/// equal-count seeded sample of different-identity pairs under
/// `eval_extractor`.
pub fn round_trip_report(
    eval_extractor: &FeatureExtractor,
    cond_extractor: &FeatureExtractor,
    model: &InverseModel,
    pool: &Population,
) -> Result<RoundTripReport> {
    if pool.is_empty() {
        return Err(Error::DegenerateInput("empty pool".into()));
    }
    let mut local_scores = Vec::with_capacity(pool.len());
    let mut transfer_scores = Vec::with_capacity(pool.len());
    let mut eval_features = Vec::with_capacity(pool.len());
    for w in pool.waveforms() {
        let x_cond = cond_extractor.extract(w)?;
        let back = model.invert(&x_cond)?;
        local_scores.push(cosine(&x_cond, &cond_extractor.extract(&back)?)?.value());
        let x_eval = eval_extractor.extract(w)?;
        transfer_scores.push(cosine(&x_eval, &eval_extractor.extract(&back)?)?.value());
        eval_features.push(x_eval);
    }
    let labels = pool.identity_labels();
    let mut positive_ref = Vec::new();
    for i in 0..pool.len() {
        for j in (i + 1)..pool.len() {
            if labels[i] == labels[j] {
                positive_ref.push(cosine(&eval_features[i], &eval_features[j])?.value());
            }
        }
    }
    let mut negative_ref = Vec::with_capacity(positive_ref.len());
    let mut rng = substream(pool.seed(), "negative-pairs", 0);
    while negative_ref.len() < positive_ref.len() {
        let i = rng.random_range(0..pool.len());
        let j = rng.random_range(0..pool.len());
        if labels[i] != labels[j] {
            negative_ref.push(cosine(&eval_features[i], &eval_features[j])?.value());
        }
    }
    Ok(RoundTripReport {
        local_scores,
        transfer_scores,
        positive_ref,
        negative_ref,
    })
}

/// One row of the angular-robustness table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AngularRobustnessRow {
    pub angle_degrees: f64,
    pub mean: f64,
    pub std: f64,
}

/// Perturbs each pool feature by the given angle before inversion and
/// measures round-trip similarity to the original feature. A zero-angle
/// baseline row is always included.
pub fn angular_robustness(
    extractor: &FeatureExtractor,
    model: &InverseModel,
    pool: &Population,
    angles_degrees: &[f64],
) -> Result<Vec<AngularRobustnessRow>> {
    if pool.is_empty() {
        return Err(Error::DegenerateInput("empty pool".into()));
    }
    let mut all_angles = vec![0.0];
    for a in angles_degrees {
        if !(0.0..=90.0).contains(a) {
            return Err(Error::OutOfRange(format!("angle {a} outside [0, 90]")));
        }
        if *a != 0.0 {
            all_angles.push(*a);
        }
    }
    let mut rows = Vec::with_capacity(all_angles.len());
    for (idx, angle) in all_angles.iter().enumerate() {
        let mut rng = substream(pool.seed(), "angular-noise", idx as u64);
        let mut scores = Vec::with_capacity(pool.len());
        for w in pool.waveforms() {
            let x = extractor.extract(w)?;
            let perturbed = perturb_angular(&x, *angle, &mut rng)?;
            let back = model.invert(&perturbed)?;
            scores.push(cosine(&x, &extractor.extract(&back)?)?.value());
        }
        let stats = SummaryStats::of(&scores);
        rows.push(AngularRobustnessRow {
            angle_degrees: *angle,
            mean: stats.mean,
            std: stats.std,
        });
    }
    Ok(rows)
}
