//! Score-query attack optimizers: NES in waveform space, NES in the latent
//! space of an inverse model, and white-box gradient descent.
//!
//! Both NES attacks share the same skeleton: score the best of a candidate
//! pool, then iterate gradient estimation from perturbation queries, a
//! momentum update, and one confirmation query. Every oracle interaction is
//! checked against the threshold, so `queries_at_success` is the exact ledger
//! position of the first accepted utterance. A budget-exhausted oracle ends
//! the attack with an unsuccessful trace instead of an error, charging only
//! the queries actually issued.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize, UnitFeature, Waveform};
use crate::inverse::InverseModel;
use crate::oracle::VerificationOracle;
use crate::synthworld::{FeatureExtractor, Nonlinearity};

/// NES attack hyperparameters.
///
/// `audio_defaults` and `latent_defaults` carry the reference settings for
/// the two search spaces (noise scale, learning-rate range, momentum, batch
/// and candidate-pool sizes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NesConfig {
    /// Perturbations per iteration (B).
    pub samples_per_draw: usize,
    /// Perturbation scale (sigma).
    pub noise_scale: f64,
    pub lr_initial: f64,
    pub lr_min: f64,
    /// Momentum applied to the gradient estimate before the update.
    pub momentum: f64,
    pub max_iter: usize,
    /// Random candidates scored at initialization (C).
    pub candidate_pool: usize,
    /// Starting points kept from the pool (S); starts share the iteration
    /// budget, best candidate first.
    pub selected: usize,
    /// Stop after this many iterations without best-score improvement.
    pub early_stop_window: Option<usize>,
    /// Mirror each perturbation (pairs +eps/-eps), cancelling the loss
    /// baseline in the gradient estimate.
    pub antithetic: bool,
}

impl NesConfig {
    /// Waveform-space defaults: sigma 1e-3, lr 0.1 -> 1e-4, momentum 0.9,
    /// B 10, 1000 iterations, candidate pool 100, 1 selected.
    pub fn audio_defaults() -> Self {
        Self {
            samples_per_draw: 10,
            noise_scale: 1e-3,
            lr_initial: 0.1,
            lr_min: 1e-4,
            momentum: 0.9,
            max_iter: 1000,
            candidate_pool: 100,
            selected: 1,
            early_stop_window: None,
            antithetic: false,
        }
    }

    /// Latent-space defaults: sigma 5.0, lr 5e-2 -> 1e-6, otherwise as audio.
    pub fn latent_defaults() -> Self {
        Self {
            noise_scale: 5.0,
            lr_initial: 5e-2,
            lr_min: 1e-6,
            ..Self::audio_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_draw == 0 {
            return Err(Error::InvalidConfig("samples_per_draw must be >= 1".into()));
        }
        if self.antithetic && self.samples_per_draw % 2 != 0 {
            return Err(Error::InvalidConfig(
                "antithetic sampling needs an even samples_per_draw".into(),
            ));
        }
        if self.noise_scale <= 0.0 {
            return Err(Error::InvalidConfig("noise_scale must be positive".into()));
        }
        if self.lr_initial <= 0.0 || self.lr_min <= 0.0 || self.lr_min > self.lr_initial {
            return Err(Error::InvalidConfig("need 0 < lr_min <= lr_initial".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if self.candidate_pool == 0 || self.selected == 0 || self.selected > self.candidate_pool {
            return Err(Error::InvalidConfig(
                "need 1 <= selected <= candidate_pool".into(),
            ));
        }
        if let Some(w) = self.early_stop_window {
            if w == 0 {
                return Err(Error::InvalidConfig("early_stop_window must be >= 1".into()));
            }
        }
        Ok(())
    }

    fn learning_rate(&self, iteration: usize) -> f64 {
        if self.max_iter <= 1 {
            return self.lr_initial;
        }
        let decay = (self.lr_min / self.lr_initial).powf(1.0 / (self.max_iter as f64 - 1.0));
        (self.lr_initial * decay.powi(iteration as i32)).max(self.lr_min)
    }
}

/// One row of the per-step log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub cumulative_queries: u64,
    pub best_score: f64,
}

/// Per-trial attack log. The best-score sequence is non-decreasing by
/// construction and total queries equal the oracle ledger delta exactly.
#[derive(Debug, Clone)]
pub struct AttackTrace {
    pub steps: Vec<StepRecord>,
    pub total_queries: u64,
    pub success: bool,
    pub queries_at_success: Option<u64>,
    pub best_score: f64,
    pub best_waveform: Option<Waveform>,
    pub best_latent: Option<UnitFeature>,
}

impl AttackTrace {
    /// One JSON object per step, newline separated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step).expect("step serializes"));
            out.push('\n');
        }
        out
    }
}

/// Accumulates queries and best-so-far state during an attack.
struct TraceBuilder {
    tau: f64,
    steps: Vec<StepRecord>,
    queries: u64,
    success: bool,
    queries_at_success: Option<u64>,
    best_score: f64,
    best_waveform: Option<Waveform>,
    best_latent: Option<UnitFeature>,
    budget_hit: bool,
}

impl TraceBuilder {
    fn new(tau: f64) -> Self {
        Self {
            tau,
            steps: Vec::new(),
            queries: 0,
            success: false,
            queries_at_success: None,
            best_score: f64::NEG_INFINITY,
            best_waveform: None,
            best_latent: None,
            budget_hit: false,
        }
    }

    /// Issues one score query; returns `None` once the budget is exhausted.
    fn query(
        &mut self,
        oracle: &VerificationOracle,
        w: &Waveform,
        latent: Option<&UnitFeature>,
    ) -> Result<Option<f64>> {
        match oracle.query_score(w) {
            Ok(score) => {
                let value = score.value();
                self.queries += 1;
                if value > self.best_score {
                    self.best_score = value;
                    self.best_waveform = Some(w.clone());
                    self.best_latent = latent.cloned();
                }
                if !self.success && value >= self.tau {
                    self.success = true;
                    self.queries_at_success = Some(self.queries);
                }
                Ok(Some(value))
            }
            Err(Error::BudgetExceeded { .. }) => {
                self.budget_hit = true;
                Ok(None)
            }
            Err(other) => Err(other),
        }
    }

    fn record_step(&mut self, iteration: usize) {
        self.steps.push(StepRecord {
            iteration,
            cumulative_queries: self.queries,
            best_score: self.best_score,
        });
    }

    fn finish(self) -> AttackTrace {
        AttackTrace {
            steps: self.steps,
            total_queries: self.queries,
            success: self.success,
            queries_at_success: self.queries_at_success,
            best_score: self.best_score,
            best_waveform: self.best_waveform,
            best_latent: self.best_latent,
        }
    }
}

/// NES gradient estimate `(1 / (B * sigma)) * sum(loss_i * eps_i)`.
pub fn nes_gradient(
    losses: &[f64],
    perturbations: &[DVector<f64>],
    sigma: f64,
) -> Result<DVector<f64>> {
    if losses.is_empty() || losses.len() != perturbations.len() {
        return Err(Error::DimensionMismatch {
            expected: losses.len(),
            actual: perturbations.len(),
        });
    }
    if sigma <= 0.0 {
        return Err(Error::OutOfRange("sigma must be positive".into()));
    }
    let dim = perturbations[0].len();
    let mut grad = DVector::zeros(dim);
    for (loss, eps) in losses.iter().zip(perturbations) {
        if eps.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: eps.len(),
            });
        }
        grad += eps * *loss;
    }
    Ok(grad / (losses.len() as f64 * sigma))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn draw_perturbations(rng: &mut ChaCha8Rng, dim: usize, config: &NesConfig) -> Vec<DVector<f64>> {
    let b = config.samples_per_draw;
    let mut eps = Vec::with_capacity(b);
    if config.antithetic {
        for _ in 0..b / 2 {
            let e = gaussian_vector(rng, dim);
            eps.push(e.clone());
            eps.push(-e);
        }
    } else {
        for _ in 0..b {
            eps.push(gaussian_vector(rng, dim));
        }
    }
    eps
}

/// Scores `candidate_pool` random starting points and returns the `selected`
/// best, descending. Stops early on success or budget exhaustion.
fn score_candidates<T, F>(
    tracker: &mut TraceBuilder,
    oracle: &VerificationOracle,
    config: &NesConfig,
    mut draw: F,
) -> Result<Vec<T>>
where
    T: Clone,
    F: FnMut(usize) -> Result<(T, Waveform, Option<UnitFeature>)>,
{
    let mut scored: Vec<(f64, T)> = Vec::with_capacity(config.candidate_pool);
    for c in 0..config.candidate_pool {
        let (state, waveform, latent) = draw(c)?;
        match tracker.query(oracle, &waveform, latent.as_ref())? {
            Some(score) => scored.push((score, state)),
            None => break,
        }
        if tracker.success {
            break;
        }
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    Ok(scored
        .into_iter()
        .take(config.selected)
        .map(|(_, s)| s)
        .collect())
}

/// NES directly in waveform space with sign-based momentum descent.
///
/// Initialization queries up to `candidate_pool` random clipped Gaussian
/// waveforms; each iteration costs `samples_per_draw + 1` queries. The loss
/// is `1 - score` throughout.
pub fn audio_nes(
    oracle: &VerificationOracle,
    tau: f64,
    config: &NesConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AttackTrace> {
    config.validate()?;
    let n = oracle.input_dim();
    let mut tracker = TraceBuilder::new(tau);
    let starts = score_candidates(&mut tracker, oracle, config, |_| {
        let w = Waveform::clip_from(gaussian_vector(rng, n))?;
        Ok((w.clone(), w, None))
    })?;
    tracker.record_step(0);

    let mut iterations_used = 0usize;
    'starts: for start in starts {
        if tracker.success || tracker.budget_hit {
            break;
        }
        let mut current = start.as_vector().clone();
        let mut velocity = DVector::zeros(n);
        let mut best_at_window_check = tracker.best_score;
        let mut stale_iterations = 0usize;
        while iterations_used < config.max_iter {
            let lr = config.learning_rate(iterations_used);
            iterations_used += 1;
            let eps = draw_perturbations(rng, n, config);
            let mut losses = Vec::with_capacity(eps.len());
            for e in &eps {
                let candidate = Waveform::clip_from(&current + e * config.noise_scale)?;
                match tracker.query(oracle, &candidate, None)? {
                    Some(score) => losses.push(1.0 - score),
                    None => break,
                }
                if tracker.success {
                    break;
                }
            }
            if tracker.success || tracker.budget_hit {
                tracker.record_step(iterations_used);
                break 'starts;
            }
            if losses.len() != eps.len() {
                tracker.record_step(iterations_used);
                break 'starts;
            }
            let grad = nes_gradient(&losses, &eps, config.noise_scale)?;
            velocity = &velocity * config.momentum + grad;
            current = (&current - velocity.map(f64::signum) * lr).map(|v| v.clamp(-1.0, 1.0));
            let updated = Waveform::new(current.clone())?;
            if tracker.query(oracle, &updated, None)?.is_none() {
                tracker.record_step(iterations_used);
                break 'starts;
            }
            tracker.record_step(iterations_used);
            if tracker.success {
                break 'starts;
            }
            if let Some(window) = config.early_stop_window {
                if tracker.best_score > best_at_window_check {
                    best_at_window_check = tracker.best_score;
                    stale_iterations = 0;
                } else {
                    stale_iterations += 1;
                    if stale_iterations >= window {
                        break;
                    }
                }
            }
        }
        if iterations_used >= config.max_iter {
            break;
        }
    }
    Ok(tracker.finish())
}

/// NES over the unit-sphere latent of an inverse model. Every queried
/// candidate decodes from an exactly unit-norm latent; the update is
/// `z <- normalize(z - lr * velocity)`.
pub fn latent_nes(
    oracle: &VerificationOracle,
    model: &InverseModel,
    tau: f64,
    config: &NesConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AttackTrace> {
    config.validate()?;
    if model.output_dim() != oracle.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.input_dim(),
            actual: model.output_dim(),
        });
    }
    let d = model.feature_dim();
    let mut tracker = TraceBuilder::new(tau);
    let starts = score_candidates(&mut tracker, oracle, config, |_| {
        let z = normalize(&gaussian_vector(rng, d))?;
        let w = model.invert(&z)?;
        Ok((z.clone(), w, Some(z)))
    })?;
    tracker.record_step(0);

    let mut iterations_used = 0usize;
    'starts: for start in starts {
        if tracker.success || tracker.budget_hit {
            break;
        }
        let mut z = start;
        let mut velocity = DVector::zeros(d);
        let mut best_at_window_check = tracker.best_score;
        let mut stale_iterations = 0usize;
        while iterations_used < config.max_iter {
            let lr = config.learning_rate(iterations_used);
            iterations_used += 1;
            let eps = draw_perturbations(rng, d, config);
            let mut losses = Vec::with_capacity(eps.len());
            for e in &eps {
                let z_tilde = normalize(&(z.as_vector() + e * config.noise_scale))?;
                let candidate = model.invert(&z_tilde)?;
                match tracker.query(oracle, &candidate, Some(&z_tilde))? {
                    Some(score) => losses.push(1.0 - score),
                    None => break,
                }
                if tracker.success {
                    break;
                }
            }
            if tracker.success || tracker.budget_hit {
                tracker.record_step(iterations_used);
                break 'starts;
            }
            if losses.len() != eps.len() {
                tracker.record_step(iterations_used);
                break 'starts;
            }
            let grad = nes_gradient(&losses, &eps, config.noise_scale)?;
            velocity = &velocity * config.momentum + grad;
            z = normalize(&(z.as_vector() - &velocity * lr))?;
            let updated = model.invert(&z)?;
            if tracker.query(oracle, &updated, Some(&z))?.is_none() {
                tracker.record_step(iterations_used);
                break 'starts;
            }
            tracker.record_step(iterations_used);
            if tracker.success {
                break 'starts;
            }
            if let Some(window) = config.early_stop_window {
                if tracker.best_score > best_at_window_check {
                    best_at_window_check = tracker.best_score;
                    stale_iterations = 0;
                } else {
                    stale_iterations += 1;
                    if stale_iterations >= window {
                        break;
                    }
                }
            }
        }
        if iterations_used >= config.max_iter {
            break;
        }
    }
    Ok(tracker.finish())
}

/// White-box gradient-descent parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdConfig {
    pub learning_rate: f64,
    pub max_iter: usize,
    /// Convergence check on `|loss_prev - loss_now|`; disabled when `None`.
    pub epsilon: Option<f64>,
    pub seed: u64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            max_iter: 2000,
            epsilon: Some(1e-10),
            seed: 0,
        }
    }
}

/// Loss `1 - cos(F(w), target)` and its analytic gradient in waveform space.
fn cosine_loss_and_grad(
    extractor: &FeatureExtractor,
    w: &DVector<f64>,
    target: &UnitFeature,
) -> Result<(f64, DVector<f64>)> {
    let phi = match extractor.kind() {
        Nonlinearity::Linear => w.clone(),
        Nonlinearity::Saturating => w.map(f64::tanh),
    };
    let g = extractor.weight() * phi;
    let norm = g.norm();
    if norm <= 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateInput("zero feature during descent".into()));
    }
    let yhat = g / norm;
    let s = yhat.dot(target.as_vector());
    // d(1 - s)/dg = -(t - s*yhat)/||g||, then back through W and phi.
    let d_g = (target.as_vector() - &yhat * s) * (-1.0 / norm);
    let mut grad = extractor.weight().transpose() * d_g;
    if extractor.kind() == Nonlinearity::Saturating {
        for (k, v) in grad.iter_mut().enumerate() {
            let t = w[k].tanh();
            *v *= 1.0 - t * t;
        }
    }
    Ok((1.0 - s, grad))
}

/// White-box descent on `1 - cos(F(w), target)`; no oracle, no ledger.
/// Starts from `init` or a seeded random waveform; iterates clipped gradient
/// steps until `max_iter` or the convergence check fires.
pub fn audio_gd(
    extractor: &FeatureExtractor,
    target: &UnitFeature,
    config: &GdConfig,
    init: Option<&Waveform>,
) -> Result<(Waveform, Vec<f64>)> {
    if config.learning_rate <= 0.0 || config.max_iter == 0 {
        return Err(Error::InvalidConfig(
            "need positive learning_rate and max_iter".into(),
        ));
    }
    if target.dim() != extractor.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: extractor.feature_dim(),
            actual: target.dim(),
        });
    }
    let mut current = match init {
        Some(w) => {
            if w.dim() != extractor.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: extractor.input_dim(),
                    actual: w.dim(),
                });
            }
            w.as_vector().clone()
        }
        None => {
            let mut rng = crate::seed::substream(config.seed, "audio-gd-init", 0);
            Waveform::clip_from(gaussian_vector(&mut rng, extractor.input_dim()))?
                .as_vector()
                .clone()
        }
    };
    let mut history = Vec::with_capacity(config.max_iter);
    let mut previous_loss = f64::INFINITY;
    for step in 0..config.max_iter {
        let (loss, grad) = cosine_loss_and_grad(extractor, &current, target)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, history });
        }
        history.push(loss);
        let delta = (previous_loss - loss).abs();
        if let Some(eps) = config.epsilon {
            if step > 0 && delta <= eps {
                break;
            }
        }
        previous_loss = loss;
        current = (&current - grad * config.learning_rate).map(|v| v.clamp(-1.0, 1.0));
    }
    Ok((Waveform::new(current)?, history))
}
