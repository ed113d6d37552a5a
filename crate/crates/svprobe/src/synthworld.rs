//! Seeded synthetic stand-ins for speaker-recognition systems and speech
//! corpora: feature extractors, correlated extractor families, labeled
//! waveform populations, and exact analytic inverses.
//!
//! Everything here is a pure function of its seed. Weights are regenerated
//! from specs, never stored on disk.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize, UnitFeature, Waveform};
use crate::inverse::{InverseKind, InverseModel};
use crate::seed::substream;

/// Elementwise nonlinearity applied before the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Linear,
    Saturating,
}

/// Versioned, reproducible description of an extractor. Weights are always
/// regenerated from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtractorSpec {
    Base {
        version: u32,
        seed: u64,
        n: usize,
        d: usize,
        kind: Nonlinearity,
    },
    Correlated {
        version: u32,
        base: Box<ExtractorSpec>,
        rho: f64,
        seed: u64,
    },
}

impl ExtractorSpec {
    pub fn build(&self) -> Result<FeatureExtractor> {
        match self {
            ExtractorSpec::Base { seed, n, d, kind, .. } => make_extractor(*seed, *n, *d, *kind),
            ExtractorSpec::Correlated { base, rho, seed, .. } => {
                let base = base.build()?;
                make_correlated_extractor(
                    &base,
                    CorrelationSpec {
                        rho: *rho,
                        seed: *seed,
                    },
                )
            }
        }
    }
}

/// Deterministic map from waveforms to the unit hypersphere:
/// `extract(w) = normalize(weight * phi(w))`.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    weight: DMatrix<f64>,
    kind: Nonlinearity,
    seed: u64,
    spec: ExtractorSpec,
}

impl FeatureExtractor {
    pub fn extract(&self, w: &Waveform) -> Result<UnitFeature> {
        if w.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: w.dim(),
            });
        }
        let phi = match self.kind {
            Nonlinearity::Linear => w.as_vector().clone(),
            Nonlinearity::Saturating => w.as_vector().map(f64::tanh),
        };
        normalize(&(&self.weight * phi))
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn kind(&self) -> Nonlinearity {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub(crate) fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }
}

/// Blend knob for local/target extractor families. `rho = 1` reproduces the
/// base extractor exactly; `rho = 0` yields an independent one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub rho: f64,
    pub seed: u64,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn normalize_rows(mut w: DMatrix<f64>) -> Result<DMatrix<f64>> {
    for mut row in w.row_iter_mut() {
        let norm = row.norm();
        if norm <= 1e-12 {
            return Err(Error::DegenerateInput("zero row in weight matrix".into()));
        }
        row /= norm;
    }
    Ok(w)
}

fn has_full_row_rank(w: &DMatrix<f64>) -> bool {
    let svd = w.clone().svd(false, false);
    let max = svd.singular_values.max();
    max > 0.0 && svd.singular_values.iter().all(|s| *s > 1e-10 * max)
}

/// Builds a seeded extractor with a row-normalized, full-row-rank weight.
pub fn make_extractor(seed: u64, n: usize, d: usize, kind: Nonlinearity) -> Result<FeatureExtractor> {
    if d < 2 || d > n {
        return Err(Error::InvalidConfig(format!(
            "need 2 <= d <= n, got d={d}, n={n}"
        )));
    }
    // Gaussian weights are full rank almost surely; regenerate on the
    // measure-zero failure so the constructor stays total.
    for attempt in 0..16u64 {
        let mut rng = substream(seed, "extractor-weight", attempt);
        let w = normalize_rows(gaussian_matrix(&mut rng, d, n))?;
        if has_full_row_rank(&w) {
            return Ok(FeatureExtractor {
                weight: w,
                kind,
                seed,
                spec: ExtractorSpec::Base {
                    version: 1,
                    seed,
                    n,
                    d,
                    kind,
                },
            });
        }
    }
    Err(Error::DegenerateInput(
        "could not generate a full-rank weight matrix".into(),
    ))
}

/// Row-normalized blend `rho * W_base + (1 - rho) * W_fresh`.
pub fn make_correlated_extractor(
    base: &FeatureExtractor,
    spec: CorrelationSpec,
) -> Result<FeatureExtractor> {
    if !(0.0..=1.0).contains(&spec.rho) {
        return Err(Error::OutOfRange(format!("rho {} outside [0, 1]", spec.rho)));
    }
    // rho = 1 must reproduce the base bit-exactly; renormalizing would
    // perturb the last bits.
    if spec.rho == 1.0 {
        return Ok(FeatureExtractor {
            weight: base.weight.clone(),
            kind: base.kind,
            seed: spec.seed,
            spec: ExtractorSpec::Correlated {
                version: 1,
                base: Box::new(base.spec.clone()),
                rho: spec.rho,
                seed: spec.seed,
            },
        });
    }
    let (d, n) = (base.feature_dim(), base.input_dim());
    for attempt in 0..16u64 {
        let mut rng = substream(spec.seed, "correlated-weight", attempt);
        let fresh = normalize_rows(gaussian_matrix(&mut rng, d, n))?;
        let blend = &base.weight * spec.rho + fresh * (1.0 - spec.rho);
        let Ok(w) = normalize_rows(blend) else {
            continue;
        };
        if has_full_row_rank(&w) {
            return Ok(FeatureExtractor {
                weight: w,
                kind: base.kind,
                seed: spec.seed,
                spec: ExtractorSpec::Correlated {
                    version: 1,
                    base: Box::new(base.spec.clone()),
                    rho: spec.rho,
                    seed: spec.seed,
                },
            });
        }
    }
    Err(Error::DegenerateInput(
        "could not generate a full-rank blended weight".into(),
    ))
}

/// Versioned, reproducible description of a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSpec {
    Synthetic {
        version: u32,
        seed: u64,
        identities: usize,
        per_identity: usize,
        within_spread: f64,
        n: usize,
    },
    /// Attacker-synthesized probe set; see [`make_probe_population`].
    Probe {
        version: u32,
        extractor: ExtractorSpec,
        seed: u64,
        m: usize,
    },
}

impl PopulationSpec {
    pub fn build(&self) -> Result<Population> {
        match self {
            PopulationSpec::Synthetic {
                seed,
                identities,
                per_identity,
                within_spread,
                n,
                ..
            } => make_population(*seed, *identities, *per_identity, *within_spread, *n),
            PopulationSpec::Probe { extractor, seed, m, .. } => {
                let ex = extractor.build()?;
                make_probe_population(&ex, *seed, *m)
            }
        }
    }
}

/// A labeled waveform pool: the desk-scale test corpus.
#[derive(Debug, Clone)]
pub struct Population {
    waveforms: Vec<Waveform>,
    identity_labels: Vec<usize>,
    identity_centers: Vec<UnitFeature>,
    within_spread: f64,
    seed: u64,
    per_identity: usize,
    signatures: Vec<DVector<f64>>,
    spec: PopulationSpec,
}

impl Population {
    pub fn waveforms(&self) -> &[Waveform] {
        &self.waveforms
    }

    pub fn identity_labels(&self) -> &[usize] {
        &self.identity_labels
    }

    pub fn identity_centers(&self) -> &[UnitFeature] {
        &self.identity_centers
    }

    pub fn identity_count(&self) -> usize {
        self.identity_centers.len()
    }

    pub fn per_identity(&self) -> usize {
        self.per_identity
    }

    pub fn within_spread(&self) -> f64 {
        self.within_spread
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.waveforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waveforms.is_empty()
    }

    pub fn sample_dim(&self) -> usize {
        self.signatures[0].len()
    }

    pub fn spec(&self) -> &PopulationSpec {
        &self.spec
    }

    /// Deterministic utterance for an identity. Indices below `per_identity`
    /// are the pool members; higher indices are held out by construction and
    /// never appear in the pool (used e.g. for victim enrollment).
    pub fn utterance(&self, identity: usize, index: usize) -> Result<Waveform> {
        if identity >= self.identity_count() {
            return Err(Error::OutOfRange(format!(
                "identity {identity} out of {}",
                self.identity_count()
            )));
        }
        let signature = &self.signatures[identity];
        if self.within_spread == 0.0 {
            return Waveform::clip_from(signature.clone());
        }
        let mut rng = substream(
            self.seed,
            "utterance",
            ((identity as u64) << 24) | index as u64,
        );
        let noise = DVector::from_fn(signature.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Waveform::clip_from(signature + noise * self.within_spread)
    }

    /// Splits identities into two disjoint sub-populations (seeded shuffle).
    /// The first part receives `ceil(train_fraction * identities)` identities.
    pub fn split_by_identity(
        &self,
        train_fraction: f64,
        seed: u64,
    ) -> Result<(Population, Population)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::OutOfRange("train_fraction outside [0, 1]".into()));
        }
        let k = self.identity_count();
        let n_train = ((train_fraction * k as f64).ceil() as usize).clamp(1, k.saturating_sub(1));
        let mut order: Vec<usize> = (0..k).collect();
        let mut rng = substream(seed, "identity-split", 0);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let (train_ids, test_ids) = order.split_at(n_train);
        Ok((
            self.sub_population(train_ids),
            self.sub_population(test_ids),
        ))
    }

    fn sub_population(&self, identities: &[usize]) -> Population {
        let mut waveforms = Vec::new();
        let mut labels = Vec::new();
        let mut centers = Vec::new();
        let mut signatures = Vec::new();
        for (new_label, old) in identities.iter().enumerate() {
            for (w, l) in self.waveforms.iter().zip(&self.identity_labels) {
                if l == old {
                    waveforms.push(w.clone());
                    labels.push(new_label);
                }
            }
            centers.push(self.identity_centers[*old].clone());
            signatures.push(self.signatures[*old].clone());
        }
        Population {
            waveforms,
            identity_labels: labels,
            identity_centers: centers,
            within_spread: self.within_spread,
            seed: self.seed,
            per_identity: self.per_identity,
            signatures,
            spec: self.spec.clone(),
        }
    }
}

/// Generates `identities x per_identity` waveforms around random identity
/// signatures: `clip(signature + within_spread * noise)`.
///
/// Signatures are uniform on the amplitude box scaled to 0.8 max amplitude so
/// additive noise rarely clips.
pub fn make_population(
    seed: u64,
    identities: usize,
    per_identity: usize,
    within_spread: f64,
    n: usize,
) -> Result<Population> {
    if identities < 2 || per_identity < 2 {
        return Err(Error::InvalidConfig(
            "need at least 2 identities and 2 utterances per identity".into(),
        ));
    }
    if within_spread < 0.0 || !within_spread.is_finite() {
        return Err(Error::OutOfRange("within_spread must be >= 0".into()));
    }
    if n < 2 {
        return Err(Error::InvalidConfig("need n >= 2".into()));
    }
    let mut signatures = Vec::with_capacity(identities);
    let mut centers = Vec::with_capacity(identities);
    for identity in 0..identities {
        let mut rng = substream(seed, "signature", identity as u64);
        let sig = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0) * 0.8);
        centers.push(normalize(&sig)?);
        signatures.push(sig);
    }
    let spec = PopulationSpec::Synthetic {
        version: 1,
        seed,
        identities,
        per_identity,
        within_spread,
        n,
    };
    let mut pop = Population {
        waveforms: Vec::with_capacity(identities * per_identity),
        identity_labels: Vec::with_capacity(identities * per_identity),
        identity_centers: centers,
        within_spread,
        seed,
        per_identity,
        signatures,
        spec,
    };
    for identity in 0..identities {
        for index in 0..per_identity {
            let w = pop.utterance(identity, index)?;
            pop.waveforms.push(w);
            pop.identity_labels.push(identity);
        }
    }
    Ok(pop)
}

/// Scale that keeps `c * pinv(W) * x` inside the amplitude box for every unit `x`.
fn preimage_scale(pinv: &DMatrix<f64>) -> f64 {
    let max_row_norm = pinv.row_iter().map(|r| r.norm()).fold(0.0f64, f64::max);
    (1.0 - 1e-9) / max_row_norm
}

/// Exact inverse of a linear extractor: `x -> clip(c * pinv(W) * x)` with `c`
/// chosen so clipping is never active on unit inputs.
pub fn analytic_inverse(extractor: &FeatureExtractor) -> Result<InverseModel> {
    if extractor.kind != Nonlinearity::Linear {
        return Err(Error::Unsupported(
            "analytic inverse requires a linear extractor; train one instead".into(),
        ));
    }
    let pinv = crate::geometry::pseudo_inverse(&extractor.weight)?;
    let scale = preimage_scale(&pinv);
    let n = extractor.input_dim();
    InverseModel::new(
        InverseKind::Analytic,
        pinv * scale,
        DVector::zeros(n),
        DVector::zeros(n),
        extractor.seed,
    )
}

/// Sylvester-Hadamard matrix of order `d` (power of two).
fn hadamard(d: usize) -> Result<DMatrix<f64>> {
    if d == 0 || (d & (d - 1)) != 0 {
        return Err(Error::Unsupported(format!(
            "Hadamard construction needs a power-of-two dimension, got {d}"
        )));
    }
    let mut h = DMatrix::from_element(1, 1, 1.0);
    let mut size = 1;
    while size < d {
        let mut next = DMatrix::zeros(size * 2, size * 2);
        for i in 0..size {
            for j in 0..size {
                let v = h[(i, j)];
                next[(i, j)] = v;
                next[(i, j + size)] = v;
                next[(i + size, j)] = v;
                next[(i + size, j + size)] = -v;
            }
        }
        h = next;
        size *= 2;
    }
    Ok(h)
}

/// Unit frame of `m <= 2d` vectors with pairwise coherence at most `1/sqrt(d)`:
/// an orthonormal basis plus scaled Hadamard sign rows, under a seeded rotation.
pub fn low_coherence_frame(d: usize, m: usize, seed: u64) -> Result<Vec<UnitFeature>> {
    if d < 2 || m == 0 {
        return Err(Error::InvalidConfig("need d >= 2, m >= 1".into()));
    }
    if m > 2 * d {
        return Err(Error::Unsupported(format!(
            "frame construction supports m <= 2d, got m={m}, d={d}"
        )));
    }
    // Seeded rotation so frames from different seeds are unrelated. The QR of
    // a Gaussian matrix is orthogonal with probability one.
    let mut rng = substream(seed, "frame-rotation", 0);
    let q = gaussian_matrix(&mut rng, d, d).qr().q();
    let mut frame = Vec::with_capacity(m);
    for i in 0..m.min(d) {
        frame.push(normalize(&DVector::from(q.column(i)))?);
    }
    if m > d {
        let h = hadamard(d)?;
        let scale = 1.0 / (d as f64).sqrt();
        for k in 0..(m - d) {
            let row = DVector::from_fn(d, |j, _| h[(k, j)] * scale);
            frame.push(normalize(&(&q * row))?);
        }
    }
    Ok(frame)
}

/// Attacker-side probe pool: waveforms whose local features form a
/// low-coherence frame, synthesized through the extractor's pseudo-inverse.
///
/// Random pools cannot reach 50 pairwise-near-orthogonal directions in 32
/// dimensions, so the attacker designs probes instead; they hold the local
/// extractor white-box, which makes this a legitimate capability.
pub fn make_probe_population(
    extractor: &FeatureExtractor,
    seed: u64,
    m: usize,
) -> Result<Population> {
    if extractor.kind != Nonlinearity::Linear {
        return Err(Error::Unsupported(
            "probe synthesis requires a linear extractor".into(),
        ));
    }
    if m < 2 {
        return Err(Error::InvalidConfig("need at least 2 probes".into()));
    }
    let d = extractor.feature_dim();
    let frame = low_coherence_frame(d, m, seed)?;
    let pinv = crate::geometry::pseudo_inverse(&extractor.weight)?;
    let scale = preimage_scale(&pinv);
    let mut waveforms = Vec::with_capacity(2 * m);
    let mut labels = Vec::with_capacity(2 * m);
    let mut centers = Vec::with_capacity(m);
    let mut signatures = Vec::with_capacity(m);
    for (i, v) in frame.iter().enumerate() {
        let pre = &pinv * v.as_vector() * scale;
        let w = Waveform::new(pre.clone())?;
        centers.push(normalize(&pre)?);
        signatures.push(pre);
        // Two copies per probe identity keep the population invariant.
        waveforms.push(w.clone());
        waveforms.push(w);
        labels.push(i);
        labels.push(i);
    }
    Ok(Population {
        waveforms,
        identity_labels: labels,
        identity_centers: centers,
        within_spread: 0.0,
        seed,
        per_identity: 2,
        signatures,
        spec: PopulationSpec::Probe {
            version: 1,
            extractor: extractor.spec.clone(),
            seed,
            m,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cosine;
    use crate::metrics::{eer, ScoreSample};
    use crate::seed::rng_from;
    use approx::assert_abs_diff_eq;

    fn random_waveform(rng: &mut ChaCha8Rng, n: usize) -> Waveform {
        Waveform::new(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn make_extractor_is_deterministic() {
        let a = make_extractor(5, 32, 8, Nonlinearity::Linear).unwrap();
        let b = make_extractor(5, 32, 8, Nonlinearity::Linear).unwrap();
        assert_eq!(a.weight(), b.weight());
    }

    #[test]
    fn make_extractor_rejects_bad_dims() {
        assert!(make_extractor(0, 4, 8, Nonlinearity::Linear).is_err());
        assert!(make_extractor(0, 4, 1, Nonlinearity::Linear).is_err());
    }

    #[test]
    fn extract_is_unit_norm() {
        let ex = make_extractor(5, 64, 8, Nonlinearity::Saturating).unwrap();
        let mut rng = rng_from(1);
        for _ in 0..20 {
            let w = random_waveform(&mut rng, 64);
            let f = ex.extract(&w).unwrap();
            assert_abs_diff_eq!(f.as_vector().norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn different_seeds_give_unrelated_features() {
        let e1 = make_extractor(1, 64, 16, Nonlinearity::Linear).unwrap();
        let e2 = make_extractor(2, 64, 16, Nonlinearity::Linear).unwrap();
        let mut rng = rng_from(9);
        let mut mean = 0.0;
        for _ in 0..1000 {
            let w = random_waveform(&mut rng, 64);
            let c = cosine(&e1.extract(&w).unwrap(), &e2.extract(&w).unwrap()).unwrap();
            mean += c.value();
        }
        mean /= 1000.0;
        assert!(mean.abs() < 0.05, "mean cosine {mean}");
    }

    #[test]
    fn rho_one_reproduces_base_exactly() {
        let base = make_extractor(3, 48, 12, Nonlinearity::Linear).unwrap();
        let corr =
            make_correlated_extractor(&base, CorrelationSpec { rho: 1.0, seed: 77 }).unwrap();
        assert_eq!(base.weight(), corr.weight());
    }

    fn paired_scores(
        a: &FeatureExtractor,
        b: &FeatureExtractor,
        pairs: usize,
        seed: u64,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut rng = rng_from(seed);
        let n = a.input_dim();
        let mut sa = Vec::with_capacity(pairs);
        let mut sb = Vec::with_capacity(pairs);
        for _ in 0..pairs {
            let w1 = random_waveform(&mut rng, n);
            let w2 = random_waveform(&mut rng, n);
            sa.push(
                cosine(&a.extract(&w1).unwrap(), &a.extract(&w2).unwrap())
                    .unwrap()
                    .value(),
            );
            sb.push(
                cosine(&b.extract(&w1).unwrap(), &b.extract(&w2).unwrap())
                    .unwrap()
                    .value(),
            );
        }
        (sa, sb)
    }

    #[test]
    fn rho_zero_scores_are_uncorrelated() {
        // Scores of two independent extractors still share the input pair,
        // which induces a residual correlation of about d/(d+n); keep n >> d
        // so that floor sits well under the 0.1 bound.
        let base = make_extractor(3, 256, 16, Nonlinearity::Linear).unwrap();
        let indep =
            make_correlated_extractor(&base, CorrelationSpec { rho: 0.0, seed: 99 }).unwrap();
        let (sa, sb) = paired_scores(&base, &indep, 10_000, 4);
        let r = crate::metrics::score_discrepancy(&sa, &sb)
            .unwrap()
            .pearson_r;
        assert!(r.abs() < 0.1, "pearson {r}");
    }

    #[test]
    fn score_alignment_improves_with_rho() {
        let base = make_extractor(3, 64, 16, Nonlinearity::Linear).unwrap();
        let mut means = Vec::new();
        for (i, rho) in [0.0, 0.25, 0.5, 0.75, 1.0].iter().enumerate() {
            let corr = make_correlated_extractor(
                &base,
                CorrelationSpec {
                    rho: *rho,
                    seed: 555,
                },
            )
            .unwrap();
            let (sa, sb) = paired_scores(&base, &corr, 10_000, 40 + i as u64);
            means.push(
                crate::metrics::score_discrepancy(&sa, &sb)
                    .unwrap()
                    .mean_abs,
            );
        }
        // Mean |s_local - s_target| non-increasing in rho, one inversion allowed.
        let inversions = means.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
        assert!(inversions <= 1, "means {means:?}");
        assert!(
            means[4] <= 1e-12,
            "rho=1 must agree exactly, got {}",
            means[4]
        );
    }

    #[test]
    fn population_bookkeeping() {
        let pop = make_population(8, 50, 10, 0.1, 64).unwrap();
        assert_eq!(pop.len(), 500);
        assert_eq!(pop.identity_count(), 50);
        for id in 0..50 {
            assert_eq!(
                pop.identity_labels().iter().filter(|l| **l == id).count(),
                10
            );
        }
    }

    #[test]
    fn zero_spread_population_duplicates_waveforms() {
        let pop = make_population(8, 4, 3, 0.0, 32).unwrap();
        let ex = make_extractor(5, 32, 8, Nonlinearity::Linear).unwrap();
        for id in 0..4 {
            let members: Vec<_> = pop
                .waveforms()
                .iter()
                .zip(pop.identity_labels())
                .filter(|(_, l)| **l == id)
                .map(|(w, _)| w)
                .collect();
            let f0 = ex.extract(members[0]).unwrap();
            for w in &members[1..] {
                let c = cosine(&f0, &ex.extract(w).unwrap()).unwrap().value();
                assert_abs_diff_eq!(c, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn population_scores_are_well_separated() {
        let pop = make_population(8, 20, 6, 0.1, 64).unwrap();
        let ex = make_extractor(5, 64, 16, Nonlinearity::Linear).unwrap();
        let feats: Vec<UnitFeature> = pop
            .waveforms()
            .iter()
            .map(|w| ex.extract(w).unwrap())
            .collect();
        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        for i in 0..feats.len() {
            for j in (i + 1)..feats.len() {
                let c = cosine(&feats[i], &feats[j]).unwrap().value();
                if pop.identity_labels()[i] == pop.identity_labels()[j] {
                    genuine.push(c);
                } else {
                    impostor.push(c);
                }
            }
        }
        let sample = ScoreSample::new(genuine, impostor).unwrap();
        let (e, _) = eer(&sample);
        assert!(e < 0.05, "eer {e}");
    }

    #[test]
    fn held_out_utterances_differ_from_pool() {
        let pop = make_population(8, 4, 3, 0.1, 32).unwrap();
        let held = pop.utterance(0, 3).unwrap();
        for w in pop.waveforms() {
            assert_ne!(w, &held);
        }
        // And regeneration of a pool member matches the pool.
        assert_eq!(pop.utterance(0, 0).unwrap(), pop.waveforms()[0]);
    }

    #[test]
    fn analytic_inverse_round_trips_exactly() {
        let ex = make_extractor(21, 96, 16, Nonlinearity::Linear).unwrap();
        let inv = analytic_inverse(&ex).unwrap();
        let mut rng = rng_from(2);
        for _ in 0..100 {
            let raw = DVector::from_fn(16, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = normalize(&raw).unwrap();
            let w = inv.invert(&x).unwrap();
            let c = cosine(&ex.extract(&w).unwrap(), &x).unwrap().value();
            assert!(c >= 1.0 - 1e-6, "round trip cosine {c}");
        }
    }

    #[test]
    fn analytic_inverse_recovers_range_vector() {
        let ex = make_extractor(21, 96, 16, Nonlinearity::Linear).unwrap();
        let inv = analytic_inverse(&ex).unwrap();
        let row = normalize(&DVector::from(ex.weight().row(0).transpose())).unwrap();
        let x = normalize(&(ex.weight() * row.as_vector())).unwrap();
        let w = inv.invert(&x).unwrap();
        let c = cosine(&ex.extract(&w).unwrap(), &x).unwrap().value();
        assert!(c >= 1.0 - 1e-9);
    }

    #[test]
    fn analytic_inverse_rejects_saturating() {
        let ex = make_extractor(21, 32, 8, Nonlinearity::Saturating).unwrap();
        assert!(matches!(analytic_inverse(&ex), Err(Error::Unsupported(_))));
    }

    #[test]
    fn transfer_round_trip_improves_with_rho() {
        let local = make_extractor(21, 96, 16, Nonlinearity::Linear).unwrap();
        let inv = analytic_inverse(&local).unwrap();
        let mut rng = rng_from(6);
        let mut means = Vec::new();
        for rho in [0.5, 0.9] {
            let target =
                make_correlated_extractor(&local, CorrelationSpec { rho, seed: 13 }).unwrap();
            let mut mean = 0.0;
            for _ in 0..200 {
                let w = random_waveform(&mut rng, 96);
                let x = target.extract(&w).unwrap();
                let back = inv.invert(&x).unwrap();
                mean += cosine(&target.extract(&back).unwrap(), &x)
                    .unwrap()
                    .value();
            }
            means.push(mean / 200.0);
        }
        assert!(
            means[1] > means[0],
            "rho=0.9 {} <= rho=0.5 {}",
            means[1],
            means[0]
        );
    }

    #[test]
    fn low_coherence_frame_meets_bound() {
        let frame = low_coherence_frame(32, 50, 9).unwrap();
        assert_eq!(frame.len(), 50);
        let bound = 1.0 / 32f64.sqrt() + 1e-9;
        for i in 0..frame.len() {
            for j in (i + 1)..frame.len() {
                let c = cosine(&frame[i], &frame[j]).unwrap().value().abs();
                assert!(c <= bound, "pair ({i},{j}) coherence {c}");
            }
        }
    }

    #[test]
    fn probe_population_features_match_frame() {
        let ex = make_extractor(21, 256, 32, Nonlinearity::Linear).unwrap();
        let pop = make_probe_population(&ex, 9, 50).unwrap();
        assert_eq!(pop.len(), 100);
        assert_eq!(pop.identity_count(), 50);
        let frame = low_coherence_frame(32, 50, 9).unwrap();
        for (i, v) in frame.iter().enumerate() {
            let f = ex.extract(&pop.waveforms()[2 * i]).unwrap();
            let c = cosine(&f, v).unwrap().value();
            assert!(c >= 1.0 - 1e-9, "probe {i} cosine {c}");
        }
    }

    #[test]
    fn extractor_spec_round_trips_through_json() {
        let base = make_extractor(3, 48, 12, Nonlinearity::Saturating).unwrap();
        let corr =
            make_correlated_extractor(&base, CorrelationSpec { rho: 0.75, seed: 4 }).unwrap();
        let json = serde_json::to_string(corr.spec()).unwrap();
        let spec: ExtractorSpec = serde_json::from_str(&json).unwrap();
        let rebuilt = spec.build().unwrap();
        assert_eq!(rebuilt.weight(), corr.weight());
    }

    #[test]
    fn population_spec_round_trips_through_json() {
        let pop = make_population(8, 4, 3, 0.1, 32).unwrap();
        let json = serde_json::to_string(pop.spec()).unwrap();
        let spec: PopulationSpec = serde_json::from_str(&json).unwrap();
        let rebuilt = spec.build().unwrap();
        assert_eq!(rebuilt.waveforms()[5], pop.waveforms()[5]);
    }

    #[test]
    fn split_by_identity_is_disjoint() {
        let pop = make_population(8, 10, 4, 0.1, 32).unwrap();
        let (train, test) = pop.split_by_identity(0.8, 3).unwrap();
        assert_eq!(train.identity_count(), 8);
        assert_eq!(test.identity_count(), 2);
        assert_eq!(train.len() + test.len(), pop.len());
        for c in test.identity_centers() {
            assert!(train.identity_centers().iter().all(|t| t != c));
        }
    }
}
