//! The black-box verification interface: enrollment, score queries,
//! thresholded decisions, and strict query accounting.
//!
//! Attackers reach the system only through [`VerificationOracle::query_score`]
//! and [`VerificationOracle::verify`]; the extractor and enrolled template are
//! private fields and never cross the attacker-facing surface. Every query
//! charges the ledger exactly once, atomically, so an oracle may be shared by
//! concurrent attack trials.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::geometry::{cosine, SimilarityScore, UnitFeature, Waveform};
use crate::synthworld::FeatureExtractor;

/// An enrolled speaker template (system-side data, not attacker-visible).
#[derive(Debug, Clone)]
pub struct EnrolledTemplate {
    template: UnitFeature,
    identity_label: u64,
}

impl EnrolledTemplate {
    pub fn template(&self) -> &UnitFeature {
        &self.template
    }

    pub fn identity_label(&self) -> u64 {
        self.identity_label
    }
}

/// Extracts and stores the feature of an enrollment utterance.
pub fn enroll(extractor: &FeatureExtractor, w: &Waveform, label: u64) -> Result<EnrolledTemplate> {
    Ok(EnrolledTemplate {
        template: extractor.extract(w)?,
        identity_label: label,
    })
}

/// Monotone query counter with an optional hard budget.
#[derive(Debug)]
pub struct QueryLedger {
    count: AtomicU64,
    budget: Option<u64>,
}

impl QueryLedger {
    pub fn new(budget: Option<u64>) -> Self {
        Self {
            count: AtomicU64::new(0),
            budget,
        }
    }

    pub fn count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    /// Atomically charges one query, failing without increment when the
    /// budget is exhausted.
    fn charge(&self) -> Result<u64> {
        match self
            .count
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| match self.budget {
                Some(b) if c >= b => None,
                _ => Some(c + 1),
            }) {
            Ok(prev) => Ok(prev + 1),
            Err(count) => Err(Error::BudgetExceeded { count }),
        }
    }
}

/// The only channel an attacker may touch: score queries and thresholded
/// decisions against one enrolled identity.
#[derive(Debug)]
pub struct VerificationOracle {
    extractor: FeatureExtractor,
    template: EnrolledTemplate,
    ledger: QueryLedger,
}

impl VerificationOracle {
    pub fn new(
        extractor: FeatureExtractor,
        template: EnrolledTemplate,
        budget: Option<u64>,
    ) -> Result<Self> {
        if template.template.dim() != extractor.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: extractor.feature_dim(),
                actual: template.template.dim(),
            });
        }
        Ok(Self {
            extractor,
            template,
            ledger: QueryLedger::new(budget),
        })
    }

    /// Expected waveform length. Public: callers know the input format.
    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    pub fn ledger_count(&self) -> u64 {
        self.ledger.count()
    }

    pub fn budget(&self) -> Option<u64> {
        self.ledger.budget()
    }

    /// Returns `<F(w), t>` and charges the ledger by exactly one.
    pub fn query_score(&self, w: &Waveform) -> Result<SimilarityScore> {
        if w.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: w.dim(),
            });
        }
        self.ledger.charge()?;
        cosine(&self.extractor.extract(w)?, &self.template.template)
    }

    /// Thresholded decision: accept iff score >= tau (ties accept).
    /// Charges the ledger by exactly one.
    pub fn verify(&self, w: &Waveform, tau: f64) -> Result<bool> {
        Ok(self.query_score(w)?.value() >= tau)
    }
}
