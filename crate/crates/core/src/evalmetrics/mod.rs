//! Saliency evaluation: sparsity, similarity, overlap, fidelity,
//! ground-truth accuracy, retraining-based importance, robustness to
//! interpretation attacks, and sanity checks.

mod attack;
mod fidelity;
mod groundtruth;
mod overlap;
mod roar;
mod sanity;
mod similarity;
mod sparsity;

pub use attack::{interp_attack, AttackConfig, AttackResult};
pub use fidelity::{aopc, aopc_lerf, aopc_morf, channel_means, DeletionOrder};
pub use groundtruth::{area_fractions, binary_scores, five_band_scores, BandScores, TernaryMask};
pub use overlap::{topk_dice, topk_intersection, topk_mask};
pub use roar::{diffroar, mask_by_saliency, DiffRoarPoint, RetrainSpec};
pub use sanity::{cascading_randomization, label_sanity, CascadeStep, SanityReport, SanityThresholds};
pub use similarity::ssim;
pub use sparsity::gini;

use crate::error::{Error, Result};

/// Named scalar metrics with free-form provenance, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub provenance: Vec<(String, String)>,
    pub metrics: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tag(&mut self, key: &str, value: impl Into<String>) -> &mut Self {
        self.provenance.push((key.to_string(), value.into()));
        self
    }

    /// Adds a metric; non-finite values are rejected.
    pub fn push(&mut self, name: &str, value: f64) -> Result<&mut Self> {
        if !value.is_finite() {
            return Err(Error::invalid(format!("metric {name} is not finite: {value}")));
        }
        self.metrics.push((name.to_string(), value));
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|m| m.1)
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_rejects_non_finite() {
        let mut r = MetricsReport::new();
        r.push("gini", 0.5).unwrap();
        assert!(r.push("bad", f64::NAN).is_err());
        assert_eq!(r.get("gini"), Some(0.5));
        assert_eq!(r.get("bad"), None);
    }
}
