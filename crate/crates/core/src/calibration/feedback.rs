//! Bottleneck detection, hierarchical target decomposition, feedback
//! re-adjustment, and the cross-category generalization bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("n_target must be at least 1")]
    BadNTarget,
    #[error("n_full must be at least n_target")]
    BadNFull,
    #[error("d_model must be at least 1")]
    BadDModel,
    #[error("lambda and r_transfer must be non-negative")]
    NegativeTransfer,
    #[error("unknown KPI {0:?} in threshold map")]
    UnknownKpi(String),
    #[error("shares sum to {0}, expected 1")]
    BadShares(f64),
}

/// A KPI excursion beyond its relative threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSignal {
    pub kpi: String,
    pub observed: f64,
    pub baseline: f64,
    /// Relative deviation |observed - baseline| / max(|baseline|, eps).
    pub deviation: f64,
    pub threshold: f64,
}

/// Compare KPIs against baselines; a signal fires when the relative
/// deviation strictly exceeds the per-KPI threshold. Iteration order of
/// the input maps never affects the result.
pub fn detect_bottleneck(
    kpis: &BTreeMap<String, f64>,
    baseline: &BTreeMap<String, f64>,
    thresholds: &BTreeMap<String, f64>,
    default_threshold: f64,
) -> Result<Vec<FeedbackSignal>, BoundError> {
    for name in thresholds.keys() {
        if !kpis.contains_key(name) {
            return Err(BoundError::UnknownKpi(name.clone()));
        }
    }
    let mut signals = Vec::new();
    for (name, value) in kpis {
        let Some(base) = baseline.get(name) else {
            continue;
        };
        let threshold = thresholds.get(name).copied().unwrap_or(default_threshold);
        let deviation = (value - base).abs() / base.abs().max(1e-9);
        if deviation > threshold {
            signals.push(FeedbackSignal {
                kpi: name.clone(),
                observed: *value,
                baseline: *base,
                deviation,
                threshold,
            });
        }
    }
    Ok(signals)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Mean,
}

/// A node of the hierarchical target tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetNode {
    pub name: String,
    pub target: f64,
    pub tolerance: f64,
    pub aggregation: Aggregation,
    #[serde(default)]
    pub children: Vec<TargetNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved: Option<f64>,
}

impl TargetNode {
    pub fn leaf(name: impl Into<String>, target: f64, tolerance: f64) -> TargetNode {
        TargetNode {
            name: name.into(),
            target,
            tolerance,
            aggregation: Aggregation::Sum,
            children: Vec::new(),
            achieved: None,
        }
    }

    /// Children must aggregate back to the parent target.
    pub fn check_aggregation(&self) -> Result<(), String> {
        if self.children.is_empty() {
            return Ok(());
        }
        let combined: f64 = match self.aggregation {
            Aggregation::Sum => self.children.iter().map(|c| c.target).sum(),
            Aggregation::Mean => {
                self.children.iter().map(|c| c.target).sum::<f64>() / self.children.len() as f64
            }
        };
        if (combined - self.target).abs() > 1e-6 * self.target.abs().max(1.0) {
            return Err(format!(
                "children of {} aggregate to {combined}, target {}",
                self.name, self.target
            ));
        }
        Ok(())
    }
}

/// Split a parent target into sub-targets by shares (must sum to 1 within
/// 1e-9); tolerance bands scale with the shares.
pub fn decompose_targets(
    parent: &TargetNode,
    shares: &[(String, f64)],
) -> Result<Vec<TargetNode>, BoundError> {
    let total: f64 = shares.iter().map(|(_, s)| s).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(BoundError::BadShares(total));
    }
    Ok(shares
        .iter()
        .map(|(name, share)| TargetNode {
            name: name.clone(),
            target: parent.target * share,
            tolerance: parent.tolerance * share,
            aggregation: parent.aggregation,
            children: Vec::new(),
            achieved: None,
        })
        .collect())
}

/// Step-ratio schedule for feedback re-adjustment: r_it = r0 * decay^it,
/// tightening geometrically over iterations.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdjustSchedule {
    pub r0: f64,
    pub decay: f64,
}

impl Default for AdjustSchedule {
    fn default() -> Self {
        AdjustSchedule { r0: 0.5, decay: 0.5 }
    }
}

impl AdjustSchedule {
    pub fn ratio(&self, iteration: u32) -> f64 {
        self.r0 * self.decay.powi(iteration as i32)
    }
}

/// Relax targets named by signals toward their observed values by the
/// iteration's step ratio; everything else passes through unchanged.
pub fn feedback_adjust(
    targets: &[TargetNode],
    signals: &[FeedbackSignal],
    iteration: u32,
    schedule: &AdjustSchedule,
) -> Vec<TargetNode> {
    let r = schedule.ratio(iteration);
    targets
        .iter()
        .map(|node| {
            let mut adjusted = node.clone();
            if let Some(signal) = signals.iter().find(|s| s.kpi == node.name) {
                adjusted.target = node.target + r * (signal.observed - node.target);
            }
            adjusted
        })
        .collect()
}

/// Lower bound on the generalization improvement from full-set training:
/// sqrt(d/n_target) - sqrt(d/n_full) + lambda * r_transfer.
pub fn generalization_gain_lower_bound(
    d_model: u64,
    n_target: u64,
    n_full: u64,
    lambda: f64,
    r_transfer: f64,
) -> Result<f64, BoundError> {
    if d_model < 1 {
        return Err(BoundError::BadDModel);
    }
    if n_target < 1 {
        return Err(BoundError::BadNTarget);
    }
    if n_full < n_target {
        return Err(BoundError::BadNFull);
    }
    if lambda < 0.0 || r_transfer < 0.0 {
        return Err(BoundError::NegativeTransfer);
    }
    let d = d_model as f64;
    Ok((d / n_target as f64).sqrt() - (d / n_full as f64).sqrt() + lambda * r_transfer)
}
