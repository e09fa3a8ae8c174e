//! Decision prompts: profile summaries, retail prompt rendering, and
//! alignment-dataset construction.
//!
//! Every prompt carries a machine-readable sidecar line so deterministic
//! mock agents never have to parse prose. The sidecar holds the candidate
//! table and run context; style parameters stay out of it (they live in
//! the persona preamble).

mod dataset;
mod profile;
mod render;

pub use dataset::{
    build_alignment_dataset, candidates_for_transaction, write_alignment_jsonl, AlignmentOptions,
    AlignmentReport,
};
pub use profile::summarize_profile;
pub use render::{
    build_retail_prompt, render_persona, shuffle_candidates, CandidateRef, PromptInputs,
    SECTION_HEADERS,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Money;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("candidate {0:?} is not in the catalog")]
    UnknownCandidate(String),
    #[error("{candidates} candidates but {discounts} discounts")]
    Misaligned { candidates: usize, discounts: usize },
    #[error("empty candidate list")]
    EmptyCandidates,
    #[error("unknown customer {0:?}")]
    UnknownCustomer(String),
    #[error("backend failure while summarizing: {0}")]
    Backend(#[from] crate::backend::BackendError),
}

pub const SIDECAR_PREFIX: &str = "[sidecar] ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidecarTask {
    RetailDecision,
    ReportEmphasis,
    ScoreStrategies,
}

/// Machine-readable candidate row, aligned with the displayed numbering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarCandidate {
    pub product_id: String,
    pub price_after_discount: f64,
    pub discount: f64,
    pub review: f64,
    pub brand: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarStrategy {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_product: Option<String>,
    pub instruction: String,
}

/// Structured context attached to every rendered prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub task: SidecarTask,
    pub customer_id: String,
    pub category: String,
    pub sample_seed: u64,
    pub candidates: Vec<SidecarCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meanfield: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategies: Option<Vec<SidecarStrategy>>,
}

impl Sidecar {
    pub fn render(&self) -> String {
        format!(
            "{SIDECAR_PREFIX}{}",
            serde_json::to_string(self).expect("sidecar serializes")
        )
    }
}

/// Scan message text for the sidecar line.
pub fn find_sidecar(text: &str) -> Option<Sidecar> {
    for line in text.lines() {
        if let Some(json) = line.strip_prefix(SIDECAR_PREFIX) {
            return serde_json::from_str(json).ok();
        }
    }
    None
}

/// One numbered option as shown to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    pub product_id: String,
    pub display_name: String,
    pub price_after_discount: Money,
    pub attributes_summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_embedding_ref: Option<String>,
}

/// A fully rendered retail decision prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetailPrompt {
    pub demand: String,
    pub candidates: Vec<CandidateView>,
    pub discounts: Vec<f64>,
    pub history_summary: String,
    pub market_trends: String,
    pub review_ratings: Vec<f64>,
    pub rendered_text: String,
    /// `permutation[display_idx] = original_idx` of the pre-shuffle input.
    pub permutation: Vec<usize>,
    pub sidecar: Sidecar,
}

impl RetailPrompt {
    pub fn candidate_ids(&self) -> std::collections::BTreeSet<String> {
        self.candidates
            .iter()
            .map(|c| c.product_id.clone())
            .collect()
    }
}

/// One supervised pair of the alignment dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentExample {
    pub input: String,
    pub output: String,
}

/// Long-term customer profile derived from pre-cutoff history only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub customer_id: String,
    pub text: String,
    pub features: ProfileFeatures,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfileFeatures {
    pub category_preferences: BTreeMap<String, f64>,
    pub promotion_sensitivity: f64,
    pub brand_affinities: BTreeMap<String, f64>,
    pub communication_style: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_round_trips_through_text() {
        let sidecar = Sidecar {
            task: SidecarTask::RetailDecision,
            customer_id: "C-0001".into(),
            category: "Home Cleaning".into(),
            sample_seed: 7,
            candidates: vec![SidecarCandidate {
                product_id: "P-01-1".into(),
                price_after_discount: 4.2,
                discount: 0.1,
                review: 4.0,
                brand: "Northfield".into(),
            }],
            meanfield: None,
            strategies: None,
        };
        let text = format!("prose before\n{}\nprose after", sidecar.render());
        assert_eq!(find_sidecar(&text).unwrap(), sidecar);
        assert!(find_sidecar("no sidecar here").is_none());
    }
}
