//! Feature-group emphasis vectors and the attention-prior divergence.
//!
//! True transformer attention is not observable through chat backends, so
//! the emphasis vector is elicited as an agent self-report over six fixed
//! feature groups and the divergence is computed against a configurable
//! economic prior.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{chat, prompt_hash, Backend, ChatRole, Message};
use crate::prompt::{RetailPrompt, SidecarTask};

pub const FEATURE_GROUPS: [&str; 6] = [
    "price", "discount", "brand", "reviews", "history", "trends",
];

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error("weights must be non-negative, got {0}")]
    Negative(f64),
    #[error("weights sum to {0}, not a probability simplex")]
    NotSimplex(f64),
    #[error("prior must be strictly positive on every group")]
    PriorNotPositive,
    #[error("emphasis report unparseable: {raw:?}")]
    Unparseable { raw: String },
    #[error("backend failure: {0}")]
    Backend(#[from] crate::backend::BackendError),
}

/// A point on the 6-group probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEmphasis {
    weights: [f64; 6],
}

impl FeatureEmphasis {
    pub fn new(weights: [f64; 6]) -> Result<FeatureEmphasis, AttentionError> {
        for w in weights {
            if w < 0.0 {
                return Err(AttentionError::Negative(w));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AttentionError::NotSimplex(sum));
        }
        Ok(FeatureEmphasis { weights })
    }

    /// Renormalize raw non-negative weights onto the simplex.
    pub fn from_raw(raw: [f64; 6]) -> Result<FeatureEmphasis, AttentionError> {
        for w in raw {
            if w < 0.0 {
                return Err(AttentionError::Negative(w));
            }
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(AttentionError::NotSimplex(sum));
        }
        Ok(FeatureEmphasis {
            weights: raw.map(|w| w / sum),
        })
    }

    /// The prior emphasizing economic features (price and discount).
    pub fn economic_prior() -> FeatureEmphasis {
        FeatureEmphasis {
            weights: [0.35, 0.25, 0.10, 0.10, 0.10, 0.10],
        }
    }

    pub fn weights(&self) -> &[f64; 6] {
        &self.weights
    }
}

/// KL(A || A*) in nats. The prior must be strictly positive; zero entries
/// in A contribute nothing. Always >= 0, and 0 iff A = A*.
pub fn attention_divergence(
    a: &FeatureEmphasis,
    a_star: &FeatureEmphasis,
) -> Result<f64, AttentionError> {
    if a_star.weights.iter().any(|&q| q <= 0.0) {
        return Err(AttentionError::PriorNotPositive);
    }
    let mut kl = 0.0;
    for (p, q) in a.weights.iter().zip(&a_star.weights) {
        if *p > 0.0 {
            kl += p * (p / q).ln();
        }
    }
    Ok(kl.max(0.0))
}

fn parse_weight_report(text: &str) -> Option<[f64; 6]> {
    // Strict form: a JSON line {"weights": {"price": ..., ...}}.
    for line in text.lines() {
        let trimmed = line.trim();
        if !trimmed.starts_with('{') {
            continue;
        }
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(trimmed) {
            if let Some(obj) = value.get("weights").and_then(|w| w.as_object()) {
                let mut raw = [0.0f64; 6];
                for (i, group) in FEATURE_GROUPS.iter().enumerate() {
                    raw[i] = obj.get(*group).and_then(|v| v.as_f64()).unwrap_or(0.0);
                }
                return Some(raw);
            }
        }
    }
    // Prose form: "price: 40%, discount 20, ...".
    let re = regex::Regex::new(
        r"(?i)\b(price|discount|brand|reviews|history|trends)\b\D{0,6}(\d+(?:\.\d+)?)",
    )
    .expect("regex");
    let mut raw = [0.0f64; 6];
    let mut any = false;
    for cap in re.captures_iter(text) {
        let group = cap[1].to_lowercase();
        if let Some(i) = FEATURE_GROUPS.iter().position(|g| *g == group) {
            if let Ok(v) = cap[2].parse::<f64>() {
                raw[i] = v;
                any = true;
            }
        }
    }
    any.then_some(raw)
}

/// Ask the agent to self-report percentage emphasis over the six groups,
/// then renormalize. Mock planted agents report their utility-weight
/// normalization.
pub fn elicit_feature_emphasis(
    backend: &Backend,
    prompt: &RetailPrompt,
) -> Result<FeatureEmphasis, AttentionError> {
    let mut sidecar = prompt.sidecar.clone();
    sidecar.task = SidecarTask::ReportEmphasis;
    let text = prompt
        .rendered_text
        .replace(&prompt.sidecar.render(), &sidecar.render());
    let messages: Vec<Message> = vec![
        (
            ChatRole::System,
            format!(
                "Report what share of your attention each feature group received \
                 when judging the offer: {}. Reply with percentages.",
                FEATURE_GROUPS.join(", ")
            ),
        ),
        (ChatRole::User, text),
    ];
    let _ = prompt_hash(&messages);
    let response = chat(backend, &messages)?;
    let raw = parse_weight_report(&response).ok_or(AttentionError::Unparseable {
        raw: response.clone(),
    })?;
    FeatureEmphasis::from_raw(raw)
}
