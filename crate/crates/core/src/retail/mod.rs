//! Single-agent retail decision episodes: persona-styled prompts, multi-
//! sample consistency, attention-prior divergence, and candidate
//! strategies scored by the agent.

mod attention;
mod episode;
mod strategy;

pub use attention::{
    attention_divergence, elicit_feature_emphasis, FeatureEmphasis, FEATURE_GROUPS,
};
pub use episode::{
    multi_sample_consistency, run_retail_episode, run_retail_episode_with_instruction,
    ConsistencyReport, EpisodeError, PerturbationConfig, RetailEpisode,
};
pub use strategy::{
    generate_candidate_strategies, score_and_select_strategy, resolve_strategy_targets,
    SelectionOutcome, Strategy, StrategyKind,
};

use serde::{Deserialize, Serialize};

/// Behavioral style parameters injected into agent personas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub discount_sensitivity: f64,
    pub loss_aversion: f64,
    pub brand_loyalty: f64,
    #[serde(default)]
    pub traits: Vec<String>,
}

impl Default for StyleParams {
    fn default() -> Self {
        StyleParams {
            discount_sensitivity: 0.5,
            loss_aversion: 0.5,
            brand_loyalty: 0.5,
            traits: Vec::new(),
        }
    }
}

impl StyleParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.discount_sensitivity < 0.0 {
            return Err("discount_sensitivity below zero".into());
        }
        if self.loss_aversion < 0.0 {
            return Err("loss_aversion below zero".into());
        }
        if !(0.0..=1.0).contains(&self.brand_loyalty) {
            return Err("brand_loyalty outside [0,1]".into());
        }
        Ok(())
    }
}
