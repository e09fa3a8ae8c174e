//! Episode execution and the multi-sample consistency diagnostic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::StyleParams;
use crate::backend::{
    chat, parse_retail, prompt_hash, Backend, BackendError, ChatRole, Message, ParseStatus,
    RetailDecision,
};
use crate::data::{sample_normal, CustomerRecord};
use crate::prompt::{render_persona, PromptError, RetailPrompt};
use crate::seed;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("backend failure for customer {customer}: {source}")]
    Backend {
        customer: String,
        prompt_hash: String,
        source: BackendError,
    },
    #[error("prompt rebuild failed: {0}")]
    Rebuild(#[from] PromptError),
    #[error("{failed} of {total} consistency samples failed")]
    TooManyFailures { failed: usize, total: usize },
    #[error("invalid perturbation config: {0}")]
    BadConfig(String),
}

/// Price-perturbation settings for the consistency diagnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationConfig {
    /// Relative price noise scale.
    pub sigma: f64,
    /// Sample count (>= 2).
    pub k: usize,
    pub seed: u64,
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        if self.sigma < 0.0 {
            return Err(EpisodeError::BadConfig("sigma below zero".into()));
        }
        if self.k < 2 {
            return Err(EpisodeError::BadConfig("k must be at least 2".into()));
        }
        Ok(())
    }
}

/// One executed retail decision episode. Parse failures mark the episode
/// invalid but are always recorded, never dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetailEpisode {
    pub customer_id: String,
    pub prompt_hash: String,
    pub backend_name: String,
    pub response_text: String,
    pub decision: Option<RetailDecision>,
    pub parse_status: Option<ParseStatus>,
    pub parse_error: Option<String>,
    pub valid: bool,
    #[serde(default)]
    pub samples: Vec<RetailDecision>,
    pub seed: u64,
    /// Set when a strategy-scoring call fell back to a plain episode.
    #[serde(default)]
    pub strategy_fallback: bool,
}

pub fn run_retail_episode(
    customer: &CustomerRecord,
    prompt: &RetailPrompt,
    style: &StyleParams,
    backend: &Backend,
) -> Result<RetailEpisode, EpisodeError> {
    run_retail_episode_with_instruction(customer, prompt, style, backend, None)
}

/// Episode with an optional extra persona instruction (used by the
/// strategy selector to apply the winning strategy).
pub fn run_retail_episode_with_instruction(
    customer: &CustomerRecord,
    prompt: &RetailPrompt,
    style: &StyleParams,
    backend: &Backend,
    instruction: Option<&str>,
) -> Result<RetailEpisode, EpisodeError> {
    let mut persona = render_persona(customer, style);
    if let Some(extra) = instruction {
        persona.push_str("\nStrategy for this decision: ");
        persona.push_str(extra);
    }
    let messages: Vec<Message> = vec![
        (ChatRole::System, persona),
        (ChatRole::User, prompt.rendered_text.clone()),
    ];
    let hash = prompt_hash(&messages);
    let response = chat(backend, &messages).map_err(|source| EpisodeError::Backend {
        customer: customer.customer_id.clone(),
        prompt_hash: hash.clone(),
        source,
    })?;

    let episode = match parse_retail(&response, &prompt.candidate_ids()) {
        Ok((decision, status)) => RetailEpisode {
            customer_id: customer.customer_id.clone(),
            prompt_hash: hash,
            backend_name: backend.name().to_string(),
            response_text: response,
            decision: Some(decision),
            parse_status: Some(status),
            parse_error: None,
            valid: true,
            samples: Vec::new(),
            seed: prompt.sidecar.sample_seed,
            strategy_fallback: false,
        },
        Err(err) => RetailEpisode {
            customer_id: customer.customer_id.clone(),
            prompt_hash: hash,
            backend_name: backend.name().to_string(),
            response_text: response,
            decision: None,
            parse_status: None,
            parse_error: Some(err.to_string()),
            valid: false,
            samples: Vec::new(),
            seed: prompt.sidecar.sample_seed,
            strategy_fallback: false,
        },
    };
    Ok(episode)
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    /// Empirical consistency loss: mean squared quantity difference
    /// between perturbed and unperturbed decisions.
    pub l_cons: f64,
    pub perturbed: Vec<RetailEpisode>,
    pub failed_samples: usize,
}

fn quantity_of(decision: &RetailDecision) -> f64 {
    decision.quantity as f64
}

/// Run K price-perturbed replays of a base episode and estimate the
/// consistency loss. `rebuild` must recreate the prompt with every
/// displayed candidate price scaled by the given factor while keeping
/// the same sample seed (historical records are never perturbed).
pub fn multi_sample_consistency<F>(
    customer: &CustomerRecord,
    style: &StyleParams,
    base: &RetailEpisode,
    cfg: &PerturbationConfig,
    backend: &Backend,
    rebuild: F,
) -> Result<ConsistencyReport, EpisodeError>
where
    F: Fn(f64) -> Result<RetailPrompt, PromptError>,
{
    cfg.validate()?;
    let Some(base_decision) = &base.decision else {
        return Err(EpisodeError::BadConfig(
            "base episode is invalid; cannot estimate consistency".into(),
        ));
    };
    let base_q = quantity_of(base_decision);

    let mut perturbed = Vec::with_capacity(cfg.k);
    let mut failed = 0usize;
    let mut sum_sq = 0.0;
    let mut used = 0usize;
    for k in 0..cfg.k {
        let eps = sample_normal(&mut seed::rng(&[cfg.seed, 0x636f6e73, k as u64])) * cfg.sigma;
        let factor = f64::max(1.0 + eps, 0.0);
        let prompt = rebuild(factor)?;
        match run_retail_episode(customer, &prompt, style, backend) {
            Ok(episode) => {
                if let Some(decision) = &episode.decision {
                    let dq = quantity_of(decision) - base_q;
                    sum_sq += dq * dq;
                    used += 1;
                } else {
                    failed += 1;
                }
                perturbed.push(episode);
            }
            Err(_) => failed += 1,
        }
    }
    if failed * 2 >= cfg.k {
        return Err(EpisodeError::TooManyFailures {
            failed,
            total: cfg.k,
        });
    }
    Ok(ConsistencyReport {
        l_cons: if used > 0 { sum_sq / used as f64 } else { 0.0 },
        perturbed,
        failed_samples: failed,
    })
}
