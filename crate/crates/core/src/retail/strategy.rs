//! Template candidate strategies and agent-scored selection.
//!
//! The strategy set is a deterministic function of the profile summary and
//! history; the agent only scores. Ties break by list order and unparseable
//! scores fall back to a plain episode, flagged.

use super::episode::{
    run_retail_episode_with_instruction, EpisodeError, RetailEpisode,
};
use super::StyleParams;
use crate::backend::{chat, Backend, ChatRole, Message};
use crate::data::{CustomerRecord, TransactionRecord};
use crate::prompt::{ProfileSummary, RetailPrompt, SidecarStrategy, SidecarTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    RepeatLastPurchase,
    CheapestCandidate,
    HighestReview,
    BrandLoyal,
    DiscountChaser,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::RepeatLastPurchase => "repeat-last-purchase",
            StrategyKind::CheapestCandidate => "cheapest-candidate",
            StrategyKind::HighestReview => "highest-review",
            StrategyKind::BrandLoyal => "brand-loyal",
            StrategyKind::DiscountChaser => "discount-chaser",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub instruction: String,
}

/// Deterministic template strategies from (Z, history). Brand-loyal is
/// omitted when there is no history to anchor a top brand.
pub fn generate_candidate_strategies(
    z: &ProfileSummary,
    history: &[&TransactionRecord],
) -> Vec<Strategy> {
    let mut strategies = Vec::with_capacity(5);

    let last_product = history
        .iter()
        .max_by_key(|tx| tx.timestamp)
        .map(|tx| tx.product_id.clone());
    let repeat_instruction = match &last_product {
        Some(id) => format!("repeat the most recent purchase ({id}) if it is on offer"),
        None => "repeat the most recent purchase if one is on offer".to_string(),
    };
    strategies.push(Strategy {
        kind: StrategyKind::RepeatLastPurchase,
        instruction: repeat_instruction,
    });
    strategies.push(Strategy {
        kind: StrategyKind::CheapestCandidate,
        instruction: "pick the candidate with the lowest displayed price".to_string(),
    });
    strategies.push(Strategy {
        kind: StrategyKind::HighestReview,
        instruction: "pick the candidate with the best review rating".to_string(),
    });
    if !history.is_empty() {
        let top_brand = z
            .features
            .brand_affinities
            .iter()
            .max_by(|a, b| {
                a.1.partial_cmp(b.1)
                    .expect("finite shares")
                    .then_with(|| b.0.cmp(a.0))
            })
            .map(|(brand, _)| brand.clone())
            .unwrap_or_default();
        strategies.push(Strategy {
            kind: StrategyKind::BrandLoyal,
            instruction: format!("stay loyal to the usual brand ({top_brand})"),
        });
    }
    strategies.push(Strategy {
        kind: StrategyKind::DiscountChaser,
        instruction: "pick the candidate with the deepest discount".to_string(),
    });
    strategies
}

/// Resolve each strategy's implied target against the displayed candidate
/// table, for the scoring sidecar.
pub fn resolve_strategy_targets(
    strategies: &[Strategy],
    prompt: &RetailPrompt,
    history: &[&TransactionRecord],
    top_brand: Option<&str>,
) -> Vec<SidecarStrategy> {
    let rows = &prompt.sidecar.candidates;
    let min_by = |key: &dyn Fn(&crate::prompt::SidecarCandidate) -> f64| {
        rows.iter()
            .min_by(|a, b| {
                key(a)
                    .total_cmp(&key(b))
                    .then_with(|| a.product_id.cmp(&b.product_id))
            })
            .map(|c| c.product_id.clone())
    };
    strategies
        .iter()
        .map(|s| {
            let target = match s.kind {
                StrategyKind::RepeatLastPurchase => history
                    .iter()
                    .max_by_key(|tx| tx.timestamp)
                    .map(|tx| tx.product_id.clone())
                    .filter(|id| rows.iter().any(|c| &c.product_id == id)),
                StrategyKind::CheapestCandidate => min_by(&|c| c.price_after_discount),
                StrategyKind::HighestReview => min_by(&|c| -c.review),
                StrategyKind::BrandLoyal => top_brand.and_then(|brand| {
                    rows.iter()
                        .filter(|c| c.brand == brand)
                        .min_by(|a, b| {
                            a.price_after_discount
                                .total_cmp(&b.price_after_discount)
                                .then_with(|| a.product_id.cmp(&b.product_id))
                        })
                        .map(|c| c.product_id.clone())
                }),
                StrategyKind::DiscountChaser => min_by(&|c| -c.discount),
            };
            SidecarStrategy {
                kind: s.kind.as_str().to_string(),
                target_product: target,
                instruction: s.instruction.clone(),
            }
        })
        .collect()
}

#[derive(Debug)]
pub struct SelectionOutcome {
    pub chosen_index: usize,
    pub chosen: Strategy,
    pub scores: Option<Vec<f64>>,
    pub episode: RetailEpisode,
    /// True when score parsing failed and the plain episode path ran.
    pub fallback: bool,
}

fn parse_scores(text: &str, expected: usize) -> Option<Vec<f64>> {
    for line in text.lines() {
        let trimmed = line.trim();
        if !trimmed.starts_with('{') {
            continue;
        }
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(trimmed) {
            if let Some(arr) = value.get("scores").and_then(|s| s.as_array()) {
                let scores: Vec<f64> = arr.iter().filter_map(|v| v.as_f64()).collect();
                if scores.len() == expected {
                    return Some(scores);
                }
            }
        }
    }
    None
}

/// One scoring call over all strategies; the highest score wins (ties to
/// the earlier strategy), and the decision is produced under the winner.
pub fn score_and_select_strategy(
    strategies: &[Strategy],
    z: &ProfileSummary,
    prompt: &RetailPrompt,
    customer: &CustomerRecord,
    style: &StyleParams,
    history: &[&TransactionRecord],
    backend: &Backend,
) -> Result<SelectionOutcome, EpisodeError> {
    assert!(!strategies.is_empty(), "strategies must be non-empty");
    let top_brand = z
        .features
        .brand_affinities
        .iter()
        .max_by(|a, b| {
            a.1.partial_cmp(b.1)
                .expect("finite shares")
                .then_with(|| b.0.cmp(a.0))
        })
        .map(|(brand, _)| brand.clone());

    let resolved = resolve_strategy_targets(strategies, prompt, history, top_brand.as_deref());
    let mut sidecar = prompt.sidecar.clone();
    sidecar.task = SidecarTask::ScoreStrategies;
    sidecar.strategies = Some(resolved);

    let mut listing = String::from("Candidate strategies:\n");
    for (i, s) in strategies.iter().enumerate() {
        listing.push_str(&format!("{}. [{}] {}\n", i + 1, s.kind.as_str(), s.instruction));
    }
    listing.push_str(
        "Score each strategy for this customer and reply with one JSON line \
         {\"scores\": [s1, s2, ...]}.\n",
    );
    let text = format!(
        "{}\n{}{}",
        prompt
            .rendered_text
            .replace(&prompt.sidecar.render(), ""),
        listing,
        sidecar.render()
    );
    let messages: Vec<Message> = vec![(ChatRole::User, text)];

    let scores = chat(backend, &messages)
        .ok()
        .and_then(|response| parse_scores(&response, strategies.len()));

    match scores {
        Some(scores) => {
            let mut chosen_index = 0;
            for (i, s) in scores.iter().enumerate() {
                if *s > scores[chosen_index] {
                    chosen_index = i;
                }
            }
            let chosen = strategies[chosen_index].clone();
            let episode = run_retail_episode_with_instruction(
                customer,
                prompt,
                style,
                backend,
                Some(&chosen.instruction),
            )?;
            Ok(SelectionOutcome {
                chosen_index,
                chosen,
                scores: Some(scores),
                episode,
                fallback: false,
            })
        }
        None => {
            let mut episode =
                run_retail_episode_with_instruction(customer, prompt, style, backend, None)?;
            episode.strategy_fallback = true;
            Ok(SelectionOutcome {
                chosen_index: 0,
                chosen: strategies[0].clone(),
                scores: None,
                episode,
                fallback: true,
            })
        }
    }
}
