//! Deterministic mock agents: planted-rule consumers for oracle runs,
//! role-playing wholesale agents, a mean-field linear responder, and
//! strategy scorers. All of them read the machine sidecar, never prose.

use super::{BackendError, ChatRole, Message, RetailDecision};
use crate::data::{planted_quantity, planted_utility, sample_normal, PlantedWorld};
use crate::money::Money;
use crate::prompt::{find_sidecar, Sidecar, SidecarTask};
use crate::seed;
use crate::wholesale::find_wholesale_sidecar;

#[derive(Debug, Clone)]
pub struct MockBackend {
    pub name: String,
    pub behavior: MockBehavior,
}

#[derive(Debug, Clone)]
pub enum MockBehavior {
    /// Always returns the same text.
    Canned(String),
    /// Returns the last user message verbatim.
    Echo,
    /// Replays the planted decision rules of a synthetic world.
    Planted(PlantedWorld),
    /// Quantity responds linearly to the embedded mean-field mean.
    MeanFieldLinear { base: f64, slope: f64 },
    /// Dealer/service/manufacturer role player for dialogue runs.
    /// `proposal` is an optional expression emitted in the final turn.
    WholesaleRole { proposal: Option<String> },
    /// Scores candidate strategies by a fixed rule.
    StrategyScorer(ScoreRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreRule {
    /// Score = minus the displayed price of the strategy's target product.
    NegExpectedPrice,
}

fn last_user_text(messages: &[Message]) -> Result<&str, BackendError> {
    messages
        .iter()
        .rev()
        .find(|(role, _)| *role == ChatRole::User)
        .map(|(_, text)| text.as_str())
        .ok_or_else(|| BackendError::Mock("no user message".into()))
}

pub(super) fn respond(mock: &MockBackend, messages: &[Message]) -> Result<String, BackendError> {
    match &mock.behavior {
        MockBehavior::Canned(text) => Ok(text.clone()),
        MockBehavior::Echo => Ok(last_user_text(messages)?.to_string()),
        MockBehavior::Planted(world) => planted_respond(world, messages),
        MockBehavior::MeanFieldLinear { base, slope } => {
            meanfield_linear_respond(*base, *slope, messages)
        }
        MockBehavior::WholesaleRole { proposal } => {
            wholesale_role_respond(proposal.as_deref(), messages)
        }
        MockBehavior::StrategyScorer(rule) => score_strategies(*rule, messages),
    }
}

fn sidecar_of(messages: &[Message]) -> Result<Sidecar, BackendError> {
    find_sidecar(last_user_text(messages)?)
        .ok_or_else(|| BackendError::Mock("prompt carries no sidecar".into()))
}

/// Permutation-invariant fingerprint of the displayed candidate table.
/// Price perturbations change it; shuffling does not.
fn candidate_content_hash(sidecar: &Sidecar) -> u64 {
    let mut rows: Vec<String> = sidecar
        .candidates
        .iter()
        .map(|c| serde_json::to_string(c).expect("candidate serializes"))
        .collect();
    rows.sort();
    seed::hash_str(&rows.join("\n"))
}

fn planted_respond(world: &PlantedWorld, messages: &[Message]) -> Result<String, BackendError> {
    let sidecar = sidecar_of(messages)?;
    let params = world
        .customers
        .get(&sidecar.customer_id)
        .ok_or_else(|| BackendError::Mock(format!("unknown customer {}", sidecar.customer_id)))?;

    match sidecar.task {
        SidecarTask::RetailDecision => {
            // Argmax of planted utility over the candidate table; ties break
            // toward the ascending product id, independent of display order.
            let mut best: Option<(f64, &crate::prompt::SidecarCandidate)> = None;
            for candidate in &sidecar.candidates {
                let price = Money::from_f64(candidate.price_after_discount)
                    .map_err(|e| BackendError::Mock(e.to_string()))?;
                let utility = planted_utility(
                    &params.utility,
                    &params.favorite_brand,
                    price,
                    candidate.review,
                    &candidate.brand,
                );
                let better = match &best {
                    None => true,
                    Some((u, c)) => {
                        utility > *u
                            || (utility == *u && candidate.product_id < c.product_id)
                    }
                };
                if better {
                    best = Some((utility, candidate));
                }
            }
            let (_, chosen) =
                best.ok_or_else(|| BackendError::Mock("empty candidate table".into()))?;

            let eps = if params.noise_sigma > 0.0 {
                let mut r = seed::rng(&[
                    params.seed,
                    sidecar.sample_seed,
                    candidate_content_hash(&sidecar),
                ]);
                sample_normal(&mut r) * params.noise_sigma
            } else {
                0.0
            };
            let price = Money::from_f64(chosen.price_after_discount)
                .map_err(|e| BackendError::Mock(e.to_string()))?;
            let quantity = planted_quantity(
                params.alpha,
                params.beta,
                params.gamma,
                price,
                chosen.discount,
                eps,
            );
            let decision = if quantity == 0 {
                RetailDecision::no_purchase()
            } else {
                RetailDecision::purchase(chosen.product_id.clone(), quantity)
            };
            Ok(format!(
                "Weighing prices, reviews and brands, my decision follows.\n{}",
                decision.render()
            ))
        }
        SidecarTask::ReportEmphasis => {
            // Planted utility-weight normalization over the six fixed groups.
            let weights = serde_json::json!({
                "price": params.utility.price.abs(),
                "discount": params.gamma.abs(),
                "brand": params.utility.brand.abs(),
                "reviews": params.utility.review.abs(),
                "history": 0.0,
                "trends": 0.0,
            });
            Ok(serde_json::json!({ "weights": weights }).to_string())
        }
        SidecarTask::ScoreStrategies => {
            // Score = planted utility of each strategy's target product.
            let strategies = sidecar
                .strategies
                .as_ref()
                .ok_or_else(|| BackendError::Mock("no strategies to score".into()))?;
            let mut scores = Vec::with_capacity(strategies.len());
            for strategy in strategies {
                let score = strategy
                    .target_product
                    .as_ref()
                    .and_then(|id| sidecar.candidates.iter().find(|c| &c.product_id == id))
                    .map(|c| {
                        planted_utility(
                            &params.utility,
                            &params.favorite_brand,
                            Money::from_f64(c.price_after_discount).unwrap_or(Money::ZERO),
                            c.review,
                            &c.brand,
                        )
                    })
                    .unwrap_or(-1e30);
                scores.push(score);
            }
            Ok(serde_json::json!({ "scores": scores }).to_string())
        }
    }
}

fn meanfield_linear_respond(
    base: f64,
    slope: f64,
    messages: &[Message],
) -> Result<String, BackendError> {
    let sidecar = sidecar_of(messages)?;
    let mean = sidecar
        .meanfield
        .as_ref()
        .and_then(|m| m.get(&sidecar.category))
        .copied()
        .unwrap_or(0.0);
    let quantity = (base + slope * mean).round().max(0.0) as u32;
    // Cheapest candidate, ties toward ascending id.
    let chosen = sidecar
        .candidates
        .iter()
        .min_by(|a, b| {
            a.price_after_discount
                .total_cmp(&b.price_after_discount)
                .then_with(|| a.product_id.cmp(&b.product_id))
        })
        .ok_or_else(|| BackendError::Mock("empty candidate table".into()))?;
    let decision = if quantity == 0 {
        RetailDecision::no_purchase()
    } else {
        RetailDecision::purchase(chosen.product_id.clone(), quantity)
    };
    Ok(decision.render())
}

fn score_strategies(rule: ScoreRule, messages: &[Message]) -> Result<String, BackendError> {
    let sidecar = sidecar_of(messages)?;
    let Some(strategies) = sidecar.strategies.as_ref() else {
        // A scoring specialist asked for anything else declines politely;
        // the caller records an invalid episode instead of aborting.
        return Ok("I only score strategies.".to_string());
    };
    let scores: Vec<f64> = strategies
        .iter()
        .map(|s| {
            let price = s
                .target_product
                .as_ref()
                .and_then(|id| sidecar.candidates.iter().find(|c| &c.product_id == id))
                .map(|c| c.price_after_discount);
            match (rule, price) {
                (ScoreRule::NegExpectedPrice, Some(p)) => -p,
                (ScoreRule::NegExpectedPrice, None) => -1e30,
            }
        })
        .collect();
    Ok(serde_json::json!({ "scores": scores }).to_string())
}

/// Role-playing responder for wholesale dialogues. The dialogue engine
/// labels its system message with `[role]`, `[round]` and `[final]` lines;
/// the background carries a wholesale sidecar with the candidate table.
fn wholesale_role_respond(
    proposal: Option<&str>,
    messages: &[Message],
) -> Result<String, BackendError> {
    let system = messages
        .iter()
        .find(|(role, _)| *role == ChatRole::System)
        .map(|(_, text)| text.as_str())
        .unwrap_or_default();
    let tag = |name: &str| -> Option<String> {
        system.lines().find_map(|l| {
            l.strip_prefix(&format!("[{name}] "))
                .map(str::to_string)
        })
    };
    let role = tag("role").unwrap_or_else(|| "dealer".to_string());
    let round = tag("round").unwrap_or_else(|| "?".to_string());
    let is_final = tag("final").as_deref() == Some("true");

    if !is_final {
        let body = match role.as_str() {
            "dealer" => {
                "competitive context review: rival pricing is stable, historical sell-through \
                 is healthy, and the objective is margin-safe volume"
            }
            "service" => {
                "addressing the dealer's points: current promotions can be extended for bulk \
                 orders and return handling stays unchanged"
            }
            _ => {
                "production constraints: line capacity is open this cycle, supply of inputs is \
                 secured, and partnership terms hold"
            }
        };
        return Ok(format!("As the {role} (round {round}): {body}."));
    }

    let user = last_user_text(messages)?;
    let mut out =
        format!("As the dealer (round {round}), synthesizing the discussion into a final order.");
    // A decision block is only possible when the background carried a
    // candidate table; refinement dialogues may omit it.
    if let Some(sidecar) = find_wholesale_sidecar(user) {
        let chosen = sidecar
            .candidates
            .iter()
            .min_by(|a, b| {
                a.price
                    .cmp(&b.price)
                    .then_with(|| a.product_id.cmp(&b.product_id))
            })
            .ok_or_else(|| BackendError::Mock("wholesale sidecar has no candidates".into()))?;
        let decision = serde_json::json!({
            "product_id": chosen.product_id,
            "quantity": sidecar.target_volume,
        });
        out.push('\n');
        out.push_str(&decision.to_string());
    }
    if let Some(expr) = proposal {
        out.push('\n');
        out.push_str(&serde_json::json!({ "expression": expr }).to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{chat, Backend};
    use crate::data::{PlantedCustomer, UtilityWeights};
    use crate::prompt::{SidecarCandidate, SidecarStrategy};

    fn world(noise_sigma: f64) -> PlantedWorld {
        let mut w = PlantedWorld::default();
        w.customers.insert(
            "c1".into(),
            PlantedCustomer {
                alpha: 10.0,
                beta: 2.0,
                gamma: 0.0,
                noise_sigma,
                utility: UtilityWeights {
                    price: -1.0,
                    review: 0.0,
                    brand: 0.0,
                },
                favorite_brand: "none".into(),
                seed: 42,
            },
        );
        w
    }

    fn retail_sidecar(prices: &[(&str, f64)], sample_seed: u64) -> Sidecar {
        Sidecar {
            task: SidecarTask::RetailDecision,
            customer_id: "c1".into(),
            category: "Cat".into(),
            sample_seed,
            candidates: prices
                .iter()
                .map(|(id, p)| SidecarCandidate {
                    product_id: id.to_string(),
                    price_after_discount: *p,
                    discount: 0.0,
                    review: 0.0,
                    brand: "b".into(),
                })
                .collect(),
            meanfield: None,
            strategies: None,
        }
    }

    fn user_message(sidecar: &Sidecar) -> Vec<Message> {
        vec![(ChatRole::User, format!("prompt\n{}", sidecar.render()))]
    }

    #[test]
    fn picks_cheapest_under_pure_price_utility() {
        // Prices low enough that the planted rule still buys (q >= 1).
        let backend = Backend::mock("m", MockBehavior::Planted(world(0.0)));
        let sidecar = retail_sidecar(&[("exp", 4.5), ("cheap", 4.0)], 0);
        let text = chat(&backend, &user_message(&sidecar)).unwrap();
        assert!(text.contains("\"product_id\":\"cheap\""), "{text}");
    }

    #[test]
    fn quantity_follows_planted_rule() {
        // alpha=10, beta=2, price=3, gamma=0 -> quantity 4.
        let backend = Backend::mock("m", MockBehavior::Planted(world(0.0)));
        let sidecar = retail_sidecar(&[("p", 3.0)], 0);
        let text = chat(&backend, &user_message(&sidecar)).unwrap();
        assert!(text.contains("\"quantity\":4"), "{text}");
    }

    #[test]
    fn chosen_product_is_permutation_invariant() {
        let backend = Backend::mock("m", MockBehavior::Planted(world(0.0)));
        let a = retail_sidecar(&[("x", 4.0), ("y", 6.0), ("z", 5.0)], 0);
        let b = retail_sidecar(&[("z", 5.0), ("y", 6.0), ("x", 4.0)], 0);
        let ta = chat(&backend, &user_message(&a)).unwrap();
        let tb = chat(&backend, &user_message(&b)).unwrap();
        let pick = |t: &str| {
            t.lines()
                .last()
                .unwrap()
                .to_string()
        };
        assert_eq!(pick(&ta), pick(&tb));
    }

    #[test]
    fn identical_calls_with_identical_seeds_are_identical() {
        let backend = Backend::mock("m", MockBehavior::Planted(world(0.7)));
        let sidecar = retail_sidecar(&[("p", 3.0)], 9);
        let t1 = chat(&backend, &user_message(&sidecar)).unwrap();
        let t2 = chat(&backend, &user_message(&sidecar)).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn noise_varies_with_sample_seed_but_not_shuffle() {
        let backend = Backend::mock("m", MockBehavior::Planted(world(2.0)));
        let s1 = retail_sidecar(&[("p", 3.0), ("q", 9.0)], 1);
        let mut s1_shuffled = retail_sidecar(&[("q", 9.0)], 1);
        s1_shuffled.candidates.insert(
            0,
            SidecarCandidate {
                product_id: "p".into(),
                price_after_discount: 3.0,
                discount: 0.0,
                review: 0.0,
                brand: "b".into(),
            },
        );
        // Same rows, different order: identical decision text.
        let t1 = chat(&backend, &user_message(&s1)).unwrap();
        let t1b = chat(&backend, &user_message(&s1_shuffled)).unwrap();
        assert_eq!(t1, t1b);

        // Different sample seed: quantity may differ (and does for this seed pair).
        let s2 = retail_sidecar(&[("p", 3.0), ("q", 9.0)], 2);
        let t2 = chat(&backend, &user_message(&s2)).unwrap();
        assert_ne!(t1, t2);
    }

    #[test]
    fn emphasis_report_is_planted_normalization() {
        let backend = Backend::mock("m", MockBehavior::Planted(world(0.0)));
        let mut sidecar = retail_sidecar(&[("p", 3.0)], 0);
        sidecar.task = SidecarTask::ReportEmphasis;
        let text = chat(&backend, &user_message(&sidecar)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["weights"]["price"], 1.0);
        assert_eq!(v["weights"]["reviews"], 0.0);
    }

    #[test]
    fn strategy_scorer_prefers_cheapest_target() {
        let backend = Backend::mock("m", MockBehavior::StrategyScorer(ScoreRule::NegExpectedPrice));
        let mut sidecar = retail_sidecar(&[("a", 4.0), ("b", 2.0)], 0);
        sidecar.task = SidecarTask::ScoreStrategies;
        sidecar.strategies = Some(vec![
            SidecarStrategy {
                kind: "repeat-last-purchase".into(),
                target_product: Some("a".into()),
                instruction: "repeat".into(),
            },
            SidecarStrategy {
                kind: "cheapest-candidate".into(),
                target_product: Some("b".into()),
                instruction: "cheapest".into(),
            },
        ]);
        let text = chat(&backend, &user_message(&sidecar)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let scores = v["scores"].as_array().unwrap();
        assert!(scores[1].as_f64().unwrap() > scores[0].as_f64().unwrap());
    }
}
