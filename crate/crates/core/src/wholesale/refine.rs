//! Dialogue-driven refinement of discovered purchasing formulas.
//!
//! The incumbent expression and its errors are injected into the dialogue
//! background; any counter-proposal found in the final dealer turn is
//! evaluated and adopted only when it strictly improves the penalized
//! score. The operation never degrades the incumbent.

use super::dialogue::{run_dialogue, DialogueError, RoleTemplates};
use super::symbolic::{evaluate_rule, parse_expression, RuleDataset, RuleFit};
use crate::backend::ModelPool;

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub fit: RuleFit,
    pub accepted: bool,
    /// Set when the final turn had no usable proposal.
    pub flagged: bool,
    pub note: String,
}

/// Extract a `{"expression": "..."}` line from the final dealer turn.
fn proposal_in(text: &str) -> Option<String> {
    for line in text.lines() {
        let trimmed = line.trim();
        if !trimmed.starts_with('{') {
            continue;
        }
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(trimmed) {
            if let Some(expr) = value.get("expression").and_then(|v| v.as_str()) {
                return Some(expr.to_string());
            }
        }
    }
    None
}

pub fn refine_rule_via_dialogue(
    incumbent: &RuleFit,
    background: &str,
    n_rounds: usize,
    pool: &ModelPool,
    templates: &RoleTemplates,
    dataset: &RuleDataset,
) -> Result<RefineOutcome, DialogueError> {
    let enriched = format!(
        "{background}\n\nIncumbent purchasing formula: {expr}\n\
         Incumbent rmse: {rmse}\nIncumbent complexity: {complexity} nodes\n\
         If the group finds a better formula, the final synthesis should \
         include one JSON line {{\"expression\": \"...\"}}.",
        expr = incumbent.expression,
        rmse = incumbent.rmse,
        complexity = incumbent.complexity,
    );
    let state = run_dialogue(&enriched, n_rounds, pool, templates)?;
    let final_turn = &state.history.last().expect("dialogue ran").1;

    let Some(raw) = proposal_in(final_turn) else {
        return Ok(RefineOutcome {
            fit: incumbent.clone(),
            accepted: false,
            flagged: true,
            note: "no counter-proposal in final turn".to_string(),
        });
    };
    let Ok(expression) = parse_expression(&raw) else {
        return Ok(RefineOutcome {
            fit: incumbent.clone(),
            accepted: false,
            flagged: true,
            note: format!("unparseable counter-proposal {raw:?}"),
        });
    };
    let Ok((rmse, _mae)) = evaluate_rule(&expression, dataset) else {
        return Ok(RefineOutcome {
            fit: incumbent.clone(),
            accepted: false,
            flagged: true,
            note: "counter-proposal failed evaluation".to_string(),
        });
    };
    let complexity = expression.node_count();
    let challenger = RuleFit {
        expression,
        rmse,
        complexity,
        dataset_id: dataset.id.clone(),
    };
    if challenger.penalized_score() < incumbent.penalized_score() {
        Ok(RefineOutcome {
            note: format!(
                "adopted {} (score {:.6} < {:.6})",
                challenger.expression,
                challenger.penalized_score(),
                incumbent.penalized_score()
            ),
            fit: challenger,
            accepted: true,
            flagged: false,
        })
    } else {
        Ok(RefineOutcome {
            fit: incumbent.clone(),
            accepted: false,
            flagged: false,
            note: format!(
                "kept incumbent (challenger score {:.6} >= {:.6})",
                challenger.penalized_score(),
                incumbent.penalized_score()
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Backend, MockBehavior, ModelPool};
    use crate::wholesale::symbolic::{discover_rule, Expr};

    fn dataset() -> RuleDataset {
        let rows: Vec<[f64; 5]> = (0..50)
            .map(|i| [1.0 + i as f64 * 0.1, 0.0, 0.0, 0.0, 0.0])
            .collect();
        let targets = rows.iter().map(|r| 10.0 - 2.0 * r[0]).collect();
        RuleDataset::new(rows, targets, "planted")
    }

    fn incumbent_constant() -> RuleFit {
        let ds = dataset();
        // A deliberately weak incumbent: the constant mean.
        discover_rule(&ds, 1, 1, 6).unwrap()
    }

    fn pool_with_proposal(p: Option<&str>) -> ModelPool {
        ModelPool::single(Backend::mock(
            "roles",
            MockBehavior::WholesaleRole {
                proposal: p.map(str::to_string),
            },
        ))
    }

    #[test]
    fn adopts_exact_planted_rule_over_weak_incumbent() {
        let ds = dataset();
        let incumbent = incumbent_constant();
        let outcome = refine_rule_via_dialogue(
            &incumbent,
            "replenishment planning",
            4,
            &pool_with_proposal(Some("10 - 2 * price")),
            &RoleTemplates::default(),
            &ds,
        )
        .unwrap();
        assert!(outcome.accepted);
        assert!(outcome.fit.rmse < 1e-9);
        assert!(outcome.fit.penalized_score() <= incumbent.penalized_score());
    }

    #[test]
    fn keeps_incumbent_against_worse_proposal() {
        let ds = dataset();
        let incumbent = RuleFit {
            expression: Expr::Sub(
                Box::new(Expr::Const(10.0)),
                Box::new(Expr::Mul(
                    Box::new(Expr::Const(2.0)),
                    Box::new(Expr::Feature(0)),
                )),
            ),
            rmse: 0.0,
            complexity: 5,
            dataset_id: "planted".into(),
        };
        let outcome = refine_rule_via_dialogue(
            &incumbent,
            "bg",
            4,
            &pool_with_proposal(Some("3 + price")),
            &RoleTemplates::default(),
            &ds,
        )
        .unwrap();
        assert!(!outcome.accepted);
        assert_eq!(outcome.fit.expression.to_string(), "10 - 2 * price");
    }

    #[test]
    fn no_proposal_keeps_incumbent_with_flag() {
        let ds = dataset();
        let incumbent = incumbent_constant();
        let outcome = refine_rule_via_dialogue(
            &incumbent,
            "bg",
            4,
            &pool_with_proposal(None),
            &RoleTemplates::default(),
            &ds,
        )
        .unwrap();
        assert!(!outcome.accepted);
        assert!(outcome.flagged);
        assert_eq!(
            outcome.fit.expression.to_string(),
            incumbent.expression.to_string()
        );
    }

    #[test]
    fn unparseable_proposal_keeps_incumbent_with_flag() {
        let ds = dataset();
        let incumbent = incumbent_constant();
        let outcome = refine_rule_via_dialogue(
            &incumbent,
            "bg",
            4,
            &pool_with_proposal(Some("price %% trend ((")),
            &RoleTemplates::default(),
            &ds,
        )
        .unwrap();
        assert!(!outcome.accepted);
        assert!(outcome.flagged);
    }

    #[test]
    fn never_degrades_penalized_score_over_scripted_trials() {
        let ds = dataset();
        let incumbent = incumbent_constant();
        let proposals = [
            Some("10 - 2 * price"),
            Some("3 + price"),
            Some("log(price)"),
            Some("price * price - trend"),
            Some("garbage ++"),
            None,
            Some("0 - price"),
            Some("10 - 2 * price + 0 * trend"),
            Some("review / discount"),
            Some("price"),
        ];
        for trial in 0..50 {
            let p = proposals[trial % proposals.len()];
            let outcome = refine_rule_via_dialogue(
                &incumbent,
                "bg",
                4,
                &pool_with_proposal(p),
                &RoleTemplates::default(),
                &ds,
            )
            .unwrap();
            assert!(
                outcome.fit.penalized_score() <= incumbent.penalized_score() + 1e-12,
                "trial {trial} degraded"
            );
        }
    }
}
