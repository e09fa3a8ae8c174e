//! Structured decision extraction from raw agent responses.
//!
//! Strict grammar: a single JSON object on its own line with keys
//! `buy` / `product_id` / `quantity`. A lenient keyword extractor runs only
//! when strict parsing finds nothing, and its use is flagged so metrics can
//! distinguish clean outputs from salvaged ones.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DialogueRole;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("no decision block found in response")]
    NoDecisionFound { raw: String },
    #[error("chosen candidate {id:?} is not in the candidate set")]
    UnknownCandidate { id: String, raw: String },
    #[error("invalid quantity {quantity} for a purchase decision")]
    InvalidQuantity { quantity: i64, raw: String },
    #[error("final dialogue turn was authored by {found:?}, expected dealer")]
    WrongFinalRole { found: String },
    #[error("dialogue history is empty")]
    EmptyHistory,
}

impl ParseError {
    /// The offending raw text, kept for audit.
    pub fn raw_text(&self) -> Option<&str> {
        match self {
            ParseError::NoDecisionFound { raw }
            | ParseError::UnknownCandidate { raw, .. }
            | ParseError::InvalidQuantity { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

/// Parsed single-agent retail decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetailDecision {
    pub buy: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product_id: Option<String>,
    pub quantity: u32,
}

impl RetailDecision {
    pub fn no_purchase() -> Self {
        RetailDecision {
            buy: false,
            product_id: None,
            quantity: 0,
        }
    }

    pub fn purchase(product_id: impl Into<String>, quantity: u32) -> Self {
        RetailDecision {
            buy: true,
            product_id: Some(product_id.into()),
            quantity,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.buy {
            if self.product_id.is_none() {
                return Err("buy=true requires a product id".into());
            }
            if self.quantity < 1 {
                return Err("buy=true requires quantity >= 1".into());
            }
        } else if self.quantity != 0 || self.product_id.is_some() {
            return Err("buy=false requires no product and quantity 0".into());
        }
        Ok(())
    }

    /// Canonical decision block, the exact inverse of strict parsing.
    pub fn render(&self) -> String {
        match (&self.product_id, self.buy) {
            (Some(id), true) => serde_json::json!({
                "buy": true,
                "product_id": id,
                "quantity": self.quantity,
            })
            .to_string(),
            _ => serde_json::json!({ "buy": false }).to_string(),
        }
    }
}

/// Parsed wholesale decision from the final dealer turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WholesaleDecision {
    pub product_id: String,
    pub quantity: u32,
}

impl WholesaleDecision {
    pub fn render(&self) -> String {
        serde_json::json!({
            "product_id": self.product_id,
            "quantity": self.quantity,
        })
        .to_string()
    }
}

/// Whether the strict grammar matched or the lenient extractor salvaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Strict,
    Fallback,
}

fn strict_retail_line(line: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let trimmed = line.trim();
    if !trimmed.starts_with('{') {
        return None;
    }
    let value: serde_json::Value = serde_json::from_str(trimmed).ok()?;
    let obj = value.as_object()?;
    let is_decision = obj.contains_key("buy")
        || (obj.contains_key("product_id") && obj.contains_key("quantity"));
    is_decision.then(|| obj.clone())
}

/// Extract the first well-formed retail decision block. A block without a
/// `buy` key but with both `product_id` and `quantity` implies a purchase
/// (the alignment-dataset output form).
pub fn parse_retail(
    response: &str,
    candidate_ids: &BTreeSet<String>,
) -> Result<(RetailDecision, ParseStatus), ParseError> {
    for line in response.lines() {
        let Some(obj) = strict_retail_line(line) else {
            continue;
        };
        let buy = obj.get("buy").and_then(|v| v.as_bool()).unwrap_or(true);
        if !buy {
            return Ok((RetailDecision::no_purchase(), ParseStatus::Strict));
        }
        let Some(id) = obj.get("product_id").and_then(|v| v.as_str()) else {
            continue;
        };
        let Some(quantity) = obj.get("quantity").and_then(|v| v.as_i64()) else {
            continue;
        };
        if !candidate_ids.contains(id) {
            return Err(ParseError::UnknownCandidate {
                id: id.to_string(),
                raw: response.to_string(),
            });
        }
        if quantity < 1 {
            return Err(ParseError::InvalidQuantity {
                quantity,
                raw: response.to_string(),
            });
        }
        return Ok((
            RetailDecision::purchase(id, quantity as u32),
            ParseStatus::Strict,
        ));
    }
    fallback_retail(response, candidate_ids)
}

fn word_match(text: &str, needle: &str) -> Option<usize> {
    let mut start = 0;
    while let Some(pos) = text[start..].find(needle) {
        let at = start + pos;
        let before_ok = at == 0
            || !text[..at]
                .chars()
                .next_back()
                .is_some_and(|c| c.is_alphanumeric());
        let after = at + needle.len();
        let after_ok = after >= text.len()
            || !text[after..]
                .chars()
                .next()
                .is_some_and(|c| c.is_alphanumeric() || c == '-');
        if before_ok && after_ok {
            return Some(at);
        }
        start = at + needle.len();
    }
    None
}

fn fallback_retail(
    response: &str,
    candidate_ids: &BTreeSet<String>,
) -> Result<(RetailDecision, ParseStatus), ParseError> {
    // Earliest candidate id mentioned as a standalone token.
    let mut found: Option<(usize, &str)> = None;
    for id in candidate_ids {
        if let Some(pos) = word_match(response, id) {
            let better = found.map(|(p, _)| pos < p).unwrap_or(true);
            if better {
                found = Some((pos, id));
            }
        }
    }

    let lower = response.to_lowercase();
    let refusal = ["not buy", "no purchase", "won't buy", "decline", "nothing"]
        .iter()
        .any(|kw| lower.contains(kw));

    let Some((pos, id)) = found else {
        if refusal {
            return Ok((RetailDecision::no_purchase(), ParseStatus::Fallback));
        }
        return Err(ParseError::NoDecisionFound {
            raw: response.to_string(),
        });
    };

    if refusal && lower.find("not buy").map(|p| p < pos).unwrap_or(false) {
        return Ok((RetailDecision::no_purchase(), ParseStatus::Fallback));
    }

    let quantity = extract_quantity(response, pos + id.len()).unwrap_or(1);
    if quantity < 1 {
        return Err(ParseError::InvalidQuantity {
            quantity: quantity as i64,
            raw: response.to_string(),
        });
    }
    Ok((
        RetailDecision::purchase(id, quantity),
        ParseStatus::Fallback,
    ))
}

/// Quantity near the mention: "quantity: N", "N units", else the first
/// integer after the end of the id mention (ids often contain digits).
fn extract_quantity(text: &str, after_pos: usize) -> Option<u32> {
    let qty_re = regex::Regex::new(r"(?i)quantity(?:\s+of)?\s*[:=]?\s*(\d+)").expect("regex");
    if let Some(cap) = qty_re.captures(text) {
        return cap[1].parse().ok();
    }
    let units_re = regex::Regex::new(r"(?i)(\d+)\s*units?").expect("regex");
    if let Some(cap) = units_re.captures(text) {
        return cap[1].parse().ok();
    }
    let after = &text[after_pos.min(text.len())..];
    let num_re = regex::Regex::new(r"\d+").expect("regex");
    let first = num_re.find(after);
    first.and_then(|m| m.as_str().parse().ok())
}

/// Parse the final dealer turn of a dialogue history into a wholesale
/// decision. Only the final turn is inspected; quantity must be >= 1.
pub fn parse_wholesale(
    history: &[(DialogueRole, String)],
) -> Result<(WholesaleDecision, ParseStatus), ParseError> {
    let Some((role, text)) = history.last() else {
        return Err(ParseError::EmptyHistory);
    };
    if *role != DialogueRole::Dealer {
        return Err(ParseError::WrongFinalRole {
            found: role.to_string(),
        });
    }
    for line in text.lines() {
        let trimmed = line.trim();
        if !trimmed.starts_with('{') {
            continue;
        }
        let Ok(value) = serde_json::from_str::<serde_json::Value>(trimmed) else {
            continue;
        };
        let Some(obj) = value.as_object() else {
            continue;
        };
        let (Some(id), Some(quantity)) = (
            obj.get("product_id").and_then(|v| v.as_str()),
            obj.get("quantity").and_then(|v| v.as_i64()),
        ) else {
            continue;
        };
        if quantity < 1 {
            return Err(ParseError::InvalidQuantity {
                quantity,
                raw: text.clone(),
            });
        }
        return Ok((
            WholesaleDecision {
                product_id: id.to_string(),
                quantity: quantity as u32,
            },
            ParseStatus::Strict,
        ));
    }
    // Lenient: "product_id P2 ... 120 units" style prose in the final turn.
    let id_re = regex::Regex::new(r"(?i)product[_\s]?id\W+([A-Za-z0-9_-]+)").expect("regex");
    if let Some(cap) = id_re.captures(text) {
        let id = cap[1].to_string();
        if let Some(q) = extract_quantity(text, cap.get(0).expect("match").end()) {
            if q >= 1 {
                return Ok((
                    WholesaleDecision {
                        product_id: id,
                        quantity: q,
                    },
                    ParseStatus::Fallback,
                ));
            }
        }
    }
    Err(ParseError::NoDecisionFound { raw: text.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(list: &[&str]) -> BTreeSet<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn strict_purchase_block() {
        let (d, status) = parse_retail(
            "{\"buy\": true, \"product_id\": \"P7\", \"quantity\": 3}",
            &ids(&["P7", "P8"]),
        )
        .unwrap();
        assert_eq!(d, RetailDecision::purchase("P7", 3));
        assert_eq!(status, ParseStatus::Strict);
    }

    #[test]
    fn strict_no_purchase_block() {
        let (d, _) = parse_retail("{\"buy\": false}", &ids(&["P7"])).unwrap();
        assert_eq!(d, RetailDecision::no_purchase());
    }

    #[test]
    fn unknown_candidate_carries_raw_text() {
        let err = parse_retail(
            "{\"buy\": true, \"product_id\": \"P9\", \"quantity\": 3}",
            &ids(&["P7"]),
        )
        .unwrap_err();
        match err {
            ParseError::UnknownCandidate { id, raw } => {
                assert_eq!(id, "P9");
                assert!(raw.contains("P9"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_quantity_is_surfaced() {
        let err = parse_retail(
            "{\"buy\": true, \"product_id\": \"P7\", \"quantity\": 0}",
            &ids(&["P7"]),
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::InvalidQuantity { quantity: 0, .. }));
    }

    #[test]
    fn render_round_trips_through_strict_parse() {
        let set = ids(&["A", "B"]);
        for d in [
            RetailDecision::purchase("A", 1),
            RetailDecision::purchase("B", 250),
            RetailDecision::no_purchase(),
        ] {
            let (parsed, status) = parse_retail(&d.render(), &set).unwrap();
            assert_eq!(parsed, d);
            assert_eq!(status, ParseStatus::Strict);
        }
    }

    /// Hand-labeled prose corpus for the lenient extractor.
    #[test]
    fn fallback_regression_corpus() {
        let set = ids(&["P7", "P2", "X-1"]);
        let cases: Vec<(&str, Result<RetailDecision, &str>)> = vec![
            ("After weighing the options, I would buy P7, quantity: 3, because it is cheapest.",
             Ok(RetailDecision::purchase("P7", 3))),
            ("I'll take P2 — 4 units should cover the month.",
             Ok(RetailDecision::purchase("P2", 4))),
            ("Definitely P7. Quantity of 2 feels right.",
             Ok(RetailDecision::purchase("P7", 2))),
            ("My choice is X-1 and I want 12 of them.",
             Ok(RetailDecision::purchase("X-1", 12))),
            ("Given the discount, P2 at quantity=5 is the best value.",
             Ok(RetailDecision::purchase("P2", 5))),
            ("The clear winner is P7.",
             Ok(RetailDecision::purchase("P7", 1))),
            ("I would not buy anything this month.",
             Ok(RetailDecision::no_purchase())),
            ("No purchase — prices are too high.",
             Ok(RetailDecision::no_purchase())),
            ("I considered P99 but it is not listed.",
             Err("no decision")),
            ("Thanks for the offer!",
             Err("no decision")),
            ("Choose P2. 7 units.",
             Ok(RetailDecision::purchase("P2", 7))),
            ("P7 looks solid. quantity: 9",
             Ok(RetailDecision::purchase("P7", 9))),
            ("Let's go with X-1, 3 units now and maybe more later.",
             Ok(RetailDecision::purchase("X-1", 3))),
            ("Between P2 and P7, P2 wins. 2 units.",
             Ok(RetailDecision::purchase("P2", 2))),
            ("quantity: 6 — and the product is P7.",
             Ok(RetailDecision::purchase("P7", 6))),
            ("I pick P2, one case (24 units).",
             Ok(RetailDecision::purchase("P2", 24))),
            ("Nothing appeals to me, so nothing it is.",
             Ok(RetailDecision::no_purchase())),
            ("P7P8 is not a valid token but P2 is mentioned, quantity: 8.",
             Ok(RetailDecision::purchase("P2", 8))),
            ("I will buy the one called X-1 (quantity 11).",
             Ok(RetailDecision::purchase("X-1", 11))),
            ("Order placed: P7, and P2 as backup, quantity: 5.",
             Ok(RetailDecision::purchase("P7", 5))),
        ];
        assert_eq!(cases.len(), 20);
        for (text, expected) in cases {
            let got = parse_retail(text, &set);
            match expected {
                Ok(d) => {
                    let (parsed, status) = got.unwrap_or_else(|e| panic!("{text:?}: {e}"));
                    assert_eq!(parsed, d, "{text:?}");
                    assert_eq!(status, ParseStatus::Fallback, "{text:?}");
                }
                Err(_) => {
                    assert!(
                        matches!(got, Err(ParseError::NoDecisionFound { .. })),
                        "{text:?} -> {got:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn wholesale_final_turn_only() {
        let history = vec![
            (DialogueRole::Background, "bg".to_string()),
            (
                DialogueRole::Dealer,
                "analysis {\"product_id\":\"P9\",\"quantity\":50}".to_string(),
            ),
            (DialogueRole::Service, "promos".to_string()),
            (DialogueRole::Manufacturer, "supply".to_string()),
            (DialogueRole::Dealer, "final synthesis without a block".to_string()),
        ];
        // Block in an earlier round does not count.
        assert!(matches!(
            parse_wholesale(&history),
            Err(ParseError::NoDecisionFound { .. })
        ));

        let mut ok = history.clone();
        ok.last_mut().unwrap().1 = "summary\n{\"product_id\":\"P2\",\"quantity\":120}".to_string();
        let (d, status) = parse_wholesale(&ok).unwrap();
        assert_eq!(d.product_id, "P2");
        assert_eq!(d.quantity, 120);
        assert_eq!(status, ParseStatus::Strict);

        let mut wrong_role = history;
        wrong_role.push((DialogueRole::Service, "late".to_string()));
        assert!(matches!(
            parse_wholesale(&wrong_role),
            Err(ParseError::WrongFinalRole { .. })
        ));
    }
}
