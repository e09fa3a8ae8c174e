//! Profile summarization: the Z construction over pre-cutoff history.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;

use super::{ProfileFeatures, ProfileSummary, PromptError};
use crate::backend::{chat, Backend, ChatRole};
use crate::data::{Catalog, CustomerRecord, TransactionRecord};

/// Build a customer profile from purchases strictly before `cutoff`.
///
/// The feature block is always the deterministic template computation;
/// a backend, when given, only rewrites the narrative text.
pub fn summarize_profile(
    customer: &CustomerRecord,
    history: &[&TransactionRecord],
    catalog: &Catalog,
    cutoff: NaiveDateTime,
    backend: Option<&Backend>,
) -> Result<ProfileSummary, PromptError> {
    let past: Vec<&TransactionRecord> = history
        .iter()
        .filter(|tx| tx.customer_id == customer.customer_id && tx.timestamp < cutoff)
        .copied()
        .collect();

    if past.is_empty() {
        return Ok(ProfileSummary {
            customer_id: customer.customer_id.clone(),
            text: format!(
                "Customer {} has no purchase history on record; treat as a new customer.",
                customer.customer_id
            ),
            features: ProfileFeatures {
                communication_style: "new customer, no established patterns".to_string(),
                ..ProfileFeatures::default()
            },
        });
    }

    let mut total_qty: u64 = 0;
    let mut discounted_qty: u64 = 0;
    let mut by_category: BTreeMap<String, u64> = BTreeMap::new();
    let mut by_brand: BTreeMap<String, u64> = BTreeMap::new();
    for tx in &past {
        total_qty += tx.quantity as u64;
        if tx.discount > 0.0 {
            discounted_qty += tx.quantity as u64;
        }
        let (category, brand) = match catalog.get(&tx.product_id) {
            Some(p) => (
                p.first_level_category().to_string(),
                p.brand().to_string(),
            ),
            None => ("unknown".to_string(), tx.product_id.clone()),
        };
        *by_category.entry(category).or_insert(0) += tx.quantity as u64;
        *by_brand.entry(brand).or_insert(0) += tx.quantity as u64;
    }

    let share = |counts: &BTreeMap<String, u64>| -> BTreeMap<String, f64> {
        counts
            .iter()
            .map(|(k, v)| (k.clone(), *v as f64 / total_qty as f64))
            .collect()
    };
    let category_preferences = share(&by_category);
    let brand_affinities = share(&by_brand);
    let promotion_sensitivity = discounted_qty as f64 / total_qty as f64;

    let communication_style = if promotion_sensitivity > 0.5 {
        "deal-focused, responds to promotions".to_string()
    } else if category_preferences.len() > 3 {
        "exploratory, shops across categories".to_string()
    } else {
        "habitual, concise repeat buyer".to_string()
    };

    let top_category = category_preferences
        .iter()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then_with(|| b.0.cmp(a.0)))
        .map(|(k, v)| format!("{k} ({:.0}% of units)", v * 100.0))
        .unwrap_or_default();
    let top_brand = brand_affinities
        .iter()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then_with(|| b.0.cmp(a.0)))
        .map(|(k, _)| k.clone())
        .unwrap_or_default();

    let template_text = format!(
        "Customer {} has bought {} units across {} categories, led by {}. \
         {:.0}% of units were bought under a promotion. Preferred brand: {}. \
         Communication style: {}.",
        customer.customer_id,
        total_qty,
        category_preferences.len(),
        top_category,
        promotion_sensitivity * 100.0,
        top_brand,
        communication_style
    );

    let text = match backend {
        None => template_text,
        Some(b) => {
            let messages = vec![
                (
                    ChatRole::System,
                    "Rewrite the customer profile below as one short narrative paragraph."
                        .to_string(),
                ),
                (ChatRole::User, template_text.clone()),
            ];
            chat(b, &messages)?
        }
    };

    Ok(ProfileSummary {
        customer_id: customer.customer_id.clone(),
        text,
        features: ProfileFeatures {
            category_preferences,
            promotion_sensitivity,
            brand_affinities,
            communication_style,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockBehavior;
    use crate::data::{BuyerType, ProductRecord, TIMESTAMP_FORMAT};
    use crate::retail::StyleParams;

    fn ts(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).unwrap()
    }

    fn customer() -> CustomerRecord {
        CustomerRecord {
            customer_id: "c1".into(),
            income_bracket: "middle".into(),
            buyer_type: BuyerType::Retail,
            style_params: StyleParams::default(),
        }
    }

    fn tx(product: &str, qty: u32, discount: f64, when: &str) -> TransactionRecord {
        TransactionRecord {
            timestamp: ts(when),
            customer_id: "c1".into(),
            customer_type: BuyerType::Retail,
            product_id: product.into(),
            quantity: qty,
            unit_price: "3.00".parse().unwrap(),
            discount,
            channel: "online".into(),
            review_score: None,
        }
    }

    fn catalog() -> Catalog {
        let mut c = Catalog::new();
        for (id, cat) in [("p1", "A"), ("p2", "A"), ("p3", "B")] {
            c.insert(
                id.to_string(),
                ProductRecord {
                    product_id: id.to_string(),
                    category_path: vec![cat.to_string()],
                    base_price: "3.00".parse().unwrap(),
                    attributes: BTreeMap::new(),
                    image_embedding: None,
                    sales_series: Vec::new(),
                },
            );
        }
        c
    }

    #[test]
    fn pure_category_history_gives_full_share() {
        let txs = vec![
            tx("p1", 2, 0.0, "2024-01-02T08:00:00"),
            tx("p2", 3, 0.0, "2024-01-05T08:00:00"),
        ];
        let refs: Vec<&TransactionRecord> = txs.iter().collect();
        let z = summarize_profile(&customer(), &refs, &catalog(), ts("2024-02-01T00:00:00"), None)
            .unwrap();
        assert_eq!(z.features.category_preferences["A"], 1.0);
    }

    #[test]
    fn promotion_sensitivity_counts_quantities() {
        // 3 discounted units of 4 total.
        let txs = vec![
            tx("p1", 3, 0.2, "2024-01-02T08:00:00"),
            tx("p2", 1, 0.0, "2024-01-05T08:00:00"),
        ];
        let refs: Vec<&TransactionRecord> = txs.iter().collect();
        let z = summarize_profile(&customer(), &refs, &catalog(), ts("2024-02-01T00:00:00"), None)
            .unwrap();
        assert!((z.features.promotion_sensitivity - 0.75).abs() < 1e-12);
    }

    #[test]
    fn empty_history_is_a_new_customer_marker() {
        let z = summarize_profile(&customer(), &[], &catalog(), ts("2024-02-01T00:00:00"), None)
            .unwrap();
        assert!(z.text.contains("no purchase history"));
    }

    #[test]
    fn cutoff_excludes_later_purchases() {
        let txs = vec![
            tx("p1", 2, 0.0, "2024-01-02T08:00:00"),
            tx("p3", 9, 0.0, "2024-03-02T08:00:00"),
        ];
        let refs: Vec<&TransactionRecord> = txs.iter().collect();
        let z = summarize_profile(&customer(), &refs, &catalog(), ts("2024-02-01T00:00:00"), None)
            .unwrap();
        assert!(!z.features.category_preferences.contains_key("B"));
    }

    #[test]
    fn backend_rewrites_narrative_but_keeps_features() {
        let txs = vec![tx("p1", 2, 0.5, "2024-01-02T08:00:00")];
        let refs: Vec<&TransactionRecord> = txs.iter().collect();
        let backend = Backend::mock("m", MockBehavior::Canned("narrative".into()));
        let z = summarize_profile(
            &customer(),
            &refs,
            &catalog(),
            ts("2024-02-01T00:00:00"),
            Some(&backend),
        )
        .unwrap();
        assert_eq!(z.text, "narrative");
        assert!((z.features.promotion_sensitivity - 1.0).abs() < 1e-12);
    }
}
