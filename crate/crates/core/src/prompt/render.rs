//! Retail prompt rendering: five fixed sections, seeded candidate
//! shuffling, and the machine sidecar.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use rand::Rng;

use super::{
    CandidateView, PromptError, RetailPrompt, Sidecar, SidecarCandidate, SidecarTask,
};
use crate::data::{Catalog, CustomerRecord, TransactionRecord};
use crate::meanfield::MeanFieldState;
use crate::money::{Money, Month};
use crate::retail::StyleParams;
use crate::seed;

/// Fixed section headers, in rendering order. Tests grep these bit-exactly.
pub const SECTION_HEADERS: [&str; 5] = [
    "## Candidates & Pricing",
    "## Purchase History",
    "## Market Trends",
    "## Reviews",
    "## Promotions",
];

/// A candidate as offered: the product plus the unit price it is listed at.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRef {
    pub product_id: String,
    pub unit_price: Money,
}

/// Everything the renderer may look at. All reads are restricted to
/// timestamps strictly before `cutoff` so prompts can never leak the
/// decision they are asking for.
pub struct PromptInputs<'a> {
    pub customer: &'a CustomerRecord,
    pub history: &'a [TransactionRecord],
    pub market: &'a [TransactionRecord],
    pub catalog: &'a Catalog,
    pub cutoff: NaiveDateTime,
    pub trends_window: u32,
    pub meanfield: Option<&'a MeanFieldState>,
    pub sample_seed: u64,
}

/// Seeded Fisher-Yates shuffle; returns the permuted list and the
/// permutation (`permutation[new_idx] = old_idx`).
pub fn shuffle_candidates<T: Clone>(items: &[T], shuffle_seed: u64) -> (Vec<T>, Vec<usize>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = seed::rng(&[0x73687566, shuffle_seed]);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let permuted = order.iter().map(|&i| items[i].clone()).collect();
    (permuted, order)
}

/// Render style parameters as the persona preamble: a narrative paragraph
/// plus one machine-readable tag line. The candidate sidecar never carries
/// style parameters.
pub fn render_persona(customer: &CustomerRecord, style: &StyleParams) -> String {
    let traits = if style.traits.is_empty() {
        "no stated traits".to_string()
    } else {
        style.traits.join(", ")
    };
    format!(
        "You are simulating customer {} ({} income, {} buyer). \
         Shopping temperament: discount sensitivity {:.2}, loss aversion {:.2}, \
         brand loyalty {:.2}; {}.\n\
         persona_tags: {}",
        customer.customer_id,
        customer.income_bracket,
        customer.buyer_type,
        style.discount_sensitivity,
        style.loss_aversion,
        style.brand_loyalty,
        traits,
        serde_json::json!({
            "discount_sensitivity": style.discount_sensitivity,
            "loss_aversion": style.loss_aversion,
            "brand_loyalty": style.brand_loyalty,
        })
    )
}

fn candidate_review(inputs: &PromptInputs<'_>, product_id: &str) -> f64 {
    if let Some(product) = inputs.catalog.get(product_id) {
        if let Some(r) = product.review_rating() {
            return r;
        }
    }
    // Fall back to the mean of observed review scores before the cutoff.
    let mut sum = 0.0;
    let mut n = 0u32;
    for tx in inputs.market {
        if tx.product_id == product_id && tx.timestamp < inputs.cutoff {
            if let Some(score) = tx.review_score {
                sum += score;
                n += 1;
            }
        }
    }
    if n > 0 {
        sum / n as f64
    } else {
        0.0
    }
}

/// Per-category unit totals over the trailing window, strictly before the
/// cutoff month. Used verbatim as the trends section unless a mean-field
/// state overrides it.
fn trends_text(inputs: &PromptInputs<'_>, categories: &[String]) -> String {
    match inputs.meanfield {
        Some(mf) => {
            let mut lines = Vec::new();
            for category in categories {
                if let Some(field) = mf.categories.get(category) {
                    let mut shares: Vec<(&String, &f64)> = field.selection_shares.iter().collect();
                    shares.sort_by(|a, b| {
                        b.1.partial_cmp(a.1)
                            .expect("finite shares")
                            .then_with(|| a.0.cmp(b.0))
                    });
                    let top: Vec<String> = shares
                        .iter()
                        .take(3)
                        .map(|(id, s)| format!("{id} {:.3}", s))
                        .collect();
                    lines.push(format!(
                        "category {category}: mean purchase quantity {:.4}, top products: {}",
                        field.mean_quantity,
                        top.join(", ")
                    ));
                }
            }
            if lines.is_empty() {
                "no market field data".to_string()
            } else {
                lines.join("\n")
            }
        }
        None => {
            let cutoff_month = Month::from_datetime(&inputs.cutoff);
            let window = inputs.trends_window.max(1);
            let mut totals: BTreeMap<&str, u64> = BTreeMap::new();
            for tx in inputs.market {
                if tx.timestamp >= inputs.cutoff {
                    continue;
                }
                let month = tx.month();
                if month >= cutoff_month || month.index() + window < cutoff_month.index() {
                    continue;
                }
                if let Some(product) = inputs.catalog.get(&tx.product_id) {
                    let category = product.first_level_category();
                    if categories.iter().any(|c| c == category) {
                        *totals.entry(category).or_insert(0) += tx.quantity as u64;
                    }
                }
            }
            let mut lines = Vec::new();
            for category in categories {
                let units = totals.get(category.as_str()).copied().unwrap_or(0);
                lines.push(format!(
                    "category {category}: {units} units last {window} months"
                ));
            }
            lines.join("\n")
        }
    }
}

fn recent_purchases(inputs: &PromptInputs<'_>) -> String {
    let mut past: Vec<&TransactionRecord> = inputs
        .history
        .iter()
        .filter(|tx| tx.customer_id == inputs.customer.customer_id && tx.timestamp < inputs.cutoff)
        .collect();
    past.sort_by_key(|tx| tx.timestamp);
    let lines: Vec<String> = past
        .iter()
        .rev()
        .take(5)
        .map(|tx| {
            format!(
                "- {}: {} x{} at {} (discount {:.2})",
                tx.timestamp.format("%Y-%m-%d"),
                tx.product_id,
                tx.quantity,
                tx.unit_price,
                tx.discount
            )
        })
        .collect();
    if lines.is_empty() {
        String::new()
    } else {
        format!("Recent purchases:\n{}", lines.join("\n"))
    }
}

/// Build the full retail prompt. Candidate order is shuffled by
/// `shuffle_candidates(sample_seed)` and the applied permutation recorded.
pub fn build_retail_prompt(
    inputs: &PromptInputs<'_>,
    candidates: &[CandidateRef],
    discounts: &[f64],
    seed_value: u64,
) -> Result<RetailPrompt, PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::EmptyCandidates);
    }
    if candidates.len() != discounts.len() {
        return Err(PromptError::Misaligned {
            candidates: candidates.len(),
            discounts: discounts.len(),
        });
    }
    for c in candidates {
        if !inputs.catalog.contains_key(&c.product_id) {
            return Err(PromptError::UnknownCandidate(c.product_id.clone()));
        }
    }

    let paired: Vec<(CandidateRef, f64)> = candidates
        .iter()
        .cloned()
        .zip(discounts.iter().copied())
        .collect();
    let (shuffled, permutation) = shuffle_candidates(&paired, seed_value);

    let mut views = Vec::with_capacity(shuffled.len());
    let mut shuffled_discounts = Vec::with_capacity(shuffled.len());
    let mut review_ratings = Vec::with_capacity(shuffled.len());
    let mut sidecar_rows = Vec::with_capacity(shuffled.len());
    let mut categories: Vec<String> = Vec::new();
    for (candidate, discount) in &shuffled {
        let product = &inputs.catalog[&candidate.product_id];
        let category = product.first_level_category().to_string();
        if !categories.contains(&category) {
            categories.push(category);
        }
        let price_after = candidate.unit_price.after_discount(*discount);
        let review = candidate_review(inputs, &candidate.product_id);
        let display_name = product
            .attributes
            .get("name")
            .cloned()
            .unwrap_or_else(|| format!("{} {}", product.brand(), product.product_id));
        views.push(CandidateView {
            product_id: candidate.product_id.clone(),
            display_name,
            price_after_discount: price_after,
            attributes_summary: product
                .attributes
                .iter()
                .filter(|(k, _)| k.as_str() != "name")
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(", "),
            image_embedding_ref: product
                .image_embedding
                .as_ref()
                .map(|_| format!("embedding:{}", product.product_id)),
        });
        shuffled_discounts.push(*discount);
        review_ratings.push(review);
        sidecar_rows.push(SidecarCandidate {
            product_id: candidate.product_id.clone(),
            price_after_discount: price_after.as_f64(),
            discount: *discount,
            review,
            brand: product.brand().to_string(),
        });
    }

    let demand = format!(
        "Customer {} needs to restock {} this period and will pick at most one product.",
        inputs.customer.customer_id,
        categories.join(" / ")
    );
    let profile = super::summarize_profile(
        inputs.customer,
        &inputs.history.iter().collect::<Vec<_>>(),
        inputs.catalog,
        inputs.cutoff,
        None,
    )?;
    let trends = trends_text(inputs, &categories);

    let sidecar = Sidecar {
        task: SidecarTask::RetailDecision,
        customer_id: inputs.customer.customer_id.clone(),
        category: categories.first().cloned().unwrap_or_default(),
        sample_seed: inputs.sample_seed,
        candidates: sidecar_rows,
        meanfield: inputs.meanfield.map(|mf| {
            mf.categories
                .iter()
                .map(|(k, v)| (k.clone(), v.mean_quantity))
                .collect()
        }),
        strategies: None,
    };

    let mut text = String::new();
    text.push_str(&demand);
    text.push_str("\n\n");
    text.push_str(SECTION_HEADERS[0]);
    text.push('\n');
    for (i, view) in views.iter().enumerate() {
        text.push_str(&format!(
            "{}. {} (id {}) — price {} after discount; {}{}\n",
            i + 1,
            view.display_name,
            view.product_id,
            view.price_after_discount,
            view.attributes_summary,
            view.image_embedding_ref
                .as_ref()
                .map(|r| format!("; image {r}"))
                .unwrap_or_default(),
        ));
    }
    text.push('\n');
    text.push_str(SECTION_HEADERS[1]);
    text.push('\n');
    text.push_str(&profile.text);
    let recent = recent_purchases(inputs);
    if !recent.is_empty() {
        text.push('\n');
        text.push_str(&recent);
    }
    text.push('\n');
    text.push('\n');
    text.push_str(SECTION_HEADERS[2]);
    text.push('\n');
    text.push_str(&trends);
    text.push('\n');
    text.push('\n');
    text.push_str(SECTION_HEADERS[3]);
    text.push('\n');
    for (view, review) in views.iter().zip(&review_ratings) {
        text.push_str(&format!("{}: {:.1} / 5\n", view.product_id, review));
    }
    text.push('\n');
    text.push_str(SECTION_HEADERS[4]);
    text.push('\n');
    for (view, discount) in views.iter().zip(&shuffled_discounts) {
        if *discount > 0.0 {
            text.push_str(&format!("{}: {:.1}% off\n", view.product_id, discount * 100.0));
        } else {
            text.push_str(&format!("{}: no promotion\n", view.product_id));
        }
    }
    text.push('\n');
    text.push_str(
        "Reply with one JSON line: {\"buy\": true|false, \"product_id\": \"...\", \"quantity\": N}\n",
    );
    text.push_str(&sidecar.render());

    Ok(RetailPrompt {
        demand,
        candidates: views,
        discounts: shuffled_discounts,
        history_summary: profile.text,
        market_trends: trends,
        review_ratings,
        rendered_text: text,
        permutation,
        sidecar,
    })
}
