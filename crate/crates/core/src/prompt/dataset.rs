//! Alignment dataset construction: one supervised example per eligible
//! historical purchase, candidates = the true product plus k same-category
//! distractors, inputs built strictly from pre-transaction data.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;

use super::render::{build_retail_prompt, CandidateRef, PromptInputs};
use super::{AlignmentExample, PromptError};
use crate::backend::{parse_retail, RetailDecision};
use crate::data::{history_by_customer, Catalog, CustomerRecord, TransactionRecord};
use crate::seed;

#[derive(Debug, Clone)]
pub struct AlignmentOptions {
    /// Distractors added beside the true product (k itself, not k+1).
    pub k_distractors: usize,
    pub trends_window: u32,
    /// Restrict to these first-level categories when set.
    pub eligible_categories: Option<BTreeSet<String>>,
    /// Retail transactions only (wholesale flows have their own pipeline).
    pub retail_only: bool,
}

impl Default for AlignmentOptions {
    fn default() -> Self {
        AlignmentOptions {
            k_distractors: 4,
            trends_window: 3,
            eligible_categories: None,
            retail_only: true,
        }
    }
}

#[derive(Debug)]
pub struct AlignmentReport {
    pub examples: Vec<AlignmentExample>,
    /// Transaction indices whose category had fewer than k distractors.
    pub short_candidate_sets: Vec<usize>,
    /// Transactions skipped as ineligible (category filter or buyer type).
    pub skipped: usize,
}

/// Deterministic sample of `k` distractor ids from the same category,
/// excluding the purchased product.
fn pick_distractors(
    catalog: &Catalog,
    category: &str,
    exclude: &str,
    k: usize,
    seed_value: u64,
) -> Vec<String> {
    let mut pool: Vec<&str> = catalog
        .values()
        .filter(|p| p.first_level_category() == category && p.product_id != exclude)
        .map(|p| p.product_id.as_str())
        .collect();
    let mut rng = seed::rng(&[0x64697374, seed_value]);
    // Partial Fisher-Yates: the first k slots become the sample.
    let take = k.min(pool.len());
    for i in 0..take {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.into_iter().take(take).map(str::to_string).collect()
}

/// Candidate set for one historical transaction: the true product listed
/// at its transaction price and discount, plus k same-category distractors
/// at base price with no promotion. The bool flags a short candidate set
/// (category smaller than k+1). Shared by dataset building and simulation
/// so both sides present identical offers.
pub fn candidates_for_transaction(
    tx: &TransactionRecord,
    catalog: &Catalog,
    k: usize,
    example_seed: u64,
) -> Result<(Vec<CandidateRef>, Vec<f64>, bool), PromptError> {
    let product = catalog
        .get(&tx.product_id)
        .ok_or_else(|| PromptError::UnknownCandidate(tx.product_id.clone()))?;
    let distractors = pick_distractors(
        catalog,
        product.first_level_category(),
        &tx.product_id,
        k,
        example_seed,
    );
    let short = distractors.len() < k;
    let mut candidates = vec![CandidateRef {
        product_id: tx.product_id.clone(),
        unit_price: tx.unit_price,
    }];
    let mut discounts = vec![tx.discount];
    for id in distractors {
        candidates.push(CandidateRef {
            product_id: id.clone(),
            unit_price: catalog[&id].base_price,
        });
        discounts.push(0.0);
    }
    Ok((candidates, discounts, short))
}

/// Build the alignment dataset. Per-example seeds derive from
/// (run seed, transaction index) so parallel build order can never matter.
pub fn build_alignment_dataset(
    transactions: &[TransactionRecord],
    catalog: &Catalog,
    customers: &[CustomerRecord],
    options: &AlignmentOptions,
    run_seed: u64,
) -> Result<AlignmentReport, PromptError> {
    let by_customer = history_by_customer(transactions);
    let customer_index: std::collections::BTreeMap<&str, &CustomerRecord> = customers
        .iter()
        .map(|c| (c.customer_id.as_str(), c))
        .collect();

    let mut examples = Vec::new();
    let mut short_candidate_sets = Vec::new();
    let mut skipped = 0usize;

    for (idx, tx) in transactions.iter().enumerate() {
        if options.retail_only && tx.customer_type != crate::data::BuyerType::Retail {
            skipped += 1;
            continue;
        }
        let product = catalog
            .get(&tx.product_id)
            .ok_or_else(|| PromptError::UnknownCandidate(tx.product_id.clone()))?;
        let category = product.first_level_category();
        if let Some(eligible) = &options.eligible_categories {
            if !eligible.contains(category) {
                skipped += 1;
                continue;
            }
        }
        let customer = customer_index
            .get(tx.customer_id.as_str())
            .ok_or_else(|| PromptError::UnknownCustomer(tx.customer_id.clone()))?;

        let example_seed = seed::mix64(&[run_seed, idx as u64]);
        let (candidates, discounts, short) =
            candidates_for_transaction(tx, catalog, options.k_distractors, example_seed)?;
        if short {
            short_candidate_sets.push(idx);
        }

        let empty: Vec<&TransactionRecord> = Vec::new();
        let history_refs = by_customer.get(tx.customer_id.as_str()).unwrap_or(&empty);
        let history: Vec<TransactionRecord> =
            history_refs.iter().map(|&t| t.clone()).collect();
        let inputs = PromptInputs {
            customer,
            history: &history,
            market: transactions,
            catalog,
            cutoff: tx.timestamp,
            trends_window: options.trends_window,
            meanfield: None,
            sample_seed: example_seed,
        };
        let prompt = build_retail_prompt(&inputs, &candidates, &discounts, example_seed)?;

        let output = serde_json::json!({
            "product_id": tx.product_id,
            "quantity": tx.quantity,
        })
        .to_string();
        debug_assert!({
            let (d, _) = parse_retail(&output, &prompt.candidate_ids()).expect("output parses");
            d == RetailDecision::purchase(tx.product_id.clone(), tx.quantity)
        });
        examples.push(AlignmentExample {
            input: prompt.rendered_text,
            output,
        });
    }

    Ok(AlignmentReport {
        examples,
        short_candidate_sets,
        skipped,
    })
}

pub fn write_alignment_jsonl(
    path: &Path,
    examples: &[AlignmentExample],
) -> Result<(), std::io::Error> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}
