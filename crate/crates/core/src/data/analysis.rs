//! Population sampling and inertia weighting over ingested market data.

use std::collections::{BTreeMap, BTreeSet};

use super::{Catalog, DataError, OodSplit, TransactionRecord};

/// Customers in the bottom half of historical purchase volume.
///
/// Sorts by (total quantity, customer id) ascending and takes the first
/// floor(N/2); the result is independent of row order and of the seed
/// (kept for interface stability — ties break by id, not randomly).
pub fn sample_bottom_half_customers(
    transactions: &[TransactionRecord],
    _seed: u64,
) -> Result<BTreeSet<String>, DataError> {
    let mut volumes: BTreeMap<&str, u64> = BTreeMap::new();
    for tx in transactions {
        *volumes.entry(tx.customer_id.as_str()).or_insert(0) += tx.quantity as u64;
    }
    if volumes.len() < 2 {
        return Err(DataError::EmptyInput(
            "need at least 2 distinct customers".into(),
        ));
    }
    let mut ranked: Vec<(&str, u64)> = volumes.into_iter().collect();
    ranked.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let take = ranked.len() / 2;
    Ok(ranked
        .into_iter()
        .take(take)
        .map(|(id, _)| id.to_string())
        .collect())
}

/// Decision-inertia weights: per-brand historical quantity share with
/// additive smoothing s = 1 over the brands present in the scoped catalog.
/// History rows whose product is outside the scope are ignored.
pub fn inertia_weights(
    history: &[&TransactionRecord],
    scope: &Catalog,
) -> Result<BTreeMap<String, f64>, DataError> {
    if history.is_empty() {
        return Err(DataError::EmptyInput("empty purchase history".into()));
    }
    let brands: BTreeSet<&str> = scope.values().map(|p| p.brand()).collect();
    if brands.is_empty() {
        return Err(DataError::EmptyInput("no brands in scope".into()));
    }
    let mut counts: BTreeMap<&str, u64> = brands.iter().map(|b| (*b, 0u64)).collect();
    let mut total: u64 = 0;
    for tx in history {
        if let Some(product) = scope.get(&tx.product_id) {
            *counts.get_mut(product.brand()).expect("brand in scope") += tx.quantity as u64;
            total += tx.quantity as u64;
        }
    }
    let smoothing = 1.0;
    let denom = total as f64 + smoothing * brands.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(brand, qty)| (brand.to_string(), (qty as f64 + smoothing) / denom))
        .collect())
}

/// Disjoint first-level-category split; every name must exist in the catalog.
pub fn build_ood_split(
    catalog: &Catalog,
    train_names: &[String],
    test_names: &[String],
) -> Result<OodSplit, DataError> {
    let known: BTreeSet<&str> = catalog
        .values()
        .map(|p| p.first_level_category())
        .collect();
    for name in train_names.iter().chain(test_names) {
        if !known.contains(name.as_str()) {
            return Err(DataError::UnknownCategory(name.clone()));
        }
    }
    let train: BTreeSet<String> = train_names.iter().cloned().collect();
    let test: BTreeSet<String> = test_names.iter().cloned().collect();
    if let Some(overlap) = train.intersection(&test).next() {
        return Err(DataError::OverlappingSplit(overlap.clone()));
    }
    Ok(OodSplit {
        train_categories: train,
        test_categories: test,
    })
}
