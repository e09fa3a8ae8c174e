//! Mean-field stabilization: windowed market aggregates and the
//! alternating micro/macro update loop.
//!
//! The macro state holds, per category, the mean purchase quantity and a
//! smoothed product-selection share simplex. Episode batches observe an
//! immutable snapshot of the state (barrier semantics); their decisions are
//! folded by the same aggregator that initializes the state from data.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Catalog, TransactionRecord};
use crate::money::Month;

#[derive(Debug, Error)]
pub enum MeanFieldError {
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("damping must lie in (0, 1], got {0}")]
    BadDamping(f64),
    #[error("no data in the window before {0}")]
    EmptyWindow(Month),
    #[error("batch produced no samples")]
    EmptyBatch,
    #[error("batch sample references unknown product {product} in {category}")]
    UnknownProduct { category: String, product: String },
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("max_iter must be at least 1")]
    BadMaxIter,
    #[error("batch runner failed at iteration {iteration}: {detail}")]
    Runner { iteration: usize, detail: String },
}

/// Moving-window settings: W statistical months, damping in (0, 1].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window: u32,
    pub damping: f64,
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), MeanFieldError> {
        if self.window < 1 {
            return Err(MeanFieldError::ZeroWindow);
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(MeanFieldError::BadDamping(self.damping));
        }
        Ok(())
    }
}

/// Per-category aggregates of the macro state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryField {
    pub mean_quantity: f64,
    /// Smoothed quantity shares over the category's products; sums to 1.
    pub selection_shares: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub iteration: usize,
    pub categories: BTreeMap<String, CategoryField>,
}

impl MeanFieldState {
    /// Simplex and non-negativity invariants, checked after every step.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (category, field) in &self.categories {
            if field.mean_quantity < 0.0 {
                return Err(format!("negative mean quantity in {category}"));
            }
            let sum: f64 = field.selection_shares.values().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(format!("shares of {category} sum to {sum}"));
            }
            if field.selection_shares.values().any(|s| *s < 0.0) {
                return Err(format!("negative share in {category}"));
            }
        }
        Ok(())
    }
}

/// One observed decision for aggregation; `weight` is a multiplicity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSample {
    pub category: String,
    pub product_id: String,
    pub quantity: u32,
    pub weight: u64,
}

/// Arithmetic mean of the last `window` monthly totals strictly before
/// `as_of`; missing months count as zero. The flag is false when the
/// series had no observation inside the window.
pub fn window_average(series: &[(Month, u64)], window: u32, as_of: Month) -> (f64, bool) {
    assert!(window >= 1, "window must be at least 1");
    let mut sum = 0u64;
    let mut observed = false;
    for (month, total) in series {
        if *month < as_of && month.index() + window >= as_of.index() {
            sum += *total;
            observed = true;
        }
    }
    (sum as f64 / window as f64, observed)
}

/// Shared aggregator: mean quantity per decision and additively smoothed
/// (s = 1) quantity shares over the product scope.
fn aggregate(
    samples: &[FieldSample],
    scope: &BTreeMap<String, Vec<String>>,
) -> Result<BTreeMap<String, CategoryField>, MeanFieldError> {
    let mut totals: BTreeMap<&str, (u64, u64)> = BTreeMap::new(); // (qty sum, weight sum)
    let mut per_product: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    for sample in samples {
        let products = scope
            .get(&sample.category)
            .ok_or_else(|| MeanFieldError::UnknownProduct {
                category: sample.category.clone(),
                product: sample.product_id.clone(),
            })?;
        if !products.contains(&sample.product_id) {
            return Err(MeanFieldError::UnknownProduct {
                category: sample.category.clone(),
                product: sample.product_id.clone(),
            });
        }
        let entry = totals.entry(&sample.category).or_insert((0, 0));
        entry.0 += sample.quantity as u64 * sample.weight;
        entry.1 += sample.weight;
        *per_product
            .entry((&sample.category, &sample.product_id))
            .or_insert(0) += sample.quantity as u64 * sample.weight;
    }

    let mut categories = BTreeMap::new();
    for (category, (qty_sum, weight_sum)) in totals {
        let products = &scope[category];
        let smoothing = 1.0;
        let qty_total: u64 = products
            .iter()
            .map(|p| per_product.get(&(category, p.as_str())).copied().unwrap_or(0))
            .sum();
        let denom = qty_total as f64 + smoothing * products.len() as f64;
        let shares: BTreeMap<String, f64> = products
            .iter()
            .map(|p| {
                let q = per_product.get(&(category, p.as_str())).copied().unwrap_or(0);
                (p.clone(), (q as f64 + smoothing) / denom)
            })
            .collect();
        categories.insert(
            category.to_string(),
            CategoryField {
                mean_quantity: qty_sum as f64 / weight_sum as f64,
                selection_shares: shares,
            },
        );
    }
    Ok(categories)
}

fn scope_from_catalog(catalog: &Catalog) -> BTreeMap<String, Vec<String>> {
    let mut scope: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for product in catalog.values() {
        scope
            .entry(product.first_level_category().to_string())
            .or_default()
            .push(product.product_id.clone());
    }
    scope
}

fn scope_from_state(state: &MeanFieldState) -> BTreeMap<String, Vec<String>> {
    state
        .categories
        .iter()
        .map(|(c, f)| (c.clone(), f.selection_shares.keys().cloned().collect()))
        .collect()
}

/// Initialize the macro state from transactions inside the W-month window
/// before `as_of`.
pub fn init_meanfield(
    transactions: &[TransactionRecord],
    catalog: &Catalog,
    window: u32,
    as_of: Month,
) -> Result<MeanFieldState, MeanFieldError> {
    if window < 1 {
        return Err(MeanFieldError::ZeroWindow);
    }
    let samples: Vec<FieldSample> = transactions
        .iter()
        .filter(|tx| {
            let m = tx.month();
            m < as_of && m.index() + window >= as_of.index()
        })
        .filter_map(|tx| {
            catalog.get(&tx.product_id).map(|p| FieldSample {
                category: p.first_level_category().to_string(),
                product_id: tx.product_id.clone(),
                quantity: tx.quantity,
                weight: 1,
            })
        })
        .collect();
    if samples.is_empty() {
        return Err(MeanFieldError::EmptyWindow(as_of));
    }
    let categories = aggregate(&samples, &scope_from_catalog(catalog))?;
    let state = MeanFieldState {
        iteration: 0,
        categories,
    };
    state
        .check_invariants()
        .expect("aggregation preserves invariants");
    Ok(state)
}

/// A batch runner executes N episodes against an immutable snapshot of the
/// state and returns their decisions as weighted samples.
pub type BatchRunner<'a> =
    dyn FnMut(&MeanFieldState) -> Result<Vec<FieldSample>, String> + 'a;

/// One alternating update: run the batch against mu_t, aggregate the raw
/// response nu exactly as initialization does, then damp:
/// mu_{t+1} = (1 - eta) * mu_t + eta * nu.
pub fn meanfield_step(
    state: &MeanFieldState,
    runner: &mut BatchRunner<'_>,
    damping: f64,
) -> Result<MeanFieldState, MeanFieldError> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(MeanFieldError::BadDamping(damping));
    }
    let samples = runner(state).map_err(|detail| MeanFieldError::Runner {
        iteration: state.iteration,
        detail,
    })?;
    if samples.is_empty() {
        return Err(MeanFieldError::EmptyBatch);
    }
    let raw = aggregate(&samples, &scope_from_state(state))?;

    let mut categories = BTreeMap::new();
    for (category, current) in &state.categories {
        let next = match raw.get(category) {
            // No observations for this category this iteration: carry over.
            None => current.clone(),
            Some(nu) => {
                let mean_quantity =
                    (1.0 - damping) * current.mean_quantity + damping * nu.mean_quantity;
                let selection_shares = current
                    .selection_shares
                    .iter()
                    .map(|(p, s)| {
                        let target = nu.selection_shares.get(p).copied().unwrap_or(0.0);
                        (p.clone(), (1.0 - damping) * s + damping * target)
                    })
                    .collect();
                CategoryField {
                    mean_quantity,
                    selection_shares,
                }
            }
        };
        categories.insert(category.clone(), next);
    }
    let next = MeanFieldState {
        iteration: state.iteration + 1,
        categories,
    };
    next.check_invariants()
        .expect("damped combination preserves invariants");
    Ok(next)
}

/// Sup-norm distance over every aggregate component.
pub fn sup_distance(a: &MeanFieldState, b: &MeanFieldState) -> f64 {
    let mut sup: f64 = 0.0;
    for (category, fa) in &a.categories {
        if let Some(fb) = b.categories.get(category) {
            sup = sup.max((fa.mean_quantity - fb.mean_quantity).abs());
            for (product, sa) in &fa.selection_shares {
                let sb = fb.selection_shares.get(product).copied().unwrap_or(0.0);
                sup = sup.max((sa - sb).abs());
            }
        } else {
            sup = f64::INFINITY;
        }
    }
    sup
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub sup_delta: f64,
    pub state: MeanFieldState,
}

#[derive(Debug)]
pub struct MeanFieldRun {
    pub final_state: MeanFieldState,
    pub trajectory: Vec<TrajectoryPoint>,
    pub converged: bool,
}

/// Iterate until successive states are within `tol` in sup-norm or
/// `max_iter` steps have run. The trajectory includes the initial state.
pub fn run_meanfield(
    mu0: MeanFieldState,
    runner: &mut BatchRunner<'_>,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<MeanFieldRun, MeanFieldError> {
    if tol <= 0.0 {
        return Err(MeanFieldError::BadTolerance);
    }
    if max_iter < 1 {
        return Err(MeanFieldError::BadMaxIter);
    }
    let mut trajectory = vec![TrajectoryPoint {
        iteration: mu0.iteration,
        sup_delta: f64::NAN,
        state: mu0.clone(),
    }];
    let mut current = mu0;
    let mut converged = false;
    for _ in 0..max_iter {
        let next = meanfield_step(&current, runner, damping)?;
        let delta = sup_distance(&next, &current);
        trajectory.push(TrajectoryPoint {
            iteration: next.iteration,
            sup_delta: delta,
            state: next.clone(),
        });
        current = next;
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(MeanFieldRun {
        final_state: current,
        trajectory,
        converged,
    })
}

pub fn write_trajectory_jsonl(
    path: &Path,
    trajectory: &[TrajectoryPoint],
) -> Result<(), std::io::Error> {
    let mut out = String::new();
    for point in trajectory {
        // NaN is not valid JSON; the initial point has no delta.
        let printable = serde_json::json!({
            "iteration": point.iteration,
            "sup_delta": if point.sup_delta.is_nan() {
                serde_json::Value::Null
            } else {
                serde_json::json!(point.sup_delta)
            },
            "state": point.state,
        });
        out.push_str(&printable.to_string());
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Fabricate a weighted two-value sample batch whose mean is `target`
/// (to within 1/(2N)); the workhorse of linear-response mock runners.
pub fn dithered_samples(
    category: &str,
    product: &str,
    target: f64,
    total_weight: u64,
) -> Vec<FieldSample> {
    let floor = target.floor().max(0.0);
    let frac = (target - floor).clamp(0.0, 1.0);
    let hi_weight = (frac * total_weight as f64).round() as u64;
    let lo_weight = total_weight - hi_weight;
    let mut samples = Vec::new();
    if lo_weight > 0 {
        samples.push(FieldSample {
            category: category.to_string(),
            product_id: product.to_string(),
            quantity: floor as u32,
            weight: lo_weight,
        });
    }
    if hi_weight > 0 {
        samples.push(FieldSample {
            category: category.to_string(),
            product_id: product.to_string(),
            quantity: floor as u32 + 1,
            weight: hi_weight,
        });
    }
    samples
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_market, SyntheticConfig};

    fn month(s: &str) -> Month {
        s.parse().unwrap()
    }

    #[test]
    fn window_average_arithmetic() {
        let series = vec![
            (month("2024-01"), 2),
            (month("2024-02"), 4),
            (month("2024-03"), 6),
        ];
        let (avg, seen) = window_average(&series, 3, month("2024-04"));
        assert_eq!(avg, 4.0);
        assert!(seen);
        // W=1 takes only the last month.
        let (avg, _) = window_average(&series, 1, month("2024-04"));
        assert_eq!(avg, 6.0);
    }

    #[test]
    fn window_average_counts_gaps_as_zero() {
        let series = vec![(month("2024-01"), 6), (month("2024-03"), 6)];
        let (avg, seen) = window_average(&series, 3, month("2024-04"));
        assert_eq!(avg, 4.0);
        assert!(seen);
        let (avg, seen) = window_average(&series, 2, month("2024-01"));
        assert_eq!(avg, 0.0);
        assert!(!seen);
    }

    fn single_category_state(products: &[(&str, f64)], mean_quantity: f64) -> MeanFieldState {
        let shares: BTreeMap<String, f64> = products
            .iter()
            .map(|(p, s)| (p.to_string(), *s))
            .collect();
        MeanFieldState {
            iteration: 0,
            categories: BTreeMap::from([(
                "Cat".to_string(),
                CategoryField {
                    mean_quantity,
                    selection_shares: shares,
                },
            )]),
        }
    }

    #[test]
    fn init_from_synthetic_market_lands_on_simplex() {
        let market = generate_synthetic_market(&SyntheticConfig::new(5, 10, 3, 6)).unwrap();
        let state = init_meanfield(
            &market.transactions,
            &market.catalog,
            3,
            month("2024-06"),
        )
        .unwrap();
        state.check_invariants().unwrap();
        assert!(!state.categories.is_empty());
    }

    #[test]
    fn init_share_arithmetic_with_smoothing() {
        // Two products with 75/25 quantity split; smoothed shares
        // (75+1)/(100+2) and (25+1)/(100+2).
        let market = {
            let mut m = generate_synthetic_market(&SyntheticConfig {
                products_per_category: 2,
                ..SyntheticConfig::new(1, 1, 1, 1)
            })
            .unwrap();
            m.transactions.clear();
            let ids: Vec<String> = m.catalog.keys().cloned().collect();
            let mk = |pid: &str, qty: u32| TransactionRecord {
                timestamp: chrono::NaiveDateTime::parse_from_str(
                    "2024-03-05T10:00:00",
                    crate::data::TIMESTAMP_FORMAT,
                )
                .unwrap(),
                customer_id: "c".into(),
                customer_type: crate::data::BuyerType::Retail,
                product_id: pid.to_string(),
                quantity: qty,
                unit_price: "2.00".parse().unwrap(),
                discount: 0.0,
                channel: "online".into(),
                review_score: None,
            };
            m.transactions.push(mk(&ids[0], 75));
            m.transactions.push(mk(&ids[1], 25));
            m
        };
        let state = init_meanfield(&market.transactions, &market.catalog, 3, month("2024-04"))
            .unwrap();
        let field = state.categories.values().next().unwrap();
        let shares: Vec<f64> = field.selection_shares.values().copied().collect();
        assert!((shares[0] - 76.0 / 102.0).abs() < 1e-12);
        assert!((shares[1] - 26.0 / 102.0).abs() < 1e-12);
        assert!((field.mean_quantity - 50.0).abs() < 1e-12);
    }

    #[test]
    fn single_product_share_is_one() {
        let market = {
            let mut m = generate_synthetic_market(&SyntheticConfig {
                products_per_category: 1,
                ..SyntheticConfig::new(2, 2, 1, 2)
            })
            .unwrap();
            m.transactions.truncate(1);
            m
        };
        if market.transactions.is_empty() {
            return;
        }
        let state = init_meanfield(&market.transactions, &market.catalog, 12, month("2025-01"))
            .unwrap();
        let field = state.categories.values().next().unwrap();
        assert_eq!(field.selection_shares.len(), 1);
        assert!((field.selection_shares.values().next().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn undamped_step_equals_raw_aggregate() {
        let state = single_category_state(&[("p", 1.0)], 3.0);
        let mut runner = |_: &MeanFieldState| Ok(dithered_samples("Cat", "p", 7.0, 1000));
        let next = meanfield_step(&state, &mut runner, 1.0).unwrap();
        assert!((next.categories["Cat"].mean_quantity - 7.0).abs() < 1e-9);
        assert_eq!(next.iteration, 1);
    }

    #[test]
    fn fixed_point_batch_leaves_state_unchanged() {
        let state0 = single_category_state(&[("p", 1.0)], 3.0);
        let batch = vec![FieldSample {
            category: "Cat".into(),
            product_id: "p".into(),
            quantity: 4,
            weight: 1,
        }];
        let mut runner = |_: &MeanFieldState| Ok(batch.clone());
        // mu_1 = aggregate(batch); running the same batch again must fix.
        let mu1 = meanfield_step(&state0, &mut runner, 1.0).unwrap();
        let mu2 = meanfield_step(&mu1, &mut runner, 1.0).unwrap();
        assert!(sup_distance(&mu1, &mu2) < 1e-15);
    }

    #[test]
    fn linear_mock_converges_to_closed_form_fixed_point() {
        // x' = a + lambda x with lambda = 0.5, a = 3: fixed point 6.
        let (a, lambda) = (3.0, 0.5);
        let state0 = single_category_state(&[("p", 1.0)], 2.0);
        let mut runner = |state: &MeanFieldState| {
            let x = state.categories["Cat"].mean_quantity;
            Ok(dithered_samples("Cat", "p", a + lambda * x, 100_000_000))
        };
        let run = run_meanfield(state0, &mut runner, 1.0, 1e-6, 25).unwrap();
        assert!(run.converged);
        let fixed_point = a / (1.0 - lambda);
        assert!(
            (run.final_state.categories["Cat"].mean_quantity - fixed_point).abs() < 1e-5,
            "got {}",
            run.final_state.categories["Cat"].mean_quantity
        );
        // Geometric rate: gap shrinks by ~0.5 per iteration.
        let gaps: Vec<f64> = run
            .trajectory
            .iter()
            .map(|p| (p.state.categories["Cat"].mean_quantity - fixed_point).abs())
            .collect();
        for pair in gaps.windows(2).take(8) {
            if pair[0] > 1e-4 {
                let ratio = pair[1] / pair[0];
                assert!((ratio - 0.5).abs() < 0.05 * 0.5 + 0.02, "ratio {ratio}");
            }
        }
    }

    #[test]
    fn damping_contraction_factor_matches_formula() {
        // Contraction per iteration is |1 - eta (1 - lambda)|.
        let (a, lambda, eta) = (3.0, 0.5, 0.6);
        let state0 = single_category_state(&[("p", 1.0)], 2.0);
        let mut runner = |state: &MeanFieldState| {
            let x = state.categories["Cat"].mean_quantity;
            Ok(dithered_samples("Cat", "p", a + lambda * x, 100_000_000))
        };
        let run = run_meanfield(state0, &mut runner, eta, 1e-9, 10).unwrap();
        let fixed_point = a / (1.0 - lambda);
        let expected = (1.0 - eta * (1.0 - lambda)).abs();
        let gaps: Vec<f64> = run
            .trajectory
            .iter()
            .map(|p| (p.state.categories["Cat"].mean_quantity - fixed_point).abs())
            .collect();
        let mut checked = 0;
        for pair in gaps.windows(2) {
            if pair[0] > 1e-3 {
                let ratio = pair[1] / pair[0];
                assert!(
                    (ratio - expected).abs() <= 0.05 * expected,
                    "ratio {ratio} vs {expected}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 3);
    }

    #[test]
    fn constant_output_mock_is_an_immediate_fixed_point() {
        let state0 = single_category_state(&[("p", 1.0)], 2.0);
        let mut runner = |_: &MeanFieldState| {
            Ok(vec![FieldSample {
                category: "Cat".into(),
                product_id: "p".into(),
                quantity: 5,
                weight: 10,
            }])
        };
        let mu1 = meanfield_step(&state0, &mut runner, 1.0).unwrap();
        let mu2 = meanfield_step(&mu1, &mut runner, 1.0).unwrap();
        assert_eq!(sup_distance(&mu1, &mu2), 0.0);
    }

    #[test]
    fn run_bookkeeping_edges() {
        let state0 = single_category_state(&[("p", 1.0)], 2.0);
        let mut runner = |_: &MeanFieldState| {
            Ok(vec![FieldSample {
                category: "Cat".into(),
                product_id: "p".into(),
                quantity: 5,
                weight: 1,
            }])
        };
        // max_iter = 1: trajectory holds mu_0 and mu_1.
        let run = run_meanfield(state0.clone(), &mut runner, 1.0, 1e-12, 1).unwrap();
        assert_eq!(run.trajectory.len(), 2);

        // Tolerance larger than the initial gap: converges at iteration 1.
        let run = run_meanfield(state0.clone(), &mut runner, 1.0, 100.0, 10).unwrap();
        assert!(run.converged);
        assert_eq!(run.final_state.iteration, 1);

        assert!(run_meanfield(state0.clone(), &mut runner, 1.0, 0.0, 10).is_err());
        assert!(run_meanfield(state0, &mut runner, 1.0, 1e-6, 0).is_err());
    }

    #[test]
    fn runner_and_batch_failures_surface() {
        let state0 = single_category_state(&[("p", 1.0)], 2.0);
        let mut failing = |_: &MeanFieldState| Err("backend down".to_string());
        assert!(matches!(
            meanfield_step(&state0, &mut failing, 1.0),
            Err(MeanFieldError::Runner { .. })
        ));
        let mut empty = |_: &MeanFieldState| Ok(Vec::new());
        assert!(matches!(
            meanfield_step(&state0, &mut empty, 1.0),
            Err(MeanFieldError::EmptyBatch)
        ));
        let mut unknown = |_: &MeanFieldState| {
            Ok(vec![FieldSample {
                category: "Cat".into(),
                product_id: "ghost".into(),
                quantity: 1,
                weight: 1,
            }])
        };
        assert!(matches!(
            meanfield_step(&state0, &mut unknown, 1.0),
            Err(MeanFieldError::UnknownProduct { .. })
        ));
    }

    #[test]
    fn invariants_hold_after_every_step() {
        let market = generate_synthetic_market(&SyntheticConfig::new(4, 8, 2, 6)).unwrap();
        let state = init_meanfield(&market.transactions, &market.catalog, 3, month("2024-06"))
            .unwrap();
        let categories: Vec<String> = state.categories.keys().cloned().collect();
        let first_products: BTreeMap<String, String> = state
            .categories
            .iter()
            .map(|(c, f)| (c.clone(), f.selection_shares.keys().next().unwrap().clone()))
            .collect();
        let mut runner = |s: &MeanFieldState| {
            let mut out = Vec::new();
            for c in &categories {
                let x = s.categories[c].mean_quantity;
                out.extend(dithered_samples(c, &first_products[c], 2.0 + 0.3 * x, 1000));
            }
            Ok(out)
        };
        let run = run_meanfield(state, &mut runner, 0.5, 1e-9, 12).unwrap();
        for point in &run.trajectory {
            point.state.check_invariants().unwrap();
        }
    }
}
