//! Seeded synthetic market generator.
//!
//! Every customer carries a planted linear-elasticity rule and a planted
//! utility over candidate features. Transactions are produced by evaluating
//! those rules, so a mock agent given the same parameters reproduces every
//! recorded decision exactly — the end-to-end verification oracle.
//!
//! Monthly prices move by a downward-only factor in [0.90, 1.00] of base
//! price. Together with non-negative discounts this keeps each month's
//! effective price at or below the catalog base price, which guarantees the
//! month's argmax choice also wins against any same-category candidate shown
//! at base price in a later prompt.

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BuyerType, Catalog, CustomerRecord, DataError, ProductRecord, TransactionRecord};
use crate::money::{Money, Month};
use crate::retail::StyleParams;
use crate::seed::{hash_str, rng};

const CATEGORY_NAMES: [&str; 12] = [
    "Home Cleaning",
    "Daily Necessities",
    "Paper Products",
    "Laundry Care",
    "Kitchen Supplies",
    "Personal Care",
    "Pet Supplies",
    "Beverages",
    "Snacks",
    "Stationery",
    "Bath & Body",
    "Storage & Organization",
];

const BRAND_NAMES: [&str; 6] = [
    "Northfield",
    "Harbor & Co",
    "Bluepine",
    "Vistagreen",
    "Amberline",
    "Quartz Labs",
];

const CHANNELS: [&str; 2] = ["online", "store"];
const INCOME_BRACKETS: [&str; 3] = ["low", "middle", "high"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_customers: usize,
    pub n_categories: usize,
    pub months: usize,
    #[serde(default = "default_products_per_category")]
    pub products_per_category: usize,
    #[serde(default = "default_start_month")]
    pub start_month: Month,
    /// Log-uniform base price range in currency units.
    #[serde(default = "default_price_range")]
    pub price_range: (f64, f64),
    /// Quantity noise applied by the planted rule (0 = exact oracle).
    #[serde(default)]
    pub noise_sigma: f64,
}

fn default_products_per_category() -> usize {
    8
}

fn default_start_month() -> Month {
    Month::new(2024, 1)
}

fn default_price_range() -> (f64, f64) {
    (2.0, 30.0)
}

impl SyntheticConfig {
    pub fn new(seed: u64, n_customers: usize, n_categories: usize, months: usize) -> Self {
        SyntheticConfig {
            seed,
            n_customers,
            n_categories,
            months,
            products_per_category: default_products_per_category(),
            start_month: default_start_month(),
            price_range: default_price_range(),
            noise_sigma: 0.0,
        }
    }
}

/// Per-feature utility weights of the planted choice rule.
/// `price` is strictly negative so cheaper displays always win, all else equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub price: f64,
    pub review: f64,
    pub brand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCustomer {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub utility: UtilityWeights,
    pub favorite_brand: String,
    pub seed: u64,
}

/// Ground-truth parameters for every synthetic customer, persisted so mock
/// backends can replay decisions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PlantedWorld {
    pub customers: BTreeMap<String, PlantedCustomer>,
}

#[derive(Debug)]
pub struct SyntheticMarket {
    pub transactions: Vec<TransactionRecord>,
    pub catalog: Catalog,
    pub customers: Vec<CustomerRecord>,
    pub planted: PlantedWorld,
}

/// The planted elasticity rule. `price_after` is the displayed
/// (discounted) price; quantity never goes below zero.
pub fn planted_quantity(
    alpha: f64,
    beta: f64,
    gamma: f64,
    price_after: Money,
    discount: f64,
    eps: f64,
) -> u32 {
    let p = price_after.as_f64();
    let q = (alpha - beta * p + gamma * discount * p + eps).round();
    if q < 0.0 {
        0
    } else {
        q as u32
    }
}

/// The planted choice utility over displayed candidate features.
pub fn planted_utility(
    weights: &UtilityWeights,
    favorite_brand: &str,
    price_after: Money,
    review: f64,
    brand: &str,
) -> f64 {
    let brand_match = if brand == favorite_brand { 1.0 } else { 0.0 };
    weights.price * price_after.as_f64() + weights.review * review + weights.brand * brand_match
}

fn month_start(month: Month, day: u32, hour: u32) -> NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(month.year() as i32, month.month(), day)
        .expect("valid synthetic date")
        .and_hms_opt(hour, 0, 0)
        .expect("valid synthetic time")
}

/// Month-effective price: base price scaled by a factor in [0.90, 1.00].
fn month_price(base: Money, seed: u64, product_idx: usize, month_idx: usize) -> Money {
    let mut r = rng(&[seed, 4, product_idx as u64, month_idx as u64]);
    let factor = 1.0 - 0.1 * r.random::<f64>();
    base.scale(factor)
}

/// Discount offered on a product in a month: 0 or a 5%-step fraction up to 30%.
fn month_discount(seed: u64, product_idx: usize, month_idx: usize) -> f64 {
    let mut r = rng(&[seed, 5, product_idx as u64, month_idx as u64]);
    if r.random::<f64>() < 0.5 {
        0.0
    } else {
        (1 + r.random_range(0..6)) as f64 * 0.05
    }
}

pub fn generate_synthetic_market(cfg: &SyntheticConfig) -> Result<SyntheticMarket, DataError> {
    if cfg.n_customers < 1 || cfg.n_categories < 1 || cfg.months < 1 {
        return Err(DataError::EmptyInput(
            "customer, category and month counts must all be at least 1".into(),
        ));
    }
    if cfg.products_per_category < 1 {
        return Err(DataError::EmptyInput("products_per_category must be at least 1".into()));
    }

    let categories: Vec<String> = (0..cfg.n_categories)
        .map(|i| {
            CATEGORY_NAMES
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("Category {:02}", i + 1))
        })
        .collect();

    // Products: log-uniform base price, fixed brand and review quality.
    let mut catalog = Catalog::new();
    let mut product_ids: Vec<Vec<String>> = Vec::with_capacity(categories.len());
    let mut product_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut flat_idx = 0usize;
    for (c_idx, category) in categories.iter().enumerate() {
        let mut ids = Vec::new();
        for j in 0..cfg.products_per_category {
            let id = format!("P-{:02}-{}", c_idx + 1, j + 1);
            let mut r = rng(&[cfg.seed, 1, flat_idx as u64]);
            let (lo, hi) = cfg.price_range;
            let base = (lo.ln() + (hi.ln() - lo.ln()) * r.random::<f64>()).exp();
            let base_price = Money::from_cents((base * 100.0).round() as i64);
            let brand = BRAND_NAMES[r.random_range(0..BRAND_NAMES.len())].to_string();
            let review = 2.5 + (r.random_range(0..26) as f64) / 10.0;
            let mut attributes = BTreeMap::new();
            attributes.insert("brand".to_string(), brand);
            attributes.insert("review_rating".to_string(), review.to_string());
            attributes.insert(
                "name".to_string(),
                format!("{} item {}", category, j + 1),
            );
            let embedding: Vec<f64> = (0..4).map(|_| (r.random::<f64>() * 2.0) - 1.0).collect();
            let record = ProductRecord {
                product_id: id.clone(),
                category_path: vec![category.clone(), format!("{category} / shelf {}", j % 2 + 1)],
                base_price,
                attributes,
                image_embedding: Some(embedding),
                sales_series: Vec::new(),
            };
            product_index.insert(id.clone(), flat_idx);
            catalog.insert(id.clone(), record);
            ids.push(id);
            flat_idx += 1;
        }
        product_ids.push(ids);
    }

    // Customers with planted parameters.
    let mut customers = Vec::with_capacity(cfg.n_customers);
    let mut planted = PlantedWorld::default();
    for i in 0..cfg.n_customers {
        let id = format!("C-{:04}", i + 1);
        let mut r = rng(&[cfg.seed, 2, i as u64]);
        let alpha = 8.0 + 16.0 * r.random::<f64>();
        let beta = 0.05 + 0.25 * r.random::<f64>();
        let gamma = 0.5 * r.random::<f64>();
        let utility = UtilityWeights {
            price: -(0.2 + 1.8 * r.random::<f64>()),
            review: 2.0 * r.random::<f64>(),
            brand: 3.0 * r.random::<f64>(),
        };
        let favorite_brand = BRAND_NAMES[r.random_range(0..BRAND_NAMES.len())].to_string();
        let style = StyleParams {
            discount_sensitivity: gamma,
            loss_aversion: r.random::<f64>(),
            brand_loyalty: r.random::<f64>(),
            traits: vec![if beta > 0.18 {
                "price-conscious".to_string()
            } else {
                "convenience-driven".to_string()
            }],
        };
        planted.customers.insert(
            id.clone(),
            PlantedCustomer {
                alpha,
                beta,
                gamma,
                noise_sigma: cfg.noise_sigma,
                utility,
                favorite_brand,
                seed: hash_str(&id) ^ cfg.seed,
            },
        );
        customers.push(CustomerRecord {
            customer_id: id,
            income_bracket: INCOME_BRACKETS[r.random_range(0..INCOME_BRACKETS.len())].to_string(),
            buyer_type: BuyerType::Retail,
            style_params: style,
        });
    }

    // Monthly purchases: pick a category, choose the utility argmax among
    // its products at month-effective prices, quantity from the planted rule.
    let mut transactions = Vec::new();
    let mut monthly_sales: BTreeMap<(String, Month), u64> = BTreeMap::new();
    for (i, customer) in customers.iter().enumerate() {
        let params = &planted.customers[&customer.customer_id];
        for m in 0..cfg.months {
            let month = Month::from_index(cfg.start_month.index() + m as u32);
            let mut r = rng(&[cfg.seed, 3, i as u64, m as u64]);
            let c_idx = r.random_range(0..categories.len());

            let mut best: Option<(f64, &str, Money, Money, f64)> = None;
            for pid in &product_ids[c_idx] {
                let product = &catalog[pid];
                let p_idx = product_index[pid];
                let unit = month_price(product.base_price, cfg.seed, p_idx, m);
                let discount = month_discount(cfg.seed, p_idx, m);
                let shown = unit.after_discount(discount);
                let review = product.review_rating().unwrap_or(0.0);
                let utility = planted_utility(
                    &params.utility,
                    &params.favorite_brand,
                    shown,
                    review,
                    product.brand(),
                );
                let better = match &best {
                    None => true,
                    // Ties break toward the ascending product id, which is
                    // the catalog iteration order here.
                    Some((u, ..)) => utility > *u,
                };
                if better {
                    best = Some((utility, pid, unit, shown, discount));
                }
            }
            let (_, pid, unit, shown, discount) = best.expect("category has products");

            let eps = if params.noise_sigma > 0.0 {
                let mut nr = rng(&[params.seed, m as u64]);
                sample_normal(&mut nr) * params.noise_sigma
            } else {
                0.0
            };
            let quantity = planted_quantity(params.alpha, params.beta, params.gamma, shown, discount, eps);
            if quantity == 0 {
                continue;
            }
            let day = 1 + r.random_range(0..28);
            let hour = r.random_range(0..24);
            let product = &catalog[pid];
            transactions.push(TransactionRecord {
                timestamp: month_start(month, day, hour),
                customer_id: customer.customer_id.clone(),
                customer_type: customer.buyer_type,
                product_id: pid.to_string(),
                quantity,
                unit_price: unit,
                discount,
                channel: CHANNELS[r.random_range(0..CHANNELS.len())].to_string(),
                review_score: product.review_rating(),
            });
            *monthly_sales
                .entry((pid.to_string(), month))
                .or_insert(0) += quantity as u64;
        }
    }

    // Transactions in timestamp order; ties keep (customer, product) order.
    transactions.sort_by(|a, b| {
        (a.timestamp, &a.customer_id, &a.product_id)
            .cmp(&(b.timestamp, &b.customer_id, &b.product_id))
    });

    for ((pid, month), qty) in monthly_sales {
        catalog
            .get_mut(&pid)
            .expect("sold product exists")
            .sales_series
            .push((month, qty));
    }

    Ok(SyntheticMarket {
        transactions,
        catalog,
        customers,
        planted,
    })
}

/// Standard normal via Box-Muller; two uniform draws per sample.
pub fn sample_normal<R: Rng>(r: &mut R) -> f64 {
    let u1: f64 = r.random::<f64>().max(1e-12);
    let u2: f64 = r.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig::new(11, 12, 3, 6)
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let a = generate_synthetic_market(&small_cfg()).unwrap();
        let b = generate_synthetic_market(&small_cfg()).unwrap();
        assert_eq!(a.transactions, b.transactions);
        assert_eq!(a.catalog, b.catalog);
        assert_eq!(a.customers, b.customers);
        assert_eq!(
            serde_json::to_string(&a.planted).unwrap(),
            serde_json::to_string(&b.planted).unwrap()
        );
    }

    #[test]
    fn quantities_match_planted_rule_on_each_transaction() {
        let market = generate_synthetic_market(&small_cfg()).unwrap();
        assert!(!market.transactions.is_empty());
        for tx in &market.transactions {
            let params = &market.planted.customers[&tx.customer_id];
            let expected = planted_quantity(
                params.alpha,
                params.beta,
                params.gamma,
                tx.price_after_discount(),
                tx.discount,
                0.0,
            );
            assert_eq!(tx.quantity, expected, "tx {tx:?}");
        }
    }

    #[test]
    fn chosen_product_is_planted_utility_argmax_over_full_category() {
        // The argmax must also hold against same-category products displayed
        // at base price with no discount — the distractor view in prompts.
        let market = generate_synthetic_market(&small_cfg()).unwrap();
        for tx in &market.transactions {
            let params = &market.planted.customers[&tx.customer_id];
            let chosen = &market.catalog[&tx.product_id];
            let chosen_utility = planted_utility(
                &params.utility,
                &params.favorite_brand,
                tx.price_after_discount(),
                chosen.review_rating().unwrap_or(0.0),
                chosen.brand(),
            );
            for product in market.catalog.values() {
                if product.product_id == tx.product_id
                    || product.first_level_category() != chosen.first_level_category()
                {
                    continue;
                }
                let rival_utility = planted_utility(
                    &params.utility,
                    &params.favorite_brand,
                    product.base_price,
                    product.review_rating().unwrap_or(0.0),
                    product.brand(),
                );
                assert!(
                    chosen_utility > rival_utility
                        || (chosen_utility == rival_utility
                            && tx.product_id < product.product_id),
                    "distractor {} would beat {} for {}",
                    product.product_id,
                    tx.product_id,
                    tx.customer_id
                );
            }
        }
    }

    #[test]
    fn zero_beta_makes_quantity_price_independent() {
        let market = generate_synthetic_market(&small_cfg()).unwrap();
        for params in market.planted.customers.values() {
            let q1 = planted_quantity(params.alpha, 0.0, 0.0, "5.00".parse().unwrap(), 0.0, 0.0);
            let q2 = planted_quantity(params.alpha, 0.0, 0.0, "50.00".parse().unwrap(), 0.0, 0.0);
            assert_eq!(q1, q2);
        }
    }

    #[test]
    fn sales_series_strictly_increasing_and_valid() {
        let market = generate_synthetic_market(&small_cfg()).unwrap();
        for product in market.catalog.values() {
            product.validate().unwrap();
        }
        for tx in &market.transactions {
            tx.validate(None).unwrap();
        }
    }
}
