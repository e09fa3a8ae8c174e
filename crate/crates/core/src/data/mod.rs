//! Market data model: canonical record types, ingestion, the seeded
//! synthetic market generator, and population sampling helpers.

mod analysis;
mod ingest;
mod synthetic;

pub use analysis::{build_ood_split, inertia_weights, sample_bottom_half_customers};
pub use ingest::{
    ingest_customers, ingest_products, ingest_transactions, read_alignment_jsonl,
    write_customers_jsonl, write_products_jsonl, write_reject_report, write_transactions_csv,
    IngestReport, RejectedRow, SchemaConfig,
};
pub use synthetic::{
    generate_synthetic_market, planted_quantity, planted_utility, sample_normal, PlantedCustomer,
    PlantedWorld, SyntheticConfig, SyntheticMarket, UtilityWeights,
};

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::{Money, Month};
use crate::retail::StyleParams;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Product catalog keyed by product id (ordered for deterministic iteration).
pub type Catalog = BTreeMap<String, ProductRecord>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("unmappable column {0:?}")]
    UnmappableColumn(String),
    #[error("{rejected} of {total} rows rejected, schema mismatch likely")]
    TooManyRejects { rejected: usize, total: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("train and test categories overlap: {0:?}")]
    OverlappingSplit(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuyerType {
    Retail,
    Wholesale,
}

impl std::fmt::Display for BuyerType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BuyerType::Retail => write!(f, "retail"),
            BuyerType::Wholesale => write!(f, "wholesale"),
        }
    }
}

impl std::str::FromStr for BuyerType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "retail" => Ok(BuyerType::Retail),
            "wholesale" => Ok(BuyerType::Wholesale),
            other => Err(format!("unknown buyer type {other:?}")),
        }
    }
}

/// One order row from the transaction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    #[serde(with = "ts_format")]
    pub timestamp: NaiveDateTime,
    pub customer_id: String,
    pub customer_type: BuyerType,
    pub product_id: String,
    pub quantity: u32,
    pub unit_price: Money,
    pub discount: f64,
    pub channel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_score: Option<f64>,
}

mod ts_format {
    use super::{NaiveDateTime, TIMESTAMP_FORMAT};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(dt: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&dt.format(TIMESTAMP_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&raw, TIMESTAMP_FORMAT).map_err(serde::de::Error::custom)
    }
}

impl TransactionRecord {
    /// Invariant check; the returned string is the reject reason.
    pub fn validate(&self, range: Option<(NaiveDateTime, NaiveDateTime)>) -> Result<(), String> {
        if self.quantity < 1 {
            return Err("quantity below 1".into());
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err("discount out of range".into());
        }
        if self.unit_price.is_negative() {
            return Err("negative unit price".into());
        }
        if let Some(score) = self.review_score {
            if !(0.0..=5.0).contains(&score) {
                return Err("review score out of range".into());
            }
        }
        if let Some((lo, hi)) = range {
            if self.timestamp < lo || self.timestamp > hi {
                return Err("timestamp outside configured range".into());
            }
        }
        Ok(())
    }

    pub fn month(&self) -> Month {
        Month::from_datetime(&self.timestamp)
    }

    pub fn price_after_discount(&self) -> Money {
        self.unit_price.after_discount(self.discount)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product_id: String,
    pub category_path: Vec<String>,
    pub base_price: Money,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub sales_series: Vec<(Month, u64)>,
}

impl ProductRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.category_path.is_empty() {
            return Err("empty category path".into());
        }
        if self.base_price.is_negative() {
            return Err("negative base price".into());
        }
        for pair in self.sales_series.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err("sales series months not strictly increasing".into());
            }
        }
        Ok(())
    }

    pub fn first_level_category(&self) -> &str {
        &self.category_path[0]
    }

    /// Brand attribute, falling back to the product id for unbranded rows.
    pub fn brand(&self) -> &str {
        self.attributes
            .get("brand")
            .map(String::as_str)
            .unwrap_or(&self.product_id)
    }

    /// Static review rating carried in attributes, when present.
    pub fn review_rating(&self) -> Option<f64> {
        self.attributes.get("review_rating")?.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerRecord {
    pub customer_id: String,
    pub income_bracket: String,
    pub buyer_type: BuyerType,
    #[serde(default)]
    pub style_params: StyleParams,
}

impl CustomerRecord {
    /// Buyer type must match customer_type on every linked transaction.
    pub fn check_history(&self, history: &[&TransactionRecord]) -> Result<(), String> {
        for tx in history {
            if tx.customer_id != self.customer_id {
                return Err(format!(
                    "transaction customer {} linked to {}",
                    tx.customer_id, self.customer_id
                ));
            }
            if tx.customer_type != self.buyer_type {
                return Err(format!(
                    "buyer type {} does not match transaction type {}",
                    self.buyer_type, tx.customer_type
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub role: String,
    #[serde(with = "ts_format")]
    pub timestamp: NaiveDateTime,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueLog {
    pub dialogue_id: String,
    pub turns: Vec<DialogueTurn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negotiated_outcome: Option<crate::backend::WholesaleDecision>,
}

impl DialogueLog {
    pub fn validate(&self) -> Result<(), String> {
        for pair in self.turns.windows(2) {
            if pair[1].timestamp < pair[0].timestamp {
                return Err("dialogue turns out of timestamp order".into());
            }
        }
        Ok(())
    }
}

/// Disjoint first-level category split for out-of-distribution evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OodSplit {
    pub train_categories: BTreeSet<String>,
    pub test_categories: BTreeSet<String>,
}

impl OodSplit {
    pub fn side_of(&self, category: &str) -> Option<SplitSide> {
        if self.train_categories.contains(category) {
            Some(SplitSide::Train)
        } else if self.test_categories.contains(category) {
            Some(SplitSide::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSide {
    Train,
    Test,
}

/// Join helper: per-customer transaction views in input order.
pub fn history_by_customer<'a>(
    transactions: &'a [TransactionRecord],
) -> BTreeMap<&'a str, Vec<&'a TransactionRecord>> {
    let mut map: BTreeMap<&str, Vec<&TransactionRecord>> = BTreeMap::new();
    for tx in transactions {
        map.entry(tx.customer_id.as_str()).or_default().push(tx);
    }
    map
}
