//! File ingestion: CSV (header row, UTF-8) and JSON-lines, with a column
//! mapping so foreign headers can be adapted without rewriting files.
//!
//! Rows that fail invariants never reach downstream modules; they are
//! collected into a reject report with one reason per row.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{
    BuyerType, Catalog, CustomerRecord, DataError, ProductRecord, TransactionRecord,
    TIMESTAMP_FORMAT,
};
use crate::money::{Money, Month};
use crate::prompt::AlignmentExample;
use crate::retail::StyleParams;

/// Maps canonical field names to the column names present in the file.
/// Unmapped fields fall back to their canonical name.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SchemaConfig {
    #[serde(default)]
    pub columns: BTreeMap<String, String>,
    /// Optional accepted timestamp range (inclusive).
    #[serde(default)]
    pub date_range: Option<(String, String)>,
}

impl SchemaConfig {
    fn column<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.columns
            .get(canonical)
            .map(String::as_str)
            .unwrap_or(canonical)
    }

    fn parsed_range(&self) -> Result<Option<(NaiveDateTime, NaiveDateTime)>, DataError> {
        match &self.date_range {
            None => Ok(None),
            Some((lo, hi)) => {
                let lo = NaiveDateTime::parse_from_str(lo, TIMESTAMP_FORMAT)
                    .map_err(|e| DataError::InvalidRecord(format!("bad date_range start: {e}")))?;
                let hi = NaiveDateTime::parse_from_str(hi, TIMESTAMP_FORMAT)
                    .map_err(|e| DataError::InvalidRecord(format!("bad date_range end: {e}")))?;
                Ok(Some((lo, hi)))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RejectedRow {
    pub row_index: usize,
    pub reason: String,
}

#[derive(Debug)]
pub struct IngestReport<T> {
    pub records: Vec<T>,
    pub rejects: Vec<RejectedRow>,
}

impl<T> IngestReport<T> {
    fn guard_reject_rate(self) -> Result<Self, DataError> {
        let total = self.records.len() + self.rejects.len();
        if total > 0 && self.rejects.len() * 2 > total {
            return Err(DataError::TooManyRejects {
                rejected: self.rejects.len(),
                total,
            });
        }
        Ok(self)
    }
}

fn read_to_string(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn is_jsonl(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson") | Some("json")
    )
}

/// Pull a field out of a JSON object under the schema's column mapping.
fn json_field<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    schema: &SchemaConfig,
    canonical: &str,
) -> Option<&'a serde_json::Value> {
    obj.get(schema.column(canonical))
}

fn value_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Transactions
// ---------------------------------------------------------------------------

const TX_FIELDS: [&str; 9] = [
    "timestamp",
    "customer_id",
    "customer_type",
    "product_id",
    "quantity",
    "unit_price",
    "discount",
    "channel",
    "review_score",
];

fn tx_from_fields(
    get: impl Fn(&str) -> Option<String>,
    range: Option<(NaiveDateTime, NaiveDateTime)>,
) -> Result<TransactionRecord, String> {
    let field = |name: &str| get(name).ok_or_else(|| format!("missing field {name}"));
    let timestamp = NaiveDateTime::parse_from_str(&field("timestamp")?, TIMESTAMP_FORMAT)
        .map_err(|_| "unparseable timestamp".to_string())?;
    let customer_type: BuyerType = field("customer_type")?.parse()?;
    let quantity: u32 = field("quantity")?
        .trim()
        .parse()
        .map_err(|_| "unparseable quantity".to_string())?;
    let unit_price: Money = field("unit_price")?
        .parse()
        .map_err(|_| "unparseable unit price".to_string())?;
    let discount: f64 = field("discount")?
        .trim()
        .parse()
        .map_err(|_| "unparseable discount".to_string())?;
    let review_score = match get("review_score") {
        None => None,
        Some(s) if s.trim().is_empty() => None,
        Some(s) => Some(
            s.trim()
                .parse::<f64>()
                .map_err(|_| "unparseable review score".to_string())?,
        ),
    };
    let record = TransactionRecord {
        timestamp,
        customer_id: field("customer_id")?,
        customer_type,
        product_id: field("product_id")?,
        quantity,
        unit_price,
        discount,
        channel: field("channel")?,
        review_score,
    };
    record.validate(range)?;
    Ok(record)
}

pub fn ingest_transactions(
    path: &Path,
    schema: &SchemaConfig,
) -> Result<IngestReport<TransactionRecord>, DataError> {
    let range = schema.parsed_range()?;
    let text = read_to_string(path)?;
    let mut records = Vec::new();
    let mut rejects = Vec::new();

    if is_jsonl(path) {
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = match serde_json::from_str(line) {
                Ok(v) => v,
                Err(e) => {
                    rejects.push(RejectedRow {
                        row_index: idx,
                        reason: format!("malformed json: {e}"),
                    });
                    continue;
                }
            };
            let obj = value.as_object().ok_or(DataError::MalformedLine {
                line: idx,
                reason: "not a json object".into(),
            })?;
            match tx_from_fields(
                |name| json_field(obj, schema, name).map(value_to_string),
                range,
            ) {
                Ok(r) => records.push(r),
                Err(reason) => rejects.push(RejectedRow {
                    row_index: idx,
                    reason,
                }),
            }
        }
    } else {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| DataError::InvalidRecord(e.to_string()))?
            .clone();
        let col_index = |name: &str| headers.iter().position(|h| h == name);
        // Optional fields may be absent; the mandatory ones must map.
        for canonical in TX_FIELDS.iter().take(8) {
            let mapped = schema.column(canonical);
            if col_index(mapped).is_none() {
                return Err(DataError::UnmappableColumn(mapped.to_string()));
            }
        }
        for (idx, row) in reader.records().enumerate() {
            let row = match row {
                Ok(r) => r,
                Err(e) => {
                    rejects.push(RejectedRow {
                        row_index: idx,
                        reason: format!("malformed csv row: {e}"),
                    });
                    continue;
                }
            };
            match tx_from_fields(
                |name| {
                    col_index(schema.column(name))
                        .and_then(|i| row.get(i))
                        .map(str::to_string)
                },
                range,
            ) {
                Ok(r) => records.push(r),
                Err(reason) => rejects.push(RejectedRow {
                    row_index: idx,
                    reason,
                }),
            }
        }
    }

    IngestReport { records, rejects }.guard_reject_rate()
}

pub fn write_transactions_csv(
    path: &Path,
    records: &[TransactionRecord],
) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str("timestamp,customer_id,customer_type,product_id,quantity,unit_price,discount,channel,review_score\n");
    for r in records {
        let review = r
            .review_score
            .map(|v| v.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.timestamp.format(TIMESTAMP_FORMAT),
            r.customer_id,
            r.customer_type,
            r.product_id,
            r.quantity,
            r.unit_price,
            r.discount,
            r.channel,
            review
        ));
    }
    fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

pub fn ingest_products(path: &Path, schema: &SchemaConfig) -> Result<Catalog, DataError> {
    let text = read_to_string(path)?;
    let mut catalog = Catalog::new();
    if is_jsonl(path) {
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ProductRecord =
                serde_json::from_str(line).map_err(|e| DataError::MalformedLine {
                    line: idx,
                    reason: e.to_string(),
                })?;
            record
                .validate()
                .map_err(|reason| DataError::MalformedLine { line: idx, reason })?;
            if catalog.contains_key(&record.product_id) {
                return Err(DataError::DuplicateId(record.product_id));
            }
            catalog.insert(record.product_id.clone(), record);
        }
    } else {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| DataError::InvalidRecord(e.to_string()))?
            .clone();
        let col_index = |name: &str| headers.iter().position(|h| h == name);
        for canonical in ["product_id", "category_path", "base_price"] {
            let mapped = schema.column(canonical);
            if col_index(mapped).is_none() {
                return Err(DataError::UnmappableColumn(mapped.to_string()));
            }
        }
        for (idx, row) in reader.records().enumerate() {
            let row = row.map_err(|e| DataError::MalformedLine {
                line: idx,
                reason: e.to_string(),
            })?;
            let get = |name: &str| {
                col_index(schema.column(name))
                    .and_then(|i| row.get(i))
                    .map(str::to_string)
            };
            let field = |name: &str| {
                get(name).ok_or(DataError::MalformedLine {
                    line: idx,
                    reason: format!("missing field {name}"),
                })
            };
            let attributes: BTreeMap<String, String> = match get("attributes") {
                Some(s) if !s.trim().is_empty() => {
                    serde_json::from_str(&s).map_err(|e| DataError::MalformedLine {
                        line: idx,
                        reason: format!("bad attributes json: {e}"),
                    })?
                }
                _ => BTreeMap::new(),
            };
            let image_embedding: Option<Vec<f64>> = match get("image_embedding") {
                Some(s) if !s.trim().is_empty() => {
                    Some(serde_json::from_str(&s).map_err(|e| DataError::MalformedLine {
                        line: idx,
                        reason: format!("bad embedding json: {e}"),
                    })?)
                }
                _ => None,
            };
            let sales_series: Vec<(Month, u64)> = match get("sales_series") {
                Some(s) if !s.trim().is_empty() => {
                    serde_json::from_str(&s).map_err(|e| DataError::MalformedLine {
                        line: idx,
                        reason: format!("bad sales series json: {e}"),
                    })?
                }
                _ => Vec::new(),
            };
            let record = ProductRecord {
                product_id: field("product_id")?,
                category_path: field("category_path")?
                    .split('|')
                    .map(str::to_string)
                    .collect(),
                base_price: field("base_price")?.parse().map_err(|_| {
                    DataError::MalformedLine {
                        line: idx,
                        reason: "unparseable base price".into(),
                    }
                })?,
                attributes,
                image_embedding,
                sales_series,
            };
            record
                .validate()
                .map_err(|reason| DataError::MalformedLine { line: idx, reason })?;
            if catalog.contains_key(&record.product_id) {
                return Err(DataError::DuplicateId(record.product_id));
            }
            catalog.insert(record.product_id.clone(), record);
        }
    }
    Ok(catalog)
}

pub fn write_products_jsonl(path: &Path, catalog: &Catalog) -> Result<(), DataError> {
    let mut out = String::new();
    for record in catalog.values() {
        out.push_str(&serde_json::to_string(record).expect("product serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Customers
// ---------------------------------------------------------------------------

pub fn ingest_customers(
    path: &Path,
    schema: &SchemaConfig,
) -> Result<Vec<CustomerRecord>, DataError> {
    let text = read_to_string(path)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut records = Vec::new();
    if is_jsonl(path) {
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: CustomerRecord =
                serde_json::from_str(line).map_err(|e| DataError::MalformedLine {
                    line: idx,
                    reason: e.to_string(),
                })?;
            if !seen.insert(record.customer_id.clone()) {
                return Err(DataError::DuplicateId(record.customer_id));
            }
            records.push(record);
        }
    } else {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| DataError::InvalidRecord(e.to_string()))?
            .clone();
        let col_index = |name: &str| headers.iter().position(|h| h == name);
        for canonical in ["customer_id", "income_bracket", "buyer_type"] {
            let mapped = schema.column(canonical);
            if col_index(mapped).is_none() {
                return Err(DataError::UnmappableColumn(mapped.to_string()));
            }
        }
        for (idx, row) in reader.records().enumerate() {
            let row = row.map_err(|e| DataError::MalformedLine {
                line: idx,
                reason: e.to_string(),
            })?;
            let get = |name: &str| {
                col_index(schema.column(name))
                    .and_then(|i| row.get(i))
                    .map(str::to_string)
            };
            let style_params: StyleParams = match get("style_params") {
                Some(s) if !s.trim().is_empty() => {
                    serde_json::from_str(&s).map_err(|e| DataError::MalformedLine {
                        line: idx,
                        reason: format!("bad style params json: {e}"),
                    })?
                }
                _ => StyleParams::default(),
            };
            let field = |name: &str| {
                get(name).ok_or(DataError::MalformedLine {
                    line: idx,
                    reason: format!("missing field {name}"),
                })
            };
            let record = CustomerRecord {
                customer_id: field("customer_id")?,
                income_bracket: field("income_bracket")?,
                buyer_type: field("buyer_type")?.parse().map_err(|reason| {
                    DataError::MalformedLine {
                        line: idx,
                        reason,
                    }
                })?,
                style_params,
            };
            if !seen.insert(record.customer_id.clone()) {
                return Err(DataError::DuplicateId(record.customer_id));
            }
            records.push(record);
        }
    }
    Ok(records)
}

pub fn write_customers_jsonl(path: &Path, customers: &[CustomerRecord]) -> Result<(), DataError> {
    let mut out = String::new();
    for record in customers {
        out.push_str(&serde_json::to_string(record).expect("customer serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Reject report and alignment dataset files
// ---------------------------------------------------------------------------

pub fn write_reject_report(path: &Path, rejects: &[RejectedRow]) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    for r in rejects {
        let line = serde_json::to_string(r).expect("reject row serializes");
        writeln!(file, "{line}").map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

pub fn read_alignment_jsonl(path: &Path) -> Result<Vec<AlignmentExample>, DataError> {
    let text = read_to_string(path)?;
    let mut examples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: AlignmentExample =
            serde_json::from_str(line).map_err(|e| DataError::MalformedLine {
                line: idx,
                reason: e.to_string(),
            })?;
        examples.push(ex);
    }
    Ok(examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed_rows_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tx.csv");
        fs::write(
            &path,
            "timestamp,customer_id,customer_type,product_id,quantity,unit_price,discount,channel,review_score\n\
             2024-01-05T10:00:00,c1,retail,p1,2,10.00,0.1,online,4.5\n\
             2024-01-06T10:00:00,c2,retail,p2,1,5.50,0,store,\n\
             2024-01-07T10:00:00,c3,wholesale,p1,40,9.00,0.25,online,3\n",
        )
        .unwrap();
        let report = ingest_transactions(&path, &SchemaConfig::default()).unwrap();
        assert_eq!(report.records.len(), 3);
        assert!(report.rejects.is_empty());
        assert_eq!(report.records[0].unit_price.to_string(), "10.00");
    }

    #[test]
    fn out_of_range_discount_is_rejected_with_reason() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tx.csv");
        fs::write(
            &path,
            "timestamp,customer_id,customer_type,product_id,quantity,unit_price,discount,channel,review_score\n\
             2024-01-05T10:00:00,c1,retail,p1,2,10.00,1.4,online,\n\
             2024-01-06T10:00:00,c2,retail,p2,1,5.50,0,store,\n\
             2024-01-07T10:00:00,c2,retail,p2,1,5.50,0,store,\n",
        )
        .unwrap();
        let report = ingest_transactions(&path, &SchemaConfig::default()).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.rejects.len(), 1);
        assert_eq!(report.rejects[0].reason, "discount out of range");
        assert_eq!(report.rejects[0].row_index, 0);
    }

    #[test]
    fn missing_column_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tx.csv");
        fs::write(&path, "timestamp,customer_id\n2024-01-05T10:00:00,c1\n").unwrap();
        let err = ingest_transactions(&path, &SchemaConfig::default()).unwrap_err();
        assert!(matches!(err, DataError::UnmappableColumn(_)));
    }

    #[test]
    fn majority_rejected_signals_schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tx.csv");
        fs::write(
            &path,
            "timestamp,customer_id,customer_type,product_id,quantity,unit_price,discount,channel,review_score\n\
             bad,c1,retail,p1,2,10.00,0.1,online,\n\
             bad,c2,retail,p2,1,5.50,0,store,\n\
             2024-01-07T10:00:00,c3,retail,p1,4,9.00,0.25,online,\n",
        )
        .unwrap();
        let err = ingest_transactions(&path, &SchemaConfig::default()).unwrap_err();
        assert!(matches!(err, DataError::TooManyRejects { rejected: 2, total: 3 }));
    }

    #[test]
    fn schema_mapping_renames_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tx.csv");
        fs::write(
            &path,
            "ts,cust,customer_type,product_id,quantity,unit_price,discount,channel,review_score\n\
             2024-01-05T10:00:00,c1,retail,p1,2,10.00,0.1,online,\n",
        )
        .unwrap();
        let mut schema = SchemaConfig::default();
        schema
            .columns
            .insert("timestamp".into(), "ts".into());
        schema
            .columns
            .insert("customer_id".into(), "cust".into());
        let report = ingest_transactions(&path, &schema).unwrap();
        assert_eq!(report.records[0].customer_id, "c1");
    }

    #[test]
    fn duplicate_product_id_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("products.jsonl");
        let product = serde_json::json!({
            "product_id": "p1",
            "category_path": ["Cat"],
            "base_price": 5.0,
        });
        fs::write(&path, format!("{product}\n{product}\n")).unwrap();
        let err = ingest_products(&path, &SchemaConfig::default()).unwrap_err();
        assert!(matches!(err, DataError::DuplicateId(id) if id == "p1"));
    }

    #[test]
    fn two_unique_products_make_a_catalog_of_two() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("products.jsonl");
        fs::write(
            &path,
            concat!(
                "{\"product_id\":\"p1\",\"category_path\":[\"Cat\"],\"base_price\":5.0}\n",
                "{\"product_id\":\"p2\",\"category_path\":[\"Cat\"],\"base_price\":6.5}\n",
            ),
        )
        .unwrap();
        let catalog = ingest_products(&path, &SchemaConfig::default()).unwrap();
        assert_eq!(catalog.len(), 2);
    }
}
