//! Loaded market data plus the shared instance-selection machinery.

use std::collections::BTreeMap;
use std::path::Path;

use marketsim_core::data::{
    ingest_customers, ingest_products, ingest_transactions, sample_bottom_half_customers, Catalog,
    CustomerRecord, PlantedWorld, SchemaConfig, TransactionRecord,
};
use marketsim_core::seed;
use rand::Rng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub struct World {
    pub transactions: Vec<TransactionRecord>,
    pub catalog: Catalog,
    pub customers: Vec<CustomerRecord>,
    pub planted: Option<PlantedWorld>,
    customer_index: BTreeMap<String, usize>,
    history: BTreeMap<String, Vec<TransactionRecord>>,
}

impl World {
    pub fn load(config: &RunConfig) -> CliResult<World> {
        config.check_paths(true)?;
        let schema = SchemaConfig::default();
        let report = ingest_transactions(&config.paths.transactions, &schema)
            .map_err(|e| CliError::runtime(format!("transactions: {e}")))?;
        if !report.rejects.is_empty() {
            eprintln!(
                "warning: {} transaction rows rejected during ingestion",
                report.rejects.len()
            );
        }
        let catalog = ingest_products(&config.paths.products, &schema)
            .map_err(|e| CliError::runtime(format!("products: {e}")))?;
        let customers = ingest_customers(&config.paths.customers, &schema)
            .map_err(|e| CliError::runtime(format!("customers: {e}")))?;
        let planted = match &config.paths.planted {
            Some(path) if path.exists() => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::runtime(format!("planted: {e}")))?;
                Some(
                    serde_json::from_str(&text)
                        .map_err(|e| CliError::runtime(format!("planted: {e}")))?,
                )
            }
            _ => None,
        };

        let customer_index = customers
            .iter()
            .enumerate()
            .map(|(i, c)| (c.customer_id.clone(), i))
            .collect();
        let mut history: BTreeMap<String, Vec<TransactionRecord>> = BTreeMap::new();
        for tx in &report.records {
            history
                .entry(tx.customer_id.clone())
                .or_default()
                .push(tx.clone());
        }
        Ok(World {
            transactions: report.records,
            catalog,
            customers,
            planted,
            customer_index,
            history,
        })
    }

    pub fn customer(&self, id: &str) -> CliResult<&CustomerRecord> {
        self.customer_index
            .get(id)
            .map(|i| &self.customers[*i])
            .ok_or_else(|| CliError::runtime(format!("unknown customer {id:?}")))
    }

    pub fn history_of(&self, customer_id: &str) -> &[TransactionRecord] {
        self.history
            .get(customer_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn instance_id(tx_index: usize) -> String {
        format!("tx-{tx_index:06}")
    }

    pub fn parse_instance_id(id: &str) -> CliResult<usize> {
        id.strip_prefix("tx-")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::runtime(format!("bad instance id {id:?}")))
    }

    /// Deterministic evaluation-instance selection: retail transactions,
    /// optionally bottom-half customers and an eligible-category filter,
    /// then a seeded draw of up to n. Returned indices are ascending.
    pub fn select_instances(
        &self,
        n: usize,
        bottom_half_only: bool,
        eligible_categories: Option<&std::collections::BTreeSet<String>>,
        run_seed: u64,
    ) -> CliResult<Vec<usize>> {
        let bottom = if bottom_half_only {
            Some(
                sample_bottom_half_customers(&self.transactions, run_seed)
                    .map_err(|e| CliError::runtime(e.to_string()))?,
            )
        } else {
            None
        };
        let mut pool: Vec<usize> = self
            .transactions
            .iter()
            .enumerate()
            .filter(|(_, tx)| tx.customer_type == marketsim_core::data::BuyerType::Retail)
            .filter(|(_, tx)| {
                bottom
                    .as_ref()
                    .map(|b| b.contains(&tx.customer_id))
                    .unwrap_or(true)
            })
            .filter(|(_, tx)| match eligible_categories {
                None => true,
                Some(set) => self
                    .catalog
                    .get(&tx.product_id)
                    .map(|p| set.contains(p.first_level_category()))
                    .unwrap_or(false),
            })
            .map(|(i, _)| i)
            .collect();
        if pool.is_empty() {
            return Err(CliError::usage("no eligible transactions to simulate".into()));
        }
        let take = n.min(pool.len());
        let mut rng = seed::rng(&[run_seed, 0x696e7374]);
        for i in 0..take {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut picked: Vec<usize> = pool.into_iter().take(take).collect();
        picked.sort_unstable();
        Ok(picked)
    }
}

/// Deterministic order-preserving parallel map: results land in input
/// order no matter how threads interleave.
pub fn parallel_map<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1);
    if n == 0 {
        return Vec::new();
    }
    let chunk = n.div_ceil(workers);
    let mut results: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, slots) in results.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(f(w * chunk + j));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("slot filled")).collect()
}

/// Ensure the output directory exists.
pub fn ensure_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let out = parallel_map(100, 7, |i| i * 3);
        assert_eq!(out, (0..100).map(|i| i * 3).collect::<Vec<_>>());
    }

    #[test]
    fn instance_id_round_trip() {
        let id = World::instance_id(42);
        assert_eq!(id, "tx-000042");
        assert_eq!(World::parse_instance_id(&id).unwrap(), 42);
        assert!(World::parse_instance_id("nope").is_err());
    }
}
