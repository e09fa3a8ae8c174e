//! `generate`: materialize a seeded synthetic market on disk.

use std::path::Path;

use marketsim_core::data::{
    generate_synthetic_market, write_customers_jsonl, write_products_jsonl,
    write_transactions_csv, SyntheticConfig,
};

use crate::error::{io_runtime, CliError, CliResult};
use crate::world::ensure_out_dir;

pub fn cmd_generate(
    seed: u64,
    n_customers: usize,
    n_categories: usize,
    months: usize,
    out_dir: &Path,
) -> CliResult<()> {
    if n_customers < 1 || n_categories < 1 || months < 1 {
        return Err(CliError::usage(
            "customers, categories and months must all be at least 1",
        ));
    }
    ensure_out_dir(out_dir)?;
    let market = generate_synthetic_market(&SyntheticConfig::new(
        seed,
        n_customers,
        n_categories,
        months,
    ))
    .map_err(|e| CliError::runtime(e.to_string()))?;

    let tx_path = out_dir.join("transactions.csv");
    let products_path = out_dir.join("products.jsonl");
    let customers_path = out_dir.join("customers.jsonl");
    let planted_path = out_dir.join("planted.json");

    write_transactions_csv(&tx_path, &market.transactions)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    write_products_jsonl(&products_path, &market.catalog)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    write_customers_jsonl(&customers_path, &market.customers)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let planted =
        serde_json::to_string_pretty(&market.planted).expect("planted params serialize");
    std::fs::write(&planted_path, planted).map_err(|e| io_runtime(&planted_path, e))?;

    println!(
        "generated {} transactions, {} products, {} customers into {}",
        market.transactions.len(),
        market.catalog.len(),
        market.customers.len(),
        out_dir.display()
    );
    Ok(())
}
