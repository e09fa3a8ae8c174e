//! `build-dataset`: alignment examples from historical transactions.

use marketsim_core::prompt::{build_alignment_dataset, write_alignment_jsonl, AlignmentOptions};

use crate::config::RunConfig;
use crate::error::{io_runtime, CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::world::{ensure_out_dir, World};

pub fn cmd_build_dataset(config: &RunConfig, config_hash: &str) -> CliResult<()> {
    let world = World::load(config)?;
    if world.transactions.is_empty() {
        return Err(CliError::usage("transactions file holds no records"));
    }
    ensure_out_dir(&config.paths.out_dir)?;

    let options = AlignmentOptions {
        k_distractors: config.retail.k_distractors,
        trends_window: config.retail.trends_window,
        eligible_categories: if config.ood.train.is_empty() {
            None
        } else {
            Some(config.ood.train.iter().cloned().collect())
        },
        retail_only: true,
    };
    let report = build_alignment_dataset(
        &world.transactions,
        &world.catalog,
        &world.customers,
        &options,
        config.seeds.run,
    )
    .map_err(|e| CliError::runtime(e.to_string()))?;

    let out = config.paths.out_dir.join("alignment.jsonl");
    write_alignment_jsonl(&out, &report.examples).map_err(|e| io_runtime(&out, e))?;

    let report_path = config.paths.out_dir.join("alignment_report.json");
    let summary = serde_json::json!({
        "examples": report.examples.len(),
        "skipped": report.skipped,
        "short_candidate_sets": report.short_candidate_sets,
    });
    std::fs::write(&report_path, serde_json::to_string_pretty(&summary).expect("json"))
        .map_err(|e| io_runtime(&report_path, e))?;

    let mut manifest = ManifestBuilder::start(config_hash, config.seeds.run);
    manifest.add_output(&out)?;
    manifest.add_output(&report_path)?;
    manifest.finish(&config.paths.out_dir.join("manifest.json"))?;

    println!(
        "wrote {} alignment examples to {}",
        report.examples.len(),
        out.display()
    );
    Ok(())
}
