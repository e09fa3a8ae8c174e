//! Backend pool construction from configuration.

use marketsim_core::backend::{
    Backend, BackendDescriptor, MockBehavior, ModelPool,
};
use marketsim_core::data::PlantedWorld;

use crate::config::{BackendEntry, BackendKind, RunConfig};
use crate::error::{CliError, CliResult};

fn build_backend(entry: &BackendEntry, planted: Option<&PlantedWorld>) -> CliResult<Backend> {
    match entry.kind {
        BackendKind::Http => {
            let endpoint = entry
                .endpoint
                .clone()
                .ok_or_else(|| CliError::usage(format!("backend {} needs an endpoint", entry.name)))?;
            let model = entry
                .model
                .clone()
                .ok_or_else(|| CliError::usage(format!("backend {} needs a model", entry.name)))?;
            Backend::http(BackendDescriptor {
                name: entry.name.clone(),
                endpoint,
                model,
                temperature: entry.temperature,
                timeout_secs: entry.timeout_secs,
                max_retries: entry.max_retries,
                api_key_env: entry.api_key_env.clone(),
            })
            .map_err(|e| CliError::usage(e.to_string()))
        }
        BackendKind::MockPlanted => {
            let world = planted.ok_or_else(|| {
                CliError::usage(
                    "mock-planted backend requires paths.planted (run `generate` first)",
                )
            })?;
            Ok(Backend::mock(
                entry.name.clone(),
                MockBehavior::Planted(world.clone()),
            ))
        }
        BackendKind::MockLinear => Ok(Backend::mock(
            entry.name.clone(),
            MockBehavior::MeanFieldLinear {
                base: entry.base,
                slope: entry.slope,
            },
        )),
        BackendKind::MockWholesale => Ok(Backend::mock(
            entry.name.clone(),
            MockBehavior::WholesaleRole {
                proposal: entry.proposal.clone(),
            },
        )),
        BackendKind::MockCanned => Ok(Backend::mock(
            entry.name.clone(),
            MockBehavior::Canned(entry.text.clone()),
        )),
    }
}

/// Build the configured pool. `force_mock` (the --mock flag) replaces any
/// HTTP backends with the planted mock so runs never leave the machine.
pub fn build_pool(
    config: &RunConfig,
    planted: Option<&PlantedWorld>,
    force_mock: bool,
) -> CliResult<ModelPool> {
    let mut backends = Vec::new();
    for entry in &config.backends.pool {
        if force_mock && entry.kind == BackendKind::Http {
            let world = planted.ok_or_else(|| {
                CliError::usage("--mock requires paths.planted (run `generate` first)")
            })?;
            backends.push(Backend::mock(
                format!("{}-mock", entry.name),
                MockBehavior::Planted(world.clone()),
            ));
        } else {
            backends.push(build_backend(entry, planted)?);
        }
    }
    ModelPool::new(backends, config.backends.selection_seed)
        .map_err(|e| CliError::usage(e.to_string()))
}

/// Pool for wholesale dialogue runs; role mocks unless HTTP configured.
pub fn build_wholesale_pool(config: &RunConfig, force_mock: bool) -> CliResult<ModelPool> {
    let mut backends = Vec::new();
    for entry in &config.backends.pool {
        let backend = match entry.kind {
            BackendKind::Http if !force_mock => build_backend(entry, None)?,
            BackendKind::MockCanned => build_backend(entry, None)?,
            _ => Backend::mock(
                entry.name.clone(),
                MockBehavior::WholesaleRole {
                    proposal: entry.proposal.clone(),
                },
            ),
        };
        backends.push(backend);
    }
    ModelPool::new(backends, config.backends.selection_seed)
        .map_err(|e| CliError::usage(e.to_string()))
}
