//! Subcommand implementations.

mod bound;
mod build_dataset;
mod calibrate;
mod evaluate;
mod generate;
mod rules;
mod simulate;

pub use bound::cmd_bound;
pub use build_dataset::cmd_build_dataset;
pub use calibrate::cmd_calibrate;
pub use evaluate::cmd_evaluate;
pub use generate::cmd_generate;
pub use rules::cmd_discover_rules;
pub use simulate::{cmd_simulate, EpisodeRecord, SimulateMode};
