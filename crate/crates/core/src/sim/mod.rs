//! Episode/slot loop tying mobility, channels, allocation, local training
//! and aggregation together.

pub mod clock;
pub mod config;
pub mod env;
pub mod metrics;
pub mod run;

pub use clock::{slot_to_round, SlotClock};
pub use config::{Aggregator, Allocator, Baseline, RunConfig};
pub use env::{evaluate_allocation, EnvStreams, Environment, SlotOutcome, SlotReport};
pub use metrics::{MetricsRow, Stats, Summary};
pub use run::{run_baseline, run_test, run_training, write_outputs, RunOutput};
