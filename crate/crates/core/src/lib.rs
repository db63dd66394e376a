//! Vehicular federated self-supervised learning simulator.
//!
//! Vehicles cross an intersection, train a toy contrastive encoder on board
//! and upload it over a fading uplink. A soft actor-critic agent picks
//! transmit powers and CPU frequencies, bandwidth is split in closed form,
//! and the base station merges uploads with weights that shrink as motion
//! blur grows.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod channel;
pub mod checkpoint;
pub mod compute;
pub mod error;
pub mod kkt;
pub mod mobility;
pub mod nn;
pub mod pso;
pub mod rng;
pub mod sac;
pub mod sim;
pub mod simco;

pub use aggregate::{BlurRecord, ModelParams};
pub use channel::{ChannelConfig, ChannelRealization};
pub use compute::ComputeConfig;
pub use error::{Error, Result};
pub use kkt::{AllocationAction, CostBreakdown, ObjectiveWeights, ReducedCoefficients};
pub use mobility::{MobilityConfig, VehicleState};
pub use nn::{Activation, Mlp, OptimizerKind};
pub use pso::PsoConfig;
pub use sac::{ActionBounds, ActionMode, SacAction, SacAgent, SacConfig, SacState, Transition};
pub use sim::{
    run_baseline, run_test, run_training, Aggregator, Allocator, Baseline, MetricsRow, RunConfig, RunOutput, SlotClock,
    Summary,
};
pub use simco::{Dataset, SimcoConfig};
