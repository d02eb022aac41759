//! Energy management for energy-harvesting sensor nodes.
//!
//! The crate covers a single node (policies and a slotted simulator), the
//! finite MDP that yields delay-optimal policies, a centralized slotted MAC
//! with opportunistic schedulers, and an event-driven CSMA simulator with
//! channel- and queue-aware backoff.

pub mod csma;
pub mod dist;
pub mod error;
pub mod mac;
pub mod mdp;
pub mod node;
pub mod policy;
pub mod rate;
pub mod rng;

pub use dist::{DistributionSpec, Estimate, Sampler, Truncation};
pub use error::{Error, Result};
pub use rate::{RateFunction, RateKind};
pub use rng::RandomStream;
pub use policy::{NodeState, PolicyKind, PolicySpec, PolicyTable, SensingConfig};
