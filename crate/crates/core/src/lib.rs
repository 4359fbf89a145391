//! # meshsync
//!
//! A slot-based mesh protocol where nodes synchronize locally from the
//! reception instants of their neighbors' beacons, pick collision-free slots
//! without a coordinator, and forward messages along shortest hop paths to
//! reference (sink) nodes.
//!
//! - [`protocol`]: the pure per-node state machine.
//! - [`frame`]: byte-exact beacon and data frame codec.
//! - [`channel`]: path loss, shadowing, fading and link accessibility.
//! - [`sim`]: deterministic discrete-event simulator.
//! - [`metrics`]: victim traces, collision curves, hop and neighbor accuracy.
//! - [`scenario`]: scenario files and built-in presets.
//! - [`commands`]: the `run`, `sweep`, `report` and `preset-dump` commands.

pub mod channel;
pub mod commands;
pub mod frame;
pub mod metrics;
pub mod protocol;
pub mod scenario;
pub mod sim;
