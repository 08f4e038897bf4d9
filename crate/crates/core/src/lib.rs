//! Navigation engine with a reality/imagination hybrid topological memory.
//!
//! Modules, bottom-up:
//!
//! * [`world`]: procedural synthetic buildings, observations, expert paths
//!   and landmark instructions.
//! * [`memory`]: the agent's typed topological map, imagination pruning and
//!   node embedding inputs.
//! * [`policy`]: instruction encoder, graph-aware cross-modal transformer,
//!   score heads, score fusion and the imitation loss.
//! * [`imagination`]: the imagination tree, imaginers, room-type
//!   reweighting and the polar waypoint heatmap.
//! * [`metrics`]: NE, TL, SR, OSR and SPL.
//! * [`harness`]: episode loop, training, ablation suites and reports.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod imagination;
pub mod memory;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod tape;
pub mod world;

pub use error::{Error, Result};
