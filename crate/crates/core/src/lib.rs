//! Replay of recorded execution traces: trace parsing, operator selection,
//! profile correlation, replay-plan construction, and simulation.

pub mod cli;
pub mod graph;
pub mod metrics;
pub mod pipeline;
pub mod plan;
pub mod profile;
pub mod schema;
pub mod sim;
pub mod trace;
