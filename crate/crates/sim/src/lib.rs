//! Deterministic discrete-event simulator for the objledger validator core:
//! scenarios, clients, the network model, traces and trace-level checks.

pub mod checks;
pub mod client;
pub mod cluster;
pub mod metrics;
pub mod net;
pub mod node;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod wire;

pub use scenario::Scenario;
pub use sim::run;
pub use trace::Trace;
