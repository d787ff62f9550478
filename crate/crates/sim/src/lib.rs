//! Deterministic simulator around the teleoperation control kernel.
//!
//! A [`scenario::Scenario`] describes the arms, the geometric primitives and
//! the constraints between them. [`sim::Simulation`] advances it one control
//! tick at a time from master commands, which come either from a script file
//! ([`sim::run_script`]) or from live clients ([`server::serve`]). Every tick
//! produces one [`telemetry::Record`].

pub mod plot;
pub mod protocol;
pub mod scenario;
pub mod server;
pub mod sim;
pub mod telemetry;

pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use sim::{run_script, Simulation, Summary};
