//! Deterministic scenario driver wiring the log, nodes and contracts
//! together, with an independent oracle for cross-checking.

mod oracle;
mod report;
mod runner;
mod scenario;

pub use oracle::{oracle_replay, OracleError, OracleState};
pub use report::{
    ChannelReport, CheckpointEntry, DisputeEntry, HtlcEntry, SettlementEntry, SimReport, ViewState, REPORT_HEADER,
};
pub use runner::{independent_groups, run_scenario, run_scenario_parallel};
pub use scenario::{
    random_scenario, relay_payment, Action, ChannelSpec, Preimage, Relay, Scenario, ScenarioError, TimedAction, HEADER,
};
