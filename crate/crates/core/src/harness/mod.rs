//! Scenarios, experiment drivers, comparisons and file output.

pub mod compare;
pub mod config;
pub mod plots;
pub mod run;
pub mod scenario;

pub use compare::{compare_modes, Comparison};
pub use config::{BudgetSpec, ExperimentConfig, Mode, OfflineSettings, RhoSettings, ScenarioKind, SCHEMA_VERSION};
pub use plots::{emit_plot_data, PlotFiles};
pub use run::{
    build_budget, cost_from_trace_file, iss_violations, quantile, read_deployed, run_experiment, run_rho, run_seed, run_seed_with_m0, train_offline,
    write_seed_dir, BoundStatus, ExperimentOutcome, RunSummary, SeedResult, SeedRun,
};
pub use scenario::{build_scenario, plant_gain, Scenario};
