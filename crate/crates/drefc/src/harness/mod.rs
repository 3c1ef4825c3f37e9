//! Experiment driver: the trained pipeline, scenario experiments,
//! baselines, studies and report emission.

pub mod experiments;
pub mod pipeline;
pub mod report;
pub mod scenarios;
pub mod studies;

pub use pipeline::{Event, Pipeline};
pub use report::{emit_report, load_report, ExperimentReport};
pub use scenarios::{economy_indicator, generate_scenarios, safety_indicator, ScenarioRun};
