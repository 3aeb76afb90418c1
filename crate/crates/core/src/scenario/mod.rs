pub mod config;
pub mod metrics;
pub mod report;
pub mod sim;

pub use config::{Method, ScenarioConfig};
pub use metrics::compute_jitter;
pub use report::{compare_methods, run_scenario, Report, ReportRow};
pub use sim::{run_once, RunOutput, WindowMetrics};
