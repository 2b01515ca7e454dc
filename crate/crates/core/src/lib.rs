#![allow(clippy::needless_range_loop, clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]

pub mod chart;
pub mod conservation;
pub mod constraints;
pub mod error;
pub mod field;
pub mod flows;
pub mod geom;
pub mod jet;
pub mod kernel;
pub mod milnor;
pub mod parametrix;
pub mod random;
pub mod report;
pub mod scenario;
pub mod sum;
pub mod torus;

pub use chart::Chart;
pub use error::{LabError, Result};
pub use field::MetricField;
pub use flows::{FlowOptions, FlowTrajectory, GuardEvent};
pub use report::{CheckRecord, CsvTable, Family, RunManifest, Status, Summary};
pub use scenario::{run_scenario, RunOutcome, ScenarioConfig};
