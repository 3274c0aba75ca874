//! Batch harness for the three-tank experiments: scenario files, closed-loop
//! runs with CSV output, and scenario validation.

pub mod error;
pub mod run;
pub mod scenario;
pub mod validate;

pub use error::{CliError, Result};
pub use run::{run, simulate, ControllerChoice, RunConfig, RunReport};
pub use scenario::Scenario;
pub use validate::{validate_scenario, ValidationReport};
