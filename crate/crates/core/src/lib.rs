//! Weighted controlled direct effects: estimands, estimators, the two-group
//! experimental design and a simulation harness for studying them.

pub mod dataset;
pub mod design;
pub mod error;
pub mod estimands;
pub mod estimators;
pub mod grid;
pub mod report;
pub mod rng;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
pub use estimands::{Estimand, EstimandValue, Group, ObservedRecord, PotentialTable};
pub use estimators::EstimateReport;
