//! Bundled data sets and study configurations.
//!
//! The NVDRS counts classify violent-death cases by exposure group (`E`, `U`)
//! and by membership of three lists: death certificates (DC), law-enforcement
//! reports (LE) and coroner/medical-examiner reports (CME), in that column
//! order.

use crate::error::Result;
use crate::tables::{read_aggregated, TablePair};

pub const NVDRS_CSV: &str = include_str!("../fixtures/nvdrs.csv");
/// The NVDRS tables with the all-zero cell filled from the log-linear fit.
pub const NVDRS_COMPLETED_CSV: &str = include_str!("../fixtures/nvdrs_completed.csv");
pub const BIAS_STUDY_TOML: &str = include_str!("../fixtures/bias_study.toml");
pub const ESTIMATOR_STUDY_TOML: &str = include_str!("../fixtures/estimator_study.toml");

pub const NVDRS_LISTS: [&str; 3] = ["DC", "LE", "CME"];

fn pair(csv: &str) -> Result<TablePair> {
    let groups = read_aggregated(csv.as_bytes())?;
    TablePair::from_groups(&groups, "E", "U", Some(NVDRS_LISTS.map(String::from).to_vec()))
}

pub fn nvdrs() -> TablePair {
    pair(NVDRS_CSV).expect("bundled fixture parses")
}

pub fn nvdrs_completed() -> TablePair {
    pair(NVDRS_COMPLETED_CSV).expect("bundled fixture parses")
}
