//! Detection and correction of differential ascertainment in multi-list
//! capture-recapture counts.
//!
//! Case counts for an exposed and an unexposed group are cross-classified by
//! which of `J` lists captured each case. A Rasch-type capture model with a
//! group shift `theta` is fitted to both tables; `theta != 0` indicates that
//! one group is more readily captured than the other, which biases naive
//! comparisons of case counts.

pub mod error;
pub mod estimation;
pub mod fixtures;
pub mod likelihood;
pub mod loglinear;
pub mod optim;
pub mod quadrature;
pub mod rasch;
pub mod report;
pub mod rng;
pub mod simstudy;
pub mod tables;
pub mod threesided;

pub use error::{Error, Result};
pub use estimation::{fit, fit_data, odds_ratio, profile_gamma, Derived, FitData, FitResult, FitSpec, Variant};
pub use likelihood::RandomEffectsParams;
pub use rasch::{CaptureModel, PoissonRates, RaschParams};
pub use tables::{CapturePattern, Completeness, ContingencyTable, TablePair};
