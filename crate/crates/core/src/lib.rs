//! Voltage-deviation analysis of a low-voltage grid digital twin against
//! non-synchronous smart-meter measurements, for locating non-technical
//! losses (unmetered or fraudulent consumption).
//!
//! The pipeline runs: [`ingest`] → hourly loads → [`powerflow`] →
//! daily statistics and indicators ([`deviation`]) → [`ranking`] of
//! inspection candidates. [`synth`] builds networks and measurement sets
//! with known fraud ground truth; [`store`] and [`heatmap`] persist and
//! present the results.

pub mod deviation;
pub mod error;
pub mod grid;
pub mod heatmap;
pub mod ingest;
pub mod par;
pub mod pipeline;
pub mod powerflow;
pub mod ranking;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use par::Execution;
