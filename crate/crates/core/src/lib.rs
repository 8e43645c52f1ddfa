//! Cooperative mmWave air-to-ground channel modeling in a UAV network.
//!
//! The pipeline runs a synthetic channel [`channel::Scene`], pilot-based
//! [`estimation`] of per-UAV datasets, ring [`formation`] over feasible
//! air-to-air links ([`airlink`], [`graph`]), distributed GAN training over the
//! ring ([`gan`] on top of [`nnet`]), and evaluation through the convergence
//! analytics ([`convergence`]) and accuracy/rate [`metrics`]. [`simctl`] wires
//! the stages together and backs the command-line tool.

pub mod airlink;
pub mod channel;
pub mod convergence;
pub mod error;
pub mod estimation;
pub mod formation;
pub mod gan;
pub mod graph;
pub mod metrics;
pub mod nnet;
pub mod simctl;
mod textfmt;

pub use error::{Error, Result};

/// A position in metres: `[x, y, z]`.
pub type Point = [f64; 3];

pub fn distance(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Converts dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}
