//! Stationary occupancy of multicell networks with infinite-server cells.
//!
//! Users follow routes through cells; each cell serves every user present at
//! once. The stationary joint occupancy is a product of independent Poisson
//! laws whose means depend only on per-cell arrival rates and mean holding
//! times, whatever the shape or correlation of the holding times.
//!
//! * [`model`]: cells, routes, session laws, validation, config schema.
//! * [`analytic`]: closed-form stage and cell means, product forms.
//! * [`sim`]: discrete-event simulator producing occupancy snapshots.
//! * [`stats`]: empirical distributions, entropy and KL metrics, Poisson tests.
//! * [`trace`]: polling-log preprocessing, session extraction, fixtures.

pub mod error;
pub mod model;
pub mod rng;
pub mod analytic;
pub mod sim;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
