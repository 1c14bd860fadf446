//! Discrete-event VANET simulator and prediction library.
//!
//! The crate models vehicles moving on a Manhattan road grid with
//! Wiener-process speed noise, predicts per-link SINR and packet-queue
//! outlooks over a lookahead interval, and uses those predictions to drive
//! PRO, a prediction-based opportunistic routing algorithm. Greedy
//! geographic forwarding and a non-predictive opportunistic baseline share
//! the same channel, queue, and MAC code paths so that only relay selection
//! differs between algorithms.
//!
//! Modules:
//! - [`mobility`]: road grid, vehicle kinematics, distance/link forecasts
//! - [`sinr`]: instantaneous SINR and predicted SINR-above-threshold
//!   probability (Monte Carlo and quadrature paths)
//! - [`pql`]: packet-queue-length forecast
//! - [`routing`]: PRO candidate selection, utilities, priority timers
//! - [`baseline`]: greedy geographic and ExOR-like comparison algorithms
//! - [`sim`]: deterministic discrete-event engine and metrics
//! - [`experiment`]: config parsing, sweep runner, CSV output

pub mod baseline;
pub mod experiment;
pub mod gaussian;
pub mod metrics;
pub mod mobility;
pub mod pql;
pub mod quad;
pub mod routing;
pub mod sim;
pub mod sinr;

pub use gaussian::GaussianSpec;
pub use mobility::{MobilityConfig, RoadGraph, Vehicle};




