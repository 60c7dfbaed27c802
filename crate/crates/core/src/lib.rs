//! Quasi-static phasor simulation of inverter-only microgrids with
//! grid-forming (GFM) and grid-following (GFL) inverters under four
//! secondary-control strategies, including leader-follower consensus.
//!
//! The crate is organized bottom-up:
//!
//! - [`network`]: electrical model, admittance matrices, island detection
//!   and the Newton power-flow solve with GFM sources behind coupling
//!   impedances.
//! - [`inverters`]: reduced-order primary control of GFM and GFL units
//!   (droop, measurement filters, voltage PI loop, PLL).
//! - [`consensus`]: communication graph and the secondary controllers.
//! - [`metrics`]: power-sharing and regulation indices.
//! - [`scenario`]: event-driven simulation driver and the shipped case
//!   library.
//! - [`output`]: CSV, summary and manifest writers.

pub mod consensus;
pub mod error;
pub mod inverters;
pub mod metrics;
pub mod network;
pub mod output;
pub mod scenario;

pub use error::{Error, Result};
