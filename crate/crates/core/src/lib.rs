//! Distributed QSR-dissipativity certification and controller synthesis for
//! networks of linear and switched-linear subsystems.

pub mod blockpd;
pub mod cli;
pub mod error;
pub mod feasibility;
pub mod fixtures;
pub mod linalg;
pub mod messenger;
pub mod model;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
