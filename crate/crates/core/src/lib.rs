//! Simulation of a single trapped ion coupled to a two-mode optical cavity:
//! Raman emission spectroscopy, cavity transmission, and parameter
//! estimation for the ion–cavity coupling strength.

pub mod analysis;
pub mod angular;
pub mod atom;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod spectroscopy;

pub use error::{Error, ErrorClass, Result};
