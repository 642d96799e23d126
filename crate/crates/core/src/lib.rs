//! Stochastic traffic-flow laboratory: closed-form and numerical
//! calculators paired with seeded Monte Carlo simulators for the same
//! models.

pub mod critical;
pub mod dist;
pub mod error;
pub mod grammar;
pub mod harness;
pub mod jam;
pub mod numeric;
pub mod pointfield;
pub mod qnet;
pub mod road;
pub mod rng;
pub mod startup;
pub mod stats;

pub use dist::{Distribution, ResidualLife};
pub use error::{Error, Result};
pub use rng::SimRng;
