//! Discrete-event simulator of a signalized two-road junction served by one
//! cellular cell, with sensor-driven congestion estimation and policy
//! adaptation.

pub mod adaptation;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mobility;
pub mod par;
pub mod radio;
pub mod rng;
pub mod scenario;
pub mod sensing;
pub mod traffic;

pub use engine::{Engine, SimTime};
pub use error::{Result, SimError};
