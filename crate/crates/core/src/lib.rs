//! Simulation and numerical evaluation of clustered device-to-device
//! video-caching networks.

pub mod channel;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod content;
pub mod error;
pub mod events;
pub mod geometry;
pub mod interference;
pub mod metrics;
pub mod network;
pub mod output;
pub mod rng;
pub mod stats;
pub mod tradeoff;

pub use error::{Error, Result};
