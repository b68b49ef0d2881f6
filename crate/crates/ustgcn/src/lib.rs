//! Unified spatio-temporal graph convolution for traffic speed forecasting.
//!
//! A single block lower-triangular operator over T timestamps of a road
//! graph drives both spatial and temporal aggregation; a K-layer convolution
//! with a regression head maps historical-daily plus current-day speed
//! windows to multi-horizon forecasts.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
