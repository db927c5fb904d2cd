//! Hidden reachable sets of sensor attacks on observer-based control loops.
//!
//! The crate computes minimum-volume ellipsoids that contain every estimation
//! error an attacker can induce while keeping a chi-squared detector's alarm
//! rate at its nominal false-alarm level, and redesigns the observer gain to
//! shrink them.

extern crate openblas_src;

pub mod calibration;
pub mod error;
pub mod linalg;
pub mod model;
pub mod reach;
pub mod report;
pub mod rng;
pub mod sdp;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
