//! Day-to-day route-choice simulation with persona-driven traveler agents and
//! an online calibration loop that aligns personas with recorded choices.

pub mod agent;
pub mod baselines;
pub mod calibrate;
pub mod dsl;
pub mod env;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod protocol;
pub mod rng;
