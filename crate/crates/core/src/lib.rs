//! Autoregressive kinematic-action planning with time-invariant spatial
//! alignment, trained by imitation and refined with multi-objective
//! preference optimization on synthetic driving scenes.

pub mod action_space;
pub mod config;
pub mod corpus;
pub mod dpo;
mod error;
pub mod geometry;
pub mod io;
pub mod kinematics;
pub mod metrics;
pub mod pipeline;
pub mod planner;
pub mod report;
pub mod train;
pub mod world;

pub use error::{Error, Result};
