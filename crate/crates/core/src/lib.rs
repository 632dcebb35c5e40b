//! Laue back-reflection simulation, a crystal-alignment environment and a
//! pixel-based actor-critic agent.

pub mod agent;
pub mod error;
pub mod geometry;
pub mod inference;
pub mod nn;
pub mod pattern_io;
pub mod env;
pub mod render;
pub mod simulator;

pub use error::{LaueError, Result};
