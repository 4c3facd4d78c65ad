//! Simulation and control toolkit for a PAM-driven two-link assistive arm.
//!
//! The crate covers the full pipeline: plant simulation ([`plant`]),
//! finite-horizon iLQR trajectory optimization ([`ilqr`]), value-weighted
//! blending of solved policies ([`blend`]), motor-goal estimation from
//! windowed sensor features ([`intent`]), and ballistic throw-task scoring
//! ([`task`]). [`config`] holds the JSON run configuration shared by the CLI.

pub mod plant;
pub mod util;

pub use plant::{ArmModel, ControlInput, PlantState, Trajectory};
