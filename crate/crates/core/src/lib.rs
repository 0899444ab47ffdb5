//! Simulation and post-selection photon statistics for pulsed single-photon emitters
//! that flicker between a neutral (bright) and a charged (grey) state.

pub mod cli;
pub mod config;
pub mod correlate;
pub mod lifetime;
pub mod physics;
pub mod pipeline;
pub mod report;
pub mod simulate;
pub mod timetags;
pub mod trace;
