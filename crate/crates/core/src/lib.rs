//! Simulation laboratory for the two-dimensional balanced excited random walk.

pub mod env;
pub mod rng;
pub mod sitemap;
pub mod timing;
pub mod walk;
pub mod slow;
pub mod stats;
pub mod excursions;
pub mod level;
pub mod analysis;
pub mod io;
