//! Desk-scale closed-loop drone navigation simulator with a spatial-aware
//! runtime: the world model senses into an occupancy octree, profilers
//! condense the map into spatial features, and a governor turns those
//! features into per-decision deadlines and per-stage precision/volume
//! knobs, traded off against a static worst-case baseline.

pub mod bench;
pub mod config;
pub mod error;
pub mod geom;
pub mod governor;
pub mod mapping;
pub mod planning;
pub mod profilers;
pub mod runtime;
pub mod vehicle;
pub mod world;

pub use config::SimConfig;
pub use error::SimError;
pub use geom::{Aabb, Vec3};
