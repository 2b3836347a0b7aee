//! Map matching with an on/off-road motion model and particle filters.

pub mod error;
pub mod eval;
pub mod filter;
pub mod graph;
pub mod inference;
pub mod kernel;
pub mod motion;
pub mod numeric;
pub mod search;
pub mod sim;
pub mod transition;

pub use error::{Error, Result};
pub use graph::{EdgeId, GeoPoint, PathCandidate, RoadGraph, OFF_ROAD};
