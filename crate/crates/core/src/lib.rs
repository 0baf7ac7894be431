//! Partial-match UAV geo-localization toolkit.
//!
//! Drone queries are paired with satellite tiles of a quadtree pyramid by the
//! IOU of their ground footprints. Pairs feed an exclusive batch sampler and
//! an IOU-weighted contrastive loss; retrieval is scored both by ranking and
//! by ground distance in meters.

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod matrix;
pub mod pairing;
pub mod pipeline;
pub mod retrieval;
pub mod sampling;
pub mod synthgen;
pub mod tilemap;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, CameraPose, ConvexPolygon, FootprintQuad, GeoPoint};
pub use matrix::Matrix;
pub use tilemap::{TileId, TilePyramid};
