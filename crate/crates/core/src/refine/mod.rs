//! Neighborhood refinement of lifted predictions.
//!
//! Labels projected from the image bleed across object borders; voting or
//! averaging over each point's 3-D neighbors repairs most of them.

mod kdtree;
mod schemes;

pub use kdtree::{KdTree, Neighborhood};
pub use schemes::{
    refine, refine_confidence_avg, refine_distance_weighted, refine_majority, distance_weights, RefineOptions,
    RefineScheme, TieBreak, DEFAULT_K,
};
