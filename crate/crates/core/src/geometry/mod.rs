//! Point-cloud types and deterministic geometric transforms.

mod augment;
mod cloud;
mod transform;

pub use augment::{
    draw_sector, jitter_offset, sector_mix, sector_swap, squeeze, squeeze_by, squeeze_factor, translate_jitter,
    LabeledCloud, Sector, SectorWidthRange, DEFAULT_SQUEEZE_RANGE, DEFAULT_TRANSLATE_RANGE_M,
};
pub use cloud::{ClassId, LabelArray, PerPointProbs, Point, PointCloud, IGNORE_ID, ROW_SUM_TOLERANCE};
pub use transform::{apply_transform, flip, yaw_rotate, FlipAxis, RigidTransform, ROTATION_TOLERANCE};
