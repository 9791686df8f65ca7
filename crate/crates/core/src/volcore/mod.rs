//! Volume and geometry primitives shared by every stage of the pipeline.
//!
//! Voxel `(i, j, k)` has its center at `origin + (i, j, k) ⊙ spacing` in world
//! millimetres. Volumes are axis-aligned; no direction cosines are carried.
//! Scalar data is stored x-fastest: `data[i + nx * (j + ny * k)]`.

mod landmarks;
mod mvol;
mod resample;
mod transform;
mod volume;

pub use landmarks::{read_annotations, write_annotations, FrameAnnotation, LandmarkId, LandmarkSet};
pub use mvol::{mvol_paths, read_mvol, write_mvol, MvolHeader};
pub(crate) use resample::cube_geometry;
pub use resample::{resample_isotropic, resample_with};
pub use transform::AffineTransform;
pub use volume::{Series4D, Volume3};

/// World-space point or direction in millimetres.
pub type Vec3 = nalgebra::Vector3<f64>;
