//! Test-time censoring: keep the convex hull of the lesion, rescale it to
//! fill the frame with its aspect ratio preserved, and replace everything
//! else with uniform noise.

mod batch;
mod hull;
mod mask;
mod segment;
mod transform;

pub use batch::{batch_noisecrop, BatchNoiseCrop, NoiseCropFailure, NoiseCropSummary};
pub use hull::convex_hull;
pub use mask::BitMask;
pub use segment::fallback_segment;
pub use transform::{crop_geometry, noisecrop, CropGeometry, NoiseCropConfig, NoiseCropOutput};
