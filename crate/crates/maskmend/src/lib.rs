//! Post-processing toolkit for multi-object video segmentation.
//!
//! Given per-frame object proposals for a video (label maps where each pixel
//! carries an object id), this crate provides the three stages needed to turn
//! noisy proposals into a consistent segmentation:
//!
//! 1. **Object selection** ([`select`]): rank proposed objects by how often
//!    and how large they appear, and keep the top scorers.
//! 2. **Temporal-consistency repair** ([`temporal`]): find frames where an
//!    object's mask suddenly shrinks or vanishes, decide whether the change is
//!    legitimate (occlusion, camera zoom) and, when it is not, rebuild the
//!    missing parts from neighboring frames via dense optical flow.
//! 3. **Evaluation** ([`metrics`]): region similarity (Jaccard) and boundary
//!    F-measure against ground truth, with optional identity matching.
//!
//! Supporting modules: [`mask`] (pixel-level types and set algebra),
//! [`raster`] (connected components, morphology, color histograms), [`flow`]
//! (pyramidal Lucas-Kanade), [`dataset`] (directory layout + PNG mask I/O),
//! and [`synth`] (scripted synthetic scenes with defect injection, used
//! heavily by the test suite).

pub mod dataset;
pub mod flow;
pub mod mask;
pub mod metrics;
pub mod raster;
pub mod select;
pub mod synth;
pub mod temporal;

pub use mask::{BinaryMask, LabelMap, ObjectId, RgbFrame, SequenceBundle, BACKGROUND};
