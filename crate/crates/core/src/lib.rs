//! Change detection between two independently reconstructed Gaussian-splat
//! scenes, performed directly on the primitives.
//!
//! Two reconstructions of the same content never agree primitive-for-primitive:
//! positions, shapes and colors drift even where nothing changed. This crate
//! models that drift explicitly — anisotropic covariance inflation estimated
//! from cross-scene statistics plus a per-primitive observability term derived
//! from the capture geometry — and scores geometric and appearance change with
//! drift-aware kernels. Per-primitive scores are rendered to multi-view
//! consistent 2D change maps and each changed pixel is classified as
//! structural or surface-level.
//!
//! Pipeline stages (see [`pipeline::run_detect`]):
//! 1. drift modeling: ambiguity scales, Fisher information, effective covariance
//! 2. kernel scoring: cross-scene neighbor retrieval, geometric + appearance kernels
//! 3. aggregation: confidence weighting, saturated combination
//! 4. rendering: scalar splatting, map fusion, binarization and routing

pub mod aggregate;
pub mod drift;
pub mod eval;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod maps;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod spatial;
pub mod stats;
pub mod synth;

pub use io::cameras::CameraRecord;
pub use io::ply::RawSplatRecord;
pub use scene::{GaussianPrimitive, GaussianScene};
