//! Toolkit for building and evaluating visual-prompting corpora.
//!
//! The crate turns detection and segmentation annotations into
//! image / visual-prompt / text triples, renders numbered mark overlays,
//! dispatches annotation requests, scores predictions with semantic and
//! captioning metrics, and carries a small double-precision reference of the
//! prompt/image fusion attention block with analytic gradients.
//!
//! Batch entry points take an [`Execution`] so callers can pick rayon-backed
//! or sequential evaluation; with the `parallel` feature disabled every path
//! is sequential.

pub mod annotate;
pub mod error;
pub mod exec;
pub mod ingest;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod render;
pub mod rng;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{
    clamp_box, full_image_box, geometric_iou, AnnotationRecord, BBox, Clamped, FreeFormPrompt,
    Instance, Modality, PointPrompt, PromptGeometry, SegmentationMap, TaskKind, Triple,
    VisualPrompt,
};
pub use rng::SeededRng;
