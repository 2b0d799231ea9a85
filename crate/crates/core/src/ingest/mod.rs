//! Annotation ingestion and triple-corpus construction.

pub mod builder;
pub mod detection;
pub mod jsonl;
pub mod manifest;
pub mod segmentation;
pub mod templates;

pub use builder::{
    build_box_triples, build_image_level_triple, build_point_triple, format_answer,
    parse_answer_labels,
};
pub use detection::{parse_canonical_detection, parse_coco_detection};
pub use jsonl::{read_triples, write_triples, ParseMode};
pub use manifest::{build_corpus, BuildOptions, CorpusBuild, CorpusManifest, ManifestEntry};
pub use segmentation::{parse_segmentation, Legend};
pub use templates::TemplateSet;

/// A value plus the non-fatal problems met while producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub items: T,
    pub warnings: Vec<String>,
}

impl<T: Default> Default for Loaded<T> {
    fn default() -> Self {
        Self {
            items: T::default(),
            warnings: Vec::new(),
        }
    }
}

impl<T> Loaded<T> {
    pub fn new(items: T, warnings: Vec<String>) -> Self {
        Self { items, warnings }
    }

    pub(crate) fn log_warnings(&self) {
        for w in &self.warnings {
            log::warn!("{w}");
        }
    }
}
