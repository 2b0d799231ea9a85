//! Corpus manifests and the end-to-end build.
//!
//! ```json
//! {"seed": 7, "output": "corpus.jsonl", "entries": [
//!   {"source": "sar_det.json", "adapter": "canonical", "modality": "sar",
//!    "task": "referring_object_classification"},
//!   {"source": "masks/", "adapter": "segmentation", "legend": "legend.json",
//!    "modality": "optical", "task": "referring_object_classification"}
//! ]}
//! ```
//!
//! Relative paths resolve against the manifest's directory. Triple image
//! paths keep the strings from the sources (optionally prefixed by the
//! entry's `image_dir`), so the output does not depend on where the build
//! runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ingest::builder::{build_box_triples, build_image_level_triple, build_point_triple};
use crate::ingest::detection::{decode_json, parse_canonical_detection, parse_coco_detection};
use crate::ingest::jsonl::ParseMode;
use crate::ingest::segmentation::parse_segmentation;
use crate::ingest::templates::TemplateSet;
use crate::ingest::Loaded;
use crate::model::{Modality, TaskKind, Triple};
use crate::rng::SeededRng;
use crate::synth::{AugmentConfig, DEFAULT_PATCH_PX};

pub const ADAPTERS: [&str; 4] = ["canonical", "coco", "segmentation", "image_text"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub source: String,
    pub modality: Modality,
    pub task: TaskKind,
    pub adapter: String,
    /// Prefix for triple ids; defaults to the source file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    /// Legend JSON, required by the segmentation adapter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl CorpusManifest {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let m: CorpusManifest = decode_json(bytes)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if !ADAPTERS.contains(&e.adapter.as_str()) {
                return Err(Error::UnknownAdapter(e.adapter.clone()));
            }
            let path = format!("entries[{i}]");
            match e.adapter.as_str() {
                "canonical" | "coco" | "segmentation"
                    if e.task != TaskKind::ReferringObjectClassification =>
                {
                    return Err(Error::Schema {
                        path: format!("{path}.task"),
                        message: format!(
                            "adapter `{}` produces referring_object_classification triples, not `{}`",
                            e.adapter, e.task
                        ),
                    })
                }
                "image_text" if !e.task.is_image_level() => {
                    return Err(Error::Schema {
                        path: format!("{path}.task"),
                        message: format!("adapter `image_text` needs an image-level task, got `{}`", e.task),
                    })
                }
                "segmentation" if e.legend.is_none() => {
                    return Err(Error::Schema {
                        path: format!("{path}.legend"),
                        message: "segmentation entries need a legend".into(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub seed: u64,
    pub augment: AugmentConfig,
    pub patch_px: u32,
    pub mode: ParseMode,
    pub templates: TemplateSet,
    pub exec: Execution,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            augment: AugmentConfig::default(),
            patch_px: DEFAULT_PATCH_PX,
            mode: ParseMode::Strict,
            templates: TemplateSet::default(),
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub triples: usize,
    pub by_task: BTreeMap<String, usize>,
    pub by_modality: BTreeMap<String, usize>,
    pub warnings: usize,
    pub failed_entries: usize,
}

#[derive(Debug, Clone)]
pub struct CorpusBuild {
    pub triples: Vec<Triple>,
    pub warnings: Vec<String>,
    pub failed_entries: usize,
}

impl CorpusBuild {
    pub fn summary(&self) -> CorpusSummary {
        let mut s = CorpusSummary {
            triples: self.triples.len(),
            warnings: self.warnings.len(),
            failed_entries: self.failed_entries,
            ..Default::default()
        };
        for t in &self.triples {
            *s.by_task.entry(t.task.to_string()).or_default() += 1;
            *s.by_modality.entry(t.modality.to_string()).or_default() += 1;
        }
        s
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn with_prefix(dir: &Option<String>, file: &str) -> String {
    match dir {
        Some(d) if !d.is_empty() => format!("{}/{}", d.trim_end_matches('/'), file),
        _ => file.to_string(),
    }
}

fn entry_tag(e: &ManifestEntry) -> String {
    e.tag.clone().unwrap_or_else(|| {
        Path::new(e.source.trim_end_matches('/'))
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| e.source.clone())
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageTextRow {
    id: serde_json::Value,
    file: String,
    width: u32,
    height: u32,
    text: String,
}

fn build_entry(entry: &ManifestEntry, base: &Path, opts: &BuildOptions) -> Result<Loaded<Vec<Triple>>> {
    let tag = entry_tag(entry);
    let source = base.join(&entry.source);
    match entry.adapter.as_str() {
        "canonical" | "coco" => {
            let bytes = read(&source)?;
            let parsed = if entry.adapter == "canonical" {
                parse_canonical_detection(&bytes)?
            } else {
                parse_coco_detection(&bytes)?
            };
            let mut records = parsed.items;
            for r in &mut records {
                r.image_path = with_prefix(&entry.image_dir, &r.image_path);
            }
            let mut built = build_box_triples(
                &tag,
                &records,
                entry.modality,
                &opts.templates,
                &opts.augment,
                opts.seed,
                opts.exec,
            )?;
            let mut warnings = parsed.warnings;
            warnings.append(&mut built.warnings);
            Ok(Loaded::new(built.items, warnings))
        }
        "segmentation" => {
            let legend_path = base.join(entry.legend.as_deref().unwrap_or_default());
            let legend = read(&legend_path)?;
            let masks = list_masks(&source)?;
            let built = opts.exec.map(&masks, |(name, path)| -> Result<Option<Triple>> {
                let seg = parse_segmentation(&read(path)?, &legend)?;
                let id = format!("{tag}/{}", Path::new(name).file_stem().unwrap_or_default().to_string_lossy());
                let mut rng = SeededRng::for_item(opts.seed, &id);
                build_point_triple(
                    id,
                    &with_prefix(&entry.image_dir, name),
                    &seg,
                    entry.modality,
                    &opts.templates,
                    opts.patch_px,
                    &mut rng,
                )
            });
            let mut out: Loaded<Vec<Triple>> = Loaded::default();
            for ((name, _), item) in masks.iter().zip(built) {
                match item? {
                    Some(t) => out.items.push(t),
                    None => out
                        .warnings
                        .push(format!("{tag}/{name}: every sampled point hit the ignore class, skipped")),
                }
            }
            out.log_warnings();
            Ok(out)
        }
        "image_text" => {
            let text = String::from_utf8(read(&source)?)
                .map_err(|e| Error::invalid(format!("{}: {e}", source.display())))?;
            let mut out: Loaded<Vec<Triple>> = Loaded::default();
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let row: std::result::Result<ImageTextRow, _> = serde_json::from_str(line);
                let row = match row {
                    Ok(r) => r,
                    Err(e) => {
                        let err = Error::Line { line: i + 1, message: e.to_string() };
                        match opts.mode {
                            ParseMode::Strict => return Err(err),
                            ParseMode::Lenient => {
                                out.warnings.push(err.to_string());
                                continue;
                            }
                        }
                    }
                };
                let rid = match row.id {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                let id = format!("{tag}/{rid}");
                let mut rng = SeededRng::for_item(opts.seed, &id);
                out.items.push(build_image_level_triple(
                    id,
                    &with_prefix(&entry.image_dir, &row.file),
                    (row.width, row.height),
                    entry.modality,
                    entry.task,
                    &row.text,
                    &opts.templates,
                    &mut rng,
                )?);
            }
            Ok(out)
        }
        other => Err(Error::UnknownAdapter(other.to_string())),
    }
}

/// A single PNG, or every `*.png` in a directory sorted by name.
fn list_masks(source: &Path) -> Result<Vec<(String, PathBuf)>> {
    if source.is_dir() {
        let mut out: Vec<(String, PathBuf)> = fs::read_dir(source)
            .map_err(|e| Error::io(source, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .map(|p| (p.file_name().unwrap_or_default().to_string_lossy().into_owned(), p))
            .collect();
        out.sort();
        Ok(out)
    } else {
        let name = source
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(vec![(name, source.to_path_buf())])
    }
}

/// Builds every entry in manifest order. Strict mode aborts on the first
/// failing entry; lenient mode records it and moves on. Duplicate triple ids
/// are always an error.
pub fn build_corpus(manifest: &CorpusManifest, base_dir: &Path, opts: &BuildOptions) -> Result<CorpusBuild> {
    manifest.validate()?;
    let mut build = CorpusBuild {
        triples: Vec::new(),
        warnings: Vec::new(),
        failed_entries: 0,
    };
    for (i, entry) in manifest.entries.iter().enumerate() {
        match build_entry(entry, base_dir, opts) {
            Ok(mut loaded) => {
                build.triples.append(&mut loaded.items);
                build.warnings.append(&mut loaded.warnings);
            }
            Err(e) if opts.mode == ParseMode::Lenient => {
                log::warn!("entries[{i}] ({}): {e}", entry.source);
                build.warnings.push(format!("entries[{i}] ({}): {e}", entry.source));
                build.failed_entries += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let mut seen = BTreeSet::new();
    for t in &build.triples {
        if !seen.insert(t.id.as_str()) {
            return Err(Error::InvalidTriple {
                id: t.id.clone(),
                message: "duplicate triple id in corpus".into(),
            });
        }
    }
    Ok(build)
}
