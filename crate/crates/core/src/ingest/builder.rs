//! Triple construction from annotation records and segmentation maps.
//!
//! Every builder draws from a generator derived from the global seed and
//! the triple id, so results are independent of batch scheduling. Within one
//! triple the instruction is drawn first, then the prompt geometry.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ingest::templates::{render_question, TemplateSet};
use crate::ingest::Loaded;
use crate::model::{
    full_image_box, AnnotationRecord, Modality, PromptGeometry, SegmentationMap, TaskKind, Triple,
    VisualPrompt,
};
use crate::rng::SeededRng;
use crate::synth::{augment_box, sample_patch_points, AugmentConfig};
use crate::text::MarkWord;

/// `<Region 1>: ship` lines in mark order.
pub fn format_answer(word: MarkWord, labels: &[(u32, &str)]) -> String {
    labels
        .iter()
        .map(|(n, label)| format!("{}: {}", word.tag(*n), label))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses the `<Region n>: label` / `<Mark n>: label` lines of a
/// classification answer back into `(n, label)` pairs.
pub fn parse_answer_labels(answer: &str) -> Vec<(u32, String)> {
    answer
        .lines()
        .filter_map(|line| {
            let refs = crate::text::mark_refs(line);
            let (word, n) = *refs.first()?;
            let rest = line.trim_start().strip_prefix(&word.tag(n))?;
            let label = rest.strip_prefix(':')?.trim();
            (!label.is_empty()).then(|| (n, label.to_string()))
        })
        .collect()
}

/// Referring-object-classification triple for one detection record; `None`
/// when the record has no instances.
pub fn build_box_triple(
    id: String,
    record: &AnnotationRecord,
    modality: Modality,
    templates: &TemplateSet,
    cfg: &AugmentConfig,
    rng: &mut SeededRng,
) -> Result<Option<(Triple, Vec<String>)>> {
    if record.instances.is_empty() {
        return Ok(None);
    }
    let task = TaskKind::ReferringObjectClassification;
    let word = MarkWord::Region;
    let instruction = templates.select_for(task, word, rng)?;
    let mut warnings = Vec::new();
    let mut prompts = Vec::with_capacity(record.instances.len());
    for (i, inst) in record.instances.iter().enumerate() {
        let mark_id = i as u32 + 1;
        let aug = augment_box(inst.bbox, cfg, rng, record.image_size)?;
        let bbox = if aug.degenerate {
            warnings.push(format!(
                "{id}: augmented box for mark {mark_id} left the image; using ground truth"
            ));
            inst.bbox
        } else {
            aug.bbox
        };
        prompts.push(VisualPrompt::new(mark_id, PromptGeometry::Box(bbox)));
    }
    let ids: Vec<u32> = prompts.iter().map(|p| p.mark_id).collect();
    let labels: Vec<(u32, &str)> = record
        .instances
        .iter()
        .zip(&ids)
        .map(|(inst, &n)| (n, inst.category.as_str()))
        .collect();
    let triple = Triple {
        question: render_question(&instruction, word, &ids)?,
        answer: format_answer(word, &labels),
        id,
        image_path: record.image_path.clone(),
        image_size: record.image_size,
        modality,
        task,
        prompts,
    };
    triple.validate()?;
    Ok(Some((triple, warnings)))
}

/// Builds one box triple per record, in record order. Images without
/// instances are skipped with a warning.
pub fn build_box_triples(
    source_tag: &str,
    records: &[AnnotationRecord],
    modality: Modality,
    templates: &TemplateSet,
    cfg: &AugmentConfig,
    seed: u64,
    exec: Execution,
) -> Result<Loaded<Vec<Triple>>> {
    cfg.validate()?;
    let built = exec.map(records, |rec| {
        let id = format!("{source_tag}/{}", rec.image_id);
        let mut rng = SeededRng::for_item(seed, &id);
        build_box_triple(id.clone(), rec, modality, templates, cfg, &mut rng).map(|t| (id, t))
    });
    let mut out: Loaded<Vec<Triple>> = Loaded::default();
    for item in built {
        match item? {
            (_, Some((triple, warnings))) => {
                out.warnings.extend(warnings);
                out.items.push(triple);
            }
            (id, None) => out.warnings.push(format!("{id}: no instances, skipped")),
        }
    }
    out.log_warnings();
    Ok(out)
}

/// Point-prompt triple over a segmentation map: one sampled point per patch
/// cell, marks numbered in raster order of the surviving cells. `None` when
/// every sampled point landed on the ignore class.
pub fn build_point_triple(
    id: String,
    image_path: &str,
    seg: &SegmentationMap,
    modality: Modality,
    templates: &TemplateSet,
    patch_px: u32,
    rng: &mut SeededRng,
) -> Result<Option<Triple>> {
    let task = TaskKind::ReferringObjectClassification;
    let word = MarkWord::Mark;
    let instruction = templates.select_for(task, word, rng)?;
    let points = sample_patch_points(seg, patch_px, rng)?;
    if points.is_empty() {
        return Ok(None);
    }
    let prompts: Vec<VisualPrompt> = points
        .iter()
        .enumerate()
        .map(|(i, lp)| VisualPrompt::new(i as u32 + 1, PromptGeometry::Point(lp.point)))
        .collect();
    let ids: Vec<u32> = prompts.iter().map(|p| p.mark_id).collect();
    let labels: Vec<(u32, &str)> = points
        .iter()
        .zip(&ids)
        .map(|(lp, &n)| (n, lp.category.as_str()))
        .collect();
    let triple = Triple {
        question: render_question(&instruction, word, &ids)?,
        answer: format_answer(word, &labels),
        id,
        image_path: image_path.to_string(),
        image_size: (seg.width(), seg.height()),
        modality,
        task,
        prompts,
    };
    triple.validate()?;
    Ok(Some(triple))
}

/// Image-level triple: one full-image box prompt, answer = `text`.
#[allow(clippy::too_many_arguments)]
pub fn build_image_level_triple(
    id: String,
    image_path: &str,
    image_size: (u32, u32),
    modality: Modality,
    task: TaskKind,
    text: &str,
    templates: &TemplateSet,
    rng: &mut SeededRng,
) -> Result<Triple> {
    if !task.is_image_level() {
        return Err(Error::invalid(format!("`{task}` is not an image-level task")));
    }
    if text.trim().is_empty() {
        return Err(Error::invalid("image-level text must be non-empty"));
    }
    let prompt = full_image_box(image_size.0, image_size.1)?;
    let word = MarkWord::Region;
    let instruction = templates.select_for(task, word, rng)?;
    let triple = Triple {
        question: render_question(&instruction, word, &[prompt.mark_id])?,
        answer: text.to_string(),
        id,
        image_path: image_path.to_string(),
        image_size,
        modality,
        task,
        prompts: vec![prompt],
    };
    triple.validate()?;
    Ok(triple)
}
