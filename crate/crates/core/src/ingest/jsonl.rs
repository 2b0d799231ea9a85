//! Triple JSONL: one object per line,
//! `{"id","image","width","height","modality","task","prompts":[...],"question","answer"}`.
//!
//! Floats go through serde_json's shortest round-trip formatting, so
//! `read(write(x)) == x` holds bit-for-bit.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Loaded;
use crate::model::{
    BBox, FreeFormPrompt, Modality, PointPrompt, PromptGeometry, PromptKind, TaskKind, Triple,
    VisualPrompt,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// First bad line aborts.
    #[default]
    Strict,
    /// Bad lines are skipped and reported as warnings.
    Lenient,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptRecord {
    kind: String,
    mark_id: u32,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    point: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vertices: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TripleRecord {
    id: String,
    image: String,
    width: u32,
    height: u32,
    modality: Modality,
    task: TaskKind,
    prompts: Vec<PromptRecord>,
    question: String,
    answer: String,
}

impl From<&VisualPrompt> for PromptRecord {
    fn from(p: &VisualPrompt) -> Self {
        let mut rec = PromptRecord {
            kind: p.kind().as_str().to_string(),
            mark_id: p.mark_id,
            bbox: None,
            point: None,
            vertices: None,
        };
        match &p.geometry {
            PromptGeometry::Box(b) | PromptGeometry::FullImage(b) => rec.bbox = Some(b.to_array()),
            PromptGeometry::Point(pt) => rec.point = Some([pt.x, pt.y]),
            PromptGeometry::FreeForm(f) => {
                rec.vertices = Some(f.vertices.iter().map(|&(x, y)| [x, y]).collect())
            }
        }
        rec
    }
}

impl TryFrom<PromptRecord> for VisualPrompt {
    type Error = Error;

    fn try_from(rec: PromptRecord) -> Result<Self> {
        let kind: PromptKind = rec.kind.parse()?;
        let payloads = [rec.bbox.is_some(), rec.point.is_some(), rec.vertices.is_some()]
            .iter()
            .filter(|x| **x)
            .count();
        if payloads != 1 {
            return Err(Error::invalid(format!(
                "prompt {} must carry exactly one of box/point/vertices",
                rec.mark_id
            )));
        }
        let missing = || Error::invalid(format!("prompt {} payload does not match kind `{}`", rec.mark_id, rec.kind));
        let geometry = match kind {
            PromptKind::Box => PromptGeometry::Box(BBox::from_array(rec.bbox.ok_or_else(missing)?)?),
            PromptKind::FullImage => {
                PromptGeometry::FullImage(BBox::from_array(rec.bbox.ok_or_else(missing)?)?)
            }
            PromptKind::Point => {
                let [x, y] = rec.point.ok_or_else(missing)?;
                PromptGeometry::Point(PointPrompt::new(x, y)?)
            }
            PromptKind::FreeForm => PromptGeometry::FreeForm(FreeFormPrompt::new(
                rec.vertices
                    .clone()
                    .ok_or_else(missing)?
                    .into_iter()
                    .map(|[x, y]| (x, y))
                    .collect(),
            )?),
        };
        Ok(VisualPrompt::new(rec.mark_id, geometry))
    }
}

impl From<&Triple> for TripleRecord {
    fn from(t: &Triple) -> Self {
        TripleRecord {
            id: t.id.clone(),
            image: t.image_path.clone(),
            width: t.image_size.0,
            height: t.image_size.1,
            modality: t.modality,
            task: t.task,
            prompts: t.prompts.iter().map(PromptRecord::from).collect(),
            question: t.question.clone(),
            answer: t.answer.clone(),
        }
    }
}

impl TryFrom<TripleRecord> for Triple {
    type Error = Error;

    fn try_from(rec: TripleRecord) -> Result<Self> {
        let triple = Triple {
            id: rec.id,
            image_path: rec.image,
            image_size: (rec.width, rec.height),
            modality: rec.modality,
            task: rec.task,
            prompts: rec
                .prompts
                .into_iter()
                .map(VisualPrompt::try_from)
                .collect::<Result<_>>()?,
            question: rec.question,
            answer: rec.answer,
        };
        triple.validate()?;
        Ok(triple)
    }
}

/// Serializes one triple as a single JSON line (no trailing newline).
pub fn triple_to_line(t: &Triple) -> Result<String> {
    t.validate()?;
    serde_json::to_string(&TripleRecord::from(t)).map_err(|e| Error::Encode(e.to_string()))
}

pub fn triple_from_line(line: &str) -> Result<Triple> {
    let rec: TripleRecord = serde_json::from_str(line).map_err(|e| Error::invalid(e.to_string()))?;
    Triple::try_from(rec)
}

/// Validates every triple, then writes them one per line. Returns the count.
pub fn write_triples<W: Write>(triples: &[Triple], mut sink: W) -> Result<usize> {
    let lines: Vec<String> = triples.iter().map(triple_to_line).collect::<Result<_>>()?;
    for line in &lines {
        sink.write_all(line.as_bytes())?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(lines.len())
}

pub fn read_triples<R: BufRead>(source: R, mode: ParseMode) -> Result<Loaded<Vec<Triple>>> {
    let mut out: Loaded<Vec<Triple>> = Loaded::default();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match triple_from_line(&line) {
            Ok(t) => out.items.push(t),
            Err(e) => {
                let err = Error::Line {
                    line: i + 1,
                    message: e.to_string(),
                };
                match mode {
                    ParseMode::Strict => return Err(err),
                    ParseMode::Lenient => out.warnings.push(err.to_string()),
                }
            }
        }
    }
    out.log_warnings();
    Ok(out)
}
