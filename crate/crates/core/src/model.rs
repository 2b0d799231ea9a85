//! Shared domain types and pure geometry.
//!
//! Coordinates are continuous pixels with the origin at the top-left corner,
//! x growing rightward and y downward. Boxes are `(x, y, w, h)` with `(x, y)`
//! the top-left corner.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{mark_refs, MarkWord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("non-finite box {:?}", self.to_array())));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::invalid(format!(
                "box needs positive size, got {:?}",
                self.to_array()
            )));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPrompt {
    pub x: f64,
    pub y: f64,
}

impl PointPrompt {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::invalid(format!("non-finite point ({x}, {y})")));
        }
        Ok(Self { x, y })
    }

    pub fn in_image(&self, width: u32, height: u32) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x < width as f64 && self.y < height as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeFormPrompt {
    pub vertices: Vec<(f64, f64)>,
}

impl FreeFormPrompt {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        let f = Self { vertices };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() {
            return Err(Error::invalid("free-form prompt needs at least one vertex"));
        }
        if !self.vertices.iter().all(|(x, y)| x.is_finite() && y.is_finite()) {
            return Err(Error::invalid("free-form prompt has a non-finite vertex"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PromptGeometry {
    Box(BBox),
    Point(PointPrompt),
    FreeForm(FreeFormPrompt),
    /// Always `[0, 0, width, height]` of the owning image.
    FullImage(BBox),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptKind {
    Box,
    Point,
    FreeForm,
    FullImage,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Box => "box",
            PromptKind::Point => "point",
            PromptKind::FreeForm => "free_form",
            PromptKind::FullImage => "full_image",
        }
    }
}

impl FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "box" => PromptKind::Box,
            "point" => PromptKind::Point,
            "free_form" => PromptKind::FreeForm,
            "full_image" => PromptKind::FullImage,
            other => return Err(Error::invalid(format!("unknown prompt kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualPrompt {
    pub mark_id: u32,
    pub geometry: PromptGeometry,
}

impl VisualPrompt {
    pub fn new(mark_id: u32, geometry: PromptGeometry) -> Self {
        Self { mark_id, geometry }
    }

    pub fn kind(&self) -> PromptKind {
        match self.geometry {
            PromptGeometry::Box(_) => PromptKind::Box,
            PromptGeometry::Point(_) => PromptKind::Point,
            PromptGeometry::FreeForm(_) => PromptKind::FreeForm,
            PromptGeometry::FullImage(_) => PromptKind::FullImage,
        }
    }

    /// Points are referred to as marks, everything else as regions.
    pub fn mark_word(&self) -> MarkWord {
        match self.geometry {
            PromptGeometry::Point(_) => MarkWord::Mark,
            _ => MarkWord::Region,
        }
    }

    fn validate(&self, width: u32, height: u32) -> std::result::Result<(), String> {
        if self.mark_id == 0 {
            return Err("mark_id must be >= 1".into());
        }
        match &self.geometry {
            PromptGeometry::Box(b) => b.validate().map_err(|e| e.to_string()),
            PromptGeometry::Point(p) => {
                if p.in_image(width, height) {
                    Ok(())
                } else {
                    Err(format!("point ({}, {}) outside {width}x{height}", p.x, p.y))
                }
            }
            PromptGeometry::FreeForm(f) => f.validate().map_err(|e| e.to_string()),
            PromptGeometry::FullImage(b) => {
                if b.to_array() == [0.0, 0.0, width as f64, height as f64] {
                    Ok(())
                } else {
                    Err(format!(
                        "full_image box {:?} does not match image {width}x{height}",
                        b.to_array()
                    ))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Optical,
    Sar,
    Infrared,
    Natural,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::Optical,
        Modality::Sar,
        Modality::Infrared,
        Modality::Natural,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Optical => "optical",
            Modality::Sar => "sar",
            Modality::Infrared => "infrared",
            Modality::Natural => "natural",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown modality `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ImageCaptionBrief,
    ImageCaptionDetailed,
    SceneClassification,
    ReferringObjectClassification,
    RegionCaptionBrief,
    RegionCaptionDetailed,
    RelationshipAnalysis,
    SummaryCaption,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::ImageCaptionBrief,
        TaskKind::ImageCaptionDetailed,
        TaskKind::SceneClassification,
        TaskKind::ReferringObjectClassification,
        TaskKind::RegionCaptionBrief,
        TaskKind::RegionCaptionDetailed,
        TaskKind::RelationshipAnalysis,
        TaskKind::SummaryCaption,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ImageCaptionBrief => "image_caption_brief",
            TaskKind::ImageCaptionDetailed => "image_caption_detailed",
            TaskKind::SceneClassification => "scene_classification",
            TaskKind::ReferringObjectClassification => "referring_object_classification",
            TaskKind::RegionCaptionBrief => "region_caption_brief",
            TaskKind::RegionCaptionDetailed => "region_caption_detailed",
            TaskKind::RelationshipAnalysis => "relationship_analysis",
            TaskKind::SummaryCaption => "summary_caption",
        }
    }

    /// Tasks answered about the whole image through the full-image box.
    pub fn is_image_level(self) -> bool {
        matches!(
            self,
            TaskKind::ImageCaptionBrief
                | TaskKind::ImageCaptionDetailed
                | TaskKind::SceneClassification
                | TaskKind::SummaryCaption
        )
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown task `{s}`")))
    }
}

/// One image / visual-prompt / text sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub id: String,
    pub image_path: String,
    pub image_size: (u32, u32),
    pub modality: Modality,
    pub task: TaskKind,
    pub prompts: Vec<VisualPrompt>,
    pub question: String,
    pub answer: String,
}

impl Triple {
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::InvalidTriple {
            id: self.id.clone(),
            message,
        };
        let (w, h) = self.image_size;
        if w == 0 || h == 0 {
            return Err(fail(format!("image size {w}x{h} must be positive")));
        }
        if self.prompts.is_empty() {
            return Err(fail("no prompts".into()));
        }
        let mut ids = BTreeSet::new();
        for p in &self.prompts {
            p.validate(w, h).map_err(&fail)?;
            if !ids.insert(p.mark_id) {
                return Err(fail(format!("duplicate mark_id {}", p.mark_id)));
            }
        }
        for text in [&self.question, &self.answer] {
            for (word, n) in mark_refs(text) {
                if !ids.contains(&n) {
                    return Err(fail(format!("{} has no matching prompt", word.tag(n))));
                }
            }
        }
        Ok(())
    }

    pub fn mark_ids(&self) -> Vec<u32> {
        self.prompts.iter().map(|p| p.mark_id).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub category: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub image_path: String,
    pub image_size: (u32, u32),
    pub instances: Vec<Instance>,
}

/// Per-pixel class raster with its legend.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    width: u32,
    height: u32,
    class_ids: Vec<u32>,
    legend: BTreeMap<u32, String>,
    ignore_id: u32,
}

impl SegmentationMap {
    pub fn new(
        width: u32,
        height: u32,
        class_ids: Vec<u32>,
        legend: BTreeMap<u32, String>,
        ignore_id: u32,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("segmentation map must be non-empty"));
        }
        if class_ids.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "grid has {} cells, expected {}x{}",
                class_ids.len(),
                width,
                height
            )));
        }
        let present: BTreeSet<u32> = class_ids.iter().copied().collect();
        let missing: Vec<u32> = present
            .into_iter()
            .filter(|id| *id != ignore_id && !legend.contains_key(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::InconsistentLegend(format!(
                "class id(s) {missing:?} present in raster but absent from legend"
            )));
        }
        Ok(Self {
            width,
            height,
            class_ids,
            legend,
            ignore_id,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn ignore_id(&self) -> u32 {
        self.ignore_id
    }

    pub fn legend(&self) -> &BTreeMap<u32, String> {
        &self.legend
    }

    pub fn class_ids(&self) -> &[u32] {
        &self.class_ids
    }

    pub fn class_at(&self, x: u32, y: u32) -> u32 {
        self.class_ids[y as usize * self.width as usize + x as usize]
    }

    /// `None` on ignore pixels.
    pub fn label_at(&self, x: u32, y: u32) -> Option<&str> {
        let id = self.class_at(x, y);
        if id == self.ignore_id {
            None
        } else {
            self.legend.get(&id).map(String::as_str)
        }
    }
}

/// Full-image prompt `[0, 0, width, height]` with mark 1.
pub fn full_image_box(width: u32, height: u32) -> Result<VisualPrompt> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(VisualPrompt::new(
        1,
        PromptGeometry::FullImage(BBox {
            x: 0.0,
            y: 0.0,
            w: width as f64,
            h: height as f64,
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped {
    pub bbox: BBox,
    /// The box did not intersect the image; `bbox` is a 1x1 stand-in.
    pub degenerate: bool,
}

/// Intersects `b` with `[0, width] x [0, height]`.
pub fn clamp_box(b: BBox, width: u32, height: u32) -> Clamped {
    let (wf, hf) = (width as f64, height as f64);
    if b.x >= 0.0 && b.y >= 0.0 && b.right() <= wf && b.bottom() <= hf {
        return Clamped {
            bbox: b,
            degenerate: false,
        };
    }
    let x0 = b.x.max(0.0);
    let y0 = b.y.max(0.0);
    let x1 = b.right().min(wf);
    let y1 = b.bottom().min(hf);
    if x1 > x0 && y1 > y0 {
        Clamped {
            bbox: BBox {
                x: x0,
                y: y0,
                w: span_within(x0, x1),
                h: span_within(y0, y1),
            },
            degenerate: false,
        }
    } else {
        Clamped {
            bbox: BBox {
                x: b.x.clamp(0.0, (wf - 1.0).max(0.0)),
                y: b.y.clamp(0.0, (hf - 1.0).max(0.0)),
                w: 1.0,
                h: 1.0,
            },
            degenerate: true,
        }
    }
}

/// `hi - lo`, nudged down so that `lo + span <= hi` holds in floating point.
fn span_within(lo: f64, hi: f64) -> f64 {
    let mut span = hi - lo;
    while lo + span > hi {
        span = span.next_down();
    }
    span
}

pub fn geometric_iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn full_image_examples() {
        for (w, h) in [(448, 448), (1, 1), (800, 600)] {
            let p = full_image_box(w, h).unwrap();
            assert_eq!(p.mark_id, 1);
            assert_eq!(
                p.geometry,
                PromptGeometry::FullImage(bx(0.0, 0.0, w as f64, h as f64))
            );
        }
        assert!(full_image_box(0, 10).is_err());
        assert!(full_image_box(10, 0).is_err());
    }

    #[test]
    fn clamp_examples() {
        let c = clamp_box(bx(10.0, 10.0, 20.0, 20.0), 100, 100);
        assert_eq!(c.bbox.to_array(), [10.0, 10.0, 20.0, 20.0]);
        assert!(!c.degenerate);
        let c = clamp_box(bx(-5.0, -5.0, 20.0, 20.0), 100, 100);
        assert_eq!(c.bbox.to_array(), [0.0, 0.0, 15.0, 15.0]);
        let c = clamp_box(bx(95.0, 95.0, 20.0, 20.0), 100, 100);
        assert_eq!(c.bbox.to_array(), [95.0, 95.0, 5.0, 5.0]);
    }

    #[test]
    fn clamp_outside_is_flagged() {
        let c = clamp_box(bx(150.0, 20.0, 10.0, 10.0), 100, 100);
        assert!(c.degenerate);
        assert_eq!(c.bbox.to_array(), [99.0, 20.0, 1.0, 1.0]);
        let c = clamp_box(bx(-50.0, -50.0, 10.0, 10.0), 100, 100);
        assert_eq!(c.bbox.to_array(), [0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(geometric_iou(&a, &a), 1.0);
        assert_eq!(geometric_iou(&a, &bx(5.0, 5.0, 1.0, 1.0)), 0.0);
        let v = geometric_iou(&a, &bx(1.0, 0.0, 2.0, 2.0));
        assert!((v - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn bbox_rejects_bad_values() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn segmentation_legend_coverage() {
        let legend = BTreeMap::from([(0, "water".to_string())]);
        assert!(SegmentationMap::new(2, 1, vec![0, 0], legend.clone(), 255).is_ok());
        assert!(SegmentationMap::new(2, 1, vec![0, 255], legend.clone(), 255).is_ok());
        let err = SegmentationMap::new(2, 1, vec![0, 7], legend, 255).unwrap_err();
        assert!(matches!(err, Error::InconsistentLegend(_)));
    }

    fn triple_with(question: &str, answer: &str) -> Triple {
        Triple {
            id: "t".into(),
            image_path: "a.png".into(),
            image_size: (10, 10),
            modality: Modality::Sar,
            task: TaskKind::ReferringObjectClassification,
            prompts: vec![VisualPrompt::new(1, PromptGeometry::Box(bx(1.0, 1.0, 2.0, 2.0)))],
            question: question.into(),
            answer: answer.into(),
        }
    }

    #[test]
    fn triple_rejects_dangling_identifier() {
        assert!(triple_with("<Region 1>", "<Region 1>: ship").validate().is_ok());
        assert!(triple_with("<Region 1>", "<Mark 9>: ship").validate().is_err());
    }

    #[test]
    fn triple_rejects_bad_full_image() {
        let mut t = triple_with("q", "a");
        t.prompts = vec![VisualPrompt::new(
            1,
            PromptGeometry::FullImage(bx(0.0, 0.0, 5.0, 10.0)),
        )];
        assert!(t.validate().is_err());
        t.prompts[0] = full_image_box(10, 10).unwrap();
        assert!(t.validate().is_ok());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..150.0f64, -50.0..150.0f64, 0.5..120.0f64, 0.5..120.0f64)
            .prop_map(|(x, y, w, h)| BBox { x, y, w, h })
    }

    proptest! {
        #[test]
        fn clamp_idempotent(b in arb_box(), w in 1u32..200, h in 1u32..200) {
            let once = clamp_box(b, w, h).bbox;
            let twice = clamp_box(once, w, h);
            prop_assert_eq!(once, twice.bbox);
            prop_assert!(!twice.degenerate);
        }

        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = geometric_iou(&a, &b);
            prop_assert_eq!(ab, geometric_iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(geometric_iou(&a, &a), 1.0);
        }
    }
}
