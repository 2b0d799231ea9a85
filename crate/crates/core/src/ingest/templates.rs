//! Instruction templates keyed by task.
//!
//! A template may contain a `{marks}` slot, which expands to the list of
//! prompt identifiers (`<Region 1>, <Region 2>`). Templates without the slot
//! get the identifier list appended after a space.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::TaskKind;
use crate::rng::SeededRng;
use crate::text::{has_unresolved_placeholder, MarkWord};

pub const IDENTIFY_REGION: &str = "Please identify the object category of each marked region in the image.";
pub const IDENTIFY_POINT: &str = "Please identify the labels of each marked point in the image.";
pub const BRIEF_REGION: &str = "Please provide a brief caption of each marked region in the image.";
pub const DETAILED_POINT: &str = "Please provide a detailed caption of each marked point in the image.";
pub const DETAILED_REGION: &str = "Please provide a detailed caption of each marked region in the image.";
pub const RELATIONSHIP: &str = "Please analyze the relationship between all marked regions in the image.";
pub const SUMMARY: &str =
    "Please provide a summarized caption based on all the marked regions in the image.";
pub const INTERACTION: &str =
    "Please analyze how the marked objects interact with each other in the given scene.";

/// Which prompt family a template's wording addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Region,
    Point,
    Any,
}

impl Target {
    fn accepts(self, word: MarkWord) -> bool {
        matches!(
            (self, word),
            (Target::Any, _) | (Target::Region, MarkWord::Region) | (Target::Point, MarkWord::Mark)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub text: String,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    by_task: BTreeMap<TaskKind, Vec<Template>>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        use Target::*;
        use TaskKind::*;
        let mut set = Self::empty();
        let entries: [(TaskKind, &str, Target); 11] = [
            (ReferringObjectClassification, IDENTIFY_REGION, Region),
            (ReferringObjectClassification, IDENTIFY_POINT, Point),
            (SceneClassification, IDENTIFY_REGION, Any),
            (ImageCaptionBrief, BRIEF_REGION, Any),
            (ImageCaptionDetailed, DETAILED_REGION, Any),
            (RegionCaptionBrief, BRIEF_REGION, Region),
            (RegionCaptionDetailed, DETAILED_REGION, Region),
            (RegionCaptionDetailed, DETAILED_POINT, Point),
            (RelationshipAnalysis, RELATIONSHIP, Region),
            (RelationshipAnalysis, INTERACTION, Any),
            (SummaryCaption, SUMMARY, Any),
        ];
        for (task, text, target) in entries {
            set.push(task, text, target);
        }
        set
    }
}

impl TemplateSet {
    pub fn empty() -> Self {
        Self {
            by_task: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, task: TaskKind, text: impl Into<String>, target: Target) {
        self.by_task.entry(task).or_default().push(Template {
            text: text.into(),
            target,
        });
    }

    /// Adds a user variant usable with any prompt family.
    pub fn add_variant(&mut self, task: TaskKind, text: impl Into<String>) {
        self.push(task, text, Target::Any);
    }

    pub fn templates(&self, task: TaskKind) -> &[Template] {
        self.by_task.get(&task).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Uniform choice among all templates for `task`.
    pub fn select_instruction(&self, task: TaskKind, rng: &mut SeededRng) -> Result<String> {
        let all = self.templates(task);
        if all.is_empty() {
            return Err(Error::MissingTemplate(task.to_string()));
        }
        Ok(all[rng.random_range(0..all.len())].text.clone())
    }

    /// Uniform choice among the templates whose wording fits `word`; falls
    /// back to every template for `task` when none fit.
    pub fn select_for(&self, task: TaskKind, word: MarkWord, rng: &mut SeededRng) -> Result<String> {
        let all = self.templates(task);
        if all.is_empty() {
            return Err(Error::MissingTemplate(task.to_string()));
        }
        let fitting: Vec<&Template> = all.iter().filter(|t| t.target.accepts(word)).collect();
        if fitting.is_empty() {
            return Ok(all[rng.random_range(0..all.len())].text.clone());
        }
        Ok(fitting[rng.random_range(0..fitting.len())].text.clone())
    }
}

/// Fills the `{marks}` slot (or appends the list) and rejects anything left
/// unresolved.
pub fn render_question(template: &str, word: MarkWord, mark_ids: &[u32]) -> Result<String> {
    let list = mark_ids
        .iter()
        .map(|&n| word.tag(n))
        .collect::<Vec<_>>()
        .join(", ");
    let rendered = if template.contains("{marks}") {
        template.replace("{marks}", &list)
    } else if list.is_empty() {
        template.to_string()
    } else {
        format!("{template} {list}")
    };
    if has_unresolved_placeholder(&rendered) {
        return Err(Error::Slot(format!("unresolved placeholder in `{rendered}`")));
    }
    Ok(rendered)
}
