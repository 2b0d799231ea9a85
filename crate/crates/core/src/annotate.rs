//! Annotation requests for a vision-language annotator.
//!
//! A request pairs the mark overlay of a triple with a prompt assembled from
//! a `<Role>` block and a `<Format>` block. Both blocks may use the slots
//! `{marks}`, `{categories}` and `{task_goal}`:
//!
//! * `{marks}` lists marks grouped by category, one line per category:
//!   `- ship: Mark 1 [10, 10, 20, 20], Mark 3 [40, 5, 8, 8]`. Every category
//!   and every mark number appears exactly once.
//! * `{categories}` is the deduplicated category list joined by `, `.
//!   Combining it with `{marks}` repeats the category names.
//! * `{task_goal}` is one sentence describing the requested output.
//!
//! The default blocks are reconstructions of the intent of the role/format
//! templates, not verbatim copies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ingest::parse_answer_labels;
use crate::model::{PromptGeometry, TaskKind, Triple, VisualPrompt};
use crate::render::{render_triple, RenderStyle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationTask {
    BriefCaption,
    DetailedCaption,
    RelationshipAnalysis,
}

impl AnnotationTask {
    pub const ALL: [AnnotationTask; 3] = [
        AnnotationTask::BriefCaption,
        AnnotationTask::DetailedCaption,
        AnnotationTask::RelationshipAnalysis,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationTask::BriefCaption => "brief_caption",
            AnnotationTask::DetailedCaption => "detailed_caption",
            AnnotationTask::RelationshipAnalysis => "relationship_analysis",
        }
    }

    pub fn goal(self) -> &'static str {
        match self {
            AnnotationTask::BriefCaption => {
                "Write one short sentence for each marked object stating what it is."
            }
            AnnotationTask::DetailedCaption => {
                "Write a detailed description of each marked object covering its appearance, position and surroundings."
            }
            AnnotationTask::RelationshipAnalysis => {
                "Describe the spatial relationships and interactions between the marked objects."
            }
        }
    }

    /// Converted referring-classification triples can be re-annotated with
    /// any template; otherwise the triple task must belong to the family.
    pub fn accepts(self, task: TaskKind) -> bool {
        use TaskKind::*;
        task == ReferringObjectClassification
            || match self {
                AnnotationTask::BriefCaption => {
                    matches!(task, ImageCaptionBrief | RegionCaptionBrief | SceneClassification)
                }
                AnnotationTask::DetailedCaption => {
                    matches!(task, ImageCaptionDetailed | RegionCaptionDetailed | SummaryCaption)
                }
                AnnotationTask::RelationshipAnalysis => task == RelationshipAnalysis,
            }
    }
}

impl fmt::Display for AnnotationTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnnotationTask {
    type Err = Error;

    /// Accepts the full names and the short forms `brief`, `detailed`,
    /// `relationship`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "brief" | "brief_caption" => AnnotationTask::BriefCaption,
            "detailed" | "detailed_caption" => AnnotationTask::DetailedCaption,
            "relationship" | "relationship_analysis" => AnnotationTask::RelationshipAnalysis,
            other => return Err(Error::invalid(format!("unknown annotation template `{other}`"))),
        })
    }
}

const DEFAULT_ROLE: &str = "<Role>\n\
You are an expert interpreter of remote sensing imagery. Numbered marks are drawn on the image. \
The marked objects, grouped by category, with bounding boxes given as [x, y, width, height] in pixels, are:\n\
{marks}\n\
</Role>";

const DEFAULT_FORMAT: &str = "<Format>\n\
{task_goal} Refer to every object by its mark number as written above. \
Only describe the listed objects and keep the given categories. \
Answer in plain sentences without bullet points.\n\
</Format>";

const SLOTS: [&str; 3] = ["marks", "categories", "task_goal"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationTemplate {
    pub task: AnnotationTask,
    pub role_text: String,
    pub format_text: String,
}

impl AnnotationTemplate {
    pub fn default_for(task: AnnotationTask) -> Self {
        Self {
            task,
            role_text: DEFAULT_ROLE.into(),
            format_text: DEFAULT_FORMAT.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkLabel {
    pub mark_id: u32,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRequest {
    pub triple_id: String,
    pub task: AnnotationTask,
    pub prompt_text: String,
    pub overlay_png: Vec<u8>,
    pub marks: Vec<MarkLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub triple_id: String,
    pub text: String,
    pub provider: String,
    pub latency_ms: u64,
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{:.1}", v)
    }
}

fn geometry_text(p: &VisualPrompt, image_size: (u32, u32)) -> String {
    match &p.geometry {
        PromptGeometry::Box(b) | PromptGeometry::FullImage(b) => {
            let a = b.to_array().map(fmt_num);
            format!("[{}, {}, {}, {}]", a[0], a[1], a[2], a[3])
        }
        PromptGeometry::Point(pt) => format!("point ({}, {})", fmt_num(pt.x), fmt_num(pt.y)),
        PromptGeometry::FreeForm(f) => {
            let b = crate::synth::freeform_to_box(f, image_size);
            match b {
                Ok(b) => {
                    let a = b.to_array().map(fmt_num);
                    format!("[{}, {}, {}, {}]", a[0], a[1], a[2], a[3])
                }
                Err(_) => "stroke".into(),
            }
        }
    }
}

/// Category per mark taken from `<Region n>: category` answer lines.
pub fn mark_labels(triple: &Triple) -> BTreeMap<u32, String> {
    parse_answer_labels(&triple.answer).into_iter().collect()
}

fn substitute(text: &str, values: &BTreeMap<&str, String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    let mut unknown = Vec::new();
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if after[..close].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                let name = &after[..close];
                match values.get(name) {
                    Some(v) => out.push_str(v),
                    None => unknown.push(name.to_string()),
                }
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    if unknown.is_empty() {
        Ok(out)
    } else {
        Err(Error::Slot(format!(
            "unfilled slot(s) {} (known: {})",
            unknown.iter().map(|s| format!("{{{s}}}")).collect::<Vec<_>>().join(", "),
            SLOTS.join(", ")
        )))
    }
}

/// Prompt text for `prompts` with categories taken from `labels`.
pub fn render_prompt_text(
    template: &AnnotationTemplate,
    prompts: &[VisualPrompt],
    image_size: (u32, u32),
    labels: &BTreeMap<u32, String>,
) -> Result<(String, Vec<MarkLabel>)> {
    let mut marks = Vec::with_capacity(prompts.len());
    // category -> entries, in first-appearance order
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for p in prompts {
        let cat = labels
            .get(&p.mark_id)
            .ok_or_else(|| Error::Slot(format!("no category for mark {}", p.mark_id)))?;
        let entry = format!("Mark {} {}", p.mark_id, geometry_text(p, image_size));
        match groups.iter_mut().find(|(c, _)| c == cat) {
            Some((_, v)) => v.push(entry),
            None => groups.push((cat.clone(), vec![entry])),
        }
        marks.push(MarkLabel {
            mark_id: p.mark_id,
            category: cat.clone(),
        });
    }
    let marks_block = groups
        .iter()
        .map(|(c, v)| format!("- {c}: {}", v.join(", ")))
        .collect::<Vec<_>>()
        .join("\n");
    let categories = groups.iter().map(|(c, _)| c.as_str()).collect::<Vec<_>>().join(", ");
    let values: BTreeMap<&str, String> = [
        ("marks", marks_block),
        ("categories", categories),
        ("task_goal", template.task.goal().to_string()),
    ]
    .into_iter()
    .collect();
    let role = substitute(&template.role_text, &values)?;
    let format = substitute(&template.format_text, &values)?;
    let text = format!("{role}\n{format}");
    if text.trim().is_empty() {
        return Err(Error::Slot("template renders to empty text".into()));
    }
    Ok((text, marks))
}

/// Overlay plus prompt text for one triple. Categories come from the
/// triple's answer lines.
pub fn build_request(
    triple: &Triple,
    image_bytes: &[u8],
    template: &AnnotationTemplate,
    style: &RenderStyle,
) -> Result<AnnotationRequest> {
    build_request_with_labels(triple, image_bytes, template, style, &mark_labels(triple))
}

pub fn build_request_with_labels(
    triple: &Triple,
    image_bytes: &[u8],
    template: &AnnotationTemplate,
    style: &RenderStyle,
    labels: &BTreeMap<u32, String>,
) -> Result<AnnotationRequest> {
    if !template.task.accepts(triple.task) {
        return Err(Error::invalid(format!(
            "template `{}` does not apply to {} triple `{}`",
            template.task, triple.task, triple.id
        )));
    }
    let (prompt_text, marks) = render_prompt_text(template, &triple.prompts, triple.image_size, labels)?;
    let overlay_png = render_triple(triple, image_bytes, style)?;
    Ok(AnnotationRequest {
        triple_id: triple.id.clone(),
        task: template.task,
        prompt_text,
        overlay_png,
        marks,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub text: String,
    pub latency_ms: u64,
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &AnnotationRequest) -> Result<Reply>;
}

/// Deterministic offline provider. The reply depends only on the request
/// content and ends with a short SHA-256 reference of it.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockProvider;

pub fn request_digest(request: &AnnotationRequest) -> String {
    let mut h = Sha256::new();
    h.update(request.task.as_str().as_bytes());
    h.update([0]);
    h.update(request.prompt_text.as_bytes());
    h.update([0]);
    h.update(&request.overlay_png);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &AnnotationRequest) -> Result<Reply> {
        let mut parts: Vec<String> = request
            .marks
            .iter()
            .map(|m| format!("A {} is marked as Mark {}.", m.category, m.mark_id))
            .collect();
        if parts.is_empty() {
            parts.push("No marked objects.".into());
        }
        let digest = request_digest(request);
        parts.push(format!("[ref {}]", &digest[..12]));
        Ok(Reply {
            text: parts.join(" "),
            latency_ms: 0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct HttpProvider {
    pub endpoint: String,
    pub token: Option<String>,
    pub max_attempts: u32,
    /// Wait before retry `k` (1-based) is `backoff * 2^(k-1)`.
    pub backoff: Duration,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct HttpBody<'a> {
    image: String,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct HttpReply {
    text: String,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            token: None,
            max_attempts: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(60),
        }
    }

    /// Endpoint from `ANNOTATE_ENDPOINT`, bearer token from `ANNOTATE_TOKEN`.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var("ANNOTATE_ENDPOINT")
            .map_err(|_| Error::invalid("ANNOTATE_ENDPOINT is not set"))?;
        let mut p = Self::new(endpoint);
        p.token = std::env::var("ANNOTATE_TOKEN").ok().filter(|t| !t.is_empty());
        Ok(p)
    }

    fn attempt(&self, agent: &ureq::Agent, body: &HttpBody) -> std::result::Result<String, Attempt> {
        let mut req = agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        let reply: HttpReply = resp
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(format!("bad response body: {e}")))?;
        Ok(reply.text)
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn complete(&self, request: &AnnotationRequest) -> Result<Reply> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let body = HttpBody {
            image: base64::engine::general_purpose::STANDARD.encode(&request.overlay_png),
            prompt: &request.prompt_text,
        };
        let start = Instant::now();
        let attempts = self.max_attempts.max(1);
        let mut last = String::new();
        for k in 1..=attempts {
            match self.attempt(&agent, &body) {
                Ok(text) => {
                    return Ok(Reply {
                        text,
                        latency_ms: start.elapsed().as_millis() as u64,
                    })
                }
                Err(Attempt::Fatal(m)) => {
                    return Err(Error::Provider {
                        provider: self.name().into(),
                        attempts: k,
                        message: m,
                    })
                }
                Err(Attempt::Retry(m)) => {
                    log::warn!("{}: attempt {k}/{attempts} failed: {m}", request.triple_id);
                    last = m;
                    if k < attempts {
                        std::thread::sleep(self.backoff * 2u32.pow(k - 1));
                    }
                }
            }
        }
        Err(Error::Provider {
            provider: self.name().into(),
            attempts,
            message: last,
        })
    }
}

pub fn annotate(request: &AnnotationRequest, provider: &dyn Provider) -> Result<AnnotationResult> {
    let reply = provider.complete(request)?;
    if reply.text.trim().is_empty() {
        return Err(Error::EmptyAnnotation(request.triple_id.clone()));
    }
    Ok(AnnotationResult {
        triple_id: request.triple_id.clone(),
        text: reply.text,
        provider: provider.name().to_string(),
        latency_ms: reply.latency_ms,
    })
}

/// Runs every request with at most `max_in_flight` outstanding calls and
/// returns the outcomes sorted by triple id.
pub fn dispatch(
    requests: &[AnnotationRequest],
    provider: &dyn Provider,
    max_in_flight: usize,
    exec: Execution,
) -> Result<Vec<(String, Result<AnnotationResult>)>> {
    let run = || exec.map(requests, |r| (r.triple_id.clone(), annotate(r, provider)));
    #[cfg(feature = "parallel")]
    let mut out = if exec.is_parallel() {
        rayon::ThreadPoolBuilder::new()
            .num_threads(max_in_flight.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };
    #[cfg(not(feature = "parallel"))]
    let mut out = {
        let _ = max_in_flight;
        run()
    };
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
