//! Detection annotation adapters.
//!
//! The canonical format is
//! `{"images":[{"id","file","width","height","instances":[{"category","bbox":[x,y,w,h]}]}]}`;
//! COCO instance files are converted into the same records.

use std::collections::HashMap;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::ingest::Loaded;
use crate::model::{clamp_box, AnnotationRecord, BBox, Instance};

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum IdValue {
    Int(i64),
    Str(String),
}

impl IdValue {
    fn into_string(self) -> String {
        match self {
            IdValue::Int(i) => i.to_string(),
            IdValue::Str(s) => s,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalFile {
    images: Vec<CanonicalImage>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalImage {
    id: IdValue,
    file: String,
    width: u32,
    height: u32,
    #[serde(default)]
    instances: Vec<CanonicalInstance>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CanonicalInstance {
    category: String,
    bbox: [f64; 4],
}

pub(crate) fn decode_json<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| Error::from_json(bytes, e))
}

/// Validates one raw instance and clamps it into the image. Returns `None`
/// (with a warning) when the box does not overlap the image at all.
fn admit_instance(
    path: &str,
    category: String,
    raw: [f64; 4],
    size: (u32, u32),
    warnings: &mut Vec<String>,
) -> Result<Option<Instance>> {
    if category.trim().is_empty() {
        return Err(Error::Schema {
            path: format!("{path}.category"),
            message: "category must be a non-empty string".into(),
        });
    }
    let bbox = BBox::from_array(raw).map_err(|e| Error::Schema {
        path: format!("{path}.bbox"),
        message: e.to_string(),
    })?;
    let clamped = clamp_box(bbox, size.0, size.1);
    if clamped.degenerate {
        warnings.push(format!("{path}: box {raw:?} lies outside the image, dropped"));
        return Ok(None);
    }
    if clamped.bbox != bbox {
        warnings.push(format!(
            "{path}: box {raw:?} clamped to {:?}",
            clamped.bbox.to_array()
        ));
    }
    Ok(Some(Instance {
        category,
        bbox: clamped.bbox,
    }))
}

fn check_size(path: &str, width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Schema {
            path: path.to_string(),
            message: format!("image size {width}x{height} must be positive"),
        });
    }
    Ok(())
}

/// One record per image in file order, instance order preserved.
pub fn parse_canonical_detection(bytes: &[u8]) -> Result<Loaded<Vec<AnnotationRecord>>> {
    let file: CanonicalFile = decode_json(bytes)?;
    let mut warnings = Vec::new();
    let mut records = Vec::with_capacity(file.images.len());
    for (i, img) in file.images.into_iter().enumerate() {
        let base = format!("images[{i}]");
        check_size(&base, img.width, img.height)?;
        let size = (img.width, img.height);
        let mut instances = Vec::with_capacity(img.instances.len());
        for (j, inst) in img.instances.into_iter().enumerate() {
            let path = format!("{base}.instances[{j}]");
            if let Some(ok) = admit_instance(&path, inst.category, inst.bbox, size, &mut warnings)? {
                instances.push(ok);
            }
        }
        records.push(AnnotationRecord {
            image_id: img.id.into_string(),
            image_path: img.file,
            image_size: size,
            instances,
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Loaded::new(records, warnings))
}

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: i64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    image_id: i64,
    category_id: i64,
    bbox: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: i64,
    name: String,
}

/// COCO instance JSON. Records follow `images` order; instances follow
/// `annotations` order.
pub fn parse_coco_detection(bytes: &[u8]) -> Result<Loaded<Vec<AnnotationRecord>>> {
    let file: CocoFile = decode_json(bytes)?;
    let categories: HashMap<i64, &str> = file
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    let index: HashMap<i64, usize> = file
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| (img.id, i))
        .collect();
    let mut warnings = Vec::new();
    let mut records: Vec<AnnotationRecord> = file
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            check_size(&format!("images[{i}]"), img.width, img.height)?;
            Ok(AnnotationRecord {
                image_id: img.id.to_string(),
                image_path: img.file_name.clone(),
                image_size: (img.width, img.height),
                instances: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    for (j, ann) in file.annotations.iter().enumerate() {
        let path = format!("annotations[{j}]");
        let Some(&slot) = index.get(&ann.image_id) else {
            return Err(Error::Schema {
                path: format!("{path}.image_id"),
                message: format!("unknown image id {}", ann.image_id),
            });
        };
        let Some(name) = categories.get(&ann.category_id) else {
            return Err(Error::Schema {
                path: format!("{path}.category_id"),
                message: format!("unknown category id {}", ann.category_id),
            });
        };
        let size = records[slot].image_size;
        if let Some(inst) = admit_instance(&path, name.to_string(), ann.bbox, size, &mut warnings)? {
            records[slot].instances.push(inst);
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Loaded::new(records, warnings))
}
