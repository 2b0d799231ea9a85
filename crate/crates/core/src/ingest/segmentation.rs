use std::collections::BTreeMap;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::detection::decode_json;
use crate::model::SegmentationMap;

/// `{"ignore_id": int, "classes": {"<id>": "<name>", ...}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Legend {
    pub ignore_id: u32,
    pub classes: BTreeMap<u32, String>,
}

pub fn parse_legend(bytes: &[u8]) -> Result<Legend> {
    let legend: Legend = decode_json(bytes)?;
    for (id, name) in &legend.classes {
        if name.trim().is_empty() {
            return Err(Error::Schema {
                path: format!("classes.{id}"),
                message: "class name must be non-empty".into(),
            });
        }
    }
    Ok(legend)
}

/// Decodes a single-channel (8- or 16-bit grayscale) PNG of class IDs.
pub fn decode_class_raster(png: &[u8]) -> Result<(u32, u32, Vec<u32>)> {
    let img = image::load_from_memory_with_format(png, ImageFormat::Png).map_err(|e| Error::Decode {
        path: "<segmentation raster>".into(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width(), img.height());
    let ids = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Decode {
                path: "<segmentation raster>".into(),
                message: format!("expected a single-channel PNG, got {:?}", other.color()),
            })
        }
    };
    Ok((w, h, ids))
}

pub fn parse_segmentation(raster_png: &[u8], legend_json: &[u8]) -> Result<SegmentationMap> {
    let legend = parse_legend(legend_json)?;
    let (w, h, ids) = decode_class_raster(raster_png)?;
    SegmentationMap::new(w, h, ids, legend.classes, legend.ignore_id)
}

/// Encodes a class grid as an 8-bit grayscale PNG (ids must be < 256).
pub fn encode_class_raster(width: u32, height: u32, ids: &[u32]) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = ids
        .iter()
        .map(|&id| u8::try_from(id).map_err(|_| Error::invalid(format!("class id {id} exceeds 255"))))
        .collect::<Result<_>>()?;
    let buf = image::GrayImage::from_raw(width, height, bytes)
        .ok_or_else(|| Error::invalid("grid length does not match dimensions"))?;
    let mut out = Vec::new();
    DynamicImage::ImageLuma8(buf)
        .write_to(&mut std::io::Cursor::new(&mut out), ImageFormat::Png)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(out)
}
