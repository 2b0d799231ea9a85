//! Set-of-Marks overlays: box outlines, filled point discs and free-form
//! polylines, each tagged with its mark number in a built-in bitmap font.
//!
//! Shapes are drawn first in prompt order, then every label block on top.
//! A box covers the pixel columns `floor(x)..ceil(x + w)` (exclusive end),
//! clamped to the image, and its outline is `stroke_width` pixels thick on
//! the inside of that span.

pub mod font;

use std::io::Cursor;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::ingest::Loaded;
use crate::model::{clamp_box, PromptGeometry, Triple, VisualPrompt};
use font::{digits, ink, GLYPH_H, GLYPH_W};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderStyle {
    pub stroke_width: u32,
    /// Mark `n` uses `palette[(n - 1) % len]`.
    pub palette: Vec<[u8; 3]>,
    /// Integer magnification of the 5x7 digit font.
    pub label_scale: u32,
    pub point_radius: u32,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            stroke_width: 2,
            palette: vec![
                [230, 25, 75],
                [60, 180, 75],
                [255, 225, 25],
                [0, 130, 200],
                [245, 130, 48],
                [145, 30, 180],
                [70, 240, 240],
                [240, 50, 230],
            ],
            label_scale: 2,
            point_radius: 4,
        }
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<()> {
        if self.stroke_width == 0 {
            return Err(Error::invalid("stroke_width must be >= 1"));
        }
        if self.palette.is_empty() {
            return Err(Error::invalid("palette must not be empty"));
        }
        if self.label_scale == 0 {
            return Err(Error::invalid("label_scale must be >= 1"));
        }
        Ok(())
    }

    pub fn color(&self, mark_id: u32) -> [u8; 3] {
        self.palette[(mark_id.max(1) as usize - 1) % self.palette.len()]
    }

    /// Digit color that contrasts with the mark color.
    pub fn text_color(&self, mark_id: u32) -> [u8; 3] {
        let [r, g, b] = self.color(mark_id);
        let luma = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
        if luma > 150.0 {
            [0, 0, 0]
        } else {
            [255, 255, 255]
        }
    }
}

/// Inclusive pixel rectangle. May extend past the image; drawing clips.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl PixelRect {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0 + 1
    }
}

/// Size of the label block for `mark_id`: one scaled pixel of padding around
/// the digits and one scaled column between them.
pub fn label_size(mark_id: u32, scale: u32) -> (i64, i64) {
    let d = digits(mark_id).len() as i64;
    let s = scale as i64;
    (s * ((GLYPH_W as i64 + 1) * d + 1), s * (GLYPH_H as i64 + 2))
}

enum Shape {
    Outline(PixelRect),
    Disc { cx: i64, cy: i64 },
    Polyline(Vec<(i64, i64)>),
}

/// Pixel bounds of a box after clamping, or why it was skipped.
pub fn box_pixels(b: &crate::model::BBox, width: u32, height: u32) -> Option<PixelRect> {
    let c = clamp_box(*b, width, height);
    if c.degenerate {
        return None;
    }
    let b = c.bbox;
    Some(PixelRect {
        x0: b.x.floor() as i64,
        y0: b.y.floor() as i64,
        x1: (b.right().ceil() as i64 - 1).min(width as i64 - 1),
        y1: (b.bottom().ceil() as i64 - 1).min(height as i64 - 1),
    })
}

fn plan(p: &VisualPrompt, style: &RenderStyle, width: u32, height: u32) -> std::result::Result<(Shape, (i64, i64)), String> {
    let (w, h) = (width as i64, height as i64);
    match &p.geometry {
        PromptGeometry::Box(b) | PromptGeometry::FullImage(b) => {
            let r = box_pixels(b, width, height)
                .ok_or_else(|| format!("mark {}: box {:?} lies outside the image", p.mark_id, b.to_array()))?;
            Ok((Shape::Outline(r), (r.x0, r.y0)))
        }
        PromptGeometry::Point(pt) => {
            if !pt.in_image(width, height) {
                return Err(format!("mark {}: point ({}, {}) lies outside the image", p.mark_id, pt.x, pt.y));
            }
            let (cx, cy) = (pt.x.floor() as i64, pt.y.floor() as i64);
            let r = style.point_radius as i64;
            Ok((Shape::Disc { cx, cy }, (cx + r + 1, cy - r)))
        }
        PromptGeometry::FreeForm(f) => {
            let pts: Vec<(i64, i64)> = f
                .vertices
                .iter()
                .map(|&(x, y)| (x.floor() as i64, y.floor() as i64))
                .collect();
            let min_x = pts.iter().map(|p| p.0).min().unwrap_or(0);
            let min_y = pts.iter().map(|p| p.1).min().unwrap_or(0);
            let max_x = pts.iter().map(|p| p.0).max().unwrap_or(-1);
            let max_y = pts.iter().map(|p| p.1).max().unwrap_or(-1);
            if max_x < 0 || max_y < 0 || min_x >= w || min_y >= h {
                return Err(format!("mark {}: free-form stroke lies outside the image", p.mark_id));
            }
            Ok((Shape::Polyline(pts), (min_x.clamp(0, w - 1), min_y.clamp(0, h - 1))))
        }
    }
}

/// Where the label block of `prompt` lands: at its anchor, shifted to stay
/// inside the image when it fits. `None` when the prompt is skipped.
pub fn label_rect(prompt: &VisualPrompt, style: &RenderStyle, width: u32, height: u32) -> Option<PixelRect> {
    let (_, (ax, ay)) = plan(prompt, style, width, height).ok()?;
    let (bw, bh) = label_size(prompt.mark_id, style.label_scale);
    let x0 = ax.min(width as i64 - bw).max(0);
    let y0 = ay.min(height as i64 - bh).max(0);
    Some(PixelRect {
        x0,
        y0,
        x1: x0 + bw - 1,
        y1: y0 + bh - 1,
    })
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn fill(img: &mut RgbImage, r: PixelRect, c: [u8; 3]) {
    for y in r.y0..=r.y1 {
        for x in r.x0..=r.x1 {
            put(img, x, y, c);
        }
    }
}

fn draw_outline(img: &mut RgbImage, r: PixelRect, s: i64, c: [u8; 3]) {
    let s = s.min(r.width()).min(r.height()).max(1);
    let bands = [
        PixelRect { y1: r.y0 + s - 1, ..r },
        PixelRect { y0: r.y1 - s + 1, ..r },
        PixelRect { x1: r.x0 + s - 1, ..r },
        PixelRect { x0: r.x1 - s + 1, ..r },
    ];
    for b in bands {
        fill(img, b, c);
    }
}

fn draw_disc(img: &mut RgbImage, cx: i64, cy: i64, r: i64, c: [u8; 3]) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(img, cx + dx, cy + dy, c);
            }
        }
    }
}

/// Square brush of side `s`, covering offsets `-(s-1)/2 ..= s/2`.
fn stamp(img: &mut RgbImage, x: i64, y: i64, s: i64, c: [u8; 3]) {
    let lo = -(s - 1) / 2;
    fill(
        img,
        PixelRect {
            x0: x + lo,
            y0: y + lo,
            x1: x + lo + s - 1,
            y1: y + lo + s - 1,
        },
        c,
    );
}

/// Integer Bresenham line, both endpoints included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - x).abs();
    let dy = -(b.1 - y).abs();
    let sx = if x < b.0 { 1 } else { -1 };
    let sy = if y < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

fn draw_polyline(img: &mut RgbImage, pts: &[(i64, i64)], s: i64, c: [u8; 3]) {
    if let [only] = pts {
        stamp(img, only.0, only.1, s, c);
    }
    for seg in pts.windows(2) {
        for (x, y) in bresenham(seg[0], seg[1]) {
            stamp(img, x, y, s, c);
        }
    }
}

fn draw_label(img: &mut RgbImage, r: PixelRect, mark_id: u32, style: &RenderStyle) {
    fill(img, r, style.color(mark_id));
    let fg = style.text_color(mark_id);
    let s = style.label_scale as i64;
    for (i, d) in digits(mark_id).into_iter().enumerate() {
        let gx = r.x0 + s + i as i64 * (GLYPH_W as i64 + 1) * s;
        let gy = r.y0 + s;
        for row in 0..GLYPH_H {
            for col in 0..GLYPH_W {
                if ink(d, col, row) {
                    let x0 = gx + col as i64 * s;
                    let y0 = gy + row as i64 * s;
                    fill(img, PixelRect { x0, y0, x1: x0 + s - 1, y1: y0 + s - 1 }, fg);
                }
            }
        }
    }
}

/// The label block for `mark_id` as a standalone image, for template matching.
pub fn label_block(mark_id: u32, style: &RenderStyle) -> RgbImage {
    let (w, h) = label_size(mark_id, style.label_scale);
    let mut img = RgbImage::new(w as u32, h as u32);
    draw_label(&mut img, PixelRect { x0: 0, y0: 0, x1: w - 1, y1: h - 1 }, mark_id, style);
    img
}

/// Draws `prompts` onto a copy of `image`. Prompts that fall outside the
/// image are skipped and reported as warnings.
pub fn render_marks(image: &RgbImage, prompts: &[VisualPrompt], style: &RenderStyle) -> Result<Loaded<RgbImage>> {
    style.validate()?;
    let (w, h) = image.dimensions();
    let mut out = image.clone();
    let mut warnings = Vec::new();
    let mut labels = Vec::new();
    for p in prompts {
        let (shape, _) = match plan(p, style, w, h) {
            Ok(x) => x,
            Err(msg) => {
                warnings.push(msg);
                continue;
            }
        };
        let c = style.color(p.mark_id);
        let s = style.stroke_width as i64;
        match shape {
            Shape::Outline(r) => draw_outline(&mut out, r, s, c),
            Shape::Disc { cx, cy } => draw_disc(&mut out, cx, cy, style.point_radius as i64, c),
            Shape::Polyline(pts) => draw_polyline(&mut out, &pts, s, c),
        }
        if let Some(r) = label_rect(p, style, w, h) {
            labels.push((r, p.mark_id));
        }
    }
    for (r, id) in labels {
        draw_label(&mut out, r, id, style);
    }
    let loaded = Loaded::new(out, warnings);
    loaded.log_warnings();
    Ok(loaded)
}

/// 8-bit RGB PNG with fixed compression and filter settings.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    PngEncoder::new_with_quality(&mut buf, CompressionType::Default, FilterType::Adaptive)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Encode(e.to_string()))?;
    Ok(buf.into_inner())
}

/// Decodes `image_bytes`, overlays the triple's prompts and re-encodes.
pub fn render_triple(triple: &Triple, image_bytes: &[u8], style: &RenderStyle) -> Result<Vec<u8>> {
    triple.validate()?;
    let decoded = image::load_from_memory(image_bytes).map_err(|e| Error::Decode {
        path: triple.image_path.clone(),
        message: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    if rgb.dimensions() != triple.image_size {
        log::warn!(
            "{}: decoded size {:?} differs from recorded {:?}",
            triple.image_path,
            rgb.dimensions(),
            triple.image_size
        );
    }
    let drawn = render_marks(&rgb, &triple.prompts, style)?;
    encode_png(&drawn.items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, FreeFormPrompt, PointPrompt};

    const BG: [u8; 3] = [7, 8, 9];

    fn canvas(w: u32, h: u32) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(BG))
    }

    fn boxp(id: u32, a: [f64; 4]) -> VisualPrompt {
        VisualPrompt::new(id, PromptGeometry::Box(BBox::from_array(a).unwrap()))
    }

    /// Outline membership checked pixel by pixel from the definition.
    fn on_outline(x: i64, y: i64, b: [f64; 4], s: i64) -> bool {
        let (x0, y0) = (b[0].floor() as i64, b[1].floor() as i64);
        let (x1, y1) = ((b[0] + b[2]).ceil() as i64 - 1, (b[1] + b[3]).ceil() as i64 - 1);
        let inside = x >= x0 && x <= x1 && y >= y0 && y <= y1;
        inside && (x < x0 + s || x > x1 - s || y < y0 + s || y > y1 - s)
    }

    #[test]
    fn empty_prompt_list_is_identity() {
        let img = canvas(20, 10);
        let out = render_marks(&img, &[], &RenderStyle::default()).unwrap();
        assert_eq!(out.items, img);
    }

    #[test]
    fn single_box_matches_brute_force() {
        let style = RenderStyle {
            stroke_width: 1,
            ..RenderStyle::default()
        };
        let b = [10.0, 10.0, 20.0, 20.0];
        let img = canvas(64, 48);
        let out = render_marks(&img, &[boxp(1, b)], &style).unwrap().items;
        let label = label_rect(&boxp(1, b), &style, 64, 48).unwrap();
        assert_eq!((label.x0, label.y0), (10, 10));
        let block = label_block(1, &style);
        for y in 0..48i64 {
            for x in 0..64i64 {
                let got = out.get_pixel(x as u32, y as u32).0;
                let want = if label.contains(x, y) {
                    block.get_pixel((x - label.x0) as u32, (y - label.y0) as u32).0
                } else if on_outline(x, y, b, 1) {
                    style.color(1)
                } else {
                    BG
                };
                assert_eq!(got, want, "pixel ({x}, {y})");
            }
        }
    }

    #[test]
    fn two_labels_present_at_anchors() {
        let style = RenderStyle::default();
        let ps = [boxp(1, [2.0, 2.0, 30.0, 30.0]), boxp(2, [40.0, 20.0, 30.0, 30.0])];
        let out = render_marks(&canvas(80, 60), &ps, &style).unwrap().items;
        for p in &ps {
            let r = label_rect(p, &style, 80, 60).unwrap();
            let block = label_block(p.mark_id, &style);
            for (bx, by, px) in block.enumerate_pixels() {
                assert_eq!(out.get_pixel(r.x0 as u32 + bx, r.y0 as u32 + by), px);
            }
        }
        assert_ne!(label_block(1, &style), label_block(2, &style));
    }

    #[test]
    fn point_at_origin_is_clipped() {
        let style = RenderStyle::default();
        let p = VisualPrompt::new(1, PromptGeometry::Point(PointPrompt::new(0.0, 0.0).unwrap()));
        let out = render_marks(&canvas(16, 16), std::slice::from_ref(&p), &style).unwrap();
        assert!(out.warnings.is_empty());
        let r = style.point_radius as i64;
        let label = label_rect(&p, &style, 16, 16).unwrap();
        for y in 0..16i64 {
            for x in 0..16i64 {
                if label.contains(x, y) {
                    continue;
                }
                let want = if x * x + y * y <= r * r { style.color(1) } else { BG };
                assert_eq!(out.items.get_pixel(x as u32, y as u32).0, want);
            }
        }
    }

    #[test]
    fn outside_prompts_are_skipped() {
        let style = RenderStyle::default();
        let ps = [
            boxp(1, [100.0, 100.0, 5.0, 5.0]),
            VisualPrompt::new(2, PromptGeometry::Point(PointPrompt::new(-1.0, 3.0).unwrap())),
            VisualPrompt::new(
                3,
                PromptGeometry::FreeForm(FreeFormPrompt::new(vec![(50.0, 50.0), (60.0, 70.0)]).unwrap()),
            ),
        ];
        let img = canvas(20, 20);
        let out = render_marks(&img, &ps, &style).unwrap();
        assert_eq!(out.warnings.len(), 3);
        assert_eq!(out.items, img);
    }

    #[test]
    fn freeform_stroke_follows_bresenham() {
        let style = RenderStyle {
            stroke_width: 1,
            label_scale: 1,
            ..RenderStyle::default()
        };
        let p = VisualPrompt::new(
            1,
            PromptGeometry::FreeForm(FreeFormPrompt::new(vec![(5.0, 30.0), (35.0, 20.0), (35.0, 5.0)]).unwrap()),
        );
        let out = render_marks(&canvas(40, 40), std::slice::from_ref(&p), &style).unwrap().items;
        let label = label_rect(&p, &style, 40, 40).unwrap();
        let mut line = bresenham((5, 30), (35, 20));
        line.extend(bresenham((35, 20), (35, 5)));
        for y in 0..40i64 {
            for x in 0..40i64 {
                if label.contains(x, y) {
                    continue;
                }
                let want = if line.contains(&(x, y)) { style.color(1) } else { BG };
                assert_eq!(out.get_pixel(x as u32, y as u32).0, want, "({x}, {y})");
            }
        }
    }

    #[test]
    fn bresenham_endpoints_and_connectivity() {
        let l = bresenham((0, 0), (7, -3));
        assert_eq!(l.first(), Some(&(0, 0)));
        assert_eq!(l.last(), Some(&(7, -3)));
        assert_eq!(l.len(), 8);
        for w in l.windows(2) {
            assert!((w[0].0 - w[1].0).abs() <= 1 && (w[0].1 - w[1].1).abs() <= 1);
        }
    }

    #[test]
    fn full_image_box_draws_border_and_is_deterministic() {
        let style = RenderStyle::default();
        let t = Triple {
            id: "t".into(),
            image_path: "x.png".into(),
            image_size: (32, 24),
            modality: crate::model::Modality::Optical,
            task: crate::model::TaskKind::SceneClassification,
            prompts: vec![crate::model::full_image_box(32, 24).unwrap()],
            question: "q".into(),
            answer: "a".into(),
        };
        let src = encode_png(&canvas(32, 24)).unwrap();
        let a = render_triple(&t, &src, &style).unwrap();
        let b = render_triple(&t, &src, &style).unwrap();
        assert_eq!(a, b);
        let img = image::load_from_memory(&a).unwrap().to_rgb8();
        let c = style.color(1);
        assert_eq!(img.get_pixel(31, 23).0, c);
        assert_eq!(img.get_pixel(0, 23).0, c);
        assert_eq!(img.get_pixel(31, 0).0, c);
        assert_eq!(img.get_pixel(15, 12).0, BG);
        match render_triple(&t, b"not a png", &style).unwrap_err() {
            Error::Decode { path, .. } => assert_eq!(path, "x.png"),
            other => panic!("{other:?}"),
        }
    }
}
