//! Visual-prompt synthesis: size-proportional Gaussian box noise,
//! patch-grid point sampling over segmentation maps, K-point mask sampling,
//! and reduction of free-form strokes to boxes.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{clamp_box, BBox, FreeFormPrompt, PointPrompt, SegmentationMap};
use crate::rng::SeededRng;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_PATCH_PX: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    /// Per-coordinate standard deviation as a fraction of the matching box
    /// dimension: `sigma = alpha * (w, h, w, h)`.
    pub alpha: f64,
    pub clamp_to_image: bool,
    pub min_size: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            clamp_to_image: true,
            min_size: 1.0,
        }
    }
}

impl AugmentConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::invalid(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.min_size >= 1.0 && self.min_size.is_finite()) {
            return Err(Error::invalid(format!("min_size must be >= 1, got {}", self.min_size)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedBox {
    /// Noisy box after the size floor, before clamping.
    pub raw: BBox,
    /// Box to use; equals `raw` when clamping is off.
    pub bbox: BBox,
    /// Clamping found no overlap with the image.
    pub degenerate: bool,
}

/// `B' = B + eps`, `eps ~ N(0, diag((aw)^2, (ah)^2, (aw)^2, (ah)^2))`.
///
/// Draws four standard normals in `(x, y, w, h)` order from `rng`.
pub fn augment_box(
    b: BBox,
    cfg: &AugmentConfig,
    rng: &mut SeededRng,
    image_size: (u32, u32),
) -> Result<AugmentedBox> {
    b.validate()?;
    cfg.validate()?;
    let mut z = [0.0f64; 4];
    for v in &mut z {
        *v = rng.sample(StandardNormal);
    }
    let (sx, sy) = (cfg.alpha * b.w, cfg.alpha * b.h);
    let raw = BBox {
        x: b.x + sx * z[0],
        y: b.y + sy * z[1],
        w: (b.w + sx * z[2]).max(cfg.min_size),
        h: (b.h + sy * z[3]).max(cfg.min_size),
    };
    if cfg.clamp_to_image {
        let c = clamp_box(raw, image_size.0, image_size.1);
        Ok(AugmentedBox {
            raw,
            bbox: c.bbox,
            degenerate: c.degenerate,
        })
    } else {
        Ok(AugmentedBox {
            raw,
            bbox: raw,
            degenerate: false,
        })
    }
}

/// `n` independent draws; draw `i` uses stream `i` under `seed`, so the
/// result does not depend on `exec`.
pub fn augment_many(
    b: BBox,
    cfg: &AugmentConfig,
    seed: u64,
    n: usize,
    image_size: (u32, u32),
    exec: Execution,
) -> Result<Vec<AugmentedBox>> {
    b.validate()?;
    cfg.validate()?;
    exec.map_range(n, |i| {
        let mut rng = SeededRng::with_stream(seed, i as u64);
        augment_box(b, cfg, &mut rng, image_size)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl Cell {
    pub fn contains(&self, p: &PointPrompt) -> bool {
        p.x >= self.x0 as f64
            && p.y >= self.y0 as f64
            && p.x < (self.x0 + self.width) as f64
            && p.y < (self.y0 + self.height) as f64
    }
}

/// Non-overlapping `patch_px` cells in raster order; the last column and row
/// may be partial.
pub fn patch_cells(width: u32, height: u32, patch_px: u32) -> Vec<Cell> {
    let mut cells = Vec::new();
    let mut y0 = 0;
    while y0 < height {
        let ch = patch_px.min(height - y0);
        let mut x0 = 0;
        while x0 < width {
            let cw = patch_px.min(width - x0);
            cells.push(Cell {
                x0,
                y0,
                width: cw,
                height: ch,
            });
            x0 += patch_px;
        }
        y0 += patch_px;
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub point: PointPrompt,
    pub category: String,
    /// Raster-order index of the cell the point came from.
    pub cell: usize,
}

/// One uniformly drawn pixel per cell, labeled from the map. Points landing
/// on `ignore_id` are dropped. Coordinates are integer pixel positions.
pub fn sample_patch_points(
    seg: &SegmentationMap,
    patch_px: u32,
    rng: &mut SeededRng,
) -> Result<Vec<LabeledPoint>> {
    if patch_px == 0 {
        return Err(Error::invalid("patch_px must be >= 1"));
    }
    let mut out = Vec::new();
    for (i, cell) in patch_cells(seg.width(), seg.height(), patch_px)
        .into_iter()
        .enumerate()
    {
        let px = cell.x0 + rng.random_range(0..cell.width);
        let py = cell.y0 + rng.random_range(0..cell.height);
        let id = seg.class_at(px, py);
        if id == seg.ignore_id() {
            continue;
        }
        let category = seg.legend().get(&id).ok_or_else(|| {
            Error::InconsistentLegend(format!("class id {id} at ({px}, {py}) missing from legend"))
        })?;
        out.push(LabeledPoint {
            point: PointPrompt {
                x: px as f64,
                y: py as f64,
            },
            category: category.clone(),
            cell: i,
        });
    }
    Ok(out)
}

/// Uniform K-point sample from a pixel set: without replacement when the
/// mask holds at least `k` pixels, with replacement otherwise. Duplicate
/// input pixels are collapsed first.
pub fn sample_mask_points(
    mask: &[(u32, u32)],
    k: usize,
    rng: &mut SeededRng,
) -> Result<Vec<PointPrompt>> {
    if mask.is_empty() {
        return Err(Error::invalid("mask is empty"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let mut pixels = mask.to_vec();
    pixels.sort_unstable();
    pixels.dedup();
    let to_point = |&(x, y): &(u32, u32)| PointPrompt {
        x: x as f64,
        y: y as f64,
    };
    if pixels.len() >= k {
        Ok(index::sample(rng, pixels.len(), k)
            .into_iter()
            .map(|i| to_point(&pixels[i]))
            .collect())
    } else {
        Ok((0..k)
            .map(|_| to_point(&pixels[rng.random_range(0..pixels.len())]))
            .collect())
    }
}

/// Axis-aligned bounds of the stroke, clamped to the image, at least 1x1.
pub fn freeform_to_box(f: &FreeFormPrompt, image_size: (u32, u32)) -> Result<BBox> {
    f.validate()?;
    let (wf, hf) = (image_size.0 as f64, image_size.1 as f64);
    if wf <= 0.0 || hf <= 0.0 {
        return Err(Error::invalid("image size must be positive"));
    }
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &f.vertices {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (x0, x1) = clamp_span(x0, x1, wf);
    let (y0, y1) = clamp_span(y0, y1, hf);
    Ok(BBox {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
    })
}

/// Clamps `[lo, hi]` into `[0, limit]` and widens it to span at least one
/// pixel while staying inside.
fn clamp_span(lo: f64, hi: f64, limit: f64) -> (f64, f64) {
    let lo = lo.clamp(0.0, limit);
    let hi = hi.clamp(0.0, limit);
    if hi - lo >= 1.0 {
        (lo, hi)
    } else if lo + 1.0 <= limit {
        (lo, lo + 1.0)
    } else {
        ((limit - 1.0).max(0.0), limit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::geometric_iou;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn zero_alpha_is_identity() {
        let b = bx(100.0, 100.0, 50.0, 80.0);
        let mut rng = SeededRng::new(3);
        for _ in 0..100 {
            let a = augment_box(b, &AugmentConfig::with_alpha(0.0), &mut rng, (1000, 1000)).unwrap();
            assert_eq!(a.bbox, b);
            assert_eq!(a.raw, b);
        }
    }

    #[test]
    fn augment_rejects_invalid() {
        let mut rng = SeededRng::new(0);
        let bad = BBox { x: 0.0, y: 0.0, w: -1.0, h: 1.0 };
        assert!(augment_box(bad, &AugmentConfig::default(), &mut rng, (10, 10)).is_err());
        let cfg = AugmentConfig { alpha: -0.1, ..Default::default() };
        assert!(augment_box(bx(0.0, 0.0, 1.0, 1.0), &cfg, &mut rng, (10, 10)).is_err());
    }

    #[test]
    fn small_noise_keeps_overlap() {
        let b = bx(100.0, 100.0, 50.0, 80.0);
        let cfg = AugmentConfig::with_alpha(0.05);
        let draws = augment_many(b, &cfg, 11, 10_000, (1000, 1000), Execution::default()).unwrap();
        let high = draws.iter().filter(|a| geometric_iou(&b, &a.bbox) > 0.5).count();
        assert!(high as f64 >= 0.99 * 10_000.0, "only {high} draws above 0.5");
    }

    #[test]
    fn batch_is_schedule_independent() {
        let b = bx(10.0, 10.0, 30.0, 30.0);
        let cfg = AugmentConfig::default();
        let s = augment_many(b, &cfg, 5, 500, (64, 64), Execution::Sequential).unwrap();
        let p = augment_many(b, &cfg, 5, 500, (64, 64), Execution::Parallel).unwrap();
        assert_eq!(s, p);
    }

    fn uniform_map(w: u32, h: u32, id: u32) -> SegmentationMap {
        SegmentationMap::new(
            w,
            h,
            vec![id; (w * h) as usize],
            BTreeMap::from([(0, "water".into()), (1, "land".into())]),
            255,
        )
        .unwrap()
    }

    #[test]
    fn single_cell() {
        let seg = uniform_map(32, 32, 1);
        let pts = sample_patch_points(&seg, 32, &mut SeededRng::new(9)).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(pts[0].point.in_image(32, 32));
        assert_eq!(pts[0].category, "land");
    }

    #[test]
    fn points_fall_in_their_cells() {
        for (side, expected) in [(64u32, 4usize), (50, 4)] {
            let seg = uniform_map(side, side, 0);
            let cells = patch_cells(side, side, 32);
            assert_eq!(cells.len(), expected);
            for seed in 0..20 {
                let pts = sample_patch_points(&seg, 32, &mut SeededRng::new(seed)).unwrap();
                assert_eq!(pts.len(), expected);
                for (i, lp) in pts.iter().enumerate() {
                    assert_eq!(lp.cell, i);
                    // brute force: the only cell whose pixel range holds the point
                    let owners: Vec<usize> = (0..cells.len())
                        .filter(|&c| {
                            let cell = cells[c];
                            (cell.x0..cell.x0 + cell.width).contains(&(lp.point.x as u32))
                                && (cell.y0..cell.y0 + cell.height).contains(&(lp.point.y as u32))
                        })
                        .collect();
                    assert_eq!(owners, vec![i]);
                }
            }
        }
        let cells = patch_cells(50, 50, 32);
        assert_eq!(cells[1], Cell { x0: 32, y0: 0, width: 18, height: 32 });
        assert_eq!(cells[3], Cell { x0: 32, y0: 32, width: 18, height: 18 });
    }

    #[test]
    fn ignore_pixels_dropped() {
        let seg = uniform_map(64, 64, 255);
        let pts = sample_patch_points(&seg, 32, &mut SeededRng::new(1)).unwrap();
        assert!(pts.is_empty());
        assert!(sample_patch_points(&seg, 0, &mut SeededRng::new(1)).is_err());
    }

    #[test]
    fn mask_sampling_examples() {
        let mut rng = SeededRng::new(4);
        assert_eq!(
            sample_mask_points(&[(3, 4)], 1, &mut rng).unwrap(),
            vec![PointPrompt { x: 3.0, y: 4.0 }]
        );
        let square: Vec<(u32, u32)> = (0..10).flat_map(|y| (0..10).map(move |x| (x, y))).collect();
        let pts = sample_mask_points(&square, 5, &mut rng).unwrap();
        assert_eq!(pts.len(), 5);
        let mut seen: Vec<(u32, u32)> = pts.iter().map(|p| (p.x as u32, p.y as u32)).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 5);
        assert!(seen.iter().all(|p| square.contains(p)));
        assert!(sample_mask_points(&[], 1, &mut rng).is_err());
        // fewer pixels than k: with replacement
        let pts = sample_mask_points(&[(1, 1), (2, 2)], 5, &mut rng).unwrap();
        assert_eq!(pts.len(), 5);
    }

    #[test]
    fn mask_sampling_is_uniform() {
        let square: Vec<(u32, u32)> = (0..10).flat_map(|y| (0..10).map(move |x| (x, y))).collect();
        let trials = 50_000;
        let mut counts = [0u32; 100];
        let mut rng = SeededRng::new(2024);
        for _ in 0..trials {
            for p in sample_mask_points(&square, 3, &mut rng).unwrap() {
                counts[(p.y as usize) * 10 + p.x as usize] += 1;
            }
        }
        let expected = trials as f64 * 3.0 / 100.0;
        for c in counts {
            assert!((c as f64 - expected).abs() < 0.1 * expected, "count {c} vs {expected}");
        }
    }

    #[test]
    fn freeform_examples() {
        let f = FreeFormPrompt::new(vec![(5.0, 5.0)]).unwrap();
        assert_eq!(freeform_to_box(&f, (100, 100)).unwrap().to_array(), [5.0, 5.0, 1.0, 1.0]);
        let f = FreeFormPrompt::new(vec![(2.0, 3.0), (10.0, 7.0), (6.0, 1.0)]).unwrap();
        assert_eq!(freeform_to_box(&f, (100, 100)).unwrap().to_array(), [2.0, 1.0, 8.0, 6.0]);
        let f = FreeFormPrompt::new(vec![(-10.0, 50.0), (130.0, 90.0)]).unwrap();
        let b = freeform_to_box(&f, (100, 80)).unwrap();
        assert_eq!(b.to_array(), [0.0, 50.0, 100.0, 30.0]);
        let f = FreeFormPrompt::new(vec![(200.0, 200.0)]).unwrap();
        assert_eq!(freeform_to_box(&f, (100, 80)).unwrap().to_array(), [99.0, 79.0, 1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn freeform_of_corners_is_box(x in 0u32..90, y in 0u32..90, w in 1u32..10, h in 1u32..10) {
            let b = bx(x as f64, y as f64, w as f64, h as f64);
            let f = FreeFormPrompt::new(vec![(b.x, b.y), (b.right(), b.bottom())]).unwrap();
            prop_assert_eq!(freeform_to_box(&f, (100, 100)).unwrap(), b);
        }

        #[test]
        fn augment_deterministic(seed in any::<u64>(), alpha in 0.0..0.5f64) {
            let b = bx(20.0, 30.0, 15.0, 25.0);
            let cfg = AugmentConfig::with_alpha(alpha);
            let a = augment_box(b, &cfg, &mut SeededRng::new(seed), (64, 64)).unwrap();
            let c = augment_box(b, &cfg, &mut SeededRng::new(seed), (64, 64)).unwrap();
            prop_assert_eq!(a, c);
            prop_assert!(a.bbox.w > 0.0 && a.bbox.h > 0.0);
            prop_assert!(a.bbox.right() <= 64.0 && a.bbox.bottom() <= 64.0);
        }
    }
}
