use std::collections::{BTreeMap, BTreeSet};

use image::{Rgb, RgbImage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vptk::annotate::{build_request, AnnotationTask, AnnotationTemplate, MockProvider, Provider};
use vptk::ingest::builder::build_box_triples;
use vptk::ingest::jsonl::{triple_from_line, triple_to_line};
use vptk::ingest::TemplateSet;
use vptk::kernel::{self_attention, hybrid_fuse, FusionParams, KernelConfig, Tensor2D};
use vptk::metrics::{ss, EmbeddingTable, MetricConfig};
use vptk::render::{encode_png, label_rect, render_marks, RenderStyle};
use vptk::synth::{augment_box, sample_patch_points, AugmentConfig};
use vptk::text::{mark_refs, normalize_tokens};
use vptk::{
    full_image_box, geometric_iou, AnnotationRecord, BBox, Execution, FreeFormPrompt, Instance, Modality,
    PointPrompt, PromptGeometry, SegmentationMap, SeededRng, TaskKind, Triple, VisualPrompt,
};

fn arb_box() -> impl Strategy<Value = BBox> {
    (-50.0..250.0f64, -50.0..250.0f64, 0.01..120.0f64, 0.01..120.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, w, h).unwrap())
}

fn arb_geometry(w: u32, h: u32) -> impl Strategy<Value = PromptGeometry> {
    prop_oneof![
        arb_box().prop_map(PromptGeometry::Box),
        (0.0..w as f64, 0.0..h as f64).prop_map(|(x, y)| PromptGeometry::Point(PointPrompt::new(x, y).unwrap())),
        prop::collection::vec((-20.0..w as f64 + 20.0, -20.0..h as f64 + 20.0), 1..6)
            .prop_map(|v| PromptGeometry::FreeForm(FreeFormPrompt::new(v).unwrap())),
    ]
}

fn arb_triple() -> impl Strategy<Value = Triple> {
    (1u32..400, 1u32..400)
        .prop_flat_map(|(w, h)| {
            (
                Just((w, h)),
                prop::collection::vec(arb_geometry(w, h), 1..6),
                prop::sample::select(Modality::ALL.to_vec()),
                prop::sample::select(TaskKind::ALL.to_vec()),
                "[ -~\\n\\t\u{e9}\u{8239}]{0,40}",
                "[a-z0-9_/.-]{1,20}",
            )
        })
        .prop_map(|((w, h), geoms, modality, task, text, id)| {
            let prompts: Vec<VisualPrompt> = if task.is_image_level() {
                vec![full_image_box(w, h).unwrap()]
            } else {
                geoms.into_iter().enumerate().map(|(i, g)| VisualPrompt::new(i as u32 + 1, g)).collect()
            };
            let tags: String = prompts.iter().map(|p| format!("<Region {}> ", p.mark_id)).collect();
            Triple {
                id,
                image_path: "img.png".into(),
                image_size: (w, h),
                modality,
                task,
                question: format!("{tags}{text}"),
                answer: text,
                prompts,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn jsonl_round_trip(t in arb_triple()) {
        t.validate().unwrap();
        let line = triple_to_line(&t).unwrap();
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(triple_from_line(&line).unwrap(), t);
    }

    #[test]
    fn full_image_box_shape(w in 1u32..5000, h in 1u32..5000) {
        let p = full_image_box(w, h).unwrap();
        prop_assert_eq!(p.mark_id, 1);
        match p.geometry {
            PromptGeometry::FullImage(b) => prop_assert_eq!(b.to_array(), [0.0, 0.0, w as f64, h as f64]),
            _ => prop_assert!(false, "not a full-image prompt"),
        }
    }

    #[test]
    fn iou_symmetric_and_one_only_on_equal(a in arb_box(), b in arb_box()) {
        let (ab, ba) = (geometric_iou(&a, &b), geometric_iou(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(geometric_iou(&a, &a), 1.0);
        if a != b {
            prop_assert!(ab < 1.0);
        }
    }

    #[test]
    fn zero_alpha_is_identity(x in 0.0..100.0f64, y in 0.0..100.0f64, w in 1.0..100.0f64, h in 1.0..100.0f64, seed: u64) {
        let b = BBox::new(x, y, w, h).unwrap();
        let out = augment_box(b, &AugmentConfig::with_alpha(0.0), &mut SeededRng::new(seed), (200, 200)).unwrap();
        prop_assert_eq!(out.bbox, b);
        prop_assert_eq!(out.raw, b);
    }

    #[test]
    fn patch_points_bounded_and_labeled(w in 1u32..80, h in 1u32..80, patch in 1u32..40, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<u32> = (0..w * h).map(|_| rand::Rng::random_range(&mut rng, 0..4u32)).collect();
        let legend: BTreeMap<u32, String> = (1..4).map(|i| (i, format!("class{i}"))).collect();
        let seg = SegmentationMap::new(w, h, ids, legend, 0).unwrap();
        let pts = sample_patch_points(&seg, patch, &mut SeededRng::new(seed)).unwrap();
        prop_assert!(pts.len() as u32 <= w.div_ceil(patch) * h.div_ceil(patch));
        for lp in pts {
            let (px, py) = (lp.point.x as u32, lp.point.y as u32);
            prop_assert_eq!(Some(lp.category.as_str()), seg.label_at(px, py));
        }
    }

    #[test]
    fn answers_and_marks_are_in_bijection(
        boxes in prop::collection::vec((0.0..90.0f64, 0.0..90.0f64, 1.0..40.0f64, 1.0..40.0f64, 0usize..3), 1..9),
        seed: u64,
    ) {
        let cats = ["ship", "tank", "plane"];
        let rec = AnnotationRecord {
            image_id: "im".into(),
            image_path: "im.png".into(),
            image_size: (100, 100),
            instances: boxes
                .iter()
                .map(|&(x, y, w, h, c)| Instance { category: cats[c].into(), bbox: BBox::new(x, y, w, h).unwrap() })
                .collect(),
        };
        let built = build_box_triples("src", &[rec], Modality::Sar, &TemplateSet::default(), &AugmentConfig::default(), seed, Execution::Sequential).unwrap();
        for t in built.items {
            let marks: BTreeSet<u32> = t.mark_ids().into_iter().collect();
            let in_answer: BTreeSet<u32> = mark_refs(&t.answer).into_iter().map(|(_, n)| n).collect();
            prop_assert_eq!(marks, in_answer);
        }
    }

    #[test]
    fn normalization_is_idempotent(s in "[ -~\u{c0}-\u{ff}]{0,60}") {
        let once = normalize_tokens(&s);
        prop_assert_eq!(normalize_tokens(&once.join(" ")), once);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Pixels outside every shape extent and label block are untouched, and
    /// rendering twice gives the same image.
    #[test]
    fn render_touches_only_marked_areas(t in arb_triple(), shade in 0u8..255) {
        let (w, h) = t.image_size;
        let img = RgbImage::from_fn(w, h, |x, y| Rgb([shade, (x % 251) as u8, (y % 241) as u8]));
        let style = RenderStyle::default();
        let a = render_marks(&img, &t.prompts, &style).unwrap().items;
        let b = render_marks(&img, &t.prompts, &style).unwrap().items;
        prop_assert_eq!(encode_png(&a).unwrap(), encode_png(&b).unwrap());
        prop_assert_eq!(a.dimensions(), img.dimensions());

        let s = style.stroke_width as i64;
        let r = style.point_radius as i64;
        let extents: Vec<(i64, i64, i64, i64)> = t
            .prompts
            .iter()
            .map(|p| match &p.geometry {
                PromptGeometry::Box(b) | PromptGeometry::FullImage(b) => {
                    (b.x.floor() as i64, b.y.floor() as i64, (b.x + b.w).ceil() as i64, (b.y + b.h).ceil() as i64)
                }
                PromptGeometry::Point(pt) => {
                    let (cx, cy) = (pt.x.floor() as i64, pt.y.floor() as i64);
                    (cx - r, cy - r, cx + r, cy + r)
                }
                PromptGeometry::FreeForm(f) => {
                    let xs = f.vertices.iter().map(|v| v.0.floor() as i64);
                    let ys = f.vertices.iter().map(|v| v.1.floor() as i64);
                    (xs.clone().min().unwrap() - s, ys.clone().min().unwrap() - s, xs.max().unwrap() + s, ys.max().unwrap() + s)
                }
            })
            .collect();
        let labels: Vec<_> = t.prompts.iter().filter_map(|p| label_rect(p, &style, w, h)).collect();
        for (x, y, px) in a.enumerate_pixels() {
            let (xi, yi) = (x as i64, y as i64);
            let covered = extents.iter().any(|&(x0, y0, x1, y1)| xi >= x0 && xi <= x1 && yi >= y0 && yi <= y1)
                || labels.iter().any(|l| l.contains(xi, yi));
            if !covered {
                prop_assert_eq!(px, img.get_pixel(x, y));
            }
        }
    }

    #[test]
    fn requests_keep_every_mark(n in 1usize..15, task in prop::sample::select(AnnotationTask::ALL.to_vec())) {
        let prompts: Vec<VisualPrompt> = (0..n)
            .map(|i| VisualPrompt::new(i as u32 + 1, PromptGeometry::Box(BBox::new(i as f64 * 3.0, 2.0, 5.0, 5.0).unwrap())))
            .collect();
        let answer: Vec<String> = (1..=n).map(|i| format!("<Region {i}>: {}", ["ship", "tank"][i % 2])).collect();
        let t = Triple {
            id: "t".into(),
            image_path: "t.png".into(),
            image_size: (64, 32),
            modality: Modality::Optical,
            task: TaskKind::ReferringObjectClassification,
            prompts,
            question: String::new(),
            answer: answer.join("\n"),
        };
        let png = encode_png(&RgbImage::new(64, 32)).unwrap();
        let req = build_request(&t, &png, &AnnotationTemplate::default_for(task), &RenderStyle::default()).unwrap();
        for i in 1..=n {
            let tag = format!("Mark {i} ");
            prop_assert!(req.prompt_text.contains(&tag), "missing {}", tag);
        }
        let reply = MockProvider.complete(&req).unwrap();
        prop_assert_eq!(reply, MockProvider.complete(&req.clone()).unwrap());
    }

    #[test]
    fn self_attention_is_permutation_equivariant(n in 1usize..9, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = FusionParams::init(&KernelConfig { seed, ..KernelConfig::default() }).unwrap();
        let x = Tensor2D::random(n, 8, 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let lhs = self_attention(&x.permute_rows(&perm).unwrap(), &p.hybrid.self1).unwrap();
        let rhs = self_attention(&x, &p.hybrid.self1).unwrap().permute_rows(&perm).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn hybrid_rows_follow_prompt(n_img in 1usize..10, n_prompt in 1usize..10, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = FusionParams::init(&KernelConfig { seed, ..KernelConfig::default() }).unwrap();
        let v = Tensor2D::random(n_img, 8, 1.0, &mut rng);
        let e = Tensor2D::random(n_prompt, 8, 1.0, &mut rng);
        let out = hybrid_fuse(&v, &e, &p.hybrid).unwrap();
        prop_assert_eq!(out.shape(), (n_prompt, 8));
        prop_assert_eq!(out, hybrid_fuse(&v, &e, &p.hybrid).unwrap());
    }

    #[test]
    fn ss_symmetric_with_unit_identity(a in prop::collection::vec(0usize..6, 1..6), b in prop::collection::vec(0usize..6, 1..6), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = ["one", "two", "three", "four", "five", "six"];
        let mut table = EmbeddingTable::new(5);
        for w in words {
            table.insert(w, (0..5).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).unwrap();
        }
        let sa: Vec<&str> = a.iter().map(|&i| words[i]).collect();
        let sb: Vec<&str> = b.iter().map(|&i| words[i]).collect();
        let (sa, sb) = (sa.join(" "), sb.join(" "));
        let cfg = MetricConfig::default();
        prop_assert!((ss(&sa, &sb, &table, &cfg) - ss(&sb, &sa, &table, &cfg)).abs() <= 1e-12);
        prop_assert!((ss(&sa, &sa, &table, &cfg) - 1.0).abs() <= 1e-12);
    }
}
