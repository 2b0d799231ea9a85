use std::path::Path;

use vptk::ingest::segmentation::encode_class_raster;
use vptk::ingest::{build_corpus, write_triples, BuildOptions, CorpusManifest, ParseMode};
use vptk::kernel::Tensor2D;
use vptk::synth::AugmentConfig;
use vptk::text::mark_refs;
use vptk::{Error, Execution, PromptGeometry, TaskKind};

fn write_sources(dir: &Path) {
    let coco = serde_json::json!({
        "images": [
            {"id": 7, "file_name": "a.png", "width": 200, "height": 100},
            {"id": 9, "file_name": "b.png", "width": 50, "height": 50},
            {"id": 11, "file_name": "empty.png", "width": 50, "height": 50}
        ],
        "annotations": [
            {"image_id": 7, "category_id": 1, "bbox": [10, 10, 40, 20]},
            {"image_id": 9, "category_id": 2, "bbox": [40, 40, 30, 30]},
            {"image_id": 7, "category_id": 2, "bbox": [100, 50, 20, 20]}
        ],
        "categories": [{"id": 1, "name": "ship"}, {"id": 2, "name": "storage tank"}]
    });
    std::fs::write(dir.join("coco.json"), serde_json::to_vec(&coco).unwrap()).unwrap();

    std::fs::create_dir_all(dir.join("masks")).unwrap();
    // 96x64: three 32-px columns of classes 1, 0 (ignored), 2
    let ids: Vec<u32> = (0..96 * 64).map(|i| [1, 0, 2][(i % 96) / 32]).collect();
    std::fs::write(dir.join("masks/tile.png"), encode_class_raster(96, 64, &ids).unwrap()).unwrap();
    std::fs::write(dir.join("legend.json"), br#"{"ignore_id": 0, "classes": {"1": "forest", "2": "road"}}"#).unwrap();

    std::fs::write(
        dir.join("scenes.jsonl"),
        "{\"id\": 1, \"file\": \"s.png\", \"width\": 448, \"height\": 448, \"text\": \"airport\"}\n",
    )
    .unwrap();
}

fn manifest() -> CorpusManifest {
    CorpusManifest::parse(
        br#"{"seed": 1, "entries": [
            {"source": "coco.json", "adapter": "coco", "modality": "sar", "task": "referring_object_classification", "image_dir": "sar"},
            {"source": "masks", "adapter": "segmentation", "legend": "legend.json", "modality": "optical",
             "task": "referring_object_classification", "tag": "seg"},
            {"source": "scenes.jsonl", "adapter": "image_text", "modality": "infrared", "task": "scene_classification"}
        ]}"#,
    )
    .unwrap()
}

fn jsonl(build: &vptk::ingest::CorpusBuild) -> Vec<u8> {
    let mut out = Vec::new();
    write_triples(&build.triples, &mut out).unwrap();
    out
}

#[test]
fn mixed_sources_build_expected_triples() {
    let dir = tempfile::tempdir().unwrap();
    write_sources(dir.path());
    let opts = BuildOptions {
        augment: AugmentConfig::with_alpha(0.0),
        ..BuildOptions::default()
    };
    let build = build_corpus(&manifest(), dir.path(), &opts).unwrap();
    let ids: Vec<&str> = build.triples.iter().map(|t| t.id.as_str()).collect();
    assert_eq!(ids, ["coco/7", "coco/9", "seg/tile", "scenes/1"]);

    let a = &build.triples[0];
    assert_eq!(a.image_path, "sar/a.png");
    assert_eq!(a.answer, "<Region 1>: ship\n<Region 2>: storage tank");
    // the second COCO box hangs off the image and is clamped
    match &build.triples[1].prompts[0].geometry {
        PromptGeometry::Box(b) => assert_eq!(b.to_array(), [40.0, 40.0, 10.0, 10.0]),
        g => panic!("{g:?}"),
    }

    // the middle column is the ignore class: only four of six cells survive
    let seg = &build.triples[2];
    assert_eq!(seg.prompts.len(), 4);
    assert!(seg.answer.lines().all(|l| l.ends_with("forest") || l.ends_with("road")));

    let scene = &build.triples[3];
    assert_eq!(scene.task, TaskKind::SceneClassification);
    assert_eq!(scene.answer, "airport");

    for t in &build.triples {
        for (_, n) in mark_refs(&t.question) {
            assert!(t.mark_ids().contains(&n));
        }
    }
    let summary = build.summary();
    assert_eq!(summary.by_modality.get("sar"), Some(&2));
    assert!(build.warnings.iter().any(|w| w.contains("coco/11") && w.contains("no instances")));
}

#[test]
fn build_is_independent_of_execution_mode() {
    let dir = tempfile::tempdir().unwrap();
    write_sources(dir.path());
    let run = |exec| {
        let opts = BuildOptions {
            exec,
            ..BuildOptions::default()
        };
        jsonl(&build_corpus(&manifest(), dir.path(), &opts).unwrap())
    };
    assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
}

#[test]
fn strict_aborts_lenient_counts_failures() {
    let dir = tempfile::tempdir().unwrap();
    write_sources(dir.path());
    std::fs::write(dir.path().join("legend.json"), br#"{"ignore_id": 0, "classes": {"1": "forest"}}"#).unwrap();

    let strict = build_corpus(&manifest(), dir.path(), &BuildOptions::default());
    assert!(matches!(strict, Err(Error::InconsistentLegend(_))));

    let lenient = BuildOptions {
        mode: ParseMode::Lenient,
        ..BuildOptions::default()
    };
    let build = build_corpus(&manifest(), dir.path(), &lenient).unwrap();
    assert_eq!(build.failed_entries, 1);
    assert_eq!(build.triples.len(), 3);
}

#[test]
fn tensor_fixture_json() {
    let t: Tensor2D = serde_json::from_str(r#"{"rows": 2, "cols": 3, "data": [1, 2, 3, 4, 5, 6]}"#).unwrap();
    assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
    let back: Tensor2D = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
    assert_eq!(back, t);
    assert!(serde_json::from_str::<Tensor2D>(r#"{"rows": 2, "cols": 2, "data": [1, 2, 3]}"#).is_err());
}
