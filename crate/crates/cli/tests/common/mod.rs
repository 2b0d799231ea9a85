#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use vptk::ingest::segmentation::encode_class_raster;
use vptk::render::encode_png;

pub fn vptk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vptk"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn vptk")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}):\n{}\nstderr:\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gray_png(w: u32, h: u32, shade: u8) -> Vec<u8> {
    let img = RgbImage::from_fn(w, h, |x, y| Rgb([shade, shade.wrapping_add((x % 7) as u8), (y % 5) as u8 * 10]));
    encode_png(&img).unwrap()
}

/// Small corpus covering all three builders:
/// `det.json` (3 images), `masks/` (one 64x64 two-class map) and
/// `captions.jsonl` (two 448x448 image-level rows).
pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("images")).unwrap();
        std::fs::create_dir_all(root.join("masks")).unwrap();

        let det = serde_json::json!({"images": [
            {"id": 1, "file": "p1.png", "width": 120, "height": 90, "instances": [
                {"category": "ship", "bbox": [10, 12, 30, 20]},
                {"category": "harbor", "bbox": [50, 40, 60, 45]},
                {"category": "ship", "bbox": [80.5, 5.25, 20, 15]}]},
            {"id": 2, "file": "p2.png", "width": 64, "height": 64, "instances": [
                {"category": "airplane", "bbox": [0, 0, 64, 64]}]},
            {"id": 3, "file": "p3.png", "width": 100, "height": 100, "instances": [
                {"category": "vehicle", "bbox": [5, 5, 10, 10]},
                {"category": "vehicle", "bbox": [40, 60, 12, 8]}]}
        ]});
        std::fs::write(root.join("det.json"), serde_json::to_vec(&det).unwrap()).unwrap();
        for (name, w, h) in [("p1.png", 120, 90), ("p2.png", 64, 64), ("p3.png", 100, 100)] {
            std::fs::write(root.join("images").join(name), gray_png(w, h, 90)).unwrap();
        }

        // left half class 1, right half class 2
        let ids: Vec<u32> = (0..64 * 64).map(|i| if i % 64 < 32 { 1 } else { 2 }).collect();
        std::fs::write(root.join("masks/scene.png"), encode_class_raster(64, 64, &ids).unwrap()).unwrap();
        std::fs::write(
            root.join("legend.json"),
            br#"{"ignore_id": 0, "classes": {"1": "water", "2": "farmland"}}"#,
        )
        .unwrap();
        std::fs::write(root.join("images/scene.png"), gray_png(64, 64, 140)).unwrap();

        std::fs::write(
            root.join("captions.jsonl"),
            concat!(
                r#"{"id": "a", "file": "big.png", "width": 448, "height": 448, "text": "A harbor with several ships."}"#,
                "\n",
                r#"{"id": "b", "file": "big.png", "width": 448, "height": 448, "text": "Farmland next to a river."}"#,
                "\n"
            ),
        )
        .unwrap();
        std::fs::write(root.join("images/big.png"), gray_png(448, 448, 30)).unwrap();

        let manifest = serde_json::json!({"seed": 11, "output": "corpus.jsonl", "entries": [
            {"source": "det.json", "adapter": "canonical", "modality": "optical",
             "task": "referring_object_classification"},
            {"source": "masks", "adapter": "segmentation", "legend": "legend.json",
             "modality": "optical", "task": "referring_object_classification"},
            {"source": "captions.jsonl", "adapter": "image_text", "modality": "optical",
             "task": "image_caption_brief"}
        ]});
        std::fs::write(root.join("manifest.json"), serde_json::to_vec_pretty(&manifest).unwrap()).unwrap();
        Self { dir }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// Runs `convert` and returns the corpus path.
    pub fn convert(&self, alpha: &str) -> PathBuf {
        let out = self.path("corpus.jsonl");
        let o = vptk(&["--strict", "convert", p(&self.path("manifest.json")), "--out", p(&out), "--alpha", alpha]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    }
}
