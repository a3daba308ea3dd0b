#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use parkspot_core::imaging::write_ppm;
use parkspot_core::rng::seeded;
use parkspot_core::RgbImage;
use rand::Rng as _;

pub fn parkspot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parkspot"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run parkspot")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

pub const POLYGON_XML: &str = r#"<?xml version="1.0"?>
<parking id="mock">
  <space id="1" occupied="A">
    <contour><point x="2" y="2"/><point x="13" y="2"/><point x="13" y="13"/><point x="2" y="13"/></contour>
  </space>
  <space id="2" occupied="B">
    <contour><point x="18" y="2"/><point x="29" y="2"/><point x="29" y="13"/><point x="18" y="13"/></contour>
  </space>
</parking>"#;

fn noise_image(w: u32, h: u32, seed: u64) -> RgbImage {
    let mut rng = seeded(seed);
    let data = (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    RgbImage::new(w, h, data).unwrap()
}

/// PKLot-style tree: `days` dated folders under `UFPR04/Sunny`, `per_day`
/// 32×16 images each, two polygon spots per image with alternating labels.
pub fn pklot_tree(root: &Path, days: u32, per_day: u32) -> Vec<PathBuf> {
    let mut images = Vec::new();
    for d in 0..days {
        let day = format!("2012-09-{:02}", 10 + d);
        let dir = root.join("UFPR04").join("Sunny").join(&day);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_day {
            let stem = format!("{day}_{:02}_00_00", 8 + i);
            let image = dir.join(format!("{stem}.ppm"));
            std::fs::write(&image, write_ppm(&noise_image(32, 16, u64::from(d * 100 + i)))).unwrap();
            let a = (d + i) % 2 == 0;
            let xml = POLYGON_XML.replace("\"A\"", if a { "\"1\"" } else { "\"0\"" }).replace("\"B\"", if a { "\"0\"" } else { "\"1\"" });
            std::fs::write(dir.join(format!("{stem}.xml")), xml).unwrap();
            images.push(image);
        }
    }
    images
}

/// Lot images that are grids of 32×32 cells, one fixed-square spot per
/// cell, annotated with JSON documents. Occupied cells hold a bright 8×8
/// blob on the same noise as empty ones, so a working classifier separates
/// them almost perfectly.
pub fn blob_lot(root: &Path, scenario: &str, days: u32, per_day: u32, seed: u64) {
    const COLS: u32 = 10;
    const ROWS: u32 = 5;
    let mut rng = seeded(seed);
    for d in 0..days {
        let day = format!("2013-03-{:02}", 1 + d);
        let dir = root.join(scenario).join(&day);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..per_day {
            let stem = format!("{day}_{:02}_30_00", 9 + i);
            let (w, h) = (COLS * 32, ROWS * 32);
            let mut data: Vec<f32> = (0..w * h * 3).map(|_| rng.random_range(0.0..0.6)).collect();
            let mut spaces = Vec::new();
            for cell in 0..COLS * ROWS {
                let (cx, cy) = (cell % COLS * 32, cell / COLS * 32);
                let occupied = (cell + i + d) % 2 == 1;
                if occupied {
                    let (bx, by) = (cx + rng.random_range(0..=24), cy + rng.random_range(0..=24));
                    for y in by..by + 8 {
                        for x in bx..bx + 8 {
                            for c in 0..3 {
                                data[((y * w + x) * 3 + c) as usize] = rng.random_range(0.85..=1.0);
                            }
                        }
                    }
                }
                spaces.push(serde_json::json!({
                    "id": format!("s{cell}"),
                    "points": [[cx as f64 + 16.0, cy as f64 + 16.0]],
                    "occupied": occupied,
                    "annotation_ms": 700 + cell,
                }));
            }
            let img = RgbImage::new(w, h, data).unwrap();
            std::fs::write(dir.join(format!("{stem}.ppm")), write_ppm(&img)).unwrap();
            let doc = serde_json::json!({
                "image": format!("{stem}.ppm"),
                "kind": "fixed",
                "side": 32,
                "spaces": spaces,
            });
            std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec(&doc).unwrap()).unwrap();
        }
    }
}
