//! Generate a small procedural dataset and summarize it.
//!
//! ```sh
//! cargo run --example generate_dataset
//! ```

use handlift::format::read_dataset;
use handlift::geometry::Handedness;
use handlift::skeleton::{generate_dataset, GenOptions, HandModelConfig};

fn main() {
    let dir = std::env::temp_dir().join("handlift-example");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("demo.jsonl");

    let config = HandModelConfig::default();
    generate_dataset(&config, 1_000, 7, &path, &GenOptions::default()).unwrap();

    let records = read_dataset(&path).unwrap();
    let lefts = records.iter().filter(|r| r.handedness == Handedness::Left).count();
    let mean_depth: f64 =
        records.iter().map(|r| r.keypoints_3d[0].z).sum::<f64>() / records.len() as f64;
    let visible: usize = records.iter().map(|r| r.visibility.iter().filter(|&&v| v).count()).sum();

    println!("wrote {} records to {}", records.len(), path.display());
    println!("left hands: {lefts} / {}", records.len());
    println!("mean wrist depth: {mean_depth:.1} mm");
    println!(
        "visible keypoints: {:.1}% (in-image test)",
        100.0 * visible as f64 / (records.len() * 21) as f64
    );
    let bytes = std::fs::metadata(&path).unwrap().len();
    println!("file size: {} KiB, one JSON record per line", bytes / 1024);
}
