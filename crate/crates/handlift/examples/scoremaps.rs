//! Render ground-truth score maps, decode them back, and apply the crop
//! and noise augmentations.
//!
//! ```sh
//! cargo run --example scoremaps
//! ```

use handlift::heatmap::{
    augment_crop, decode_scoremaps, hand_bbox_from_keypoints, jitter_keypoints,
    render_scoremaps, CropConfig, CropTransform, KEYPOINT_JITTER_VARIANCE, SCOREMAP_VARIANCE,
};

fn main() {
    let keypoints = [[9.5, 12.0], [20.0, 6.0], [26.3, 24.8]];
    let visibility = [true, true, false];

    let stack = render_scoremaps(&keypoints, &visibility, (32, 32), SCOREMAP_VARIANCE);

    // ASCII view of the first map (one character per 2x2 block).
    println!("map 0 (keypoint at {:?}):", keypoints[0]);
    for v in (0..32).step_by(2) {
        let row: String = (0..32)
            .step_by(2)
            .map(|u| match stack.at(0, u, v) {
                x if x > 0.75 => '#',
                x if x > 0.4 => '+',
                x if x > 0.15 => '.',
                _ => ' ',
            })
            .collect();
        println!("  {row}");
    }

    for (k, ([u, v], confidence)) in decode_scoremaps(&stack).iter().enumerate() {
        println!("map {k}: argmax ({u}, {v}) confidence {confidence:.3}");
    }

    // Crop construction and augmentation around the visible keypoints.
    let cfg = CropConfig::default();
    let bbox = hand_bbox_from_keypoints(&keypoints, &visibility, &cfg).unwrap();
    println!(
        "crop: center ({:.1}, {:.1}) side {:.1}",
        bbox.center_u, bbox.center_v, bbox.side
    );
    let jittered = augment_crop(&bbox, &keypoints, &visibility, 3, &cfg);
    println!(
        "jittered crop: center ({:.1}, {:.1}) side {:.1}",
        jittered.center_u, jittered.center_v, jittered.side
    );
    let transform = CropTransform::from_bbox(&jittered, 32);
    let mapped = transform.apply(keypoints[0]);
    let back = transform.invert(mapped);
    println!(
        "keypoint 0 -> crop ({:.2}, {:.2}) -> back ({:.2}, {:.2})",
        mapped[0], mapped[1], back[0], back[1]
    );

    let noisy = jitter_keypoints(&keypoints, 9, KEYPOINT_JITTER_VARIANCE);
    println!("keypoint noise: {:?} -> {:?}", keypoints[0], noisy[0]);
}
