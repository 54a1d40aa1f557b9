//! Factor a hand pose into (scale, root, viewpoint rotation, canonical
//! coordinates) and rebuild it exactly.
//!
//! ```sh
//! cargo run --example canonical_decomposition
//! ```

use handlift::geometry::{
    decompose, matrix_to_axis_angle, reconstruct, ALIGN_PRIMARY, ALIGN_SECONDARY,
};
use handlift::skeleton::{forward_kinematics, sample_pose, HandModel};

fn main() {
    // A random articulated hand in world millimeters.
    let model = HandModel::default();
    let angles = sample_pose(&model, 42);
    let keypoints = forward_kinematics(&model, &angles).unwrap();
    let pose = handlift::geometry::HandPose::new(keypoints, model.handedness);

    let d = decompose(&pose).unwrap();
    println!("scale (index proximal bone): {:.3} mm", d.scale);
    println!("root (wrist): ({:.1}, {:.1}, {:.1}) mm", d.root_world.x, d.root_world.y, d.root_world.z);
    let viewpoint = matrix_to_axis_angle(&d.rotation).unwrap();
    println!(
        "viewpoint: axis-angle ({:.4}, {:.4}, {:.4}), angle {:.2} rad",
        viewpoint.0.x,
        viewpoint.0.y,
        viewpoint.0.z,
        viewpoint.angle()
    );

    // Canonical frame invariants: the primary alignment keypoint sits on
    // +y, the secondary one in the x-y half-plane.
    let a = d.w_c[ALIGN_PRIMARY];
    let o = d.w_c[ALIGN_SECONDARY];
    println!("canonical alignment keypoint: ({:.2e}, {:.4}, {:.2e})", a.x, a.y, a.z);
    println!("canonical half-plane keypoint: ({:.4}, {:.4}, {:.2e})", o.x, o.y, o.z);

    let rebuilt = reconstruct(&d).unwrap();
    let worst = pose
        .keypoints
        .iter()
        .zip(&rebuilt)
        .map(|(orig, back)| (*orig - *back).norm())
        .fold(0.0f64, f64::max)
        / d.scale;
    println!("round-trip error: {worst:.2e} (relative to scale)");
}
