//! Procedural hand-skeleton generator.
//!
//! Stands in for a rendered dataset: forward kinematics over a parameterized
//! 21-keypoint hand model, random pose and camera sampling, pinhole
//! projection and in-image visibility flags. Every sample derives its own
//! child seed from `(master seed, index)`, so parallel and serial generation
//! produce identical output and datasets are byte-reproducible.

use crate::format;
use crate::geometry::{
    axis_angle_to_matrix, AxisAngle, Handedness, Rot3, Vec3, NUM_KEYPOINTS,
};
use crate::rng::{mix, stream, RngExt};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Fingers in keypoint order.
pub const NUM_FINGERS: usize = 5;

/// Bones per finger chain: wrist->palm end, then three segments to the tip.
pub const BONES_PER_FINGER: usize = 4;

/// Total number of bones (20): keypoints 1..21 each terminate one bone.
pub const NUM_BONES: usize = NUM_FINGERS * BONES_PER_FINGER;

/// Articulated degrees of freedom per finger:
/// palm-joint flexion, palm-joint abduction, and one flexion for each of the
/// two distal joints.
pub const DOF_PER_FINGER: usize = 4;

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("joint angle {value} outside limit [{lo}, {hi}] (finger {finger}, dof {dof})")]
    JointLimitViolation { finger: usize, dof: usize, value: f64, lo: f64, hi: f64 },
    #[error("point behind camera (z = {0} mm)")]
    BehindCamera(f64),
    #[error("dataset must contain at least one sample")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] format::FormatError),
}

/// Direction of each wrist->palm bone in the left-hand rest layout
/// (x toward the thumb, y distal, z out of the palm).
const PALM_DIRECTIONS: [[f64; 2]; NUM_FINGERS] = [
    [0.80, 0.60],  // thumb
    [0.28, 0.96],  // index
    [0.05, 1.00],  // middle
    [-0.16, 0.99], // ring
    [-0.38, 0.92], // pinky
];

/// Nominal bone lengths in millimeters, four per finger:
/// wrist->palm end, proximal, intermediate, distal.
const DEFAULT_BONE_LENGTHS: [f64; NUM_BONES] = [
    35.0, 45.0, 32.0, 25.0, // thumb
    92.0, 40.0, 24.0, 22.0, // index
    95.0, 44.0, 27.0, 24.0, // middle
    88.0, 41.0, 25.0, 23.0, // ring
    80.0, 32.0, 20.0, 19.0, // pinky
];

/// Default joint ranges in radians per finger:
/// [palm flexion, palm abduction, proximal flexion, distal flexion].
const DEFAULT_JOINT_LIMITS: [[[f64; 2]; DOF_PER_FINGER]; NUM_FINGERS] = [
    [[-0.35, 1.05], [-0.50, 0.35], [0.0, 1.05], [0.0, 1.40]], // thumb
    [[-0.17, 1.57], [-0.26, 0.26], [0.0, 1.75], [0.0, 1.22]],
    [[-0.17, 1.57], [-0.22, 0.22], [0.0, 1.75], [0.0, 1.22]],
    [[-0.17, 1.57], [-0.26, 0.26], [0.0, 1.75], [0.0, 1.22]],
    [[-0.17, 1.57], [-0.35, 0.35], [0.0, 1.75], [0.0, 1.22]],
];

/// Serializable hand-model parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HandModelConfig {
    pub bone_lengths: Vec<f64>,
    /// `[finger][dof] -> [lo, hi]` in radians.
    pub joint_limits: Vec<Vec<[f64; 2]>>,
    /// Per-sample uniform scaling of all bone lengths, emulating subject
    /// diversity: factor drawn from `[1 - jitter, 1 + jitter]`.
    pub scale_jitter: f64,
}

impl Default for HandModelConfig {
    fn default() -> Self {
        HandModelConfig {
            bone_lengths: DEFAULT_BONE_LENGTHS.to_vec(),
            joint_limits: DEFAULT_JOINT_LIMITS.iter().map(|f| f.to_vec()).collect(),
            scale_jitter: 0.15,
        }
    }
}

impl HandModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.bone_lengths.len() != NUM_BONES {
            return Err(format!(
                "expected {NUM_BONES} bone lengths, got {}",
                self.bone_lengths.len()
            ));
        }
        if self.bone_lengths.iter().any(|&l| l <= 0.0) {
            return Err("bone lengths must be positive".into());
        }
        if self.joint_limits.len() != NUM_FINGERS
            || self.joint_limits.iter().any(|f| f.len() != DOF_PER_FINGER)
        {
            return Err("joint limit table must be 5 fingers x 4 dofs".into());
        }
        for finger in &self.joint_limits {
            for &[lo, hi] in finger {
                if lo > hi {
                    return Err(format!("empty joint range [{lo}, {hi}]"));
                }
            }
        }
        if !(0.0..1.0).contains(&self.scale_jitter) {
            return Err("scale jitter must be in [0, 1)".into());
        }
        Ok(())
    }

    /// Concrete model for one sample.
    pub fn instantiate(&self, handedness: Handedness, scale: f64) -> HandModel {
        let mut bone_lengths = [0.0; NUM_BONES];
        for (dst, src) in bone_lengths.iter_mut().zip(&self.bone_lengths) {
            *dst = src * scale;
        }
        let mut joint_limits = [[[0.0; 2]; DOF_PER_FINGER]; NUM_FINGERS];
        for (f, finger) in self.joint_limits.iter().enumerate() {
            for (d, range) in finger.iter().enumerate() {
                joint_limits[f][d] = *range;
            }
        }
        HandModel { bone_lengths, joint_limits, handedness }
    }
}

/// A concrete hand: bone lengths, joint ranges and which side it is.
#[derive(Debug, Clone)]
pub struct HandModel {
    pub bone_lengths: [f64; NUM_BONES],
    pub joint_limits: [[[f64; 2]; DOF_PER_FINGER]; NUM_FINGERS],
    pub handedness: Handedness,
}

impl Default for HandModel {
    fn default() -> Self {
        HandModelConfig::default().instantiate(Handedness::Left, 1.0)
    }
}

/// Articulation state: 20 joint angles plus the global wrist placement.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAngles {
    /// `[finger][dof]`, radians.
    pub angles: [[f64; DOF_PER_FINGER]; NUM_FINGERS],
    pub wrist_orientation: AxisAngle,
    pub wrist_position: Vec3,
}

impl JointAngles {
    pub fn rest() -> Self {
        JointAngles {
            angles: [[0.0; DOF_PER_FINGER]; NUM_FINGERS],
            wrist_orientation: AxisAngle::default(),
            wrist_position: Vec3::ZERO,
        }
    }
}

/// Pinhole intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Intrinsics {
    fn default() -> Self {
        // 320x240 working resolution.
        Intrinsics { fx: 320.0, fy: 320.0, cx: 160.0, cy: 120.0, width: 320, height: 240 }
    }
}

/// World-to-camera transform with intrinsics: `p_cam = R * p_world + t`.
#[derive(Debug, Clone)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub rotation: Rot3,
    pub translation: Vec3,
}

impl Camera {
    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    /// Position of the optical center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.rotation.transpose().apply(self.translation.scale(-1.0))
    }
}

/// One generated sample: 3D keypoints in the camera frame, their pixel
/// projections, visibility flags and the intrinsics that relate them.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub id: u64,
    pub handedness: Handedness,
    pub intrinsics: Intrinsics,
    /// Camera-frame keypoints, millimeters.
    pub keypoints_3d: [Vec3; NUM_KEYPOINTS],
    /// Pixel coordinates `(u, v)`.
    pub keypoints_2d: [[f64; 2]; NUM_KEYPOINTS],
    pub visibility: [bool; NUM_KEYPOINTS],
    /// Gesture class, present only for class-conditioned datasets.
    pub label: Option<u16>,
}

impl SampleRecord {
    /// View the camera-frame keypoints as a hand pose.
    pub fn hand_pose(&self) -> crate::geometry::HandPose {
        crate::geometry::HandPose {
            keypoints: self.keypoints_3d,
            handedness: self.handedness,
            visibility: self.visibility,
        }
    }
}

/// Compute the 21 world-frame keypoints for the given articulation.
///
/// The chain runs wrist -> palm end -> two intermediate joints -> tip for
/// each finger. Right hands are the z-mirror of the left-hand layout,
/// applied before the global wrist transform.
pub fn forward_kinematics(
    model: &HandModel,
    angles: &JointAngles,
) -> Result<[Vec3; NUM_KEYPOINTS], SkeletonError> {
    for f in 0..NUM_FINGERS {
        for d in 0..DOF_PER_FINGER {
            let [lo, hi] = model.joint_limits[f][d];
            let value = angles.angles[f][d];
            if value < lo - 1e-12 || value > hi + 1e-12 {
                return Err(SkeletonError::JointLimitViolation { finger: f, dof: d, value, lo, hi });
            }
        }
    }

    let palm_normal = Vec3::new(0.0, 0.0, 1.0);
    let mut local = [Vec3::ZERO; NUM_KEYPOINTS];

    for f in 0..NUM_FINGERS {
        let [dx, dy] = PALM_DIRECTIONS[f];
        let axis = Vec3::new(dx, dy, 0.0).normalized();
        let mcp = axis.scale(model.bone_lengths[f * BONES_PER_FINGER]);
        local[1 + f * 4] = mcp;

        // Local frame: segment direction, in-plane flexion axis, palm normal.
        let flex_axis = palm_normal.cross(axis);
        let [palm_flex, palm_abd, prox_flex, dist_flex] = angles.angles[f];

        // Positive flexion curls toward the palm side (-z); abduction spreads
        // within the palm plane.
        let rot_abd = axis_angle_to_matrix(&AxisAngle(palm_normal.scale(palm_abd)));
        let rot_flex = axis_angle_to_matrix(&AxisAngle(flex_axis.scale(palm_flex)));
        let mut frame = rot_abd.mul(&rot_flex);

        let mut cursor = mcp;
        let segment_lengths = [
            model.bone_lengths[f * BONES_PER_FINGER + 1],
            model.bone_lengths[f * BONES_PER_FINGER + 2],
            model.bone_lengths[f * BONES_PER_FINGER + 3],
        ];
        for (seg, &len) in segment_lengths.iter().enumerate() {
            if seg > 0 {
                let bend = [prox_flex, dist_flex][seg - 1];
                frame = frame.mul(&axis_angle_to_matrix(&AxisAngle(flex_axis.scale(bend))));
            }
            cursor = cursor + frame.apply(axis).scale(len);
            local[1 + f * 4 + 1 + seg] = cursor;
        }
    }

    if model.handedness == Handedness::Right {
        for p in &mut local {
            *p = p.flip_z();
        }
    }

    let global = axis_angle_to_matrix(&angles.wrist_orientation);
    Ok(local.map(|p| angles.wrist_position + global.apply(p)))
}

/// Uniformly sample joint angles within the model limits, a random global
/// orientation and a zero wrist position. Deterministic given the seed.
pub fn sample_pose(model: &HandModel, rng_seed: u64) -> JointAngles {
    let mut rng = stream(rng_seed);
    let mut angles = [[0.0; DOF_PER_FINGER]; NUM_FINGERS];
    for f in 0..NUM_FINGERS {
        for d in 0..DOF_PER_FINGER {
            let [lo, hi] = model.joint_limits[f][d];
            angles[f][d] = rng.gen_range(lo..=hi);
        }
    }
    let axis = rng.unit_vector();
    let angle = rng.gen_range(0.0..=std::f64::consts::PI);
    JointAngles {
        angles,
        wrist_orientation: AxisAngle::new(axis[0] * angle, axis[1] * angle, axis[2] * angle),
        wrist_position: Vec3::ZERO,
    }
}

/// Options controlling camera placement.
#[derive(Debug, Clone)]
pub struct CameraOptions {
    pub intrinsics: Intrinsics,
    /// Restrict the viewing direction to a cone around `-z` (standard
    /// deviation of the lateral components). `None` samples the full sphere.
    pub direction_cone: Option<f64>,
    /// Standard deviation of the roll about the optical axis; `None` rolls
    /// uniformly over the full circle.
    pub roll_spread: Option<f64>,
}

impl Default for CameraOptions {
    fn default() -> Self {
        CameraOptions { intrinsics: Intrinsics::default(), direction_cone: None, roll_spread: None }
    }
}

/// Place a camera in a spherical vicinity of the hand: distance uniform in
/// [400, 650] mm, orientation looking at the hand with a bounded lateral
/// target jitter so the root always projects inside the image.
pub fn sample_camera(hand_center: Vec3, rng_seed: u64) -> Camera {
    sample_camera_with(hand_center, rng_seed, &CameraOptions::default())
}

pub fn sample_camera_with(hand_center: Vec3, rng_seed: u64, opts: &CameraOptions) -> Camera {
    let mut rng = stream(rng_seed);
    let distance = rng.gen_range(400.0..=650.0);
    let dir = match opts.direction_cone {
        None => {
            let d = rng.unit_vector();
            Vec3::new(d[0], d[1], d[2])
        }
        Some(spread) => {
            let gx = rng.gaussian_std(spread);
            let gy = rng.gaussian_std(spread);
            Vec3::new(gx, gy, 1.0).normalized()
        }
    };
    let center = hand_center + dir.scale(distance);
    let roll = match opts.roll_spread {
        None => rng.gen_range(0.0..std::f64::consts::TAU),
        Some(spread) => rng.gaussian_std(spread),
    };
    let jx = rng.gen_range(-60.0..=60.0);
    let jy = rng.gen_range(-60.0..=60.0);

    // The base frame looks straight at the hand; the jittered target shifts
    // the view while a shrinking retry keeps the root within the image.
    let base = look_at(center, hand_center, roll);
    let margin = 8.0;
    let mut factor = 1.0;
    for _ in 0..8 {
        let right = Vec3::new(base.0[0][0], base.0[0][1], base.0[0][2]);
        let down = Vec3::new(base.0[1][0], base.0[1][1], base.0[1][2]);
        let target = hand_center + right.scale(jx * factor) + down.scale(jy * factor);
        let rotation = look_at(center, target, roll);
        let camera = Camera {
            intrinsics: opts.intrinsics,
            rotation,
            translation: rotation.apply(center.scale(-1.0)),
        };
        let p = camera.world_to_camera(hand_center);
        if p.z > 1e-6 {
            let u = camera.intrinsics.fx * p.x / p.z + camera.intrinsics.cx;
            let v = camera.intrinsics.fy * p.y / p.z + camera.intrinsics.cy;
            let w = camera.intrinsics.width as f64;
            let h = camera.intrinsics.height as f64;
            if u >= margin && u < w - margin && v >= margin && v < h - margin {
                return camera;
            }
        }
        factor *= 0.5;
    }

    let rotation = look_at(center, hand_center, roll);
    Camera {
        intrinsics: opts.intrinsics,
        rotation,
        translation: rotation.apply(center.scale(-1.0)),
    }
}

/// World-to-camera rotation for a camera at `eye` looking at `target`,
/// rolled about the optical axis.
fn look_at(eye: Vec3, target: Vec3, roll: f64) -> Rot3 {
    let forward = (target - eye).normalized();
    let hint = if forward.z.abs() < 0.99 {
        Vec3::new(0.0, 0.0, 1.0)
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    let right = forward.cross(hint).normalized();
    let down = forward.cross(right);
    let base = Rot3([
        [right.x, right.y, right.z],
        [down.x, down.y, down.z],
        [forward.x, forward.y, forward.z],
    ]);
    // Roll in the image plane.
    Rot3::about_z(roll).mul(&base)
}

/// Pinhole projection. Returns pixel coordinates and the camera-frame
/// points; fails if any point has non-positive depth.
pub fn project(
    camera: &Camera,
    points_world: &[Vec3],
) -> Result<(Vec<[f64; 2]>, Vec<Vec3>), SkeletonError> {
    let mut pixels = Vec::with_capacity(points_world.len());
    let mut cam_points = Vec::with_capacity(points_world.len());
    for &p in points_world {
        let c = camera.world_to_camera(p);
        pixels.push(project_intrinsic(&camera.intrinsics, c)?);
        cam_points.push(c);
    }
    Ok((pixels, cam_points))
}

/// Project a camera-frame point with the intrinsics alone.
pub fn project_intrinsic(k: &Intrinsics, p: Vec3) -> Result<[f64; 2], SkeletonError> {
    if p.z <= 1e-6 {
        return Err(SkeletonError::BehindCamera(p.z));
    }
    Ok([k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy])
}

/// In-image test with the half-open convention `[0, w) x [0, h)`.
pub fn compute_visibility(k: &Intrinsics, keypoints_2d: &[[f64; 2]]) -> Vec<bool> {
    let w = k.width as f64;
    let h = k.height as f64;
    keypoints_2d.iter().map(|&[u, v]| u >= 0.0 && u < w && v >= 0.0 && v < h).collect()
}

/// Dataset generation options beyond the model parameters.
#[derive(Debug, Clone, Default)]
pub struct GenOptions {
    /// When set, samples are drawn around this many gesture templates and
    /// records carry a class label. Orientation and viewpoint spread are
    /// narrowed so classes stay geometrically coherent.
    pub classes: Option<u16>,
}

/// Generate one sample. Fully determined by `(seed, index)`.
pub fn generate_sample(
    config: &HandModelConfig,
    seed: u64,
    index: u64,
    opts: &GenOptions,
) -> Result<SampleRecord, SkeletonError> {
    let child = mix(seed, index);
    let mut rng = stream(mix(child, 0));
    let handedness = if rng.gen::<bool>() { Handedness::Left } else { Handedness::Right };
    let scale = rng.gen_range(1.0 - config.scale_jitter..=1.0 + config.scale_jitter);
    let model = config.instantiate(handedness, scale);

    let (angles, label, cam_opts) = match opts.classes {
        None => (sample_pose(&model, mix(child, 1)), None, CameraOptions::default()),
        Some(k) => {
            let label = (rng.gen::<u64>() % k as u64) as u16;
            let template_model = config.instantiate(handedness, 1.0);
            let template = sample_pose(&template_model, mix(seed ^ 0x6765_7374, label as u64));
            let mut jittered = template;
            let mut jrng = stream(mix(child, 1));
            for f in 0..NUM_FINGERS {
                for d in 0..DOF_PER_FINGER {
                    let [lo, hi] = model.joint_limits[f][d];
                    let v = jittered.angles[f][d] + jrng.gaussian_std(0.08);
                    jittered.angles[f][d] = v.clamp(lo, hi);
                }
            }
            let o = jittered.wrist_orientation.0;
            jittered.wrist_orientation = AxisAngle::new(
                o.x + jrng.gaussian_std(0.1),
                o.y + jrng.gaussian_std(0.1),
                o.z + jrng.gaussian_std(0.1),
            );
            let cam_opts = CameraOptions {
                direction_cone: Some(0.2),
                roll_spread: Some(0.2),
                ..Default::default()
            };
            (jittered, Some(label), cam_opts)
        }
    };

    let world = forward_kinematics(&model, &angles)?;
    let camera = sample_camera_with(world[0], mix(child, 2), &cam_opts);
    let (pixels, cam_points) = project(&camera, &world)?;

    let vis = compute_visibility(&camera.intrinsics, &pixels);
    let mut keypoints_2d = [[0.0; 2]; NUM_KEYPOINTS];
    let mut keypoints_3d = [Vec3::ZERO; NUM_KEYPOINTS];
    let mut visibility = [false; NUM_KEYPOINTS];
    for i in 0..NUM_KEYPOINTS {
        keypoints_2d[i] = pixels[i];
        keypoints_3d[i] = cam_points[i];
        visibility[i] = vis[i];
    }

    Ok(SampleRecord {
        id: index,
        handedness,
        intrinsics: camera.intrinsics,
        keypoints_3d,
        keypoints_2d,
        visibility,
        label,
    })
}

/// Generate `n_samples` records in parallel (identical to serial output) and
/// write them as a dataset file.
pub fn generate_dataset(
    config: &HandModelConfig,
    n_samples: u64,
    seed: u64,
    output_path: &Path,
    opts: &GenOptions,
) -> Result<(), SkeletonError> {
    if n_samples == 0 {
        return Err(SkeletonError::EmptyDataset);
    }
    let records = crate::runtime::install(|| {
        (0..n_samples)
            .into_par_iter()
            .map(|i| generate_sample(config, seed, i, opts))
            .collect::<Result<Vec<_>, _>>()
    })?;
    format::write_dataset(output_path, &records)?;
    Ok(())
}
