//! Hand pose representation and the canonical frame decomposition.
//!
//! A hand pose is a set of 21 keypoints in camera-frame millimeters. The
//! lifting pipeline never regresses those coordinates directly; it factors a
//! pose into
//!
//! * a scale `s` (length of the proximal index-finger bone),
//! * a root translation (the wrist keypoint),
//! * a viewpoint rotation `R`, and
//! * canonical coordinates `w_c` in a frame where a designated palm keypoint
//!   lies on the +y axis and a second one lies in the x-y half-plane with
//!   x >= 0. Right hands are mirrored along z so the canonical coordinates
//!   are side-agnostic.
//!
//! The factorization is exactly invertible; the round trip is the main
//! correctness property of this module.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of keypoints in the skeleton model: one wrist keypoint plus four
/// per finger, palm end to tip.
pub const NUM_KEYPOINTS: usize = 21;

/// Index of the root (wrist/palm) keypoint.
pub const ROOT_INDEX: usize = 0;

/// Palm-end keypoint of the index finger; the bone to its distal neighbor
/// defines the normalization scale.
pub const SCALE_BONE_START: usize = 5;

/// First intermediate keypoint of the index finger.
pub const SCALE_BONE_END: usize = 6;

/// Keypoint aligned with the +y axis of the canonical frame (middle-finger
/// palm keypoint; near-rigid with respect to the palm).
pub const ALIGN_PRIMARY: usize = 9;

/// Keypoint constrained to the x-y half-plane of the canonical frame
/// (pinky palm keypoint).
pub const ALIGN_SECONDARY: usize = 17;

/// Absolute tolerance for geometric identities in double precision.
pub const GEOM_EPS: f64 = 1e-9;

/// Tolerance when validating externally supplied rotation matrices.
pub const ROTATION_CHECK_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// The bone defining the normalization scale has (near-)zero length.
    #[error("scale bone has degenerate length {0}")]
    DegenerateBone(f64),
    /// The primary alignment keypoint coincides with the root; no canonical
    /// frame exists.
    #[error("primary alignment keypoint too close to the root (norm {0})")]
    DegenerateAlignment(f64),
    /// A supplied matrix is not a proper rotation within tolerance.
    #[error("matrix is not a proper rotation (max deviation {0})")]
    NotARotation(f64),
}

/// Which side the hand is; drives the canonical z-flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    Left,
    Right,
}

/// 3-vector. Millimeters in world/camera context, dimensionless after
/// normalization.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, rhs: Vec3) -> f64 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn cross(self, rhs: Vec3) -> Vec3 {
        Vec3::new(
            self.y * rhs.z - self.z * rhs.y,
            self.z * rhs.x - self.x * rhs.z,
            self.x * rhs.y - self.y * rhs.x,
        )
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        self.scale(1.0 / n)
    }

    /// Mirror across the x-y plane.
    pub fn flip_z(self) -> Vec3 {
        Vec3::new(self.x, self.y, -self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

/// 3x3 rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rot3(pub [[f64; 3]; 3]);

impl Rot3 {
    pub const IDENTITY: Rot3 = Rot3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Rotation about the x axis by `t` radians.
    pub fn about_x(t: f64) -> Rot3 {
        let (s, c) = t.sin_cos();
        Rot3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    /// Rotation about the y axis by `t` radians.
    pub fn about_y(t: f64) -> Rot3 {
        let (s, c) = t.sin_cos();
        Rot3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    /// Rotation about the z axis by `t` radians.
    pub fn about_z(t: f64) -> Rot3 {
        let (s, c) = t.sin_cos();
        Rot3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul(&self, rhs: &Rot3) -> Rot3 {
        let a = &self.0;
        let b = &rhs.0;
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Rot3(out)
    }

    pub fn transpose(&self) -> Rot3 {
        let m = &self.0;
        Rot3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Largest absolute deviation of `R^T R` from the identity, plus the
    /// determinant defect. Zero for an exact rotation.
    pub fn orthonormality_defect(&self) -> f64 {
        let rtr = self.transpose().mul(self);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((rtr.0[i][j] - target).abs());
            }
        }
        worst.max((self.det() - 1.0).abs())
    }

    /// Validate that this is a proper rotation within `tol`.
    pub fn check_rotation(&self, tol: f64) -> Result<(), GeometryError> {
        let defect = self.orthonormality_defect();
        if defect > tol {
            Err(GeometryError::NotARotation(defect))
        } else {
            Ok(())
        }
    }

    /// Squared Frobenius distance to another matrix.
    pub fn frobenius_sq_dist(&self, rhs: &Rot3) -> f64 {
        let mut acc = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.0[i][j] - rhs.0[i][j];
                acc += d * d;
            }
        }
        acc
    }
}

/// Axis-angle rotation: direction is the axis, magnitude the angle in
/// radians. Canonical form keeps the angle in `[0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisAngle(pub Vec3);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vec3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// A hand pose: 21 keypoints with handedness and per-keypoint visibility.
/// Index 0 is the wrist root; fingers are ordered thumb, index, middle,
/// ring, pinky, each palm end to tip.
#[derive(Debug, Clone, PartialEq)]
pub struct HandPose {
    pub keypoints: [Vec3; NUM_KEYPOINTS],
    pub handedness: Handedness,
    pub visibility: [bool; NUM_KEYPOINTS],
}

impl HandPose {
    pub fn new(keypoints: [Vec3; NUM_KEYPOINTS], handedness: Handedness) -> Self {
        HandPose { keypoints, handedness, visibility: [true; NUM_KEYPOINTS] }
    }
}

/// Scale-normalized pose: `w_norm = w / s` where `s` is the length of the
/// proximal index-finger bone.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPose {
    pub w_norm: [Vec3; NUM_KEYPOINTS],
    /// Normalization scale in millimeters; always positive.
    pub s: f64,
}

/// Root-relative normalized pose: `w_rel = w_norm - w_norm[root]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePose {
    pub w_rel: [Vec3; NUM_KEYPOINTS],
}

impl RelativePose {
    pub fn new(w_rel: [Vec3; NUM_KEYPOINTS]) -> Self {
        RelativePose { w_rel }
    }

    /// Mirror every keypoint across the x-y plane.
    pub fn flip_z(&self) -> RelativePose {
        RelativePose { w_rel: self.w_rel.map(Vec3::flip_z) }
    }
}

/// Output of the two-step canonical rotation construction.
#[derive(Debug, Clone, Copy)]
pub struct CanonicalRotation {
    pub rotation: Rot3,
    /// True when the secondary keypoint landed on the y axis after the first
    /// alignment step; the in-plane rotation is then the identity by
    /// convention.
    pub degenerate_secondary: bool,
}

/// The full invertible factorization of a hand pose.
#[derive(Debug, Clone)]
pub struct CanonicalDecomposition {
    pub w_c: [Vec3; NUM_KEYPOINTS],
    pub rotation: Rot3,
    pub handedness: Handedness,
    pub scale: f64,
    pub root_world: Vec3,
}

/// Divide all coordinates by the length of the proximal index-finger bone.
pub fn normalize_scale(pose: &HandPose) -> Result<NormalizedPose, GeometryError> {
    let s = (pose.keypoints[SCALE_BONE_END] - pose.keypoints[SCALE_BONE_START]).norm();
    if s <= 1e-9 {
        return Err(GeometryError::DegenerateBone(s));
    }
    let inv = 1.0 / s;
    Ok(NormalizedPose { w_norm: pose.keypoints.map(|p| p.scale(inv)), s })
}

/// Subtract the root keypoint so the wrist sits at the origin.
pub fn to_relative(norm: &NormalizedPose) -> RelativePose {
    let root = norm.w_norm[ROOT_INDEX];
    RelativePose { w_rel: norm.w_norm.map(|p| p - root) }
}

/// Construct the rotation into the canonical frame.
///
/// The rotation satisfies, for `a = ALIGN_PRIMARY` and `o = ALIGN_SECONDARY`:
/// `R * w_rel[a]` lies on the +y axis and `R * w_rel[o]` lies in the x-y
/// plane with a non-negative x component.
pub fn compute_canonical_rotation(rel: &RelativePose) -> Result<CanonicalRotation, GeometryError> {
    let a = rel.w_rel[ALIGN_PRIMARY];
    let norm_a = a.norm();
    if norm_a <= 1e-9 {
        return Err(GeometryError::DegenerateAlignment(norm_a));
    }

    // Step 1: bring `a` onto the +y axis. Rotate about x to zero the z
    // component (with non-negative y), then about z to zero the x component.
    let phi = f64::atan2(a.z, a.y);
    let rx = Rot3::about_x(-phi);
    let a1 = rx.apply(a);
    let psi = f64::atan2(a1.x, a1.y);
    let rz = Rot3::about_z(psi);
    let r_xz = rz.mul(&rx);

    // Step 2: rotate about y so the secondary keypoint lands in the x-y
    // half-plane with x >= 0. Rotating about y leaves `a` in place.
    let o1 = r_xz.apply(rel.w_rel[ALIGN_SECONDARY]);
    let radial = (o1.x * o1.x + o1.z * o1.z).sqrt();
    let (r_y, degenerate) = if radial <= 1e-9 {
        (Rot3::IDENTITY, true)
    } else {
        (Rot3::about_y(f64::atan2(o1.z, o1.x)), false)
    };

    Ok(CanonicalRotation { rotation: r_y.mul(&r_xz), degenerate_secondary: degenerate })
}

/// Rotate a relative pose into the canonical frame and mirror right hands
/// along z. Returns the side-agnostic canonical coordinates and the
/// (unflipped) viewpoint rotation.
pub fn to_canonical(
    rel: &RelativePose,
    handedness: Handedness,
) -> Result<([Vec3; NUM_KEYPOINTS], Rot3), GeometryError> {
    let rot = compute_canonical_rotation(rel)?.rotation;
    let w_c = rel.w_rel.map(|p| {
        let q = rot.apply(p);
        match handedness {
            Handedness::Left => q,
            Handedness::Right => q.flip_z(),
        }
    });
    Ok((w_c, rot))
}

/// Invert [`to_canonical`]: undo the handedness flip, then the rotation.
pub fn from_canonical(
    w_c: &[Vec3; NUM_KEYPOINTS],
    rotation: &Rot3,
    handedness: Handedness,
) -> Result<RelativePose, GeometryError> {
    rotation.check_rotation(ROTATION_CHECK_EPS)?;
    let inv = rotation.transpose();
    let w_rel = w_c.map(|p| {
        let q = match handedness {
            Handedness::Left => p,
            Handedness::Right => p.flip_z(),
        };
        inv.apply(q)
    });
    Ok(RelativePose { w_rel })
}

/// Factor a pose into (canonical coordinates, rotation, scale, root).
pub fn decompose(pose: &HandPose) -> Result<CanonicalDecomposition, GeometryError> {
    let norm = normalize_scale(pose)?;
    let rel = to_relative(&norm);
    let (w_c, rotation) = to_canonical(&rel, pose.handedness)?;
    Ok(CanonicalDecomposition {
        w_c,
        rotation,
        handedness: pose.handedness,
        scale: norm.s,
        root_world: pose.keypoints[ROOT_INDEX],
    })
}

/// Rebuild the original keypoints from a decomposition.
pub fn reconstruct(decomp: &CanonicalDecomposition) -> Result<[Vec3; NUM_KEYPOINTS], GeometryError> {
    let rel = from_canonical(&decomp.w_c, &decomp.rotation, decomp.handedness)?;
    Ok(rel.w_rel.map(|p| p.scale(decomp.scale) + decomp.root_world))
}

/// Rodrigues formula. The zero vector maps to the identity.
pub fn axis_angle_to_matrix(aa: &AxisAngle) -> Rot3 {
    let v = aa.0;
    let theta = v.norm();
    let (alpha, beta) = sinc_terms(theta);
    let k = skew(v);
    let k2 = k.mul(&k);
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let id = if i == j { 1.0 } else { 0.0 };
            *cell = id + alpha * k.0[i][j] + beta * k2.0[i][j];
        }
    }
    Rot3(out)
}

/// `sin(t)/t` and `(1-cos(t))/t^2`, with series expansions near zero.
fn sinc_terms(theta: f64) -> (f64, f64) {
    if theta < 1e-4 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        ((theta.sin()) / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

fn skew(v: Vec3) -> Rot3 {
    Rot3([[0.0, -v.z, v.y], [v.z, 0.0, -v.x], [-v.y, v.x, 0.0]])
}

/// Rodrigues formula together with the partial derivatives of the matrix
/// with respect to the three axis-angle parameters. Smooth at the origin.
pub fn axis_angle_to_matrix_with_jacobian(aa: &AxisAngle) -> (Rot3, [Rot3; 3]) {
    let v = aa.0;
    let theta = v.norm();
    let (alpha, beta) = sinc_terms(theta);
    // d(alpha)/d(theta) / theta and d(beta)/d(theta) / theta; both smooth.
    let (c1, c2) = if theta < 1e-4 {
        let t2 = theta * theta;
        (-1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0, -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0)
    } else {
        let t2 = theta * theta;
        let da = (theta * theta.cos() - theta.sin()) / t2;
        let db = (theta * theta.sin() - 2.0 * (1.0 - theta.cos())) / (t2 * theta);
        (da / theta, db / theta)
    };

    let k = skew(v);
    let k2 = k.mul(&k);
    let basis = [
        skew(Vec3::new(1.0, 0.0, 0.0)),
        skew(Vec3::new(0.0, 1.0, 0.0)),
        skew(Vec3::new(0.0, 0.0, 1.0)),
    ];
    let comps = [v.x, v.y, v.z];

    let rot = {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let id = if i == j { 1.0 } else { 0.0 };
                *cell = id + alpha * k.0[i][j] + beta * k2.0[i][j];
            }
        }
        Rot3(out)
    };

    let mut jac = [Rot3([[0.0; 3]; 3]); 3];
    for (axis, jac_m) in jac.iter_mut().enumerate() {
        let ki = &basis[axis];
        let kik = ki.mul(&k);
        let kki = k.mul(ki);
        for i in 0..3 {
            for j in 0..3 {
                jac_m.0[i][j] = c1 * comps[axis] * k.0[i][j]
                    + alpha * ki.0[i][j]
                    + c2 * comps[axis] * k2.0[i][j]
                    + beta * (kik.0[i][j] + kki.0[i][j]);
            }
        }
    }
    (rot, jac)
}

/// Extract the canonical axis-angle (angle in `[0, pi]`) from a rotation.
///
/// The identity returns the zero vector. At an angle of exactly pi the axis
/// sign is ambiguous; the convention is the column of `(R + I) / 2` with the
/// largest diagonal entry, sign fixed so its first nonzero component is
/// positive.
pub fn matrix_to_axis_angle(r: &Rot3) -> Result<AxisAngle, GeometryError> {
    r.check_rotation(ROTATION_CHECK_EPS)?;
    let m = &r.0;
    // Doubled axis, scaled by sin(theta).
    let skew_vec = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]);
    let sin_term = 0.5 * skew_vec.norm();
    let cos_term = 0.5 * (r.trace() - 1.0);
    let theta = f64::atan2(sin_term, cos_term);

    if theta < 1e-12 {
        return Ok(AxisAngle(Vec3::ZERO));
    }

    if theta < std::f64::consts::PI - 1e-4 {
        // Generic case: axis from the antisymmetric part.
        let axis = skew_vec.scale(1.0 / (2.0 * sin_term));
        return Ok(AxisAngle(axis.normalized().scale(theta)));
    }

    // Near pi the antisymmetric part vanishes; recover |axis| from the
    // symmetric part: (R + R^T)/2 = cos*I + (1-cos) * a a^T.
    let one_minus_cos = 1.0 - cos_term;
    let sym = |i: usize, j: usize| 0.5 * (m[i][j] + m[j][i]);
    let diag = [
        ((sym(0, 0) - cos_term) / one_minus_cos).max(0.0).sqrt(),
        ((sym(1, 1) - cos_term) / one_minus_cos).max(0.0).sqrt(),
        ((sym(2, 2) - cos_term) / one_minus_cos).max(0.0).sqrt(),
    ];
    let pivot = (0..3).max_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap()).unwrap();

    // Relative signs from the off-diagonal symmetric entries: sym(i,j) =
    // (1-cos) a_i a_j for i != j.
    let mut axis = [0.0; 3];
    axis[pivot] = diag[pivot];
    for i in 0..3 {
        if i != pivot && sym(i, pivot) < 0.0 {
            axis[i] = -diag[i];
        } else if i != pivot {
            axis[i] = diag[i];
        }
    }

    // Overall sign: from the antisymmetric part when it is above noise,
    // otherwise by convention (first nonzero component positive).
    let skew_arr = [skew_vec.x, skew_vec.y, skew_vec.z];
    let strongest = (0..3)
        .max_by(|&i, &j| skew_arr[i].abs().partial_cmp(&skew_arr[j].abs()).unwrap())
        .unwrap();
    let flip = if skew_arr[strongest].abs() > 1e-9 {
        skew_arr[strongest].signum() != axis[strongest].signum() && axis[strongest] != 0.0
    } else {
        let first = axis.iter().find(|c| c.abs() > 1e-12).copied().unwrap_or(1.0);
        first < 0.0
    };
    if flip {
        for c in &mut axis {
            *c = -*c;
        }
    }

    let v = Vec3::new(axis[0], axis[1], axis[2]).normalized().scale(theta);
    Ok(AxisAngle(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, RngExt};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use std::f64::consts::PI;

    /// Random but plausibly hand-like keypoint cloud for property tests.
    pub(crate) fn random_pose(rng: &mut impl Rng, handedness: Handedness) -> HandPose {
        let mut kp = [Vec3::ZERO; NUM_KEYPOINTS];
        let root = Vec3::new(
            rng.gen_range(-100.0..100.0),
            rng.gen_range(-100.0..100.0),
            rng.gen_range(300.0..700.0),
        );
        kp[0] = root;
        for point in kp.iter_mut().skip(1) {
            let offset = Vec3::new(
                rng.gen_range(-90.0..90.0),
                rng.gen_range(-90.0..90.0),
                rng.gen_range(-90.0..90.0),
            );
            *point = root + offset;
        }
        // Keep the scale bone and alignment keypoints well conditioned.
        if (kp[SCALE_BONE_END] - kp[SCALE_BONE_START]).norm() < 5.0 {
            kp[SCALE_BONE_END] = kp[SCALE_BONE_START] + Vec3::new(0.0, 35.0, 5.0);
        }
        if (kp[ALIGN_PRIMARY] - kp[ROOT_INDEX]).norm() < 5.0 {
            kp[ALIGN_PRIMARY] = root + Vec3::new(10.0, 80.0, 10.0);
        }
        HandPose::new(kp, handedness)
    }

    pub(crate) fn random_rotation(rng: &mut impl Rng) -> Rot3 {
        let axis = rng.unit_vector();
        let angle = rng.gen_range(0.0..PI);
        axis_angle_to_matrix(&AxisAngle::new(axis[0] * angle, axis[1] * angle, axis[2] * angle))
    }

    #[test]
    fn normalize_scale_divides_by_bone_length() {
        let mut kp = [Vec3::ZERO; NUM_KEYPOINTS];
        kp[SCALE_BONE_START] = Vec3::ZERO;
        kp[SCALE_BONE_END] = Vec3::new(0.0, 0.0, 2.0);
        kp[3] = Vec3::new(4.0, -6.0, 8.0);
        let pose = HandPose::new(kp, Handedness::Left);
        let norm = normalize_scale(&pose).unwrap();
        assert_abs_diff_eq!(norm.s, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(norm.w_norm[3].x, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(norm.w_norm[3].y, -3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(norm.w_norm[3].z, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn normalize_scale_rejects_degenerate_bone() {
        let mut kp = [Vec3::ZERO; NUM_KEYPOINTS];
        kp[SCALE_BONE_START] = Vec3::new(1.0, 2.0, 3.0);
        kp[SCALE_BONE_END] = Vec3::new(1.0, 2.0, 3.0);
        let pose = HandPose::new(kp, Handedness::Left);
        assert!(matches!(normalize_scale(&pose), Err(GeometryError::DegenerateBone(_))));
    }

    #[test]
    fn normalized_bone_has_unit_length() {
        // Direct recomputation oracle over random poses.
        let mut rng = stream(11);
        for _ in 0..100 {
            let pose = random_pose(&mut rng, Handedness::Left);
            let norm = normalize_scale(&pose).unwrap();
            let len = (norm.w_norm[SCALE_BONE_END] - norm.w_norm[SCALE_BONE_START]).norm();
            assert_abs_diff_eq!(len, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn to_relative_subtracts_root() {
        let mut w = [Vec3::ZERO; NUM_KEYPOINTS];
        for (i, p) in w.iter_mut().enumerate() {
            *p = Vec3::new(1.0 + i as f64, 2.0, 3.0);
        }
        let rel = to_relative(&NormalizedPose { w_norm: w, s: 1.0 });
        assert_eq!(rel.w_rel[0], Vec3::ZERO);
        for i in 0..NUM_KEYPOINTS {
            assert_abs_diff_eq!(rel.w_rel[i].x, i as f64, epsilon = 1e-15);
            assert_abs_diff_eq!(rel.w_rel[i].y, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn to_relative_is_idempotent() {
        let mut rng = stream(12);
        let pose = random_pose(&mut rng, Handedness::Left);
        let norm = normalize_scale(&pose).unwrap();
        let once = to_relative(&norm);
        let twice = to_relative(&NormalizedPose { w_norm: once.w_rel, s: norm.s });
        for i in 0..NUM_KEYPOINTS {
            assert_abs_diff_eq!((once.w_rel[i] - twice.w_rel[i]).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn canonical_rotation_identity_when_already_aligned() {
        let mut w = [Vec3::ZERO; NUM_KEYPOINTS];
        w[ALIGN_PRIMARY] = Vec3::new(0.0, 2.0, 0.0);
        w[ALIGN_SECONDARY] = Vec3::new(3.0, 1.0, 0.0);
        let rot = compute_canonical_rotation(&RelativePose::new(w)).unwrap();
        assert!(!rot.degenerate_secondary);
        assert!(rot.rotation.frobenius_sq_dist(&Rot3::IDENTITY) < 1e-18);
    }

    #[test]
    fn canonical_rotation_permutes_x_to_y() {
        let mut w = [Vec3::ZERO; NUM_KEYPOINTS];
        w[ALIGN_PRIMARY] = Vec3::new(1.0, 0.0, 0.0);
        w[ALIGN_SECONDARY] = Vec3::new(0.5, 0.7, -0.3);
        let rot = compute_canonical_rotation(&RelativePose::new(w)).unwrap().rotation;
        let mapped = rot.apply(w[ALIGN_PRIMARY]);
        assert_abs_diff_eq!(mapped.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mapped.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mapped.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn canonical_rotation_constraints_hold_over_random_poses() {
        // Constraint-check oracle: alignment, half-plane, orthonormality.
        let mut rng = stream(13);
        for _ in 0..1000 {
            let pose = random_pose(&mut rng, Handedness::Left);
            let rel = to_relative(&normalize_scale(&pose).unwrap());
            let rot = compute_canonical_rotation(&rel).unwrap();
            assert!(rot.rotation.orthonormality_defect() < 1e-9);

            let a = rot.rotation.apply(rel.w_rel[ALIGN_PRIMARY]);
            assert!(a.x.abs() < 1e-9 && a.z.abs() < 1e-9 && a.y >= 0.0);
            assert_abs_diff_eq!(a.y, rel.w_rel[ALIGN_PRIMARY].norm(), epsilon = 1e-9);

            if !rot.degenerate_secondary {
                let o = rot.rotation.apply(rel.w_rel[ALIGN_SECONDARY]);
                assert!(o.z.abs() < 1e-9, "z residual {}", o.z);
                assert!(o.x >= -1e-9, "x component {}", o.x);
            }
        }
    }

    #[test]
    fn degenerate_alignment_is_an_error() {
        let w = [Vec3::ZERO; NUM_KEYPOINTS];
        assert!(matches!(
            compute_canonical_rotation(&RelativePose::new(w)),
            Err(GeometryError::DegenerateAlignment(_))
        ));
    }

    #[test]
    fn degenerate_secondary_sets_flag_not_error() {
        let mut w = [Vec3::ZERO; NUM_KEYPOINTS];
        w[ALIGN_PRIMARY] = Vec3::new(0.0, 1.0, 0.0);
        w[ALIGN_SECONDARY] = Vec3::new(0.0, 0.5, 0.0); // on the y axis
        let rot = compute_canonical_rotation(&RelativePose::new(w)).unwrap();
        assert!(rot.degenerate_secondary);
        assert!(rot.rotation.frobenius_sq_dist(&Rot3::IDENTITY) < 1e-18);
    }

    #[test]
    fn right_hand_flips_z() {
        let mut w = [Vec3::ZERO; NUM_KEYPOINTS];
        w[ALIGN_PRIMARY] = Vec3::new(0.0, 2.0, 0.0);
        w[ALIGN_SECONDARY] = Vec3::new(3.0, 1.0, 0.0);
        w[4] = Vec3::new(1.0, 2.0, 3.0);
        let rel = RelativePose::new(w);
        let (wc_l, _) = to_canonical(&rel, Handedness::Left).unwrap();
        let (wc_r, _) = to_canonical(&rel, Handedness::Right).unwrap();
        assert_abs_diff_eq!(wc_l[4].z, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wc_r[4].z, -3.0, epsilon = 1e-12);
    }

    #[test]
    fn mirror_symmetry_makes_canonical_side_agnostic() {
        let mut rng = stream(14);
        for _ in 0..200 {
            let pose = random_pose(&mut rng, Handedness::Left);
            let rel = to_relative(&normalize_scale(&pose).unwrap());
            let (wc_left, _) = to_canonical(&rel, Handedness::Left).unwrap();
            let (wc_right, _) = to_canonical(&rel.flip_z(), Handedness::Right).unwrap();
            for i in 0..NUM_KEYPOINTS {
                assert!((wc_left[i] - wc_right[i]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn canonical_round_trip_both_hands() {
        let mut rng = stream(15);
        for _ in 0..200 {
            for handedness in [Handedness::Left, Handedness::Right] {
                let pose = random_pose(&mut rng, handedness);
                let rel = to_relative(&normalize_scale(&pose).unwrap());
                let (w_c, rot) = to_canonical(&rel, handedness).unwrap();
                let back = from_canonical(&w_c, &rot, handedness).unwrap();
                for i in 0..NUM_KEYPOINTS {
                    assert!((back.w_rel[i] - rel.w_rel[i]).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn canonical_coordinates_invariant_under_global_rotation() {
        let mut rng = stream(16);
        for _ in 0..200 {
            let pose = random_pose(&mut rng, Handedness::Left);
            let rel = to_relative(&normalize_scale(&pose).unwrap());
            let q = random_rotation(&mut rng);
            let rotated = RelativePose::new(rel.w_rel.map(|p| q.apply(p)));
            let (wc_a, _) = to_canonical(&rel, Handedness::Left).unwrap();
            let (wc_b, _) = to_canonical(&rotated, Handedness::Left).unwrap();
            for i in 0..NUM_KEYPOINTS {
                assert!((wc_a[i] - wc_b[i]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn from_canonical_rejects_non_rotation() {
        let w = [Vec3::ZERO; NUM_KEYPOINTS];
        let bad = Rot3([[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(
            from_canonical(&w, &bad, Handedness::Left),
            Err(GeometryError::NotARotation(_))
        ));
    }

    #[test]
    fn from_canonical_flip_involution() {
        let mut w = [Vec3::ZERO; NUM_KEYPOINTS];
        w[7] = Vec3::new(0.0, 0.0, 1.0);
        let rel = from_canonical(&w, &Rot3::IDENTITY, Handedness::Right).unwrap();
        assert_abs_diff_eq!(rel.w_rel[7].z, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn full_chain_reconstruction_is_exact() {
        let mut rng = stream(17);
        for _ in 0..200 {
            for handedness in [Handedness::Left, Handedness::Right] {
                let pose = random_pose(&mut rng, handedness);
                let decomp = decompose(&pose).unwrap();
                let rebuilt = reconstruct(&decomp).unwrap();
                for i in 0..NUM_KEYPOINTS {
                    let scale = pose.keypoints[i].norm().max(1.0);
                    assert!(
                        (rebuilt[i] - pose.keypoints[i]).norm() / scale < 1e-9,
                        "keypoint {i} drifted"
                    );
                }
            }
        }
    }

    #[test]
    fn rodrigues_zero_is_identity() {
        let r = axis_angle_to_matrix(&AxisAngle::new(0.0, 0.0, 0.0));
        assert!(r.frobenius_sq_dist(&Rot3::IDENTITY) < 1e-30);
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = axis_angle_to_matrix(&AxisAngle::new(0.0, 0.0, PI / 2.0));
        let expected = Rot3([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(r.frobenius_sq_dist(&expected) < 1e-18);
    }

    #[test]
    fn matrix_to_axis_angle_identity_and_quarter_turn() {
        let aa = matrix_to_axis_angle(&Rot3::IDENTITY).unwrap();
        assert_abs_diff_eq!(aa.angle(), 0.0, epsilon = 1e-15);

        let quarter = Rot3([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let aa = matrix_to_axis_angle(&quarter).unwrap();
        assert_abs_diff_eq!(aa.0.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(aa.0.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(aa.0.z, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn matrix_to_axis_angle_rejects_non_rotation() {
        let bad = Rot3([[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matrix_to_axis_angle(&bad).is_err());
    }

    #[test]
    fn axis_angle_round_trip_includes_edge_angles() {
        let mut rng = stream(18);
        let mut worst: f64 = 0.0;
        for k in 0..1000 {
            let axis = rng.unit_vector();
            // Sweep includes angles within 1e-6 of both 0 and pi.
            let angle = match k % 5 {
                0 => rng.gen_range(1e-7..1e-5),
                1 => PI - rng.gen_range(1e-7..1e-5),
                _ => rng.gen_range(1e-4..PI - 1e-4),
            };
            let aa = AxisAngle::new(axis[0] * angle, axis[1] * angle, axis[2] * angle);
            let back = matrix_to_axis_angle(&axis_angle_to_matrix(&aa)).unwrap();
            worst = worst.max((back.0 - aa.0).norm());
        }
        assert!(worst < 1e-9, "worst round-trip error {worst}");
    }

    #[test]
    fn axis_angle_at_exactly_pi_round_trips_as_matrix() {
        let mut rng = stream(19);
        for _ in 0..100 {
            let axis = rng.unit_vector();
            let aa = AxisAngle::new(axis[0] * PI, axis[1] * PI, axis[2] * PI);
            let r = axis_angle_to_matrix(&aa);
            let back = matrix_to_axis_angle(&r).unwrap();
            let r2 = axis_angle_to_matrix(&back);
            assert!(r.frobenius_sq_dist(&r2) < 1e-18);
            assert!(back.angle() <= PI + 1e-12);
        }
    }

    #[test]
    fn rodrigues_jacobian_matches_finite_differences() {
        let mut rng = stream(20);
        for trial in 0..50 {
            let v = if trial < 5 {
                // Exercise the small-angle series branch.
                Vec3::new(1e-6 * trial as f64, -2e-6, 1e-6)
            } else {
                Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
            };
            let (_, jac) = axis_angle_to_matrix_with_jacobian(&AxisAngle(v));
            let h = 1e-6;
            for axis in 0..3 {
                let mut hi = v;
                let mut lo = v;
                match axis {
                    0 => {
                        hi.x += h;
                        lo.x -= h;
                    }
                    1 => {
                        hi.y += h;
                        lo.y -= h;
                    }
                    _ => {
                        hi.z += h;
                        lo.z -= h;
                    }
                }
                let rh = axis_angle_to_matrix(&AxisAngle(hi));
                let rl = axis_angle_to_matrix(&AxisAngle(lo));
                for i in 0..3 {
                    for j in 0..3 {
                        let num = (rh.0[i][j] - rl.0[i][j]) / (2.0 * h);
                        assert!(
                            (num - jac[axis].0[i][j]).abs() < 1e-7,
                            "d/d{axis} entry ({i},{j}): analytic {} numeric {num}",
                            jac[axis].0[i][j]
                        );
                    }
                }
            }
        }
    }
}
