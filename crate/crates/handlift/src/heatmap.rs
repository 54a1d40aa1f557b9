//! Score-map ground truth, decoding, and the crop/noise augmentations.
//!
//! A score map is a per-keypoint likelihood image: a Gaussian around the
//! keypoint location, rescaled so its grid maximum is exactly 1; maps of
//! invisible keypoints are identically zero. Decoding reads the argmax back.
//! Crops are axis-aligned squares resized to a target resolution, and all
//! augmentations (crop-center jitter, keypoint jitter, contrast scaling) are
//! deterministic functions of their seed.

use crate::rng::{stream, RngExt};
use rand::Rng;
use thiserror::Error;

/// Default ground-truth Gaussian variance in px^2 (sigma = 5 px).
pub const SCOREMAP_VARIANCE: f64 = 25.0;

/// Variance of the crop-center jitter in px^2.
pub const CENTER_JITTER_VARIANCE: f64 = 10.0;

/// Variance of the per-keypoint coordinate noise in px^2.
pub const KEYPOINT_JITTER_VARIANCE: f64 = 1.5;

/// Contrast scaling factor range (uniform).
pub const CONTRAST_RANGE: (f64, f64) = (0.5, 1.0);

/// Color-hue augmentation strength used by the full image pipeline. No
/// images flow through this desk-scale pipeline, so the constant is recorded
/// but unused.
pub const COLOR_HUE_AUGMENT: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum HeatmapError {
    #[error("no visible keypoints to bound")]
    NoVisibleKeypoints,
}

/// Stack of `count` score maps of size `height x width`, values in [0, 1].
/// Storage is map-major row-major: index `(j * height + v) * width + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMapStack {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    pub data: Vec<f64>,
}

impl ScoreMapStack {
    pub fn zeros(width: usize, height: usize, count: usize) -> Self {
        ScoreMapStack { width, height, count, data: vec![0.0; width * height * count] }
    }

    #[inline]
    pub fn at(&self, map: usize, u: usize, v: usize) -> f64 {
        self.data[(map * self.height + v) * self.width + u]
    }

    /// One map as a row-major slice.
    pub fn map(&self, map: usize) -> &[f64] {
        let len = self.width * self.height;
        &self.data[map * len..(map + 1) * len]
    }

    /// Repack into height-width-channel order (the layout network inputs
    /// use), single precision.
    pub fn to_hwc_f32(&self) -> Vec<f32> {
        let mut out = vec![0.0f32; self.data.len()];
        for j in 0..self.count {
            for v in 0..self.height {
                for u in 0..self.width {
                    out[(v * self.width + u) * self.count + j] = self.at(j, u, v) as f32;
                }
            }
        }
        out
    }
}

/// Render ground-truth score maps: per visible keypoint a Gaussian
/// `exp(-d^2 / (2 * variance))` around the keypoint, rescaled so the grid
/// maximum is exactly 1; invisible keypoints render as all-zero maps.
pub fn render_scoremaps(
    keypoints_2d: &[[f64; 2]],
    visibility: &[bool],
    map_size: (usize, usize),
    variance: f64,
) -> ScoreMapStack {
    let (width, height) = map_size;
    assert!(width > 0 && height > 0, "map size must be positive");
    assert!(variance > 0.0, "variance must be positive");
    let mut stack = ScoreMapStack::zeros(width, height, keypoints_2d.len());
    let inv_two_var = 1.0 / (2.0 * variance);

    for (j, (&[ku, kv], &vis)) in keypoints_2d.iter().zip(visibility).enumerate() {
        if !vis {
            continue;
        }
        let base = j * height * width;
        let mut max_val = 0.0f64;
        for v in 0..height {
            let dv = v as f64 - kv;
            for u in 0..width {
                let du = u as f64 - ku;
                let val = (-(du * du + dv * dv) * inv_two_var).exp();
                stack.data[base + v * width + u] = val;
                max_val = max_val.max(val);
            }
        }
        if max_val > 0.0 {
            let inv = 1.0 / max_val;
            for val in &mut stack.data[base..base + height * width] {
                *val *= inv;
            }
        }
    }
    stack
}

/// Argmax readout: per map, the coordinates of the global maximum (first
/// occurrence in row-major order on ties) and its value.
pub fn decode_scoremaps(stack: &ScoreMapStack) -> Vec<([f64; 2], f64)> {
    (0..stack.count)
        .map(|j| {
            let map = stack.map(j);
            let mut best = 0usize;
            let mut best_val = map[0];
            for (i, &val) in map.iter().enumerate().skip(1) {
                if val > best_val {
                    best_val = val;
                    best = i;
                }
            }
            let u = (best % stack.width) as f64;
            let v = (best / stack.width) as f64;
            ([u, v], best_val)
        })
        .collect()
}

/// Axis-aligned square region in source pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareBbox {
    pub center_u: f64,
    pub center_v: f64,
    pub side: f64,
}

impl SquareBbox {
    pub fn min_u(&self) -> f64 {
        self.center_u - 0.5 * self.side
    }
    pub fn min_v(&self) -> f64 {
        self.center_v - 0.5 * self.side
    }

    pub fn contains(&self, [u, v]: [f64; 2]) -> bool {
        (u - self.center_u).abs() <= 0.5 * self.side + 1e-9
            && (v - self.center_v).abs() <= 0.5 * self.side + 1e-9
    }
}

/// Bounding-box construction parameters.
#[derive(Debug, Clone, Copy)]
pub struct CropConfig {
    /// Fractional expansion of the tight square.
    pub margin: f64,
    /// Lower bound on the tight square side, so single-keypoint boxes have
    /// a margin-determined minimum size.
    pub min_size: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig { margin: 0.25, min_size: 1.0 }
    }
}

/// Minimal axis-aligned square containing all visible keypoints, expanded by
/// the margin fraction.
pub fn hand_bbox_from_keypoints(
    keypoints_2d: &[[f64; 2]],
    visibility: &[bool],
    cfg: &CropConfig,
) -> Result<SquareBbox, HeatmapError> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut any = false;
    for (&[u, v], &vis) in keypoints_2d.iter().zip(visibility) {
        if vis {
            any = true;
            lo[0] = lo[0].min(u);
            lo[1] = lo[1].min(v);
            hi[0] = hi[0].max(u);
            hi[1] = hi[1].max(v);
        }
    }
    if !any {
        return Err(HeatmapError::NoVisibleKeypoints);
    }
    let tight = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(cfg.min_size);
    Ok(SquareBbox {
        center_u: 0.5 * (lo[0] + hi[0]),
        center_v: 0.5 * (lo[1] + hi[1]),
        side: tight * (1.0 + cfg.margin),
    })
}

/// Jitter the crop center with per-axis Gaussian noise of
/// [`CENTER_JITTER_VARIANCE`], then grow the box so all visible keypoints
/// remain contained. Deterministic given the seed.
pub fn augment_crop(
    bbox: &SquareBbox,
    keypoints_2d: &[[f64; 2]],
    visibility: &[bool],
    rng_seed: u64,
    cfg: &CropConfig,
) -> SquareBbox {
    let mut rng = stream(rng_seed);
    let sigma = CENTER_JITTER_VARIANCE.sqrt();
    let center_u = bbox.center_u + rng.gaussian_std(sigma);
    let center_v = bbox.center_v + rng.gaussian_std(sigma);

    let mut max_dev = 0.0f64;
    for (&[u, v], &vis) in keypoints_2d.iter().zip(visibility) {
        if vis {
            max_dev = max_dev.max((u - center_u).abs()).max((v - center_v).abs());
        }
    }
    let needed = 2.0 * max_dev * (1.0 + cfg.margin);
    SquareBbox { center_u, center_v, side: bbox.side.max(needed) }
}

/// Add i.i.d. per-keypoint, per-axis Gaussian noise of the given variance.
pub fn jitter_keypoints(keypoints_2d: &[[f64; 2]], rng_seed: u64, variance: f64) -> Vec<[f64; 2]> {
    let mut rng = stream(rng_seed);
    let sigma = variance.sqrt();
    keypoints_2d
        .iter()
        .map(|&[u, v]| [u + rng.gaussian_std(sigma), v + rng.gaussian_std(sigma)])
        .collect()
}

/// Rescale contrast around the image mean by a fixed factor, clamped to
/// [0, 1].
pub fn contrast_with_factor(pixels: &[f64], factor: f64) -> Vec<f64> {
    if pixels.is_empty() {
        return Vec::new();
    }
    let mean = pixels.iter().sum::<f64>() / pixels.len() as f64;
    pixels.iter().map(|&p| (mean + factor * (p - mean)).clamp(0.0, 1.0)).collect()
}

/// Random contrast augmentation with a factor uniform in [`CONTRAST_RANGE`].
/// Returns the output and the factor used.
pub fn contrast_augment(pixels: &[f64], rng_seed: u64) -> (Vec<f64>, f64) {
    let mut rng = stream(rng_seed);
    let factor = rng.gen_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1);
    (contrast_with_factor(pixels, factor), factor)
}

/// Invertible map from a square source region to a square target resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    /// Top-left corner of the source box.
    pub u0: f64,
    pub v0: f64,
    /// Source box side in source pixels.
    pub size: f64,
    /// Target resolution in pixels.
    pub target: f64,
}

impl CropTransform {
    pub fn identity() -> Self {
        CropTransform { u0: 0.0, v0: 0.0, size: 1.0, target: 1.0 }
    }

    pub fn from_bbox(bbox: &SquareBbox, target: usize) -> Self {
        CropTransform {
            u0: bbox.min_u(),
            v0: bbox.min_v(),
            size: bbox.side,
            target: target as f64,
        }
    }

    pub fn scale(&self) -> f64 {
        self.target / self.size
    }

    /// Source -> target coordinates.
    pub fn apply(&self, [u, v]: [f64; 2]) -> [f64; 2] {
        let s = self.scale();
        [(u - self.u0) * s, (v - self.v0) * s]
    }

    /// Target -> source coordinates.
    pub fn invert(&self, [u, v]: [f64; 2]) -> [f64; 2] {
        let s = self.scale();
        [u / s + self.u0, v / s + self.v0]
    }

    /// The inverse map as a transform.
    pub fn inverse(&self) -> CropTransform {
        let s = self.scale();
        CropTransform { u0: -self.u0 * s, v0: -self.v0 * s, size: self.target, target: self.size }
    }

    /// `other` applied after `self`.
    pub fn then(&self, other: &CropTransform) -> CropTransform {
        let sa = self.scale();
        let sb = other.scale();
        let scale = sa * sb;
        let target = other.target;
        CropTransform {
            u0: self.u0 + other.u0 / sa,
            v0: self.v0 + other.v0 / sa,
            size: target / scale,
            target,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn spread_keypoints(seed: u64, n: usize, range: f64) -> Vec<[f64; 2]> {
        let mut rng = stream(seed);
        (0..n).map(|_| [rng.gen_range(0.0..range), rng.gen_range(0.0..range)]).collect()
    }

    #[test]
    fn invisible_keypoint_renders_zero_map() {
        let stack = render_scoremaps(&[[5.0, 5.0]], &[false], (16, 16), SCOREMAP_VARIANCE);
        assert!(stack.map(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn on_grid_keypoint_peaks_at_one() {
        let stack = render_scoremaps(&[[5.0, 7.0]], &[true], (16, 16), SCOREMAP_VARIANCE);
        assert_abs_diff_eq!(stack.at(0, 5, 7), 1.0, epsilon = 1e-15);
        assert!(stack.map(0).iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn gaussian_value_at_known_distance() {
        // Oracle: evaluate the expression directly at d = 5, sigma^2 = 25.
        let expected = (-25.0f64 / 50.0).exp();
        let stack = render_scoremaps(&[[8.0, 8.0]], &[true], (32, 32), SCOREMAP_VARIANCE);
        assert_abs_diff_eq!(stack.at(0, 13, 8), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.6065306597126334, epsilon = 1e-12);
    }

    #[test]
    fn off_grid_peak_is_rescaled_to_one() {
        let stack = render_scoremaps(&[[5.4, 7.6]], &[true], (16, 16), SCOREMAP_VARIANCE);
        let max = stack.map(0).iter().cloned().fold(0.0, f64::max);
        assert_abs_diff_eq!(max, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn decode_recovers_on_grid_keypoints_exactly() {
        let kps = [[3.0, 11.0], [0.0, 0.0], [15.0, 15.0]];
        let stack = render_scoremaps(&kps, &[true; 3], (16, 16), SCOREMAP_VARIANCE);
        let decoded = decode_scoremaps(&stack);
        for (j, &[u, v]) in kps.iter().enumerate() {
            assert_eq!(decoded[j].0, [u, v]);
            assert_abs_diff_eq!(decoded[j].1, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn decode_all_zero_map_uses_tie_convention() {
        let stack = ScoreMapStack::zeros(8, 8, 1);
        let decoded = decode_scoremaps(&stack);
        assert_eq!(decoded[0], ([0.0, 0.0], 0.0));
    }

    #[test]
    fn decode_off_grid_within_one_pixel() {
        // Quantization-bound oracle over random subpixel positions.
        let mut rng = stream(77);
        for _ in 0..500 {
            let kp = [rng.gen_range(1.0..30.0), rng.gen_range(1.0..30.0)];
            let stack = render_scoremaps(&[kp], &[true], (32, 32), SCOREMAP_VARIANCE);
            let ([u, v], conf) = decode_scoremaps(&stack)[0];
            let err = ((u - kp[0]).powi(2) + (v - kp[1]).powi(2)).sqrt();
            assert!(err <= 1.0, "decode error {err} for {kp:?}");
            assert_abs_diff_eq!(conf, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn bbox_requires_a_visible_keypoint() {
        let err = hand_bbox_from_keypoints(&[[1.0, 2.0]], &[false], &CropConfig::default());
        assert_eq!(err, Err(HeatmapError::NoVisibleKeypoints));
    }

    #[test]
    fn bbox_single_keypoint_has_margin_determined_minimum() {
        let cfg = CropConfig::default();
        let bbox = hand_bbox_from_keypoints(&[[40.0, 50.0]], &[true], &cfg).unwrap();
        assert_abs_diff_eq!(bbox.center_u, 40.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bbox.center_v, 50.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bbox.side, cfg.min_size * (1.0 + cfg.margin), epsilon = 1e-12);
    }

    #[test]
    fn bbox_spanning_example_with_zero_margin() {
        let cfg = CropConfig { margin: 0.0, min_size: 1.0 };
        let bbox =
            hand_bbox_from_keypoints(&[[10.0, 10.0], [50.0, 30.0]], &[true, true], &cfg).unwrap();
        assert_abs_diff_eq!(bbox.side, 40.0, epsilon = 1e-12);
        assert!(bbox.contains([10.0, 10.0]) && bbox.contains([50.0, 30.0]));
    }

    #[test]
    fn bbox_contains_all_visible_keypoints() {
        for seed in 0..50 {
            let kps = spread_keypoints(seed, 21, 200.0);
            let vis: Vec<bool> = (0..21).map(|i| i % 3 != 0).collect();
            let bbox = hand_bbox_from_keypoints(&kps, &vis, &CropConfig::default()).unwrap();
            for (kp, &v) in kps.iter().zip(&vis) {
                if v {
                    assert!(bbox.contains(*kp));
                }
            }
        }
    }

    #[test]
    fn augment_crop_is_deterministic_and_contains_keypoints() {
        let cfg = CropConfig::default();
        let kps = spread_keypoints(5, 21, 100.0);
        let vis = vec![true; 21];
        let bbox = hand_bbox_from_keypoints(&kps, &vis, &cfg).unwrap();
        let a = augment_crop(&bbox, &kps, &vis, 123, &cfg);
        let b = augment_crop(&bbox, &kps, &vis, 123, &cfg);
        assert_eq!(a, b);
        for seed in 0..200 {
            let jittered = augment_crop(&bbox, &kps, &vis, seed, &cfg);
            for kp in &kps {
                assert!(jittered.contains(*kp));
            }
        }
    }

    #[test]
    fn crop_center_jitter_has_expected_variance() {
        let cfg = CropConfig::default();
        let kps = [[50.0, 50.0]];
        let vis = [true];
        let bbox = hand_bbox_from_keypoints(&kps, &vis, &cfg).unwrap();
        let n = 10_000;
        let mut offsets = Vec::with_capacity(2 * n);
        for seed in 0..n as u64 {
            let jittered = augment_crop(&bbox, &kps, &vis, seed, &cfg);
            offsets.push(jittered.center_u - bbox.center_u);
            offsets.push(jittered.center_v - bbox.center_v);
        }
        let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
        let var =
            offsets.iter().map(|o| (o - mean) * (o - mean)).sum::<f64>() / offsets.len() as f64;
        assert!((8.0..=12.0).contains(&var), "center jitter variance {var}");
    }

    #[test]
    fn keypoint_jitter_variance_and_independence() {
        let kps = [[10.0, 10.0], [90.0, 40.0]];
        let n = 10_000;
        let mut d0 = Vec::with_capacity(n);
        let mut d1 = Vec::with_capacity(n);
        for seed in 0..n as u64 {
            let out = jitter_keypoints(&kps, seed, KEYPOINT_JITTER_VARIANCE);
            d0.push(out[0][0] - 10.0);
            d1.push(out[1][0] - 90.0);
        }
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        let v0 = var(&d0);
        assert!((1.2..=1.8).contains(&v0), "keypoint jitter variance {v0}");
        // Correlation estimate between the two keypoints' offsets.
        let m0 = d0.iter().sum::<f64>() / n as f64;
        let m1 = d1.iter().sum::<f64>() / n as f64;
        let cov = d0
            .iter()
            .zip(&d1)
            .map(|(a, b)| (a - m0) * (b - m1))
            .sum::<f64>()
            / n as f64;
        let corr = cov / (var(&d0).sqrt() * var(&d1).sqrt());
        assert!(corr.abs() < 0.05, "correlation {corr}");
    }

    #[test]
    fn zero_variance_jitter_is_identity() {
        let kps = [[10.0, 20.0], [30.0, 40.0]];
        let out = jitter_keypoints(&kps, 1, 0.0);
        assert_eq!(out, kps.to_vec());
    }

    #[test]
    fn contrast_identity_and_constant_fixed_point() {
        let img = vec![0.1, 0.5, 0.9, 0.3];
        for (out, orig) in contrast_with_factor(&img, 1.0).iter().zip(&img) {
            assert_abs_diff_eq!(out, orig, epsilon = 1e-15);
        }
        let flat = vec![0.4; 16];
        for factor in [0.5, 0.75, 1.0] {
            assert_eq!(contrast_with_factor(&flat, factor), flat);
        }
    }

    #[test]
    fn contrast_factor_stays_in_range() {
        let img = vec![0.0, 1.0];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for seed in 0..10_000 {
            let (out, factor) = contrast_augment(&img, seed);
            lo = lo.min(factor);
            hi = hi.max(factor);
            assert!(out.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        assert!(lo >= 0.5 && hi <= 1.0, "factor range [{lo}, {hi}]");
    }

    #[test]
    fn crop_transform_known_affine_map() {
        let t = CropTransform { u0: 100.0, v0: 100.0, size: 128.0, target: 256.0 };
        assert_eq!(t.apply([100.0, 100.0]), [0.0, 0.0]);
        assert_eq!(t.apply([164.0, 164.0]), [128.0, 128.0]);
        assert_eq!(CropTransform::identity().apply([3.5, -2.0]), [3.5, -2.0]);
    }

    proptest! {
        #[test]
        fn crop_round_trip(
            u0 in -200.0..200.0f64,
            v0 in -200.0..200.0f64,
            size in 1.0..500.0f64,
            target in 8.0..512.0f64,
            pu in -300.0..300.0f64,
            pv in -300.0..300.0f64,
        ) {
            let t = CropTransform { u0, v0, size, target };
            let [ru, rv] = t.invert(t.apply([pu, pv]));
            prop_assert!((ru - pu).abs() < 1e-9);
            prop_assert!((rv - pv).abs() < 1e-9);
            let inv = t.inverse();
            let [su, sv] = inv.apply(t.apply([pu, pv]));
            prop_assert!((su - pu).abs() < 1e-9);
            prop_assert!((sv - pv).abs() < 1e-9);
        }

        #[test]
        fn crop_composition_matches_sequential_application(
            a0 in -100.0..100.0f64,
            asize in 1.0..300.0f64,
            atarget in 8.0..512.0f64,
            b0 in -100.0..100.0f64,
            bsize in 1.0..300.0f64,
            btarget in 8.0..512.0f64,
            pu in -300.0..300.0f64,
            pv in -300.0..300.0f64,
        ) {
            let a = CropTransform { u0: a0, v0: -a0, size: asize, target: atarget };
            let b = CropTransform { u0: b0, v0: 2.0 * b0, size: bsize, target: btarget };
            let composed = a.then(&b);
            let direct = b.apply(a.apply([pu, pv]));
            let via = composed.apply([pu, pv]);
            prop_assert!((direct[0] - via[0]).abs() < 1e-6);
            prop_assert!((direct[1] - via[1]).abs() < 1e-6);
        }
    }
}
