//! Builders for the four network architectures and the two-stream pose
//! prior predictor.
//!
//! Each builder reproduces its architecture table row for row at
//! `width_scale = 1`; the width knob scales internal channel counts and
//! fully-connected widths (minimum 8) for desk-scale training while leaving
//! spatial sizes and interface dimensions (score-map count, class counts,
//! output parameter counts) untouched. Builders also return a row map from
//! table row labels to engine layer indices so shape audits can compare the
//! propagated shapes against the published dimensionalities.

use crate::geometry::{
    axis_angle_to_matrix, from_canonical, AxisAngle, GeometryError, Handedness, RelativePose,
    Vec3, NUM_KEYPOINTS,
};
use crate::nn::{LayerRef, LayerSpec, Mode, Network, NetworkSpec, NnError, Tensor};

/// Score maps are predicted and consumed at this resolution.
pub const SCOREMAP_SIZE: usize = 32;

/// Output length of the canonical-coordinate stream (21 keypoints x 3).
pub const COORD_OUTPUT: usize = NUM_KEYPOINTS * 3;

/// Output length of the viewpoint stream (axis-angle).
pub const VIEWPOINT_OUTPUT: usize = 3;

/// Gesture classifier output classes.
pub const GESTURE_CLASSES: usize = 35;

/// One-hot hand-side flag `(left, right)`.
pub fn hand_side_flag(handedness: Handedness) -> [f32; 2] {
    match handedness {
        Handedness::Left => [1.0, 0.0],
        Handedness::Right => [0.0, 1.0],
    }
}

/// A network spec plus the mapping from architecture-table row labels to
/// engine layer indices (several engine layers can make up one table row).
#[derive(Debug, Clone)]
pub struct BuiltArch {
    pub spec: NetworkSpec,
    pub rows: Vec<(String, usize)>,
}

impl BuiltArch {
    /// Propagated output shape for each table row, in order.
    pub fn row_shapes(&self) -> Result<Vec<(String, Vec<usize>)>, NnError> {
        let shapes = self.spec.layer_shapes()?;
        Ok(self.rows.iter().map(|(label, ix)| (label.clone(), shapes[*ix].clone())).collect())
    }
}

fn scaled(channels: usize, width_scale: f64) -> usize {
    ((channels as f64 * width_scale).round() as usize).max(8)
}

struct SpecBuilder {
    layers: Vec<LayerSpec>,
    rows: Vec<(String, usize)>,
}

impl SpecBuilder {
    fn new() -> Self {
        SpecBuilder { layers: Vec::new(), rows: Vec::new() }
    }

    fn last(&self) -> usize {
        self.layers.len() - 1
    }

    fn row(&mut self, label: impl Into<String>) {
        self.rows.push((label.into(), self.last()));
    }

    fn conv(&mut self, label: &str, out_channels: usize, kernel: usize, stride: usize) {
        let padding = kernel / 2;
        self.layers.push(LayerSpec::Conv { out_channels, kernel, stride, padding });
        self.row(label);
    }

    fn conv_relu(&mut self, label: &str, out_channels: usize, kernel: usize, stride: usize) {
        let padding = kernel / 2;
        self.layers.push(LayerSpec::Conv { out_channels, kernel, stride, padding });
        self.layers.push(LayerSpec::Relu);
        self.row(label);
    }

    fn maxpool(&mut self, label: &str) {
        self.layers.push(LayerSpec::MaxPool { kernel: 4, stride: 2, padding: 1 });
        self.row(label);
    }

    fn concat(&mut self, label: &str, sources: Vec<LayerRef>) {
        self.layers.push(LayerSpec::Concat { sources });
        self.row(label);
    }

    fn upsample(&mut self, label: &str, target: usize) {
        self.layers
            .push(LayerSpec::BilinearUpsample { target_height: target, target_width: target });
        self.row(label);
    }

    fn reshape_concat_aux(&mut self, label: &str) {
        self.layers.push(LayerSpec::Reshape);
        let reshaped = self.last();
        self.layers
            .push(LayerSpec::Concat { sources: vec![LayerRef::Layer(reshaped), LayerRef::Aux] });
        self.row(label);
    }

    fn fc_relu_dropout(&mut self, label: &str, out_features: usize, probability: f64) {
        self.layers.push(LayerSpec::FullyConnected { out_features });
        self.layers.push(LayerSpec::Relu);
        self.layers.push(LayerSpec::Dropout { probability });
        self.row(label);
    }

    fn fc(&mut self, label: &str, out_features: usize) {
        self.layers.push(LayerSpec::FullyConnected { out_features });
        self.row(label);
    }
}

/// Hand segmentation network: a VGG-style encoder ending in a two-class
/// score map that is bilinearly upsampled back to the input resolution.
pub fn build_handsegnet(width_scale: f64) -> BuiltArch {
    assert!(width_scale > 0.0 && width_scale <= 1.0);
    let w = |c| scaled(c, width_scale);
    let mut b = SpecBuilder::new();
    b.conv_relu("1", w(64), 3, 1);
    b.conv_relu("2", w(64), 3, 1);
    b.maxpool("3");
    b.conv_relu("4", w(128), 3, 1);
    b.conv_relu("5", w(128), 3, 1);
    b.maxpool("6");
    for row in 7..=10 {
        b.conv_relu(&row.to_string(), w(256), 3, 1);
    }
    b.maxpool("11");
    for row in 12..=16 {
        b.conv_relu(&row.to_string(), w(512), 3, 1);
    }
    // Two-class segmentation head; class count does not scale.
    b.conv("17", 2, 1, 1);
    b.upsample("18", 256);
    let taps = vec![b.last()];
    BuiltArch {
        spec: NetworkSpec {
            name: "handsegnet".into(),
            input_shape: vec![256, 256, 3],
            aux_len: 0,
            layers: b.layers,
            taps,
        },
        rows: b.rows,
    }
}

/// 2D keypoint network: an encoder predicting 21 score maps, refined twice
/// by stages that re-read the encoder features and earlier predictions.
pub fn build_posenet(width_scale: f64) -> BuiltArch {
    assert!(width_scale > 0.0 && width_scale <= 1.0);
    let w = |c| scaled(c, width_scale);
    let mut b = SpecBuilder::new();
    b.conv_relu("1", w(64), 3, 1);
    b.conv_relu("2", w(64), 3, 1);
    b.maxpool("3");
    b.conv_relu("4", w(128), 3, 1);
    b.conv_relu("5", w(128), 3, 1);
    b.maxpool("6");
    for row in 7..=10 {
        b.conv_relu(&row.to_string(), w(256), 3, 1);
    }
    b.maxpool("11");
    for row in 12..=16 {
        b.conv_relu(&row.to_string(), w(512), 3, 1);
    }
    let features = b.last();
    b.conv("17", NUM_KEYPOINTS, 1, 1);
    let map1 = b.last();
    b.concat("18", vec![LayerRef::Layer(features), LayerRef::Layer(map1)]);
    for row in 19..=23 {
        b.conv_relu(&row.to_string(), w(128), 7, 1);
    }
    b.conv("24", NUM_KEYPOINTS, 1, 1);
    let map2 = b.last();
    b.concat(
        "25",
        vec![LayerRef::Layer(features), LayerRef::Layer(map1), LayerRef::Layer(map2)],
    );
    for row in 26..=30 {
        b.conv_relu(&row.to_string(), w(128), 7, 1);
    }
    b.conv("31", NUM_KEYPOINTS, 1, 1);
    let map3 = b.last();
    BuiltArch {
        spec: NetworkSpec {
            name: "posenet".into(),
            input_shape: vec![256, 256, 3],
            aux_len: 0,
            layers: b.layers,
            taps: vec![map1, map2, map3],
        },
        rows: b.rows,
    }
}

/// One stream of the pose prior: six convolutions (spatial reduction by
/// stride), the hand-side flag concatenated onto the flattened features,
/// two hidden fully-connected layers with dropout, and a linear output of
/// `output_dim` parameters (3 for viewpoint, 63 for canonical coordinates).
pub fn build_poseprior_stream(output_dim: usize, width_scale: f64) -> BuiltArch {
    assert!(width_scale > 0.0 && width_scale <= 1.0);
    assert!(
        output_dim == VIEWPOINT_OUTPUT || output_dim == COORD_OUTPUT,
        "stream output must be 3 or 63"
    );
    let w = |c| scaled(c, width_scale);
    let mut b = SpecBuilder::new();
    b.conv_relu("1", w(32), 3, 1);
    b.conv_relu("2", w(32), 3, 2);
    b.conv_relu("3", w(64), 3, 1);
    b.conv_relu("4", w(64), 3, 2);
    b.conv_relu("5", w(128), 3, 1);
    b.conv_relu("6", w(128), 3, 2);
    b.reshape_concat_aux("7");
    b.fc_relu_dropout("8", w(512), 0.2);
    b.fc_relu_dropout("9", w(512), 0.2);
    b.fc("10", output_dim);
    let taps = vec![b.last()];
    BuiltArch {
        spec: NetworkSpec {
            name: format!("poseprior-stream-p{output_dim}"),
            input_shape: vec![SCOREMAP_SIZE, SCOREMAP_SIZE, NUM_KEYPOINTS],
            aux_len: 2,
            layers: b.layers,
            taps,
        },
        rows: b.rows,
    }
}

/// Single-stream variant regressing relative coordinates directly, used as
/// the ablation baseline against the canonical two-stream model.
pub fn build_direct_regressor(width_scale: f64) -> BuiltArch {
    let mut arch = build_poseprior_stream(COORD_OUTPUT, width_scale);
    arch.spec.name = "poseprior-direct".into();
    arch
}

/// Gesture classifier over flattened relative coordinates.
pub fn build_gesturenet() -> BuiltArch {
    let mut b = SpecBuilder::new();
    b.fc_relu_dropout("1", 512, 0.2);
    b.fc_relu_dropout("2", 512, 0.2);
    b.fc("3", GESTURE_CLASSES);
    let taps = vec![b.last()];
    BuiltArch {
        spec: NetworkSpec {
            name: "gesturenet".into(),
            input_shape: vec![COORD_OUTPUT],
            aux_len: 0,
            layers: b.layers,
            taps,
        },
        rows: b.rows,
    }
}

/// Output of the two-stream predictor.
#[derive(Debug, Clone)]
pub struct PosePriorOutput {
    pub canonical_coords: [Vec3; NUM_KEYPOINTS],
    pub viewpoint: AxisAngle,
    pub recombined: RelativePose,
}

/// The two pose prior streams.
#[derive(Debug, Clone)]
pub struct PosePriorModel {
    pub coord: Network<f32>,
    pub view: Network<f32>,
}

impl PosePriorModel {
    pub fn init(width_scale: f64, seed: u64) -> Result<Self, NnError> {
        Ok(PosePriorModel {
            coord: Network::init(
                build_poseprior_stream(COORD_OUTPUT, width_scale).spec,
                crate::rng::mix(seed, 0xc00d),
            )?,
            view: Network::init(
                build_poseprior_stream(VIEWPOINT_OUTPUT, width_scale).spec,
                crate::rng::mix(seed, 0x71e4),
            )?,
        })
    }
}

/// Interpret a 63-vector as 21 canonical keypoints.
pub fn coords_from_flat(flat: &[f32]) -> [Vec3; NUM_KEYPOINTS] {
    let mut out = [Vec3::ZERO; NUM_KEYPOINTS];
    for (i, p) in out.iter_mut().enumerate() {
        *p = Vec3::new(flat[3 * i] as f64, flat[3 * i + 1] as f64, flat[3 * i + 2] as f64);
    }
    out
}

/// Combine the two stream estimates into relative normalized coordinates:
/// invert the canonical rotation (and the right-hand flip).
pub fn recombine(
    canonical_coords: &[Vec3; NUM_KEYPOINTS],
    viewpoint: &AxisAngle,
    handedness: Handedness,
) -> Result<RelativePose, GeometryError> {
    let rotation = axis_angle_to_matrix(viewpoint);
    from_canonical(canonical_coords, &rotation, handedness)
}

/// Run both streams on a score-map stack and recombine.
pub fn poseprior_predict(
    model: &PosePriorModel,
    scoremaps: &Tensor<f32>,
    handedness: Handedness,
) -> Result<PosePriorOutput, NnError> {
    let side = hand_side_flag(handedness);
    let coord_pass = model.coord.forward(scoremaps.clone(), Some(&side), Mode::Eval)?;
    let view_pass = model.view.forward(scoremaps.clone(), Some(&side), Mode::Eval)?;
    let canonical_coords = coords_from_flat(coord_pass.tap(&model.coord.spec).data());
    let v = view_pass.tap(&model.view.spec).data();
    let viewpoint = AxisAngle::new(v[0] as f64, v[1] as f64, v[2] as f64);
    let recombined = recombine(&canonical_coords, &viewpoint, handedness)
        .expect("axis-angle conversion always yields a rotation");
    Ok(PosePriorOutput { canonical_coords, viewpoint, recombined })
}

/// A trained (or trainable) lifting model: either the canonical two-stream
/// pose prior or the direct relative-coordinate regressor used as its
/// ablation baseline.
#[derive(Debug, Clone)]
pub enum LiftingModel {
    Canonical(PosePriorModel),
    Direct(Network<f32>),
}

impl LiftingModel {
    pub fn arch_name(&self) -> &'static str {
        match self {
            LiftingModel::Canonical(_) => "poseprior",
            LiftingModel::Direct(_) => "poseprior-direct",
        }
    }

    pub fn init(arch: &str, width_scale: f64, seed: u64) -> Result<Self, NnError> {
        match arch {
            "poseprior" => Ok(LiftingModel::Canonical(PosePriorModel::init(width_scale, seed)?)),
            "poseprior-direct" => Ok(LiftingModel::Direct(Network::init(
                build_direct_regressor(width_scale).spec,
                crate::rng::mix(seed, 0xd12ec7),
            )?)),
            other => Err(NnError::InvalidSpec(format!("unknown lifting architecture {other:?}"))),
        }
    }

    /// Checkpoint name prefixes, one per stream, matching [`Self::streams`].
    pub fn stream_prefixes(&self) -> &'static [&'static str] {
        match self {
            LiftingModel::Canonical(_) => &["coord", "view"],
            LiftingModel::Direct(_) => &["net"],
        }
    }

    pub fn streams(&self) -> Vec<&Network<f32>> {
        match self {
            LiftingModel::Canonical(m) => vec![&m.coord, &m.view],
            LiftingModel::Direct(n) => vec![n],
        }
    }

    pub fn streams_mut(&mut self) -> Vec<&mut Network<f32>> {
        match self {
            LiftingModel::Canonical(m) => vec![&mut m.coord, &mut m.view],
            LiftingModel::Direct(n) => vec![n],
        }
    }

    /// Predict relative normalized coordinates for one sample.
    pub fn predict_wrel(
        &self,
        scoremaps: &Tensor<f32>,
        handedness: Handedness,
    ) -> Result<[Vec3; NUM_KEYPOINTS], NnError> {
        match self {
            LiftingModel::Canonical(m) => {
                Ok(poseprior_predict(m, scoremaps, handedness)?.recombined.w_rel)
            }
            LiftingModel::Direct(net) => {
                let side = hand_side_flag(handedness);
                let pass = net.forward(scoremaps.clone(), Some(&side), Mode::Eval)?;
                Ok(coords_from_flat(pass.tap(&net.spec).data()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normalize_scale, to_canonical, to_relative};
    use crate::skeleton::{generate_sample, GenOptions, HandModelConfig};

    #[test]
    fn handsegnet_head_and_upsample_shapes() {
        let arch = build_handsegnet(1.0);
        let rows = arch.row_shapes().unwrap();
        let get = |label: &str| rows.iter().find(|(l, _)| l == label).unwrap().1.clone();
        assert_eq!(get("17"), vec![32, 32, 2]);
        assert_eq!(get("18"), vec![256, 256, 2]);
    }

    #[test]
    fn handsegnet_width_scaling_quarters_internal_channels() {
        let full = build_handsegnet(1.0);
        let quarter = build_handsegnet(0.25);
        let full_shapes = full.row_shapes().unwrap();
        let quarter_shapes = quarter.row_shapes().unwrap();
        for ((label, fs), (_, qs)) in full_shapes.iter().zip(&quarter_shapes) {
            assert_eq!(fs[..fs.len() - 1], qs[..qs.len() - 1], "spatial change in row {label}");
            let (fc, qc) = (fs[fs.len() - 1], qs[qs.len() - 1]);
            if label == "17" || label == "18" {
                assert_eq!(qc, 2);
            } else {
                assert_eq!(qc, (fc / 4).max(8), "row {label}");
            }
        }
    }

    #[test]
    fn posenet_concat_channel_arithmetic() {
        let arch = build_posenet(1.0);
        let rows = arch.row_shapes().unwrap();
        let get = |label: &str| rows.iter().find(|(l, _)| l == label).unwrap().1.clone();
        assert_eq!(get("18"), vec![32, 32, 533]);
        assert_eq!(get("25"), vec![32, 32, 554]);
        for tap in ["17", "24", "31"] {
            assert_eq!(get(tap), vec![32, 32, 21]);
        }
        assert_eq!(arch.spec.taps.len(), 3);
    }

    #[test]
    fn poseprior_stream_shapes_and_flatten_arithmetic() {
        for output_dim in [VIEWPOINT_OUTPUT, COORD_OUTPUT] {
            let arch = build_poseprior_stream(output_dim, 1.0);
            let rows = arch.row_shapes().unwrap();
            let get = |label: &str| rows.iter().find(|(l, _)| l == label).unwrap().1.clone();
            assert_eq!(get("1"), vec![32, 32, 32]);
            assert_eq!(get("2"), vec![16, 16, 32]);
            assert_eq!(get("3"), vec![16, 16, 64]);
            assert_eq!(get("4"), vec![8, 8, 64]);
            assert_eq!(get("5"), vec![8, 8, 128]);
            assert_eq!(get("6"), vec![4, 4, 128]);
            // Flattened conv features plus the two-entry side flag.
            assert_eq!(get("7"), vec![4 * 4 * 128 + 2]);
            assert_eq!(get("8"), vec![512]);
            assert_eq!(get("9"), vec![512]);
            assert_eq!(get("10"), vec![output_dim]);
        }
    }

    #[test]
    fn gesturenet_is_63_to_35() {
        let arch = build_gesturenet();
        assert_eq!(arch.spec.input_shape, vec![63]);
        let rows = arch.row_shapes().unwrap();
        assert_eq!(rows.last().unwrap().1, vec![35]);
        let dropouts: Vec<f64> = arch
            .spec
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dropout { probability } => Some(*probability),
                _ => None,
            })
            .collect();
        assert_eq!(dropouts, vec![0.2, 0.2]);
    }

    #[test]
    fn builders_are_pure() {
        assert_eq!(build_posenet(0.5).spec, build_posenet(0.5).spec);
        assert_eq!(build_gesturenet().spec, build_gesturenet().spec);
    }

    #[test]
    fn zero_network_predicts_zero_pose() {
        let model = PosePriorModel {
            coord: Network::zeros(build_poseprior_stream(COORD_OUTPUT, 0.25).spec).unwrap(),
            view: Network::zeros(build_poseprior_stream(VIEWPOINT_OUTPUT, 0.25).spec).unwrap(),
        };
        let maps = Tensor::zeros(&[32, 32, 21]);
        let out = poseprior_predict(&model, &maps, Handedness::Right).unwrap();
        assert_eq!(out.viewpoint.angle(), 0.0);
        for p in &out.recombined.w_rel {
            assert_eq!(p.norm(), 0.0);
        }
    }

    #[test]
    fn ground_truth_injection_recombines_to_relative_pose() {
        // Geometry round-trip oracle through the prediction path: feeding
        // the true canonical coordinates and viewpoint must reproduce the
        // true relative pose.
        let config = HandModelConfig::default();
        for i in 0..50 {
            let rec = generate_sample(&config, 17, i, &GenOptions::default()).unwrap();
            let pose = rec.hand_pose();
            let rel = to_relative(&normalize_scale(&pose).unwrap());
            let (w_c, rot) = to_canonical(&rel, pose.handedness).unwrap();
            let aa = crate::geometry::matrix_to_axis_angle(&rot).unwrap();
            let out = recombine(&w_c, &aa, pose.handedness).unwrap();
            for k in 0..NUM_KEYPOINTS {
                let err = (out.w_rel[k] - rel.w_rel[k]).norm();
                assert!(err < 1e-6, "keypoint {k} error {err}");
            }
        }
    }
}
