//! On-disk formats: dataset files, checkpoints and JSON configs.
//!
//! Dataset files are line-delimited JSON: a header object on the first line
//! carrying the format name and version, then one self-describing record per
//! line. Checkpoints are a JSON manifest next to a raw blob of little-endian
//! 32-bit floats; the manifest maps parameter names to shapes and byte
//! ranges so the blob is parseable from any language. All writes go through
//! a temp-file-plus-rename so readers never observe partial files.

use crate::geometry::{Handedness, Vec3, NUM_KEYPOINTS};
use crate::skeleton::{Intrinsics, SampleRecord};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Major version of the dataset file format.
pub const DATASET_VERSION: u32 = 1;

/// Major version of the checkpoint format.
pub const CHECKPOINT_VERSION: u32 = 1;

const DATASET_FORMAT_NAME: &str = "handlift-dataset";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: missing header line")]
    MissingHeader { path: PathBuf },
    #[error("{path}: expected format {expected:?}, found {found:?}")]
    WrongFormat { path: PathBuf, expected: String, found: String },
    #[error("{path}: unsupported major version {found} (reader supports {supported})")]
    UnsupportedVersion { path: PathBuf, found: u32, supported: u32 },
    #[error("record {id}: {reason}")]
    InvalidRecord { id: u64, reason: String },
    #[error("checkpoint blob {path}: {reason}")]
    InvalidBlob { path: PathBuf, reason: String },
}

/// Write `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Serialize a value as pretty JSON and write it atomically.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Read a JSON value from a file.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    count: u64,
}

/// One dataset line. Keypoint arrays are keypoint-major:
/// `kp3d = [x0, y0, z0, x1, ...]` in camera-frame millimeters and
/// `kp2d = [u0, v0, u1, ...]` in pixels.
#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: u64,
    pub handedness: Handedness,
    /// `[fx, fy, cx, cy]` in pixels.
    pub intrinsics: [f64; 4],
    /// `[width, height]` in pixels.
    pub image_size: [u32; 2],
    pub kp3d: Vec<f64>,
    pub kp2d: Vec<f64>,
    pub vis: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u16>,
}

impl DatasetRecord {
    pub fn from_sample(rec: &SampleRecord) -> Self {
        let mut kp3d = Vec::with_capacity(NUM_KEYPOINTS * 3);
        let mut kp2d = Vec::with_capacity(NUM_KEYPOINTS * 2);
        for p in &rec.keypoints_3d {
            kp3d.extend_from_slice(&[p.x, p.y, p.z]);
        }
        for p in &rec.keypoints_2d {
            kp2d.extend_from_slice(p);
        }
        DatasetRecord {
            id: rec.id,
            handedness: rec.handedness,
            intrinsics: [rec.intrinsics.fx, rec.intrinsics.fy, rec.intrinsics.cx, rec.intrinsics.cy],
            image_size: [rec.intrinsics.width, rec.intrinsics.height],
            kp3d,
            kp2d,
            vis: rec.visibility.to_vec(),
            label: rec.label,
        }
    }

    pub fn into_sample(self) -> Result<SampleRecord, FormatError> {
        self.validate()?;
        let mut keypoints_3d = [Vec3::ZERO; NUM_KEYPOINTS];
        let mut keypoints_2d = [[0.0; 2]; NUM_KEYPOINTS];
        let mut visibility = [false; NUM_KEYPOINTS];
        for i in 0..NUM_KEYPOINTS {
            keypoints_3d[i] = Vec3::new(self.kp3d[3 * i], self.kp3d[3 * i + 1], self.kp3d[3 * i + 2]);
            keypoints_2d[i] = [self.kp2d[2 * i], self.kp2d[2 * i + 1]];
            visibility[i] = self.vis[i];
        }
        Ok(SampleRecord {
            id: self.id,
            handedness: self.handedness,
            intrinsics: Intrinsics {
                fx: self.intrinsics[0],
                fy: self.intrinsics[1],
                cx: self.intrinsics[2],
                cy: self.intrinsics[3],
                width: self.image_size[0],
                height: self.image_size[1],
            },
            keypoints_3d,
            keypoints_2d,
            visibility,
            label: self.label,
        })
    }

    /// Check array lengths and that the stored 2D keypoints reproject from
    /// the stored 3D keypoints.
    pub fn validate(&self) -> Result<(), FormatError> {
        let fail = |reason: String| FormatError::InvalidRecord { id: self.id, reason };
        if self.kp3d.len() != NUM_KEYPOINTS * 3 {
            return Err(fail(format!("kp3d has {} values, expected 63", self.kp3d.len())));
        }
        if self.kp2d.len() != NUM_KEYPOINTS * 2 {
            return Err(fail(format!("kp2d has {} values, expected 42", self.kp2d.len())));
        }
        if self.vis.len() != NUM_KEYPOINTS {
            return Err(fail(format!("vis has {} values, expected 21", self.vis.len())));
        }
        if self.intrinsics[0] <= 0.0 || self.intrinsics[1] <= 0.0 {
            return Err(fail("focal lengths must be positive".into()));
        }
        let [fx, fy, cx, cy] = self.intrinsics;
        for i in 0..NUM_KEYPOINTS {
            let (x, y, z) = (self.kp3d[3 * i], self.kp3d[3 * i + 1], self.kp3d[3 * i + 2]);
            if z <= 1e-6 {
                return Err(fail(format!("keypoint {i} behind camera (z = {z})")));
            }
            let u = fx * x / z + cx;
            let v = fy * y / z + cy;
            if (u - self.kp2d[2 * i]).abs() > 1e-6 || (v - self.kp2d[2 * i + 1]).abs() > 1e-6 {
                return Err(fail(format!("keypoint {i} reprojection mismatch")));
            }
        }
        Ok(())
    }
}

/// Write a dataset file: header line then one record per line.
pub fn write_dataset(path: &Path, records: &[SampleRecord]) -> Result<(), FormatError> {
    let header = DatasetHeader {
        format: DATASET_FORMAT_NAME.to_string(),
        version: DATASET_VERSION,
        count: records.len() as u64,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for rec in records {
        out.push_str(&serde_json::to_string(&DatasetRecord::from_sample(rec))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

/// Read and validate a dataset file.
pub fn read_dataset(path: &Path) -> Result<Vec<SampleRecord>, FormatError> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| FormatError::MissingHeader { path: path.to_path_buf() })??;
    let header: DatasetHeader = serde_json::from_str(&header_line)?;
    if header.format != DATASET_FORMAT_NAME {
        return Err(FormatError::WrongFormat {
            path: path.to_path_buf(),
            expected: DATASET_FORMAT_NAME.into(),
            found: header.format,
        });
    }
    if header.version != DATASET_VERSION {
        return Err(FormatError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: header.version,
            supported: DATASET_VERSION,
        });
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)?;
        records.push(record.into_sample()?);
    }
    Ok(records)
}

/// Byte range of one named parameter inside the checkpoint blob.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Byte length (4 bytes per element).
    pub len: u64,
}

/// Checkpoint manifest: everything needed to rebuild a model and resume
/// training, short of the parameter values themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub arch: String,
    pub width_scale: f64,
    pub seed: u64,
    pub iteration: u64,
    /// Training configuration snapshot (the original run configuration;
    /// resuming does not alter it).
    pub config: serde_json::Value,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub params: Vec<ParamEntry>,
}

/// Named f32 tensors, ordered. A `BTreeMap` keeps serialization order stable.
pub type TensorMap = BTreeMap<String, (Vec<usize>, Vec<f32>)>;

/// Write a checkpoint: manifest at `path`, blob next to it.
pub fn save_checkpoint(
    path: &Path,
    arch: &str,
    width_scale: f64,
    seed: u64,
    iteration: u64,
    config: serde_json::Value,
    tensors: &TensorMap,
) -> Result<(), FormatError> {
    let blob_name = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".bin");
        name.to_string_lossy().into_owned()
    };
    let blob_path = path.with_file_name(&blob_name);

    let mut params = Vec::with_capacity(tensors.len());
    let mut blob: Vec<u8> = Vec::new();
    for (name, (shape, data)) in tensors {
        let expected: usize = shape.iter().product();
        debug_assert_eq!(expected, data.len(), "shape/data mismatch for {name}");
        let offset = blob.len() as u64;
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        params.push(ParamEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
            len: (data.len() * 4) as u64,
        });
    }

    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        arch: arch.to_string(),
        width_scale,
        seed,
        iteration,
        config,
        blob: blob_name,
        params,
    };

    write_atomic(&blob_path, &blob)?;
    write_json_atomic(path, &manifest)?;
    Ok(())
}

/// Load a checkpoint manifest plus all parameter tensors.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointManifest, TensorMap), FormatError> {
    let manifest: CheckpointManifest = read_json(path)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: manifest.format_version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let blob_path = path.with_file_name(&manifest.blob);
    let blob = fs::read(&blob_path)?;

    // Offsets must tile the blob without overlap.
    let mut spans: Vec<(u64, u64)> = manifest.params.iter().map(|p| (p.offset, p.len)).collect();
    spans.sort_unstable();
    let mut cursor = 0u64;
    for &(offset, len) in &spans {
        if offset < cursor {
            return Err(FormatError::InvalidBlob {
                path: blob_path.clone(),
                reason: format!("overlapping parameter range at offset {offset}"),
            });
        }
        cursor = offset + len;
    }
    if cursor != blob.len() as u64 {
        return Err(FormatError::InvalidBlob {
            path: blob_path.clone(),
            reason: format!("parameter table covers {cursor} bytes, blob has {}", blob.len()),
        });
    }

    let mut tensors = TensorMap::new();
    for entry in &manifest.params {
        let start = entry.offset as usize;
        let end = start + entry.len as usize;
        if entry.len % 4 != 0 || end > blob.len() {
            return Err(FormatError::InvalidBlob {
                path: blob_path.clone(),
                reason: format!("bad range for parameter {}", entry.name),
            });
        }
        let count = (entry.len / 4) as usize;
        let expected: usize = entry.shape.iter().product();
        if expected != count {
            return Err(FormatError::InvalidBlob {
                path: blob_path.clone(),
                reason: format!(
                    "parameter {} shape {:?} does not match {count} stored values",
                    entry.name, entry.shape
                ),
            });
        }
        let mut data = Vec::with_capacity(count);
        for chunk in blob[start..end].chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
        }
        tensors.insert(entry.name.clone(), (entry.shape.clone(), data));
    }
    Ok((manifest, tensors))
}
