//! Building analysis snapshots: every per-image and per-cell artifact the
//! API serves, written to a temporary directory and renamed into place.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fakescope_core::analytics::{
    self, assign_grid, cell_statistics, dimension_distributions, global_ranges, CellId, DimensionDistribution, Scope,
};
use fakescope_core::contribution::{contribution_scores, ContributionExport};
use fakescope_core::dataset::{DatasetManifest, Label, Split};
use fakescope_core::detector::{distill, predict, DetectorModel, DistilledVector, Prediction};
use fakescope_core::encoder::projection::{ForgetProjection, Provenance};
use fakescope_core::encoder::{encode_visual_batch, AdapterSpec, BaseEncoder};
use fakescope_core::linalg::Matrix;
use fakescope_core::Error as CoreError;

use crate::error::{Result, ServiceError};

pub const META_FILE: &str = "meta.json";
pub const POINTS_FILE: &str = "points.jsonl";
pub const CELLS_FILE: &str = "cells.json";
pub const DIMENSIONS_FILE: &str = "dimensions.json";
pub const IMAGES_FILE: &str = "images.jsonl";
pub const CONTRIBUTIONS_FILE: &str = "contributions.jsonl";
pub const CHECKPOINT_FILE: &str = "detector.ckpt";
pub const PROJECTION_FILE: &str = "projection.bin";

/// Where the forget projection comes from: a saved artifact, or a seeded
/// random orthonormal matrix (`random:<seed>`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProjectionSource {
    File(PathBuf),
    Random(u64),
}

impl ProjectionSource {
    pub fn load(&self) -> Result<ForgetProjection> {
        Ok(match self {
            Self::File(p) => ForgetProjection::load(p)?,
            // Rounded to the stored precision so a reloaded snapshot sees
            // exactly the matrix the build used.
            Self::Random(seed) => {
                let m = ForgetProjection::random_orthonormal(*seed).matrix().clone();
                let data = m.data.iter().map(|&v| f64::from(v as f32)).collect();
                ForgetProjection::new(Matrix::from_vec(m.rows, m.cols, data), Provenance::Loaded)?
            }
        })
    }
}

impl fmt::Display for ProjectionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::File(p) => write!(f, "{}", p.display()),
            Self::Random(seed) => write!(f, "random:{seed}"),
        }
    }
}

impl FromStr for ProjectionSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.strip_prefix("random:") {
            Some(seed) => seed
                .parse()
                .map(Self::Random)
                .map_err(|_| format!("`{s}`: expected random:<integer seed>")),
            None => Ok(Self::File(PathBuf::from(s))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub grid: usize,
    pub seed: u64,
    /// Defaults to a fresh random id.
    pub snapshot_id: Option<String>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            grid: analytics::grid::DEFAULT_GRID,
            seed: 0,
            snapshot_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFailure {
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub snapshot_id: String,
    pub dataset: String,
    pub created_at: DateTime<Utc>,
    pub adapter: AdapterSpec,
    pub adapter_checksum: String,
    pub projection_source: String,
    pub checkpoint: String,
    pub grid: usize,
    pub seed: u64,
    pub image_count: usize,
    pub cell_count: usize,
    pub errors: Vec<ImageFailure>,
    /// SHA-256 of every artifact in the snapshot directory except this file.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub path: PathBuf,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub height: u32,
    pub width: u32,
    pub distilled: Vec<f64>,
    pub prediction: Prediction,
    pub cell: CellId,
    pub x: f64,
    pub y: f64,
}

impl ImageEntry {
    pub fn distilled_vector(&self) -> Result<DistilledVector> {
        Ok(DistilledVector::new(self.distilled.clone(), self.image_id.clone())?)
    }

    pub fn is_correct(&self) -> bool {
        self.prediction.label == self.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionsFile {
    /// Global per-dimension `(min, max)`; cell histograms reuse these edges.
    pub ranges: Vec<(f64, f64)>,
    pub global: Vec<DimensionDistribution>,
}

pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(dir: &Path, name: &str, bytes: &[u8], files: &mut BTreeMap<String, String>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| CoreError::io(&path, e))?;
    files.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| ServiceError::Internal(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| ServiceError::Internal(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// Encodes, predicts, projects, grids and summarizes `manifest`, writing a
/// snapshot directory `<store>/<snapshot_id>`. Images that fail to encode
/// are listed in the metadata and left out of every aggregate.
pub fn build_snapshot(
    store: &Path,
    manifest: &DatasetManifest,
    checkpoint: &Path,
    projection_source: &ProjectionSource,
    adapter_spec: &AdapterSpec,
    config: &BuildConfig,
) -> Result<SnapshotMeta> {
    let snapshot_id = config
        .snapshot_id
        .clone()
        .unwrap_or_else(|| format!("snap-{}", uuid::Uuid::new_v4().simple()));
    if !is_valid_id(&snapshot_id) {
        return Err(ServiceError::BadRequest(format!("invalid snapshot id `{snapshot_id}`")));
    }
    let final_dir = store.join(&snapshot_id);
    if final_dir.exists() {
        return Err(ServiceError::Conflict(format!(
            "snapshot `{snapshot_id}` already exists"
        )));
    }

    let checkpoint_bytes = fs::read(checkpoint).map_err(|e| CoreError::io(checkpoint, e))?;
    let detector = DetectorModel::from_bytes(&checkpoint_bytes)?;
    let projection = projection_source.load()?;
    let adapter = adapter_spec.build()?;
    let adapter_checksum = adapter.checksum();

    let encoded = encode_visual_batch(&manifest.records, &adapter, &projection);
    let mut errors = Vec::new();
    let mut kept = Vec::new();
    for (record, result) in manifest.records.iter().zip(encoded) {
        let outcome = result.and_then(|e| {
            let v = distill(&e, &detector)?;
            let p = predict(&v, &detector)?;
            Ok((v, p))
        });
        match outcome {
            Ok((v, p)) => kept.push((record, v, p)),
            Err(e) => errors.push(ImageFailure {
                image_id: record.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    if kept.len() < 2 {
        return Err(ServiceError::BadRequest(format!(
            "only {} of {} images encoded; a snapshot needs at least 2",
            kept.len(),
            manifest.records.len()
        )));
    }

    let vectors: Vec<DistilledVector> = kept.iter().map(|(_, v, _)| v.clone()).collect();
    let points = analytics::project_2d(&vectors, config.seed)?;
    let mut cells = assign_grid(&points, config.grid)?;
    let outcomes: HashMap<String, (Prediction, Label)> =
        kept.iter().map(|(r, _, p)| (r.id.clone(), (*p, r.label))).collect();
    for cell in &mut cells {
        cell_statistics(cell, &outcomes)?;
    }

    let ranges = global_ranges(&vectors);
    let samples: Vec<(&DistilledVector, Label)> = kept.iter().map(|(r, v, _)| (v, r.label)).collect();
    let dimensions = DimensionsFile {
        global: dimension_distributions(&samples, &ranges, Scope::Global),
        ranges,
    };

    let images: Vec<ImageEntry> = kept
        .iter()
        .zip(&points)
        .map(|((r, v, p), pt)| ImageEntry {
            image_id: r.id.clone(),
            path: r.path.clone(),
            label: r.label,
            split: r.split,
            height: r.height,
            width: r.width,
            distilled: v.values.clone(),
            prediction: *p,
            cell: analytics::grid::CellId::of(pt, config.grid),
            x: pt.x,
            y: pt.y,
        })
        .collect();
    let contributions = kept
        .iter()
        .map(|(_, v, p)| contribution_scores(v, &detector).map(|c| ContributionExport::new(&c, p)))
        .collect::<fakescope_core::Result<Vec<_>>>()?;

    fs::create_dir_all(store).map_err(|e| CoreError::io(store, e))?;
    let tmp = store.join(format!(".building-{snapshot_id}-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
    }
    fs::create_dir(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
    let result = (|| {
        let mut files = BTreeMap::new();
        write(&tmp, POINTS_FILE, &jsonl(&points)?, &mut files)?;
        write(&tmp, CELLS_FILE, &json_pretty(&cells)?, &mut files)?;
        write(&tmp, DIMENSIONS_FILE, &json_pretty(&dimensions)?, &mut files)?;
        write(&tmp, IMAGES_FILE, &jsonl(&images)?, &mut files)?;
        write(&tmp, CONTRIBUTIONS_FILE, &jsonl(&contributions)?, &mut files)?;
        write(&tmp, CHECKPOINT_FILE, &checkpoint_bytes, &mut files)?;
        let projection_path = tmp.join(PROJECTION_FILE);
        projection.save(&projection_path)?;
        let projection_bytes = fs::read(&projection_path).map_err(|e| CoreError::io(&projection_path, e))?;
        files.insert(PROJECTION_FILE.to_string(), sha256_hex(&projection_bytes));

        let meta = SnapshotMeta {
            snapshot_id: snapshot_id.clone(),
            dataset: manifest.name.clone(),
            created_at: Utc::now(),
            adapter: adapter_spec.clone(),
            adapter_checksum: adapter_checksum.clone(),
            projection_source: projection_source.to_string(),
            checkpoint: checkpoint.display().to_string(),
            grid: config.grid,
            seed: config.seed,
            image_count: images.len(),
            cell_count: cells.len(),
            errors,
            files,
        };
        let meta_bytes = json_pretty(&meta)?;
        let meta_path = tmp.join(META_FILE);
        fs::write(&meta_path, meta_bytes).map_err(|e| CoreError::io(&meta_path, e))?;
        fs::rename(&tmp, &final_dir).map_err(|e| CoreError::io(&final_dir, e))?;
        Ok(meta)
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

/// Re-hashes every listed artifact and compares against the metadata.
pub fn verify_checksums(dir: &Path, meta: &SnapshotMeta) -> Result<()> {
    for (name, expected) in &meta.files {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
        if &sha256_hex(&bytes) != expected {
            return Err(ServiceError::Internal(format!(
                "checksum mismatch for {}",
                path.display()
            )));
        }
    }
    Ok(())
}
