//! Snapshot store: lists snapshot directories, loads them on first use and
//! fills relevance and concept caches lazily.
//!
//! Layout under the store root:
//!
//! ```text
//! <root>/<snapshot_id>/...            immutable snapshot artifacts
//! <root>/.cache/<snapshot_id>/...     relevance stacks and concept clusters
//! <root>/.annotations/<snapshot_id>.jsonl
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use fakescope_core::analytics::segments::{DEFAULT_IOU_MAX, DEFAULT_TAU};
use fakescope_core::analytics::{
    cluster_concepts, extract_segments, isomatch_layout, segment_features, CellId, CellLayout, ConceptClustering,
    GridCell, ProjectedPoint,
};
use fakescope_core::contribution::{contribution_scores, ContributionVector};
use fakescope_core::dataset::{load_pixels_with, ImageRecord};
use fakescope_core::detector::DetectorModel;
use fakescope_core::encoder::projection::ForgetProjection;
use fakescope_core::encoder::{BaseEncoder, VitEncoder};
use fakescope_core::relevance::{self, RelevanceMode, RelevanceStack};
use fakescope_core::Error as CoreError;

use crate::annotations::AnnotationStore;
use crate::error::{Result, ServiceError};
use crate::snapshot::{
    is_valid_id, DimensionsFile, ImageEntry, SnapshotMeta, CELLS_FILE, CHECKPOINT_FILE, DIMENSIONS_FILE, IMAGES_FILE,
    META_FILE, POINTS_FILE, PROJECTION_FILE,
};

const CACHE_DIR: &str = ".cache";
const ANNOTATION_DIR: &str = ".annotations";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub snapshot_id: String,
    pub dataset: String,
    pub created_at: chrono::DateTime<chrono::Utc>,
    pub image_count: usize,
    pub cell_count: usize,
}

/// A computation that runs at most once; concurrent callers wait for the
/// first one and share its result.
type Slot<T> = Arc<OnceLock<std::result::Result<Arc<T>, String>>>;

pub struct Snapshot {
    pub dir: PathBuf,
    pub meta: SnapshotMeta,
    pub images: Vec<ImageEntry>,
    image_index: HashMap<String, usize>,
    pub cells: Vec<GridCell>,
    cell_index: HashMap<CellId, usize>,
    pub dimensions: DimensionsFile,
    /// Parallel to `images`.
    pub contributions: Vec<ContributionVector>,
    pub detector: DetectorModel,
    pub projection: ForgetProjection,
    /// Raw `cells.json`, served verbatim.
    pub cells_bytes: Vec<u8>,
    cache_dir: PathBuf,
    adapter: OnceLock<std::result::Result<Arc<VitEncoder>, String>>,
    relevance: Mutex<HashMap<String, Slot<RelevanceStack>>>,
    concepts: Mutex<HashMap<CellId, Slot<ConceptClustering>>>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    Ok(fs::read(path).map_err(|e| CoreError::io(path, e))?)
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<T> {
    Ok(serde_json::from_slice(bytes).map_err(|e| CoreError::json(path, e))?)
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = String::from_utf8(read(path)?).map_err(|e| ServiceError::Internal(e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_json(path, l.as_bytes()))
        .collect()
}

impl Snapshot {
    pub fn load(dir: &Path, cache_dir: PathBuf) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta: SnapshotMeta = parse_json(&meta_path, &read(&meta_path)?)?;
        let images: Vec<ImageEntry> = parse_jsonl(&dir.join(IMAGES_FILE))?;
        let cells_path = dir.join(CELLS_FILE);
        let cells_bytes = read(&cells_path)?;
        let cells: Vec<GridCell> = parse_json(&cells_path, &cells_bytes)?;
        let dims_path = dir.join(DIMENSIONS_FILE);
        let dimensions: DimensionsFile = parse_json(&dims_path, &read(&dims_path)?)?;
        let detector = DetectorModel::load(&dir.join(CHECKPOINT_FILE))?;
        let projection = ForgetProjection::load(&dir.join(PROJECTION_FILE))?;
        let contributions = images
            .iter()
            .map(|img| contribution_scores(&img.distilled_vector()?, &detector).map_err(ServiceError::from))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            image_index: images
                .iter()
                .enumerate()
                .map(|(i, e)| (e.image_id.clone(), i))
                .collect(),
            cell_index: cells.iter().enumerate().map(|(i, c)| (c.cell_id, i)).collect(),
            meta,
            images,
            cells,
            dimensions,
            contributions,
            detector,
            projection,
            cells_bytes,
            cache_dir,
            adapter: OnceLock::new(),
            relevance: Mutex::new(HashMap::new()),
            concepts: Mutex::new(HashMap::new()),
        })
    }

    pub fn id(&self) -> &str {
        &self.meta.snapshot_id
    }

    pub fn summary(&self) -> SnapshotSummary {
        SnapshotSummary {
            snapshot_id: self.meta.snapshot_id.clone(),
            dataset: self.meta.dataset.clone(),
            created_at: self.meta.created_at,
            image_count: self.meta.image_count,
            cell_count: self.meta.cell_count,
        }
    }

    pub fn image(&self, id: &str) -> Result<(&ImageEntry, &ContributionVector)> {
        let i = *self
            .image_index
            .get(id)
            .ok_or_else(|| ServiceError::not_found(format!("image `{id}`")))?;
        Ok((&self.images[i], &self.contributions[i]))
    }

    pub fn cell(&self, id: CellId) -> Result<&GridCell> {
        self.cell_index
            .get(&id)
            .map(|&i| &self.cells[i])
            .ok_or_else(|| ServiceError::not_found(format!("cell {id}")))
    }

    pub fn points(&self) -> Result<Vec<ProjectedPoint>> {
        parse_jsonl(&self.dir.join(POINTS_FILE))
    }

    /// The encoder the snapshot was built with, rebuilt once and checked
    /// against the recorded parameter checksum.
    pub fn adapter(&self) -> Result<Arc<VitEncoder>> {
        self.adapter
            .get_or_init(|| {
                let adapter = self.meta.adapter.build().map_err(|e| e.to_string())?;
                if adapter.checksum() != self.meta.adapter_checksum {
                    return Err(format!(
                        "adapter `{}` does not match the snapshot's checksum",
                        self.meta.adapter
                    ));
                }
                Ok(Arc::new(adapter))
            })
            .clone()
            .map_err(ServiceError::Internal)
    }

    fn relevance_cache_path(&self, image_id: &str) -> PathBuf {
        // Image ids may contain path separators; hash them for file names.
        self.cache_dir
            .join("relevance")
            .join(format!("{}.rel", crate::snapshot::sha256_hex(image_id.as_bytes())))
    }

    /// Sixteen relevance maps at the image's original resolution, computed
    /// at most once per image and persisted to the cache directory.
    pub fn relevance(&self, image_id: &str) -> Result<Arc<RelevanceStack>> {
        let (entry, _) = self.image(image_id)?;
        let slot = self.relevance.lock().entry(image_id.to_string()).or_default().clone();
        slot.get_or_init(|| self.compute_relevance(entry).map(Arc::new).map_err(|e| e.to_string()))
            .clone()
            .map_err(ServiceError::Internal)
    }

    /// Cache file for an image, computing it first if needed.
    pub fn relevance_file(&self, image_id: &str) -> Result<PathBuf> {
        self.relevance(image_id)?;
        Ok(self.relevance_cache_path(image_id))
    }

    fn record(entry: &ImageEntry) -> ImageRecord {
        ImageRecord {
            id: entry.image_id.clone(),
            path: entry.path.clone(),
            label: entry.label,
            split: entry.split,
            height: entry.height,
            width: entry.width,
        }
    }

    fn compute_relevance(&self, entry: &ImageEntry) -> Result<RelevanceStack> {
        let path = self.relevance_cache_path(&entry.image_id);
        if path.exists() {
            let stack = relevance::load_stack(&path)?;
            if stack.source_id == entry.image_id {
                return Ok(stack);
            }
        }
        let adapter = self.adapter()?;
        let pixels = load_pixels_with(&Self::record(entry), adapter.info().input_size, &adapter.channel_norm())?;
        let stack = relevance::relevance_stack(
            &pixels,
            &self.detector,
            &self.projection,
            adapter.as_ref(),
            entry.height as usize,
            entry.width as usize,
            RelevanceMode::LastBlock,
        )?;
        relevance::save_stack(&path, &stack)?;
        Ok(stack)
    }

    pub fn layout(&self, cell: CellId) -> Result<CellLayout> {
        let members = &self.cell(cell)?.member_ids;
        let points = members
            .iter()
            .map(|id| {
                let (e, _) = self.image(id)?;
                Ok(ProjectedPoint {
                    image_id: id.clone(),
                    x: e.x,
                    y: e.y,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(isomatch_layout(&points)?)
    }

    /// Segments from every member's relevance maps, clustered into concepts;
    /// computed at most once per cell and persisted.
    pub fn concepts(&self, cell: CellId) -> Result<Arc<ConceptClustering>> {
        self.cell(cell)?;
        let slot = self.concepts.lock().entry(cell).or_default().clone();
        slot.get_or_init(|| self.compute_concepts(cell).map(Arc::new).map_err(|e| e.to_string()))
            .clone()
            .map_err(ServiceError::Internal)
    }

    fn compute_concepts(&self, cell: CellId) -> Result<ConceptClustering> {
        let path = self.cache_dir.join("concepts").join(format!("{cell}.json"));
        if path.exists() {
            return parse_json(&path, &read(&path)?);
        }
        let adapter = self.adapter()?;
        let mut features = Vec::new();
        for id in &self.cell(cell)?.member_ids {
            let (entry, _) = self.image(id)?;
            let stack = self.relevance(id)?;
            let segments = extract_segments(&stack, DEFAULT_TAU, DEFAULT_IOU_MAX)?;
            let pixels = load_pixels_with(&Self::record(entry), adapter.info().input_size, &adapter.channel_norm())?;
            let encoded = segment_features(
                &pixels,
                &segments,
                (stack.height(), stack.width()),
                adapter.as_ref(),
                &self.projection,
                &self.detector,
            );
            for (segment, feature) in segments.into_iter().zip(encoded) {
                features.push((segment, feature?));
            }
        }
        let clustering = cluster_concepts(&features, self.meta.seed)?;
        let bytes = serde_json::to_vec_pretty(&clustering).map_err(|e| ServiceError::Internal(e.to_string()))?;
        fakescope_core::artifact::write_atomic(&path, &bytes)?;
        Ok(clustering)
    }
}

pub struct Store {
    root: PathBuf,
    snapshots: RwLock<HashMap<String, Arc<Snapshot>>>,
    pub annotations: AnnotationStore,
}

impl Store {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(ServiceError::not_found(format!("snapshot store {}", root.display())));
        }
        Ok(Self {
            root: root.to_path_buf(),
            snapshots: RwLock::new(HashMap::new()),
            annotations: AnnotationStore::new(root.join(ANNOTATION_DIR)),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Snapshot ids present on disk, sorted. Directories still being built
    /// are hidden (leading dot) and never listed.
    pub fn ids(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| CoreError::io(&self.root, e))? {
            let entry = entry.map_err(|e| CoreError::io(&self.root, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if is_valid_id(&name) && entry.path().join(META_FILE).is_file() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn list(&self) -> Result<Vec<SnapshotSummary>> {
        self.ids()?.iter().map(|id| Ok(self.get(id)?.summary())).collect()
    }

    pub fn get(&self, id: &str) -> Result<Arc<Snapshot>> {
        if let Some(s) = self.snapshots.read().get(id) {
            return Ok(s.clone());
        }
        let dir = self.root.join(id);
        if !is_valid_id(id) || !dir.join(META_FILE).is_file() {
            return Err(ServiceError::not_found(format!("snapshot `{id}`")));
        }
        let loaded = Arc::new(Snapshot::load(&dir, self.root.join(CACHE_DIR).join(id))?);
        Ok(self.snapshots.write().entry(id.to_string()).or_insert(loaded).clone())
    }
}
