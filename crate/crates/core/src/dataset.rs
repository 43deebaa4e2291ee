//! Corpus ingestion: manifests, stratified splits and pixel loading.
//!
//! A manifest is either a JSON-lines file (`{"id","path","label","split"?}`
//! per line) or a directory holding `real/` and `fake/` subfolders. Relative
//! paths inside a JSON-lines manifest resolve against the manifest's folder.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample;

/// Encoder input side length used throughout the pipeline.
pub const DEFAULT_INPUT_SIZE: usize = 224;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn is_fake(self) -> bool {
        self == Label::Fake
    }

    /// Target value for binary cross-entropy.
    pub fn target(self) -> f64 {
        self as u8 as f64
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(format!("label {other} is outside {{0,1}}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub height: u32,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub records: Vec<ImageRecord>,
    pub class_counts: BTreeMap<Label, usize>,
}

impl DatasetManifest {
    /// Builds a manifest, checking id uniqueness and deriving class counts.
    pub fn new(name: impl Into<String>, records: Vec<ImageRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate id `{}`", r.id)));
            }
        }
        let mut class_counts = BTreeMap::new();
        for r in &records {
            *class_counts.entry(r.label).or_insert(0) += 1;
        }
        Ok(Self {
            name: name.into(),
            records,
            class_counts,
        })
    }

    pub fn count(&self, label: Label) -> usize {
        self.class_counts.get(&label).copied().unwrap_or(0)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Serializes the records as a JSON-lines manifest.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let line = ManifestLine {
                id: r.id.clone(),
                path: r.path.to_string_lossy().into_owned(),
                label: r.label.as_u8() as i64,
                split: r.split,
            };
            out.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    path: String,
    label: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

/// Loads a JSON-lines manifest file or a `real/` + `fake/` directory tree.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_dir() {
        load_directory(path)
    } else {
        load_jsonl(path)
    }
}

fn load_jsonl(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut pending = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: ManifestLine = serde_json::from_str(line)
            .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        let label = u8::try_from(raw.label)
            .map_err(|_| format!("label {} is outside {{0,1}}", raw.label))
            .and_then(Label::try_from)
            .map_err(|msg| Error::Validation(format!("{}:{}: {msg}", path.display(), lineno + 1)))?;
        let p = PathBuf::from(&raw.path);
        let resolved = if p.is_absolute() { p } else { base.join(p) };
        pending.push((raw.id, resolved, label, raw.split));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    build_records(name, pending)
}

fn load_directory(root: &Path) -> Result<DatasetManifest> {
    let mut pending = Vec::new();
    for (label, names) in [(Label::Real, ["real", "0_real"]), (Label::Fake, ["fake", "1_fake"])] {
        for name in names {
            let dir = root.join(name);
            if !dir.is_dir() {
                continue;
            }
            let mut files = Vec::new();
            collect_images(&dir, &mut files)?;
            files.sort();
            for file in files {
                let rel = file
                    .strip_prefix(root)
                    .unwrap_or(&file)
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                pending.push((rel, file, label, None));
            }
        }
    }
    if pending.is_empty() {
        return Err(Error::Validation(format!(
            "{} has no images under real/ or fake/",
            root.display()
        )));
    }
    let name = root
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    build_records(name, pending)
}

fn collect_images(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_images(&path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        {
            out.push(path);
        }
    }
    Ok(())
}

type PendingRecord = (String, PathBuf, Label, Option<Split>);

fn build_records(name: String, pending: Vec<PendingRecord>) -> Result<DatasetManifest> {
    let records = pending
        .into_par_iter()
        .map(|(id, path, label, split)| {
            let (width, height) = image::image_dimensions(&path).map_err(|source| match source {
                image::ImageError::IoError(e) => Error::io(&path, e),
                other => Error::Decode {
                    path: path.clone(),
                    source: other,
                },
            })?;
            Ok(ImageRecord {
                id,
                path,
                label,
                split,
                height,
                width,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetManifest::new(name, records)
}

/// Split fractions for (train, val, test).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = Self { train, val, test };
        let parts = r.as_array();
        if parts.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Argument(format!("split ratios must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("split ratios sum to {sum}, expected 1")));
        }
        Ok(r)
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Per-split sizes for a class of `n` records: largest-remainder rounding,
/// then every split is guaranteed at least one record.
fn allocate(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: [usize; 3] = [0; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            counts[donor] -= 1;
            counts[i] = 1;
        }
    }
    counts
}

/// Stratified, seeded assignment of every record to train/val/test.
pub fn split_dataset(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    let labels: Vec<Label> = manifest.records.iter().map(|r| r.label).collect();
    let splits = assign_splits(&labels, ratios, seed)?;
    let mut out = manifest.clone();
    for (r, s) in out.records.iter_mut().zip(splits) {
        r.split = Some(s);
    }
    Ok(out)
}

/// Stratified, seeded split for items with the given labels; each class is
/// shuffled independently and cut by [`allocate`].
pub fn assign_splits(labels: &[Label], ratios: SplitRatios, seed: u64) -> Result<Vec<Split>> {
    let ratios = SplitRatios::new(ratios.train, ratios.val, ratios.test)?;
    let mut out = vec![Split::Train; labels.len()];
    for label in [Label::Real, Label::Fake] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        let n = idx.len();
        if n == 0 {
            continue;
        }
        if n < Split::ALL.len() {
            return Err(Error::DegenerateSplit(format!(
                "class {label} has {n} records, fewer than {} splits",
                Split::ALL.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(label as u64 + 1)));
        idx.shuffle(&mut rng);
        let counts = allocate(n, ratios.as_array());
        let mut cursor = 0;
        for (split, count) in Split::ALL.iter().zip(counts) {
            for &i in &idx[cursor..cursor + count] {
                out[i] = *split;
            }
            cursor += count;
        }
    }
    Ok(out)
}

/// Per-channel normalization applied after scaling pixels to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ChannelNorm {
    /// Constants published with the CLIP image preprocessor.
    #[allow(clippy::excessive_precision)]
    pub const CLIP: ChannelNorm = ChannelNorm {
        mean: [0.481_454_66, 0.457_827_5, 0.408_210_73],
        std: [0.268_629_54, 0.261_302_58, 0.275_777_11],
    };

    pub fn apply(&self, rgb01: [f32; 3]) -> [f32; 3] {
        [
            (rgb01[0] - self.mean[0]) / self.std[0],
            (rgb01[1] - self.mean[1]) / self.std[1],
            (rgb01[2] - self.mean[2]) / self.std[2],
        ]
    }
}

impl Default for ChannelNorm {
    fn default() -> Self {
        Self::CLIP
    }
}

/// Square `size × size × 3` normalized image, interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTensor {
    pub data: Vec<f32>,
    pub size: usize,
    pub source_id: String,
}

impl PixelTensor {
    pub fn new(data: Vec<f32>, size: usize, source_id: impl Into<String>) -> Result<Self> {
        if data.len() != size * size * 3 {
            return Err(Error::Argument(format!(
                "pixel buffer has {} values, expected {size}×{size}×3",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("pixel tensor contains non-finite values".into()));
        }
        Ok(Self {
            data,
            size,
            source_id: source_id.into(),
        })
    }

    /// Converts an RGB image to a normalized tensor with bilinear resizing.
    pub fn from_rgb(
        img: &image::RgbImage,
        size: usize,
        norm: &ChannelNorm,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::Validation("zero-area image".into()));
        }
        let raw: Vec<f32> = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        let resized = resample::bilinear(&raw, h as usize, w as usize, 3, size, size);
        let mut data = Vec::with_capacity(resized.len());
        for px in resized.chunks_exact(3) {
            data.extend_from_slice(&norm.apply([px[0], px[1], px[2]]));
        }
        Self::new(data, size, source_id)
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.size + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Crops the half-open box `[x0,x1)×[y0,y1)` and resizes it back to
    /// `size × size`. Values are already normalized, so no re-normalization.
    pub fn crop_resized(&self, bbox: BoundingBox, size: usize) -> Result<Self> {
        if bbox.is_empty() || bbox.x1 > self.size || bbox.y1 > self.size {
            return Err(Error::Argument(format!("crop box {bbox:?} outside {0}×{0}", self.size)));
        }
        let (bw, bh) = (bbox.width(), bbox.height());
        let mut sub = Vec::with_capacity(bw * bh * 3);
        for row in bbox.y0..bbox.y1 {
            let start = (row * self.size + bbox.x0) * 3;
            sub.extend_from_slice(&self.data[start..start + bw * 3]);
        }
        let data = resample::bilinear(&sub, bh, bw, 3, size, size);
        Self::new(data, size, self.source_id.clone())
    }
}

/// Half-open pixel box `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let iy = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Decodes and preprocesses one record with the CLIP channel constants.
pub fn load_pixels(record: &ImageRecord, size: usize) -> Result<PixelTensor> {
    load_pixels_with(record, size, &ChannelNorm::CLIP)
}

pub fn load_pixels_with(record: &ImageRecord, size: usize, norm: &ChannelNorm) -> Result<PixelTensor> {
    if size == 0 {
        return Err(Error::Argument("target size must be positive".into()));
    }
    let img = image::open(&record.path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(&record.path, e),
        other => Error::Decode {
            path: record.path.clone(),
            source: other,
        },
    })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Validation(format!("{} has zero area", record.path.display())));
    }
    PixelTensor::from_rgb(&img.to_rgb8(), size, norm, record.id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};
    use tempfile::TempDir;

    fn write_png(path: &Path, w: u32, h: u32, color: [u8; 3]) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        RgbImage::from_pixel(w, h, Rgb(color)).save(path).unwrap();
    }

    fn synthetic_manifest(real: usize, fake: usize) -> DatasetManifest {
        let mut records = Vec::new();
        for i in 0..real + fake {
            records.push(ImageRecord {
                id: format!("img{i:04}"),
                path: PathBuf::from(format!("img{i:04}.png")),
                label: if i < real { Label::Real } else { Label::Fake },
                split: None,
                height: 8,
                width: 8,
            });
        }
        DatasetManifest::new("synthetic", records).unwrap()
    }

    #[test]
    fn directory_mode_counts_classes() {
        let dir = TempDir::new().unwrap();
        for i in 0..3 {
            write_png(&dir.path().join(format!("real/r{i}.png")), 4, 4, [10, 20, 30]);
        }
        for i in 0..2 {
            write_png(&dir.path().join(format!("fake/f{i}.png")), 4, 4, [10, 20, 30]);
        }
        let m = load_manifest(dir.path()).unwrap();
        assert_eq!(m.count(Label::Real), 3);
        assert_eq!(m.count(Label::Fake), 2);
        assert_eq!(m.records[0].id, "real/r0.png");
        assert_eq!((m.records[0].width, m.records[0].height), (4, 4));
    }

    #[test]
    fn jsonl_rejects_out_of_range_label() {
        let dir = TempDir::new().unwrap();
        write_png(&dir.path().join("a.png"), 2, 2, [0, 0, 0]);
        let path = dir.path().join("m.jsonl");
        fs::write(&path, "{\"id\":\"a\",\"path\":\"a.png\",\"label\":2}\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn jsonl_rejects_duplicate_ids_and_missing_files() {
        let dir = TempDir::new().unwrap();
        write_png(&dir.path().join("a.png"), 2, 2, [0, 0, 0]);
        let path = dir.path().join("m.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"path\":\"a.png\",\"label\":0}\n{\"id\":\"a\",\"path\":\"a.png\",\"label\":1}\n",
        )
        .unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Validation(_))));

        fs::write(&path, "{\"id\":\"b\",\"path\":\"missing.png\",\"label\":0}\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Io { .. })));
        assert!(matches!(
            load_manifest(&dir.path().join("nope.jsonl")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn jsonl_round_trips_split_field() {
        let dir = TempDir::new().unwrap();
        write_png(&dir.path().join("a.png"), 3, 2, [0, 0, 0]);
        let path = dir.path().join("m.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"path\":\"a.png\",\"label\":1,\"split\":\"val\"}\n",
        )
        .unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.records[0].split, Some(Split::Val));
        assert_eq!(m.records[0].label, Label::Fake);
        assert_eq!((m.records[0].width, m.records[0].height), (3, 2));
        assert!(m.to_jsonl().contains("\"split\":\"val\""));
    }

    #[test]
    fn split_ten_per_class() {
        let m = synthetic_manifest(10, 10);
        let s = split_dataset(&m, SplitRatios::new(0.8, 0.1, 0.1).unwrap(), 7).unwrap();
        for label in [Label::Real, Label::Fake] {
            let tally = |split| s.split(split).filter(|r| r.label == label).count();
            assert_eq!((tally(Split::Train), tally(Split::Val), tally(Split::Test)), (8, 1, 1));
        }
        let again = split_dataset(&m, SplitRatios::new(0.8, 0.1, 0.1).unwrap(), 7).unwrap();
        assert_eq!(s.to_jsonl(), again.to_jsonl());
    }

    #[test]
    fn split_preserves_balance_on_hundred_per_class() {
        let m = synthetic_manifest(100, 100);
        let s = split_dataset(&m, SplitRatios::default(), 1).unwrap();
        // exhaustive tally
        let mut tally: BTreeMap<(Split, Label), usize> = BTreeMap::new();
        for r in &s.records {
            *tally.entry((r.split.unwrap(), r.label)).or_default() += 1;
        }
        for split in Split::ALL {
            assert_eq!(tally[&(split, Label::Real)], tally[&(split, Label::Fake)]);
        }
        assert_eq!(tally[&(Split::Train, Label::Real)], 80);
    }

    #[test]
    fn split_errors() {
        let m = synthetic_manifest(10, 2);
        assert!(matches!(
            split_dataset(&m, SplitRatios::default(), 0),
            Err(Error::DegenerateSplit(_))
        ));
        assert!(matches!(SplitRatios::new(0.5, 0.3, 0.3), Err(Error::Argument(_))));
        assert!(matches!(SplitRatios::new(1.0, 0.0, 0.0), Err(Error::Argument(_))));
    }

    #[test]
    fn allocation_keeps_every_split_nonempty() {
        assert_eq!(allocate(3, [0.8, 0.1, 0.1]), [1, 1, 1]);
        assert_eq!(allocate(10, [0.8, 0.1, 0.1]), [8, 1, 1]);
        assert_eq!(allocate(7, [0.5, 0.25, 0.25]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn load_pixels_shape_and_constant_color() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("black.png");
        write_png(&path, 448, 448, [0, 0, 0]);
        let rec = ImageRecord {
            id: "black".into(),
            path,
            label: Label::Real,
            split: None,
            height: 448,
            width: 448,
        };
        let t = load_pixels(&rec, 224).unwrap();
        assert_eq!(t.data.len(), 224 * 224 * 3);
        let zero = ChannelNorm::CLIP.apply([0.0; 3]);
        assert!(t.data.chunks_exact(3).all(|px| px == zero));
        assert_eq!(t, load_pixels(&rec, 224).unwrap());
    }

    #[test]
    fn undecodable_file_is_decode_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bad.png");
        fs::write(&path, b"not an image").unwrap();
        let rec = ImageRecord {
            id: "bad".into(),
            path,
            label: Label::Real,
            split: None,
            height: 1,
            width: 1,
        };
        assert!(matches!(load_pixels(&rec, 8), Err(Error::Decode { .. })));
    }

    #[test]
    fn iou_examples() {
        let a = BoundingBox::new(0, 0, 10, 10);
        let b = BoundingBox::new(5, 0, 15, 10);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BoundingBox::new(20, 20, 30, 30)), 0.0);
    }
}
