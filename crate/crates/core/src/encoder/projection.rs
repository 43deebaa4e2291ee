//! The 512→256 projection that strips text-related directions from base
//! embeddings.
//!
//! Artifacts are normally loaded from disk. [`train_forget_projection`] is a
//! reduced trainer: it starts from seeded orthonormal rows and descends
//! `‖M·Tᵀ‖_F²/r + λ·‖I − M·Mᵀ‖_F²`, where the rows of `T` are unit text
//! directions estimated from natural, text-only and overlaid-text images.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{encode_base, BaseEncoder, GenericEmbedding, VisualEmbedding, GENERIC_DIM, VISUAL_DIM};
use crate::artifact;
use crate::dataset::{load_pixels_with, ImageRecord, Label};
use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{self, Matrix};

/// Maximum `‖I − M·Mᵀ‖_F²` for loaded or trained projections.
pub const MAX_ORTHONORMALITY_DEFECT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Loaded,
    Trained,
    Bypass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgetProjection {
    matrix: Matrix,
    provenance: Provenance,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    rows: usize,
    cols: usize,
    dtype: String,
    layout: String,
}

impl ForgetProjection {
    /// Wraps a `256 × 512` matrix, enforcing the orthonormality bound.
    pub fn new(matrix: Matrix, provenance: Provenance) -> Result<Self> {
        if matrix.rows != VISUAL_DIM || matrix.cols != GENERIC_DIM {
            return Err(Error::Argument(format!(
                "projection is {}×{}, expected {VISUAL_DIM}×{GENERIC_DIM}",
                matrix.rows, matrix.cols
            )));
        }
        ensure_finite(&matrix.data, "projection matrix")?;
        if provenance == Provenance::Bypass {
            return Err(Error::Argument("bypass projections are built with `bypass()`".into()));
        }
        let defect = matrix.orthonormality_defect();
        if defect > MAX_ORTHONORMALITY_DEFECT {
            return Err(Error::Validation(format!(
                "projection orthonormality defect {defect:.4} exceeds {MAX_ORTHONORMALITY_DEFECT}"
            )));
        }
        Ok(Self { matrix, provenance })
    }

    /// Keeps the first 256 coordinates. Test builds only.
    #[cfg(any(test, feature = "test-bypass"))]
    pub fn bypass() -> Self {
        Self {
            matrix: Matrix::identity_rows(VISUAL_DIM, GENERIC_DIM),
            provenance: Provenance::Bypass,
        }
    }

    /// Arbitrary matrix (any shape check aside) marked as bypass. Test builds only.
    #[cfg(any(test, feature = "test-bypass"))]
    pub fn bypass_with(matrix: Matrix) -> Result<Self> {
        if matrix.rows != VISUAL_DIM || matrix.cols != GENERIC_DIM {
            return Err(Error::Argument("projection must be 256×512".into()));
        }
        Ok(Self {
            matrix,
            provenance: Provenance::Bypass,
        })
    }

    /// Seeded matrix with orthonormal rows, e.g. to produce a stand-in
    /// artifact for the mock encoder.
    pub fn random_orthonormal(seed: u64) -> Self {
        Self {
            matrix: linalg::orthonormal_rows(VISUAL_DIM, GENERIC_DIM, seed),
            provenance: Provenance::Loaded,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn defect(&self) -> f64 {
        self.matrix.orthonormality_defect()
    }

    pub fn apply(&self, embedding: &GenericEmbedding) -> Result<VisualEmbedding> {
        if embedding.vector.len() != GENERIC_DIM {
            return Err(Error::Argument(format!(
                "generic embedding has length {}, expected {GENERIC_DIM}",
                embedding.vector.len()
            )));
        }
        let vector = self.matrix.matvec(&embedding.vector);
        ensure_finite(&vector, "projected embedding")?;
        Ok(VisualEmbedding {
            vector,
            source_id: embedding.source_id.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            rows: self.matrix.rows,
            cols: self.matrix.cols,
            dtype: "f32".into(),
            layout: "row-major".into(),
        };
        artifact::write_file(path, &header, &artifact::to_f32(&self.matrix.data))
    }

    /// Reads an artifact; the result has provenance `loaded`.
    pub fn load(path: &Path) -> Result<Self> {
        let (header, payload): (Header, Vec<f32>) = artifact::read_file(path)?;
        if header.dtype != "f32" || header.layout != "row-major" {
            return Err(Error::Format(format!(
                "unsupported projection encoding {}/{}",
                header.dtype, header.layout
            )));
        }
        if payload.len() != header.rows * header.cols {
            return Err(Error::Format(format!(
                "projection payload has {} values, header says {}×{}",
                payload.len(),
                header.rows,
                header.cols
            )));
        }
        let data = payload.into_iter().map(f64::from).collect();
        Self::new(Matrix::from_vec(header.rows, header.cols, data), Provenance::Loaded)
    }
}

/// Image classes the projection trainer needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Natural,
    Text,
    Overlaid,
}

impl CorpusKind {
    pub const ALL: [CorpusKind; 3] = [CorpusKind::Natural, CorpusKind::Text, CorpusKind::Overlaid];

    fn dir_name(self) -> &'static str {
        match self {
            CorpusKind::Natural => "natural",
            CorpusKind::Text => "text",
            CorpusKind::Overlaid => "overlaid",
        }
    }
}

/// Images grouped by kind; loaded from `natural/`, `text/` and `overlaid/`.
#[derive(Debug, Clone, Default)]
pub struct ProjectionCorpus {
    pub entries: Vec<(ImageRecord, CorpusKind)>,
}

impl ProjectionCorpus {
    pub fn load_dir(root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for kind in CorpusKind::ALL {
            let dir = root.join(kind.dir_name());
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for path in files {
                let (width, height) = image::image_dimensions(&path).map_err(|source| Error::Decode {
                    path: path.clone(),
                    source,
                })?;
                let id = format!(
                    "{}/{}",
                    kind.dir_name(),
                    path.file_name().unwrap_or_default().to_string_lossy()
                );
                entries.push((
                    ImageRecord {
                        id,
                        path,
                        label: Label::Real,
                        split: None,
                        height,
                        width,
                    },
                    kind,
                ));
            }
        }
        Ok(Self { entries })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionTrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub lambda_ortho: f64,
}

impl Default for ProjectionTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            learning_rate: 0.05,
            lambda_ortho: 1.0,
        }
    }
}

/// Encodes the corpus with `adapter` and trains a projection on the result.
pub fn train_forget_projection(
    corpus: &ProjectionCorpus,
    adapter: &dyn BaseEncoder,
    seed: u64,
) -> Result<ForgetProjection> {
    let size = adapter.info().input_size;
    let norm = adapter.channel_norm();
    let embedded = corpus
        .entries
        .iter()
        .map(|(record, kind)| {
            let pixels = load_pixels_with(record, size, &norm)?;
            Ok((encode_base(&pixels, adapter)?.vector, *kind))
        })
        .collect::<Result<Vec<_>>>()?;
    train_projection_from_embeddings(&embedded, ProjectionTrainConfig::default(), seed)
}

pub fn train_projection_from_embeddings(
    samples: &[(Vec<f64>, CorpusKind)],
    config: ProjectionTrainConfig,
    seed: u64,
) -> Result<ForgetProjection> {
    let of_kind = |k: CorpusKind| samples.iter().filter(move |(_, kind)| *kind == k).map(|(v, _)| v);
    for kind in CorpusKind::ALL {
        if of_kind(kind).next().is_none() {
            return Err(Error::TrainingData(format!(
                "projection corpus has no `{}` images",
                kind.dir_name()
            )));
        }
    }
    if samples.iter().any(|(v, _)| v.len() != GENERIC_DIM) {
        return Err(Error::Argument(format!(
            "corpus embeddings must have length {GENERIC_DIM}"
        )));
    }
    let mean = |k: CorpusKind| {
        let mut m = vec![0.0; GENERIC_DIM];
        let mut n = 0.0;
        for v in of_kind(k) {
            linalg::axpy(1.0, v, &mut m);
            n += 1.0;
        }
        m.iter_mut().for_each(|x| *x /= n);
        m
    };
    let natural = mean(CorpusKind::Natural);
    let text = mean(CorpusKind::Text);

    // text directions: overlaid and text-only images relative to natural ones
    let mut directions: Vec<Vec<f64>> = Vec::new();
    for kind in [CorpusKind::Overlaid, CorpusKind::Text] {
        for v in of_kind(kind) {
            let d: Vec<f64> = v.iter().zip(&natural).map(|(a, b)| a - b).collect();
            directions.push(d);
        }
    }
    directions.push(text.iter().zip(&natural).map(|(a, b)| a - b).collect());
    directions.retain_mut(|d| {
        let n = linalg::norm(d);
        if n > 1e-12 {
            d.iter_mut().for_each(|x| *x /= n);
            true
        } else {
            false
        }
    });
    let r = directions.len().max(1) as f64;
    let t = DMatrix::from_fn(directions.len(), GENERIC_DIM, |i, j| directions[i][j]);

    let mut m = linalg::orthonormal_rows(VISUAL_DIM, GENERIC_DIM, seed).to_nalgebra();
    let eye = DMatrix::<f64>::identity(VISUAL_DIM, VISUAL_DIM);
    for _ in 0..config.iterations {
        let mt = &m * t.transpose();
        let text_grad = (&mt * &t) * (2.0 / r);
        let residual = &eye - &m * m.transpose();
        let ortho_grad = (&residual * &m) * (-4.0 * config.lambda_ortho);
        m -= (text_grad + ortho_grad) * config.learning_rate;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("projection training diverged".into()));
        }
    }
    let matrix = Matrix::from_nalgebra(&m);
    let defect = matrix.orthonormality_defect();
    if defect > MAX_ORTHONORMALITY_DEFECT {
        return Err(Error::Numeric(format!(
            "trained projection defect {defect:.4} exceeds {MAX_ORTHONORMALITY_DEFECT}"
        )));
    }
    Ok(ForgetProjection {
        matrix,
        provenance: Provenance::Trained,
    })
}

/// Fraction of the text directions' energy that survives projection.
pub fn text_energy_ratio(projection: &ForgetProjection, directions: &[Vec<f64>]) -> f64 {
    let mut kept = 0.0;
    let mut total = 0.0;
    for d in directions {
        let p = projection.matrix.matvec(d);
        kept += linalg::dot(&p, &p);
        total += linalg::dot(d, d);
    }
    if total == 0.0 {
        0.0
    } else {
        kept / total
    }
}
