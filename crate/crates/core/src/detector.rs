//! Two-layer linear detector: a bias-free 256→16 distiller kept near
//! row-orthonormal by a Frobenius penalty, and a 16→1 logistic head.
//!
//! Label convention: fake = 1 = positive.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::dataset::Label;
use crate::encoder::{VisualEmbedding, VISUAL_DIM};
use crate::error::{ensure_finite, Error, Result};
use crate::linalg::{self, dot, sigmoid, Matrix};

/// Width of the distilled representation.
pub const DISTILL_DIM: usize = 16;
/// Upper bound on `R(W)` for a trained distiller.
pub const MAX_DISTILLER_DEFECT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_bce: f64,
    pub lambda_ortho: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    /// Epochs without validation-BCE improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_bce: 3.0,
            lambda_ortho: 1.0,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 50,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Epochs actually run; unknown for checkpoints loaded from disk.
    pub epochs: Option<usize>,
    pub config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    /// `16 × 256`
    pub distiller: Matrix,
    pub head_w: Vec<f64>,
    pub head_b: f64,
    pub lambda_bce: f64,
    pub lambda_ortho: f64,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistilledVector {
    pub values: Vec<f64>,
    pub source_id: String,
}

impl DistilledVector {
    pub fn new(values: Vec<f64>, source_id: impl Into<String>) -> Result<Self> {
        if values.len() != DISTILL_DIM {
            return Err(Error::Argument(format!(
                "distilled vector has length {}, expected {DISTILL_DIM}",
                values.len()
            )));
        }
        ensure_finite(&values, "distilled vector")?;
        Ok(Self {
            values,
            source_id: source_id.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logit: f64,
    pub prob_fake: f64,
    pub label: Label,
    pub confidence: f64,
}

impl Prediction {
    /// Probability exactly 0.5 predicts real.
    pub fn from_logit(logit: f64) -> Self {
        let prob_fake = sigmoid(logit);
        let label = if prob_fake > 0.5 { Label::Fake } else { Label::Real };
        Self {
            logit,
            prob_fake,
            label,
            confidence: prob_fake.max(1.0 - prob_fake),
        }
    }

    pub fn is_correct(&self, truth: Label) -> bool {
        self.label == truth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfusionStats {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl ConfusionStats {
    /// Tallies `(predicted, truth)` pairs.
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut s = Self::default();
        for (pred, truth) in outcomes {
            match (pred, truth) {
                (Label::Fake, Label::Fake) => s.tp += 1,
                (Label::Real, Label::Real) => s.tn += 1,
                (Label::Fake, Label::Real) => s.fp += 1,
                (Label::Real, Label::Fake) => s.fn_ += 1,
            }
        }
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        s.accuracy = ratio(s.tp + s.tn, s.total());
        s.sensitivity = ratio(s.tp, s.tp + s.fn_);
        s.specificity = ratio(s.tn, s.tn + s.fp);
        s
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean training BCE (unweighted).
    pub bce: f64,
    /// `R(W)` at the end of the epoch.
    pub ortho: f64,
    /// `λ_BCE·bce + λ_ortho·ortho`
    pub total: f64,
    pub val_bce: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: DetectorModel,
    /// Entry 0 describes the initial parameters, entry `e` the state after epoch `e`.
    pub history: Vec<EpochLoss>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

pub fn orthogonality_penalty(w: &Matrix) -> Result<f64> {
    check_distiller_shape(w)?;
    Ok(w.orthonormality_defect())
}

/// `∂R/∂W = −4·(I − W·Wᵀ)·W`.
pub fn orthogonality_penalty_grad(w: &Matrix) -> Result<Matrix> {
    check_distiller_shape(w)?;
    Ok(w.orthonormality_defect_grad())
}

fn check_distiller_shape(w: &Matrix) -> Result<()> {
    if w.rows != DISTILL_DIM || w.cols != VISUAL_DIM {
        return Err(Error::Argument(format!(
            "distiller is {}×{}, expected {DISTILL_DIM}×{VISUAL_DIM}",
            w.rows, w.cols
        )));
    }
    Ok(())
}

impl DetectorModel {
    pub fn new(
        distiller: Matrix,
        head_w: Vec<f64>,
        head_b: f64,
        lambda_bce: f64,
        lambda_ortho: f64,
        meta: TrainingMeta,
    ) -> Result<Self> {
        check_distiller_shape(&distiller)?;
        if head_w.len() != DISTILL_DIM {
            return Err(Error::Argument(format!(
                "head has {} weights, expected {DISTILL_DIM}",
                head_w.len()
            )));
        }
        ensure_finite(&distiller.data, "distiller")?;
        ensure_finite(&head_w, "head weights")?;
        ensure_finite(&[head_b], "head bias")?;
        Ok(Self {
            distiller,
            head_w,
            head_b,
            lambda_bce,
            lambda_ortho,
            meta,
        })
    }

    pub fn distiller_defect(&self) -> f64 {
        self.distiller.orthonormality_defect()
    }

    pub fn logit(&self, distilled: &DistilledVector) -> f64 {
        dot(&self.head_w, &distilled.values) + self.head_b
    }

    /// `(Wᵀ·e_dim)`: gradient of distilled coordinate `dim` (0-based) with
    /// respect to the visual embedding.
    pub fn distiller_row(&self, dim: usize) -> &[f64] {
        self.distiller.row(dim)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        artifact::write_atomic(path, &self.to_bytes()?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            schema: 1,
            dims: Dims {
                r#in: VISUAL_DIM,
                distill: DISTILL_DIM,
            },
            lambda_bce: self.lambda_bce,
            lambda_ortho: self.lambda_ortho,
            seed: self.meta.seed,
        };
        let mut payload = artifact::to_f32(&self.distiller.data);
        payload.extend(artifact::to_f32(&self.head_w));
        payload.push(self.head_b as f32);
        artifact::encode(&header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, payload): (CheckpointHeader, Vec<f32>) = artifact::decode(bytes)?;
        if h.schema != 1 || h.dims.r#in != VISUAL_DIM || h.dims.distill != DISTILL_DIM {
            return Err(Error::Format(format!(
                "unsupported checkpoint schema {} with dims {}→{}",
                h.schema, h.dims.r#in, h.dims.distill
            )));
        }
        let expected = DISTILL_DIM * VISUAL_DIM + DISTILL_DIM + 1;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint payload has {} values, expected {expected}",
                payload.len()
            )));
        }
        let values: Vec<f64> = payload.into_iter().map(f64::from).collect();
        let (w, rest) = values.split_at(DISTILL_DIM * VISUAL_DIM);
        Self::new(
            Matrix::from_vec(DISTILL_DIM, VISUAL_DIM, w.to_vec()),
            rest[..DISTILL_DIM].to_vec(),
            rest[DISTILL_DIM],
            h.lambda_bce,
            h.lambda_ortho,
            TrainingMeta {
                seed: h.seed,
                epochs: None,
                config: None,
            },
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Dims {
    #[serde(rename = "in")]
    r#in: usize,
    distill: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    schema: u32,
    dims: Dims,
    lambda_bce: f64,
    lambda_ortho: f64,
    seed: u64,
}

pub fn distill(embedding: &VisualEmbedding, model: &DetectorModel) -> Result<DistilledVector> {
    distill_vector(&embedding.vector, &embedding.source_id, model)
}

pub(crate) fn distill_vector(x: &[f64], source_id: &str, model: &DetectorModel) -> Result<DistilledVector> {
    if x.len() != VISUAL_DIM {
        return Err(Error::Argument(format!(
            "visual embedding has length {}, expected {VISUAL_DIM}",
            x.len()
        )));
    }
    DistilledVector::new(model.distiller.matvec(x), source_id)
}

pub fn predict(distilled: &DistilledVector, model: &DetectorModel) -> Result<Prediction> {
    let logit = model.logit(distilled);
    if !logit.is_finite() {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    Ok(Prediction::from_logit(logit))
}

pub fn evaluate(split: &[(DistilledVector, Label)], model: &DetectorModel) -> Result<ConfusionStats> {
    if split.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty split".into()));
    }
    let outcomes = split
        .iter()
        .map(|(v, truth)| predict(v, model).map(|p| (p.label, *truth)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConfusionStats::from_outcomes(outcomes))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Flat parameter vector: W (row-major), head_w, head_b.
struct Params {
    flat: Vec<f64>,
}

impl Params {
    const W_LEN: usize = DISTILL_DIM * VISUAL_DIM;

    fn w_row(&self, i: usize) -> &[f64] {
        &self.flat[i * VISUAL_DIM..(i + 1) * VISUAL_DIM]
    }

    fn head_w(&self) -> &[f64] {
        &self.flat[Self::W_LEN..Self::W_LEN + DISTILL_DIM]
    }

    fn head_b(&self) -> f64 {
        self.flat[Self::W_LEN + DISTILL_DIM]
    }

    fn distiller(&self) -> Matrix {
        Matrix::from_vec(DISTILL_DIM, VISUAL_DIM, self.flat[..Self::W_LEN].to_vec())
    }

    fn logit(&self, x: &[f64]) -> (f64, [f64; DISTILL_DIM]) {
        let mut v = [0.0; DISTILL_DIM];
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = dot(self.w_row(i), x);
        }
        (dot(self.head_w(), &v) + self.head_b(), v)
    }
}

fn bce_with_logit(z: f64, y: f64) -> f64 {
    // log(1 + e^z) − y·z, computed stably
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn mean_bce(params: &Params, data: &[(VisualEmbedding, Label)]) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (e, label) in data {
        let (z, _) = params.logit(&e.vector);
        loss += bce_with_logit(z, label.target());
        if Prediction::from_logit(z).label == *label {
            correct += 1;
        }
    }
    let n = data.len().max(1) as f64;
    (loss / n, correct as f64 / n)
}

/// Trains with Adam on `λ_BCE·BCE + λ_ortho·R(W)` over shuffled mini-batches,
/// keeping the parameters of the epoch with the lowest validation BCE.
///
/// Trained weights are rounded to `f32`, so a saved checkpoint reloads to an
/// identical model.
pub fn train_detector(
    train: &[(VisualEmbedding, Label)],
    val: &[(VisualEmbedding, Label)],
    config: TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if !train.iter().any(|(_, l)| *l == Label::Real) || !train.iter().any(|(_, l)| *l == Label::Fake) {
        return Err(Error::TrainingData(
            "training set must contain both real and fake samples".into(),
        ));
    }
    if config.batch_size == 0 || config.max_epochs == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Argument(
            "batch size, epochs and learning rate must be positive".into(),
        ));
    }
    for (e, _) in train.iter().chain(val) {
        if e.vector.len() != VISUAL_DIM {
            return Err(Error::Argument(format!(
                "embedding `{}` has length {}, expected {VISUAL_DIM}",
                e.source_id,
                e.vector.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flat = linalg::orthonormal_rows(DISTILL_DIM, VISUAL_DIM, rng.random()).data;
    let bound = 1.0 / (DISTILL_DIM as f64).sqrt();
    flat.extend((0..DISTILL_DIM).map(|_| rng.random_range(-bound..bound)));
    flat.push(0.0);
    let mut params = Params { flat };
    let mut adam = Adam::new(params.flat.len());

    let record = |params: &Params, epoch: usize| -> Result<EpochLoss> {
        let (bce, _) = mean_bce(params, train);
        let ortho = params.distiller().orthonormality_defect();
        let total = config.lambda_bce * bce + config.lambda_ortho * ortho;
        if !total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let (val_bce, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let (b, a) = mean_bce(params, val);
            (Some(b), Some(a))
        };
        Ok(EpochLoss {
            epoch,
            bce,
            ortho,
            total,
            val_bce,
            val_accuracy,
        })
    };

    let mut history = vec![record(&params, 0)?];
    let mut best = (history[0].val_bce.unwrap_or(f64::INFINITY), 0usize, params.flat.clone());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grads = vec![0.0; params.flat.len()];

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = config.lambda_bce / batch.len() as f64;
            for &idx in batch {
                let (x, label) = (&train[idx].0.vector, train[idx].1);
                let (z, v) = params.logit(x);
                let err = (sigmoid(z) - label.target()) * scale;
                let head_w = params.head_w().to_vec();
                for i in 0..DISTILL_DIM {
                    linalg::axpy(err * head_w[i], x, &mut grads[i * VISUAL_DIM..(i + 1) * VISUAL_DIM]);
                    grads[Params::W_LEN + i] += err * v[i];
                }
                grads[Params::W_LEN + DISTILL_DIM] += err;
            }
            let ortho_grad = params.distiller().orthonormality_defect_grad();
            linalg::axpy(config.lambda_ortho, &ortho_grad.data, &mut grads[..Params::W_LEN]);
            adam.update(&mut params.flat, &grads, &config);
        }
        if params.flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let entry = record(&params, epoch)?;
        history.push(entry);
        if val.is_empty() {
            best = (f64::INFINITY, epoch, params.flat.clone());
            continue;
        }
        let val_bce = entry.val_bce.expect("validation present");
        if val_bce < best.0 {
            best = (val_bce, epoch, params.flat.clone());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }

    let (_, best_epoch, flat) = best;
    let flat: Vec<f64> = flat.into_iter().map(|v| v as f32 as f64).collect();
    let params = Params { flat };
    let model = DetectorModel::new(
        params.distiller(),
        params.head_w().to_vec(),
        params.head_b(),
        config.lambda_bce,
        config.lambda_ortho,
        TrainingMeta {
            seed,
            epochs: Some(history.len() - 1),
            config: Some(config),
        },
    )?;
    if model.head_w.iter().all(|&w| w == 0.0) {
        return Err(Error::DegenerateModel("trained head weights are all zero".into()));
    }
    let defect = model.distiller_defect();
    if defect > MAX_DISTILLER_DEFECT {
        return Err(Error::Numeric(format!(
            "trained distiller defect {defect:.4} exceeds {MAX_DISTILLER_DEFECT}; raise lambda_ortho"
        )));
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
