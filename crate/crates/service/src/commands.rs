//! Subcommands of the `fakescope` binary.

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use fakescope_core::dataset::{assign_splits, load_manifest, split_dataset, Label, Split, SplitRatios};
use fakescope_core::detector::{
    distill, evaluate, train_detector, ConfusionStats, DetectorModel, DistilledVector, EpochLoss, TrainConfig,
};
use fakescope_core::encoder::projection::{train_forget_projection, ProjectionCorpus};
use fakescope_core::encoder::{encode_visual_batch, AdapterSpec, VisualEmbedding};
use fakescope_core::synthetic;
use fakescope_core::Error as CoreError;

use crate::error::{Result, ServiceError};
use crate::snapshot::{build_snapshot, BuildConfig, ProjectionSource, SnapshotMeta, CELLS_FILE, CONTRIBUTIONS_FILE};
use crate::store::Store;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the distiller and classification head.
    Train(TrainArgs),
    /// Build an analysis snapshot from a manifest and a trained checkpoint.
    Analyze(AnalyzeArgs),
    /// Serve the HTTP API over a snapshot store.
    Serve(ServeArgs),
    /// Export snapshot data.
    Export(ExportArgs),
    /// Write a forget-projection artifact.
    Projection(ProjectionArgs),
    /// Write a seeded synthetic corpus.
    DemoCorpus(DemoCorpusArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("input").required(true))]
pub struct TrainArgs {
    /// JSON-lines manifest or a directory with real/ and fake/ subfolders.
    #[arg(long, group = "input")]
    pub manifest: Option<PathBuf>,
    /// JSON-lines file of precomputed 256-d visual embeddings.
    #[arg(long, group = "input")]
    pub embeddings: Option<PathBuf>,
    /// Checkpoint path; a report is written next to it as `<out>.report.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.0)]
    pub lambda_bce: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_ortho: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value = "mock:0")]
    pub adapter: AdapterSpec,
    /// Projection artifact path or `random:<seed>`.
    #[arg(long, default_value = "random:0")]
    pub projection: ProjectionSource,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Snapshot store directory; the snapshot is written to `<out>/<id>`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub grid: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "mock:0")]
    pub adapter: AdapterSpec,
    #[arg(long, default_value = "random:0")]
    pub projection: ProjectionSource,
    /// Snapshot id; generated when omitted.
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportKind {
    Contributions,
    Relevance,
    Cells,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Snapshot directory (`<store>/<id>`).
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long, value_enum)]
    pub what: ExportKind,
    /// Output file (cells, contributions) or directory (relevance); cells and
    /// contributions go to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict relevance export to these image ids.
    #[arg(long = "image")]
    pub images: Vec<String>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true))]
pub struct ProjectionArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Seeded random matrix with orthonormal rows.
    #[arg(long, group = "source")]
    pub random_seed: Option<u64>,
    /// Directory with natural/, text/ and overlaid/ images to train on.
    #[arg(long, group = "source")]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "mock:0")]
    pub adapter: AdapterSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusKind {
    /// PNG images under real/ and fake/ plus manifest.jsonl.
    Images,
    /// natural/, text/ and overlaid/ images for projection training.
    Text,
    /// Two 256-d Gaussians, as an embeddings file.
    Gaussian,
    /// Linearly separable 256-d embeddings, as an embeddings file.
    Separable,
}

#[derive(Debug, Args)]
pub struct DemoCorpusArgs {
    #[arg(long, value_enum)]
    pub kind: CorpusKind,
    /// Directory for image corpora, file for embeddings.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-coordinate mean offset of the Gaussian classes.
    #[arg(long, default_value_t = 0.5)]
    pub shift: f64,
    /// Number of coordinates carrying the Gaussian offset.
    #[arg(long, default_value_t = 8)]
    pub shifted_dims: usize,
}

/// One line of an embeddings file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLine {
    pub id: String,
    pub label: Label,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingLine>> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ServiceError::BadRequest(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn write_embeddings(path: &Path, data: &[(VisualEmbedding, Label)]) -> Result<()> {
    let mut out = Vec::new();
    for (e, label) in data {
        let line = EmbeddingLine {
            id: e.source_id.clone(),
            label: *label,
            vector: e.vector.clone(),
            split: None,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| ServiceError::Internal(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(fakescope_core::artifact::write_atomic(path, &out)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub config: TrainConfig,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub best_epoch: usize,
    pub distiller_defect: f64,
    pub history: Vec<EpochLoss>,
    pub val: ConfusionStats,
    pub test: Option<ConfusionStats>,
    /// Records that could not be encoded.
    pub skipped: Vec<String>,
}

pub fn report_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".report.json");
    checkpoint.with_file_name(name)
}

type Labelled = Vec<(VisualEmbedding, Label)>;

/// Groups embeddings by split, assigning a seeded stratified split when any
/// item lacks one.
fn by_split(items: Vec<(VisualEmbedding, Label, Option<Split>)>, seed: u64) -> Result<[Labelled; 3]> {
    let splits: Vec<Split> = if items.iter().all(|(_, _, s)| s.is_some()) {
        items.iter().map(|(_, _, s)| s.expect("checked")).collect()
    } else {
        let labels: Vec<Label> = items.iter().map(|(_, l, _)| *l).collect();
        assign_splits(&labels, SplitRatios::default(), seed)?
    };
    let mut out: [Labelled; 3] = Default::default();
    for ((e, l, _), s) in items.into_iter().zip(splits) {
        let i = Split::ALL.iter().position(|x| *x == s).expect("known split");
        out[i].push((e, l));
    }
    Ok(out)
}

pub fn train(args: &TrainArgs) -> Result<TrainReport> {
    let mut skipped = Vec::new();
    let items = if let Some(path) = &args.embeddings {
        read_embeddings(path)?
            .into_iter()
            .map(|l| Ok((VisualEmbedding::new(l.vector, l.id)?, l.label, l.split)))
            .collect::<Result<Vec<_>>>()?
    } else {
        let path = args.manifest.as_ref().expect("clap requires an input");
        let mut manifest = load_manifest(path)?;
        if manifest.records.iter().any(|r| r.split.is_none()) {
            manifest = split_dataset(&manifest, SplitRatios::default(), args.seed)?;
        }
        let adapter = args.adapter.build()?;
        let projection = args.projection.load()?;
        let encoded = encode_visual_batch(&manifest.records, &adapter, &projection);
        let mut items = Vec::new();
        for (record, result) in manifest.records.iter().zip(encoded) {
            match result {
                Ok(e) => items.push((e, record.label, record.split)),
                Err(e) => skipped.push(format!("{}: {e}", record.id)),
            }
        }
        items
    };
    let [train_set, val_set, test_set] = by_split(items, args.seed)?;
    let config = TrainConfig {
        lambda_bce: args.lambda_bce,
        lambda_ortho: args.lambda_ortho,
        batch_size: args.batch,
        learning_rate: args.lr,
        max_epochs: args.epochs,
        patience: args.patience,
        ..TrainConfig::default()
    };
    let outcome = train_detector(&train_set, &val_set, config, args.seed)?;
    let model = outcome.model;
    let distilled = |set: &Labelled| {
        set.iter()
            .map(|(e, l)| Ok((distill(e, &model)?, *l)))
            .collect::<Result<Vec<(DistilledVector, Label)>>>()
    };
    let report = TrainReport {
        seed: args.seed,
        config,
        train_count: train_set.len(),
        val_count: val_set.len(),
        test_count: test_set.len(),
        best_epoch: outcome.best_epoch,
        distiller_defect: model.distiller_defect(),
        history: outcome.history,
        val: evaluate(&distilled(&val_set)?, &model)?,
        test: if test_set.is_empty() {
            None
        } else {
            Some(evaluate(&distilled(&test_set)?, &model)?)
        },
        skipped,
    };
    model.save(&args.out)?;
    let bytes = serde_json::to_vec_pretty(&report).map_err(|e| ServiceError::Internal(e.to_string()))?;
    fakescope_core::artifact::write_atomic(&report_path(&args.out), &bytes)?;
    Ok(report)
}

pub fn analyze(args: &AnalyzeArgs) -> Result<SnapshotMeta> {
    let manifest = load_manifest(&args.manifest)?;
    build_snapshot(
        &args.out,
        &manifest,
        &args.checkpoint,
        &args.projection,
        &args.adapter,
        &BuildConfig {
            grid: args.grid,
            seed: args.seed,
            snapshot_id: args.id.clone(),
        },
    )
}

/// Opens the store and binds the address; both failures surface before the
/// server starts.
pub async fn prepare_serve(args: &ServeArgs) -> Result<(Arc<Store>, tokio::net::TcpListener)> {
    let store = Store::open(&args.store)?;
    if store.ids()?.is_empty() {
        return Err(ServiceError::BadRequest(format!(
            "{} holds no snapshots",
            args.store.display()
        )));
    }
    let listener = crate::api::bind(args.addr).await?;
    Ok((Arc::new(store), listener))
}

fn store_and_id(snapshot: &Path) -> Result<(Store, String)> {
    let id = snapshot
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| ServiceError::BadRequest(format!("{} is not a snapshot directory", snapshot.display())))?;
    let root = snapshot
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    Ok((Store::open(root)?, id))
}

/// File name for an image's relevance export; ids may contain `/`.
pub fn relevance_file_name(image_id: &str) -> String {
    let safe: String = image_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.rel")
}

pub fn export(args: &ExportArgs, stdout: &mut dyn Write) -> Result<usize> {
    let (store, id) = store_and_id(&args.snapshot)?;
    let snap = store.get(&id)?;
    let copy = |name: &str, stdout: &mut dyn Write| -> Result<usize> {
        let src = snap.dir.join(name);
        let bytes = fs::read(&src).map_err(|e| CoreError::io(&src, e))?;
        match &args.out {
            Some(out) => fakescope_core::artifact::write_atomic(out, &bytes)?,
            None => stdout.write_all(&bytes).map_err(|e| CoreError::io("<stdout>", e))?,
        }
        Ok(bytes.len())
    };
    match args.what {
        ExportKind::Cells => copy(CELLS_FILE, stdout),
        ExportKind::Contributions => copy(CONTRIBUTIONS_FILE, stdout),
        ExportKind::Relevance => {
            let out = args
                .out
                .as_ref()
                .ok_or_else(|| ServiceError::BadRequest("relevance export needs --out <dir>".into()))?;
            let ids: Vec<String> = if args.images.is_empty() {
                snap.images.iter().map(|e| e.image_id.clone()).collect()
            } else {
                args.images.clone()
            };
            fs::create_dir_all(out).map_err(|e| CoreError::io(out, e))?;
            for image in &ids {
                let src = snap.relevance_file(image)?;
                let dst = out.join(relevance_file_name(image));
                fs::copy(&src, &dst).map_err(|e| CoreError::io(&dst, e))?;
            }
            Ok(ids.len())
        }
    }
}

pub fn projection(args: &ProjectionArgs) -> Result<()> {
    let projection = match (&args.random_seed, &args.corpus) {
        (Some(seed), _) => fakescope_core::encoder::projection::ForgetProjection::random_orthonormal(*seed),
        (None, Some(dir)) => {
            let corpus = ProjectionCorpus::load_dir(dir)?;
            train_forget_projection(&corpus, &args.adapter.build()?, args.seed)?
        }
        (None, None) => return Err(ServiceError::BadRequest("need --random-seed or --corpus".into())),
    };
    Ok(projection.save(&args.out)?)
}

pub fn demo_corpus(args: &DemoCorpusArgs) -> Result<()> {
    match args.kind {
        CorpusKind::Images => {
            synthetic::write_image_corpus(&args.out, args.n, args.size, args.seed)?;
        }
        CorpusKind::Text => synthetic::write_text_corpus(&args.out, args.n, args.size, args.seed)?,
        CorpusKind::Gaussian => write_embeddings(
            &args.out,
            &synthetic::two_gaussian_embeddings(args.n, args.shift, args.shifted_dims, args.seed),
        )?,
        CorpusKind::Separable => write_embeddings(&args.out, &synthetic::separable_embeddings(args.n, args.seed))?,
    }
    Ok(())
}

/// Checkpoint summary printed after training.
pub fn describe_model(model: &DetectorModel) -> String {
    format!(
        "distiller defect {:.5}, head bias {:.4}",
        model.distiller_defect(),
        model.head_b
    )
}
