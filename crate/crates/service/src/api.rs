//! HTTP API over a snapshot store, mounted under `/api/v1`.

use std::io::Cursor;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use fakescope_core::analytics::{
    contribution_distributions, dimension_distributions, CellId, CellLayout, ConceptClustering, ContributionFilter,
    ContributionSummary, DimensionDistribution, GridCell, ProjectedPoint, Scope,
};
use fakescope_core::contribution::{
    boundary_distance, waterfall_data, whatif_with_mode, WaterfallStep, WhatIfMode, WhatIfResult, DEFAULT_EPSILON,
};
use fakescope_core::dataset::Label;
use fakescope_core::detector::{DistilledVector, Prediction};
use fakescope_core::relevance::PixelRelevanceMap;
use fakescope_core::Error as CoreError;

use crate::annotations::Annotation;
use crate::error::{Result, ServiceError};
use crate::snapshot::{ImageEntry, SnapshotMeta};
use crate::store::{Snapshot, SnapshotSummary, Store};

type AppState = Arc<Store>;

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Core(e) => match e {
                CoreError::Argument(_) | CoreError::Validation(_) => StatusCode::BAD_REQUEST,
                CoreError::Capability(_) | CoreError::DegenerateModel(_) => StatusCode::UNPROCESSABLE_ENTITY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
        };
        (
            status,
            Json(ErrorBody {
                error: self.to_string(),
            }),
        )
            .into_response()
    }
}

/// Parses the `row,col` form used in URLs.
pub fn parse_cell(s: &str) -> Result<CellId> {
    let bad = || ServiceError::BadRequest(format!("cell `{s}` is not `<row>,<col>`"));
    let (r, c) = s.split_once(',').ok_or_else(bad)?;
    Ok(CellId {
        row: r.trim().parse().map_err(|_| bad())?,
        col: c.trim().parse().map_err(|_| bad())?,
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

async fn snapshot(store: &AppState, id: String) -> Result<Arc<Snapshot>> {
    let store = store.clone();
    blocking(move || store.get(&id)).await
}

pub fn router(store: Arc<Store>) -> Router {
    let api = Router::new()
        .route("/snapshots", get(list_snapshots))
        .route("/snapshots/{id}", get(get_snapshot))
        .route("/snapshots/{id}/points", get(get_points))
        .route("/snapshots/{id}/cells", get(get_cells))
        .route("/snapshots/{id}/cells/{cell}", get(get_cell))
        .route("/snapshots/{id}/cells/{cell}/layout", get(get_layout))
        .route("/snapshots/{id}/cells/{cell}/concepts", get(get_concepts))
        .route("/snapshots/{id}/images/{img}", get(get_image))
        .route("/snapshots/{id}/images/{img}/relevance/{dim}", get(get_relevance))
        .route("/snapshots/{id}/images/{img}/contributions", get(get_contributions))
        .route("/snapshots/{id}/dimensions", get(get_dimensions))
        .route("/snapshots/{id}/whatif", post(post_whatif))
        .route(
            "/snapshots/{id}/annotations",
            get(list_annotations)
                .post(add_annotation)
                .delete(delete_annotation_query),
        )
        .route("/snapshots/{id}/annotations/{ann}", delete(delete_annotation));
    Router::new().nest("/api/v1", api).with_state(store)
}

async fn list_snapshots(State(store): State<AppState>) -> Result<Json<Vec<SnapshotSummary>>> {
    Ok(Json(blocking(move || store.list()).await?))
}

async fn get_snapshot(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<SnapshotMeta>> {
    Ok(Json(snapshot(&store, id).await?.meta.clone()))
}

async fn get_points(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<ProjectedPoint>>> {
    let snap = snapshot(&store, id).await?;
    Ok(Json(blocking(move || snap.points()).await?))
}

async fn get_cells(State(store): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let snap = snapshot(&store, id).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], snap.cells_bytes.clone()).into_response())
}

#[derive(Debug, Serialize)]
struct CellDetail {
    #[serde(flatten)]
    cell: GridCell,
    annotations: Vec<Annotation>,
}

async fn get_cell(State(store): State<AppState>, Path((id, cell)): Path<(String, String)>) -> Result<Json<CellDetail>> {
    let cell = parse_cell(&cell)?;
    let snap = snapshot(&store, id).await?;
    let grid_cell = snap.cell(cell)?.clone();
    let annotations = blocking(move || store.annotations.list(snap.id(), Some(cell))).await?;
    Ok(Json(CellDetail {
        cell: grid_cell,
        annotations,
    }))
}

async fn get_layout(
    State(store): State<AppState>,
    Path((id, cell)): Path<(String, String)>,
) -> Result<Json<CellLayout>> {
    let cell = parse_cell(&cell)?;
    let snap = snapshot(&store, id).await?;
    Ok(Json(blocking(move || snap.layout(cell)).await?))
}

async fn get_concepts(
    State(store): State<AppState>,
    Path((id, cell)): Path<(String, String)>,
) -> Result<Json<ConceptClustering>> {
    let cell = parse_cell(&cell)?;
    let snap = snapshot(&store, id).await?;
    let clustering = blocking(move || snap.concepts(cell)).await?;
    Ok(Json(clustering.as_ref().clone()))
}

async fn get_image(State(store): State<AppState>, Path((id, img)): Path<(String, String)>) -> Result<Json<ImageEntry>> {
    let snap = snapshot(&store, id).await?;
    Ok(Json(snap.image(&img)?.0.clone()))
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MapFormat {
    #[default]
    Png,
    Raw,
    Json,
}

#[derive(Debug, Default, Deserialize)]
struct RelevanceQuery {
    #[serde(default)]
    format: MapFormat,
}

/// 8-bit grayscale rendition of a `[0, 1]` map.
pub fn map_to_png(map: &PixelRelevanceMap) -> Result<Vec<u8>> {
    let pixels: Vec<u8> = map
        .map
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(map.width as u32, map.height as u32, pixels)
        .ok_or_else(|| ServiceError::Internal("relevance map has inconsistent size".into()))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| ServiceError::Internal(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// `format=png` (default) renders one map; `format=json` returns it as
/// numbers; `format=raw` returns the image's whole 16-map cache file.
async fn get_relevance(
    State(store): State<AppState>,
    Path((id, img, dim)): Path<(String, String, usize)>,
    Query(query): Query<RelevanceQuery>,
) -> Result<Response> {
    if !(1..=16).contains(&dim) {
        return Err(ServiceError::BadRequest(format!("dimension {dim} is outside 1..16")));
    }
    let snap = snapshot(&store, id).await?;
    blocking(move || {
        Ok(match query.format {
            MapFormat::Png => {
                let stack = snap.relevance(&img)?;
                ([(header::CONTENT_TYPE, "image/png")], map_to_png(stack.map(dim)?)?).into_response()
            }
            MapFormat::Json => Json(snap.relevance(&img)?.map(dim)?.clone()).into_response(),
            MapFormat::Raw => {
                let path = snap.relevance_file(&img)?;
                let bytes = std::fs::read(&path).map_err(|e| CoreError::io(&path, e))?;
                ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()
            }
        })
    })
    .await
}

#[derive(Debug, Serialize)]
struct ContributionsBody {
    image_id: String,
    label: Label,
    prediction: Prediction,
    s: Vec<f64>,
    c: Vec<f64>,
    low_magnitude: bool,
    waterfall: Vec<WaterfallStep>,
    boundary_distance: Option<f64>,
}

async fn get_contributions(
    State(store): State<AppState>,
    Path((id, img)): Path<(String, String)>,
) -> Result<Json<ContributionsBody>> {
    let snap = snapshot(&store, id).await?;
    let (entry, contrib) = snap.image(&img)?;
    Ok(Json(ContributionsBody {
        image_id: entry.image_id.clone(),
        label: entry.label,
        prediction: entry.prediction,
        s: contrib.s.clone(),
        c: contrib.c.clone(),
        low_magnitude: contrib.low_magnitude,
        waterfall: waterfall_data(contrib),
        boundary_distance: boundary_distance(&entry.distilled_vector()?, &snap.detector).ok(),
    }))
}

#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum ScopeKind {
    #[default]
    Global,
    Cell,
}

#[derive(Debug, Default, Deserialize)]
struct DimensionsQuery {
    #[serde(default)]
    scope: ScopeKind,
    cell: Option<String>,
    filter: Option<String>,
}

#[derive(Debug, Serialize)]
struct DimensionsBody {
    scope: Scope,
    filter: ContributionFilter,
    member_count: usize,
    /// Ascending symmetric divergence, then dimension order.
    distributions: Vec<DimensionDistribution>,
    /// Absent when no member passes the filter.
    contributions: Option<Vec<ContributionSummary>>,
}

async fn get_dimensions(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<DimensionsQuery>,
) -> Result<Json<DimensionsBody>> {
    let filter: ContributionFilter = query.filter.as_deref().unwrap_or("all").parse()?;
    let snap = snapshot(&store, id).await?;
    let body = blocking(move || {
        let (scope, members): (Scope, Vec<usize>) = match query.scope {
            ScopeKind::Global => (Scope::Global, (0..snap.images.len()).collect()),
            ScopeKind::Cell => {
                let raw = query
                    .cell
                    .as_deref()
                    .ok_or_else(|| ServiceError::BadRequest("scope=cell needs cell=<row>,<col>".into()))?;
                let cell = parse_cell(raw)?;
                let members = snap
                    .cell(cell)?
                    .member_ids
                    .iter()
                    .map(|m| {
                        snap.images
                            .iter()
                            .position(|e| &e.image_id == m)
                            .ok_or_else(|| ServiceError::not_found(m.clone()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (Scope::Cell(cell), members)
            }
        };
        let distributions = match scope {
            Scope::Global => snap.dimensions.global.clone(),
            Scope::Cell(_) => {
                let vectors = members
                    .iter()
                    .map(|&i| Ok((snap.images[i].distilled_vector()?, snap.images[i].label)))
                    .collect::<Result<Vec<(DistilledVector, Label)>>>()?;
                let samples: Vec<(&DistilledVector, Label)> = vectors.iter().map(|(v, l)| (v, *l)).collect();
                dimension_distributions(&samples, &snap.dimensions.ranges, scope)
            }
        };
        let contribs: Vec<_> = members
            .iter()
            .map(|&i| (&snap.contributions[i], snap.images[i].is_correct()))
            .collect();
        Ok(DimensionsBody {
            scope,
            filter,
            member_count: members.len(),
            distributions,
            contributions: contribution_distributions(&contribs, filter),
        })
    })
    .await?;
    Ok(Json(body))
}

#[derive(Debug, Deserialize)]
struct WhatIfRequest {
    image_id: String,
    epsilon: Option<f64>,
    #[serde(default)]
    mode: WhatIfMode,
}

#[derive(Debug, Serialize)]
struct WhatIfBody {
    image_id: String,
    #[serde(flatten)]
    result: WhatIfResult,
}

async fn post_whatif(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<WhatIfRequest>,
) -> Result<Json<WhatIfBody>> {
    let snap = snapshot(&store, id).await?;
    let (entry, _) = snap.image(&req.image_id)?;
    let result = whatif_with_mode(
        &entry.distilled_vector()?,
        &snap.detector,
        req.epsilon.unwrap_or(DEFAULT_EPSILON),
        req.mode,
    )?;
    Ok(Json(WhatIfBody {
        image_id: req.image_id,
        result,
    }))
}

/// A cell given either as `"row,col"` or as `{"row": .., "col": ..}`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CellRef {
    Text(String),
    Id(CellId),
}

impl CellRef {
    fn resolve(&self) -> Result<CellId> {
        match self {
            CellRef::Text(s) => parse_cell(s),
            CellRef::Id(c) => Ok(*c),
        }
    }
}

#[derive(Debug, Deserialize)]
struct AnnotationRequest {
    cell_id: CellRef,
    text: String,
    author: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct AnnotationQuery {
    cell: Option<String>,
    id: Option<String>,
}

async fn list_annotations(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<AnnotationQuery>,
) -> Result<Json<Vec<Annotation>>> {
    let cell = query.cell.as_deref().map(parse_cell).transpose()?;
    let snap = snapshot(&store, id).await?;
    Ok(Json(blocking(move || store.annotations.list(snap.id(), cell)).await?))
}

async fn add_annotation(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<AnnotationRequest>,
) -> Result<(StatusCode, Json<Annotation>)> {
    let cell = req.cell_id.resolve()?;
    let snap = snapshot(&store, id).await?;
    snap.cell(cell)?;
    let annotation = blocking(move || store.annotations.add(snap.id(), cell, &req.text, req.author.as_deref())).await?;
    Ok((StatusCode::CREATED, Json(annotation)))
}

async fn remove(store: AppState, id: String, ann: String) -> Result<Json<Annotation>> {
    let snap = snapshot(&store, id).await?;
    Ok(Json(blocking(move || store.annotations.remove(snap.id(), &ann)).await?))
}

async fn delete_annotation(
    State(store): State<AppState>,
    Path((id, ann)): Path<(String, String)>,
) -> Result<Json<Annotation>> {
    remove(store, id, ann).await
}

async fn delete_annotation_query(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<AnnotationQuery>,
) -> Result<Json<Annotation>> {
    let ann = query
        .id
        .ok_or_else(|| ServiceError::BadRequest("missing annotation id".into()))?;
    remove(store, id, ann).await
}

/// Binds `addr`; an address already in use is reported here, before any
/// request is served.
pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServiceError::Internal(format!("cannot listen on {addr}: {e}")))
}

pub async fn serve(store: Arc<Store>, listener: tokio::net::TcpListener) -> Result<()> {
    axum::serve(listener, router(store))
        .await
        .map_err(|e| ServiceError::Internal(format!("server stopped: {e}")))
}
