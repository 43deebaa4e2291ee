use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use fakescope_core::analytics::GridCell;
use fakescope_core::dataset::load_manifest;
use fakescope_core::detector::{DetectorModel, TrainingMeta};
use fakescope_core::linalg::orthonormal_rows;
use fakescope_core::relevance::load_stack;
use fakescope_core::synthetic::write_image_corpus;
use fakescope_service::api::router;
use fakescope_service::snapshot::{build_snapshot, verify_checksums, BuildConfig, ProjectionSource, SnapshotMeta};
use fakescope_service::store::Store;

const N: usize = 24;
const SIZE: u32 = 32;

struct Fixture {
    _dir: tempfile::TempDir,
    store_dir: PathBuf,
    meta: SnapshotMeta,
    model: DetectorModel,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        write_image_corpus(&corpus, N, SIZE, 5).unwrap();
        let head: Vec<f64> = (0..16)
            .map(|i| if i % 2 == 0 { 0.9 } else { -0.6 } * (1.0 + i as f64 / 16.0))
            .collect();
        let model = DetectorModel::new(
            orthonormal_rows(16, 256, 11),
            head,
            0.05,
            3.0,
            1.0,
            TrainingMeta {
                seed: 11,
                epochs: None,
                config: None,
            },
        )
        .unwrap();
        let ckpt = dir.path().join("det.ckpt");
        model.save(&ckpt).unwrap();
        let store_dir = dir.path().join("store");
        let meta = build_snapshot(
            &store_dir,
            &load_manifest(&corpus.join("manifest.jsonl")).unwrap(),
            &ckpt,
            &ProjectionSource::Random(2),
            &"mock:1".parse().unwrap(),
            &BuildConfig {
                grid: 4,
                seed: 3,
                snapshot_id: Some("s1".into()),
            },
        )
        .unwrap();
        let model = DetectorModel::load(&ckpt).unwrap();
        Fixture {
            _dir: dir,
            store_dir,
            meta,
            model,
        }
    })
}

fn app() -> Router {
    router(Arc::new(Store::open(&fixture().store_dir).unwrap()))
}

async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> Value {
    let (status, body) = send(app, Method::GET, uri, None).await;
    assert_eq!(status, StatusCode::OK, "{uri}: {}", String::from_utf8_lossy(&body));
    serde_json::from_slice(&body).unwrap()
}

fn enc(id: &str) -> String {
    id.replace('/', "%2F")
}

fn cells_on_disk() -> Vec<GridCell> {
    serde_json::from_slice(&std::fs::read(fixture().store_dir.join("s1/cells.json")).unwrap()).unwrap()
}

fn dir_listing(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[tokio::test]
async fn lists_and_describes_snapshots() {
    let app = app();
    let list = get_json(&app, "/api/v1/snapshots").await;
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["snapshot_id"], "s1");
    assert_eq!(list[0]["image_count"], N);
    let meta = get_json(&app, "/api/v1/snapshots/s1").await;
    assert_eq!(meta["cell_count"], fixture().meta.cell_count);
    let (status, body) = send(&app, Method::GET, "/api/v1/snapshots/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(String::from_utf8_lossy(&body).contains("nope"));
}

#[tokio::test]
async fn cells_pass_through_from_disk() {
    let app = app();
    let (status, raw) = send(&app, Method::GET, "/api/v1/snapshots/s1/cells", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(raw, std::fs::read(fixture().store_dir.join("s1/cells.json")).unwrap());
    let cells = cells_on_disk();
    assert_eq!(cells.iter().map(|c| c.member_ids.len()).sum::<usize>(), N);
    for cell in &cells {
        let uri = format!("/api/v1/snapshots/s1/cells/{},{}", cell.cell_id.row, cell.cell_id.col);
        let got = get_json(&app, &uri).await;
        assert_eq!(got["stats"], serde_json::to_value(cell.stats).unwrap());
        assert_eq!(got["member_ids"], json!(cell.member_ids));
    }
    let points = get_json(&app, "/api/v1/snapshots/s1/points").await;
    assert_eq!(points.as_array().unwrap().len(), N);
    let (status, _) = send(&app, Method::GET, "/api/v1/snapshots/s1/cells/99,99", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, Method::GET, "/api/v1/snapshots/s1/cells/1_2", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn whatif_delta_flips_the_recomputed_logit() {
    let app = app();
    let model = &fixture().model;
    let images = std::fs::read_to_string(fixture().store_dir.join("s1/images.jsonl")).unwrap();
    for line in images.lines().take(8) {
        let entry: Value = serde_json::from_str(line).unwrap();
        let id = entry["image_id"].as_str().unwrap();
        let (status, body) = send(
            &app,
            Method::POST,
            "/api/v1/snapshots/s1/whatif",
            Some(json!({ "image_id": id })),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        let r: Value = serde_json::from_slice(&body).unwrap();
        let v: Vec<f64> = serde_json::from_value(entry["distilled"].clone()).unwrap();
        let delta: Vec<f64> = serde_json::from_value(r["delta"].clone()).unwrap();
        let logit = |x: &[f64]| x.iter().zip(&model.head_w).map(|(a, b)| a * b).sum::<f64>() + model.head_b;
        let moved: Vec<f64> = v.iter().zip(&delta).map(|(a, b)| a + b).collect();
        assert!(
            logit(&v) * logit(&moved) < 0.0,
            "{id}: {} -> {}",
            logit(&v),
            logit(&moved)
        );
        assert_ne!(r["old_prediction"]["label"], r["new_prediction"]["label"]);
    }
    let (status, _) = send(
        &app,
        Method::POST,
        "/api/v1/snapshots/s1/whatif",
        Some(json!({"image_id": "x"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let first: Value = serde_json::from_str(images.lines().next().unwrap()).unwrap();
    let bad = json!({"image_id": first["image_id"], "epsilon": -1.0});
    let (status, _) = send(&app, Method::POST, "/api/v1/snapshots/s1/whatif", Some(bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let axis = json!({"image_id": first["image_id"], "mode": "axis_aligned"});
    let r: Value = serde_json::from_slice(
        &send(&app, Method::POST, "/api/v1/snapshots/s1/whatif", Some(axis))
            .await
            .1,
    )
    .unwrap();
    let nonzero = r["delta"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|d| d.as_f64().unwrap() != 0.0)
        .count();
    assert_eq!(nonzero, 1);
}

#[tokio::test]
async fn relevance_renditions_agree() {
    let app = app();
    let id = "fake/00001.png";
    let base = format!("/api/v1/snapshots/s1/images/{}/relevance", enc(id));
    let (status, png) = send(&app, Method::GET, &format!("{base}/5"), None).await;
    assert_eq!(status, StatusCode::OK);
    let img = image::load_from_memory(&png).unwrap().into_luma8();
    assert_eq!(img.dimensions(), (SIZE, SIZE));
    let json_map = get_json(&app, &format!("{base}/5?format=json")).await;
    let values: Vec<f64> = serde_json::from_value(json_map["map"].clone()).unwrap();
    assert_eq!(values.len(), (SIZE * SIZE) as usize);
    if json_map["degenerate"] == json!(false) {
        assert_eq!(values.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(values.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        assert_eq!(img.iter().min(), Some(&0));
        assert_eq!(img.iter().max(), Some(&255));
    }
    for (p, v) in img.iter().zip(&values) {
        assert_eq!(*p, (v * 255.0).round() as u8);
    }

    let (status, raw) = send(&app, Method::GET, &format!("{base}/5?format=raw"), None).await;
    assert_eq!(status, StatusCode::OK);
    let tmp = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(tmp.path(), &raw).unwrap();
    let stack = load_stack(tmp.path()).unwrap();
    assert_eq!(stack.maps.len(), 16);
    assert_eq!(stack.source_id, id);
    for (a, b) in stack.maps[4].map.iter().zip(&values) {
        assert!((a - b).abs() < 1e-6);
    }
    for m in &stack.maps {
        assert!(m.map.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    let (again, png2) = send(&app, Method::GET, &format!("{base}/5"), None).await;
    assert_eq!(again, StatusCode::OK);
    assert_eq!(png, png2);
    let (status, _) = send(&app, Method::GET, &format!("{base}/0"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, Method::GET, &format!("{base}/17"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn contributions_and_waterfall() {
    let app = app();
    let c = get_json(
        &app,
        &format!("/api/v1/snapshots/s1/images/{}/contributions", enc("real/00000.png")),
    )
    .await;
    let cs: Vec<f64> = serde_json::from_value(c["c"].clone()).unwrap();
    assert!((cs.iter().map(|x| x.abs()).sum::<f64>() - 1.0).abs() < 1e-9);
    let last = c["waterfall"].as_array().unwrap().last().unwrap()["cumulative"]
        .as_f64()
        .unwrap();
    assert!((last - cs.iter().sum::<f64>()).abs() < 1e-12);
    let entry = get_json(&app, &format!("/api/v1/snapshots/s1/images/{}", enc("real/00000.png"))).await;
    assert_eq!(entry["label"], 0);
}

#[tokio::test]
async fn dimension_views() {
    let app = app();
    let g = get_json(&app, "/api/v1/snapshots/s1/dimensions").await;
    let dists = g["distributions"].as_array().unwrap();
    assert_eq!(dists.len(), 16);
    let kls: Vec<f64> = dists.iter().map(|d| d["kl"].as_f64().unwrap()).collect();
    assert!(kls.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(g["member_count"], N);
    assert_eq!(g["contributions"].as_array().unwrap().len(), 16);

    let cells = cells_on_disk();
    let cell = &cells[0];
    let uri = format!(
        "/api/v1/snapshots/s1/dimensions?scope=cell&cell={},{}&filter=correct",
        cell.cell_id.row, cell.cell_id.col
    );
    let c = get_json(&app, &uri).await;
    assert_eq!(c["member_count"], cell.member_ids.len());
    let correct = cell.stats.tp + cell.stats.tn;
    assert_eq!(c["contributions"].is_null(), correct == 0);

    let (status, _) = send(&app, Method::GET, "/api/v1/snapshots/s1/dimensions?scope=cell", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, Method::GET, "/api/v1/snapshots/s1/dimensions?filter=odd", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn layout_and_concepts_for_a_cell() {
    let app = app();
    let cells = cells_on_disk();
    let cell = cells.iter().max_by_key(|c| c.member_ids.len()).unwrap();
    let key = format!("{},{}", cell.cell_id.row, cell.cell_id.col);
    let layout = get_json(&app, &format!("/api/v1/snapshots/s1/cells/{key}/layout")).await;
    let placements = layout["placements"].as_array().unwrap();
    assert_eq!(placements.len(), cell.member_ids.len());
    let mut slots: Vec<(u64, u64)> = placements
        .iter()
        .map(|p| (p["row"].as_u64().unwrap(), p["col"].as_u64().unwrap()))
        .collect();
    slots.sort();
    slots.dedup();
    assert_eq!(slots.len(), cell.member_ids.len());

    let concepts = get_json(&app, &format!("/api/v1/snapshots/s1/cells/{key}/concepts")).await;
    let clusters = concepts["clusters"].as_array().unwrap();
    assert!(clusters.len() <= 3);
    for cl in clusters {
        for s in cl["segments"].as_array().unwrap() {
            assert!(cell.member_ids.iter().any(|m| m == s["image_id"].as_str().unwrap()));
        }
    }
    assert_eq!(
        get_json(&app, &format!("/api/v1/snapshots/s1/cells/{key}/concepts")).await,
        concepts
    );
}

#[tokio::test]
async fn annotation_lifecycle() {
    let app = app();
    let cells = cells_on_disk();
    let (a, b) = (cells[0].cell_id, cells[1].cell_id);
    let url = "/api/v1/snapshots/s1/annotations";
    let add = |cell: String, text: &str| json!({"cell_id": cell, "text": text});

    let (s1, s2) = tokio::join!(
        send(
            &app,
            Method::POST,
            url,
            Some(add(format!("{},{}", a.row, a.col), "grid seams"))
        ),
        send(
            &app,
            Method::POST,
            url,
            Some(json!({"cell_id": {"row": b.row, "col": b.col}, "text": "halo", "author": "lee"}))
        ),
    );
    assert_eq!((s1.0, s2.0), (StatusCode::CREATED, StatusCode::CREATED));
    let first: Value = serde_json::from_slice(&s1.1).unwrap();
    let second: Value = serde_json::from_slice(&s2.1).unwrap();
    assert_eq!(second["author"], "lee");

    let all = get_json(&app, url).await;
    let ids: Vec<&str> = all
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x["id"].as_str().unwrap())
        .collect();
    assert!(ids.contains(&first["id"].as_str().unwrap()) && ids.contains(&second["id"].as_str().unwrap()));
    let cell = get_json(&app, &format!("/api/v1/snapshots/s1/cells/{},{}", a.row, a.col)).await;
    assert!(cell["annotations"]
        .as_array()
        .unwrap()
        .iter()
        .any(|x| x["id"] == first["id"]));

    let (status, _) = send(
        &app,
        Method::DELETE,
        &format!("{url}/{}", first["id"].as_str().unwrap()),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = send(
        &app,
        Method::DELETE,
        &format!("{url}?id={}", second["id"].as_str().unwrap()),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let remaining = get_json(&app, url).await;
    assert!(remaining
        .as_array()
        .unwrap()
        .iter()
        .all(|x| x["id"] != first["id"] && x["id"] != second["id"]));
    let (status, _) = send(
        &app,
        Method::DELETE,
        &format!("{url}/{}", first["id"].as_str().unwrap()),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = send(&app, Method::POST, url, Some(add("99,99".into(), "x"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(
        &app,
        Method::POST,
        url,
        Some(add(format!("{},{}", a.row, a.col), "   ")),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn requests_leave_the_snapshot_untouched() {
    let dir = fixture().store_dir.join("s1");
    let before = dir_listing(&dir);
    let app = app();
    let cells = cells_on_disk();
    let key = format!("{},{}", cells[0].cell_id.row, cells[0].cell_id.col);
    let member = enc(&cells[0].member_ids[0]);
    for uri in [
        format!("/api/v1/snapshots/s1/images/{member}/relevance/1"),
        format!("/api/v1/snapshots/s1/cells/{key}/concepts"),
        "/api/v1/snapshots/s1/dimensions?scope=global&filter=incorrect".into(),
    ] {
        let (a, first) = send(&app, Method::GET, &uri, None).await;
        let (b, second) = send(&app, Method::GET, &uri, None).await;
        assert_eq!((a, b), (StatusCode::OK, StatusCode::OK));
        assert_eq!(first, second, "{uri}");
    }
    send(
        &app,
        Method::POST,
        "/api/v1/snapshots/s1/annotations",
        Some(json!({"cell_id": key, "text": "t"})),
    )
    .await;
    assert_eq!(dir_listing(&dir), before);
    verify_checksums(&dir, &fixture().meta).unwrap();
}
