use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use valulens::manifest::load_manifest;
use valulens::serve::{router, AppState, Progress};

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: PathBuf,
    app: Router,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("corpus.json");
    std::fs::copy(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sock_corpus.json"),
        &manifest,
    )
    .unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir(&images).unwrap();
    std::fs::write(images.join("sock-rival-01.jpg"), b"\xff\xd8\xff fake jpeg").unwrap();
    std::fs::write(images.join("n04254777_17.JPEG"), b"\xff\xd8\xff other").unwrap();
    std::fs::write(images.join("notes.txt"), b"not an image").unwrap();
    std::fs::write(dir.path().join("secret.png"), b"outside the root").unwrap();
    let state = AppState::load(&manifest, Some(images)).unwrap();
    Fixture {
        app: router(Arc::new(state)),
        manifest,
        _dir: dir,
    }
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, ctype)
}

async fn send_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes, _) = send(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn training_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("n04254777_{i}")).collect()
}

#[tokio::test]
async fn reads_categories_and_criteria() {
    let f = fixture();
    let (status, body) = send_json(&f.app, "GET", "/categories", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_array().unwrap().len(), 3);

    let (status, body) = send_json(&f.app, "GET", "/categories/n04254777", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["training_set_size"], 1300);

    let (status, body) = send_json(&f.app, "GET", "/criteria/sock-covered", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["exception_count"], 125);

    let (status, body) = send_json(&f.app, "GET", "/criteria", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_array().unwrap().len(), 3);

    let (status, body) = send_json(&f.app, "GET", "/criteria/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["kind"], "corpus");
    let (status, _) = send_json(&f.app, "GET", "/categories/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn tagging_exceptions_updates_count_and_file() {
    let f = fixture();
    let tags = training_ids(125);
    let (status, body) =
        send_json(&f.app, "PUT", "/criteria/sock-covered/exceptions", Some(json!(tags))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["exception_count"], 125);

    let (_, body) = send_json(&f.app, "GET", "/progress/sock-covered", None).await;
    let progress: Progress = serde_json::from_value(body).unwrap();
    assert_eq!((progress.tagged, progress.total), (125, 1300));
    assert_eq!(format!("{:.1}%", 100.0 * progress.exception_fraction), "9.6%");

    let on_disk = load_manifest(&f.manifest).unwrap();
    let crit = on_disk.criterion("sock-covered").unwrap();
    assert_eq!(crit.exception_count, 125);
    assert_eq!(crit.exception_image_ids, tags);

    // Re-fetching returns exactly what was written.
    let (_, body) = send_json(&f.app, "GET", "/criteria/sock-covered", None).await;
    assert_eq!(body["exception_image_ids"], json!(tags));

    let (status, _) =
        send_json(&f.app, "PUT", "/criteria/sock-covered/exceptions", Some(json!([]))).await;
    assert_eq!(status, StatusCode::OK);
    let (_, body) = send_json(&f.app, "GET", "/progress/sock-covered", None).await;
    assert_eq!(body["tagged"], 0);
}

#[tokio::test]
async fn invalid_mutations_leave_manifest_untouched() {
    let f = fixture();
    let before = std::fs::read(&f.manifest).unwrap();

    let (status, body) = send_json(
        &f.app,
        "PUT",
        "/criteria/sock-covered/exceptions",
        Some(json!(["a", "b", "a"])),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["kind"], "validation");

    let (status, _) = send_json(
        &f.app,
        "PUT",
        "/criteria/sock-covered/exceptions",
        Some(json!(training_ids(1301))),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, _) = send_json(&f.app, "PUT", "/criteria/sock-covered/rivals", Some(json!([]))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, body) =
        send_json(&f.app, "PUT", "/criteria/sock-covered/rivals", Some(json!({"ids": []}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["kind"], "parse");

    let (status, _) = send_json(&f.app, "PUT", "/criteria/ghost/rivals", Some(json!(["x"]))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    assert_eq!(std::fs::read(&f.manifest).unwrap(), before);
    let (_, body) = send_json(&f.app, "GET", "/criteria/sock-covered", None).await;
    assert_eq!(body["exception_count"], 125);
}

#[tokio::test]
async fn rival_lists_keep_their_order() {
    let f = fixture();
    let mut rivals: Vec<String> = (1..=20).rev().map(|i| format!("sock-rival-{i:02}")).collect();
    rivals.swap(0, 7);
    let (status, body) =
        send_json(&f.app, "PUT", "/criteria/sock-covered/rivals", Some(json!(rivals))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["rival_image_ids"], json!(rivals));
    let on_disk = load_manifest(&f.manifest).unwrap();
    assert_eq!(on_disk.criterion("sock-covered").unwrap().rival_image_ids, rivals);
}

#[tokio::test]
async fn concurrent_writes_are_serialized() {
    let f = fixture();
    let mut handles = Vec::new();
    for n in 1..=16usize {
        let app = f.app.clone();
        handles.push(tokio::spawn(async move {
            send_json(&app, "PUT", "/criteria/sock-covered/exceptions", Some(json!(training_ids(n)))).await
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap().0, StatusCode::OK);
    }
    let on_disk = load_manifest(&f.manifest).unwrap();
    let crit = on_disk.criterion("sock-covered").unwrap();
    assert_eq!(crit.exception_count as usize, crit.exception_image_ids.len());
    let (_, body) = send_json(&f.app, "GET", "/progress/sock-covered", None).await;
    assert_eq!(body["tagged"], crit.exception_count);
}

#[tokio::test]
async fn serves_images_by_id() {
    let f = fixture();
    let (status, bytes, ctype) = send(&f.app, "GET", "/images/sock-rival-01", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/jpeg"));
    assert_eq!(bytes, b"\xff\xd8\xff fake jpeg");

    let (status, _, ctype) = send(&f.app, "GET", "/images/n04254777_17.JPEG", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/jpeg"));
    let (status, _, _) = send(&f.app, "GET", "/images/n04254777_17", None).await;
    assert_eq!(status, StatusCode::OK);

    let (status, _, _) = send(&f.app, "GET", "/images/notes.txt", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _, _) = send(&f.app, "GET", "/images/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _, _) = send(&f.app, "GET", "/images/..%2Fsecret.png", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn images_need_a_root() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("corpus.json");
    std::fs::copy(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sock_corpus.json"),
        &manifest,
    )
    .unwrap();
    let app = router(Arc::new(AppState::load(&manifest, None).unwrap()));
    let (status, body) = send_json(&app, "GET", "/images/sock-rival-01", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"]["message"].as_str().unwrap().contains("VALULENS_IMAGE_ROOT"));
}
