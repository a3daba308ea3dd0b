mod common;

use std::path::Path;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use parkspot_cli::server::{bind, router, AppState, ImageInfo};
use parkspot_core::imaging::write_ppm;
use parkspot_core::RgbImage;
use serde_json::{json, Value};
use tower::ServiceExt;

fn image_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, w, h) in [("a.ppm", 40, 30), ("b.ppm", 64, 48), ("c.ppm", 20, 10)] {
        let img = RgbImage::from_fn(w, h, |x, y| [x as f32 / w as f32, y as f32 / h as f32, 0.5]);
        std::fs::write(dir.path().join(name), write_ppm(&img)).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "not an image").unwrap();
    dir
}

fn app(dir: &Path) -> Router {
    router(AppState::new(dir, None).unwrap())
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn bbox_doc(image: &str, ms: u64) -> Value {
    json!({
        "image": image,
        "kind": "bbox",
        "spaces": [{"id": "1", "points": [[1.0, 2.0], [10.0, 12.0]], "occupied": true, "annotation_ms": ms}]
    })
}

#[tokio::test]
async fn lists_and_serves_images() {
    let dir = image_dir();
    let app = app(dir.path());
    let (status, body) = send(&app, "GET", "/api/images", None).await;
    assert_eq!(status, StatusCode::OK);
    let images: Vec<ImageInfo> = serde_json::from_slice(&body).unwrap();
    assert_eq!(images.len(), 3);
    assert_eq!(images[1], ImageInfo { id: "b.ppm".into(), width: 64, height: 48 });

    let (status, body) = send(&app, "GET", "/api/images/a.ppm", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, std::fs::read(dir.path().join("a.ppm")).unwrap());
    for bad in ["/api/images/missing.ppm", "/api/images/notes.txt", "/api/images/..%2Fa.ppm"] {
        assert_eq!(send(&app, "GET", bad, None).await.0, StatusCode::NOT_FOUND, "{bad}");
    }
    let (status, body) = send(&app, "GET", "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("/api/images"));
}

#[tokio::test]
async fn post_persists_and_get_returns_it() {
    let dir = image_dir();
    let app = app(dir.path());
    assert_eq!(send(&app, "GET", "/api/annotations/a.ppm", None).await.0, StatusCode::NOT_FOUND);

    let doc = bbox_doc("a.ppm", 2000);
    let (status, _) = send(&app, "POST", "/api/annotations/a.ppm", Some(doc.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let stored: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(stored, doc);
    let (status, body) = send(&app, "GET", "/api/annotations/a.ppm", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), doc);

    let (_, body) = send(&app, "GET", "/api/timing", None).await;
    let timing: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(timing["kinds"]["bbox"]["mean_seconds"], 2.0);
    assert_eq!(timing["kinds"]["bbox"]["reference_seconds"], 2.7);
}

#[tokio::test]
async fn schema_errors_name_the_field() {
    let dir = image_dir();
    let app = app(dir.path());
    let three = json!({
        "image": "a.ppm",
        "kind": "polygon",
        "spaces": [{"id": "1", "points": [[0, 0], [4, 0], [4, 4]]}]
    });
    let cases = [
        (three, "spaces[0].points"),
        (bbox_doc("b.ppm", 10), "image"),
        (json!({"image": "a.ppm", "kind": "fixed", "spaces": []}), "side"),
        (json!({"image": "a.ppm", "kind": "bbox", "spaces": [{"id": "1", "points": "x"}]}), "spaces[0].points"),
    ];
    for (doc, path) in cases {
        let (status, body) = send(&app, "POST", "/api/annotations/a.ppm", Some(doc)).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
        let err: Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(err["path"], path, "{err}");
        assert!(err["error"].as_str().is_some_and(|e| !e.is_empty()));
    }
    assert!(!dir.path().join("a.json").exists());
    assert_eq!(
        send(&app, "POST", "/api/annotations/zzz.ppm", Some(bbox_doc("zzz.ppm", 5))).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn pklot_ground_truth_is_served_as_a_polygon_document() {
    let dir = image_dir();
    std::fs::write(dir.path().join("c.xml"), common::POLYGON_XML.replace("\"A\"", "\"1\"").replace("\"B\"", "\"0\"")).unwrap();
    let (status, body) = send(&app(dir.path()), "GET", "/api/annotations/c.ppm", None).await;
    assert_eq!(status, StatusCode::OK);
    let doc: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(doc["kind"], "polygon");
    assert_eq!(doc["spaces"].as_array().unwrap().len(), 2);
    assert_eq!(doc["spaces"][1]["occupied"], false);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrent_writes_never_leave_a_partial_file() {
    let dir = image_dir();
    let app = app(dir.path());
    let writers: Vec<_> = (1..=64u64)
        .map(|i| {
            let app = app.clone();
            tokio::spawn(async move { send(&app, "POST", "/api/annotations/b.ppm", Some(bbox_doc("b.ppm", i))).await.0 })
        })
        .collect();
    let readers: Vec<_> = (0..64)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { send(&app, "GET", "/api/annotations/b.ppm", None).await })
        })
        .collect();
    for w in writers {
        assert_eq!(w.await.unwrap(), StatusCode::OK);
    }
    for r in readers {
        let (status, body) = r.await.unwrap();
        if status == StatusCode::OK {
            serde_json::from_slice::<Value>(&body).expect("complete document");
        } else {
            assert_eq!(status, StatusCode::NOT_FOUND);
        }
    }
    let stored: Value = serde_json::from_slice(&std::fs::read(dir.path().join("b.json")).unwrap()).unwrap();
    let ms = stored["spaces"][0]["annotation_ms"].as_u64().unwrap();
    assert!((1..=64).contains(&ms));
    let leftovers: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[tokio::test]
async fn taken_port_fails_at_startup() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let err = bind(addr).await.unwrap_err();
    assert!(err.to_string().contains(&addr.to_string()), "{err}");
}

#[test]
fn serve_command_reports_a_taken_port() {
    let dir = image_dir();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_parkspot"))
        .args(["serve", "--images", common::path_str(dir.path())])
        .env("PARKSPOT_BIND", &addr)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(common::stderr(&o).contains(&addr), "{}", common::stderr(&o));
}

#[test]
fn serve_answers_over_tcp() {
    let dir = image_dir();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = std::process::Command::new(env!("CARGO_BIN_EXE_parkspot"))
        .args(["serve", "--images", common::path_str(dir.path()), "--bind", &port.to_string()])
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let mut body = String::new();
    for _ in 0..100 {
        if let Ok(mut s) = std::net::TcpStream::connect(("127.0.0.1", port)) {
            use std::io::{Read, Write};
            s.write_all(b"GET /api/images HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
            s.read_to_string(&mut body).unwrap();
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("\"id\":\"a.ppm\""), "{body}");
}
