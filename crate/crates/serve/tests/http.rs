use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use contexp_core::image::SrgbImage;
use contexp_core::model::{build_unet, save_checkpoint, train_base, Anchor, Model, TrainSchedule, UNetConfig};
use contexp_core::raw::RawImage;
use contexp_core::sensor::format::{encode_raw, write_raw};
use contexp_core::sensor::{build_dataset, Dataset, DatasetConfig};
use contexp_serve::{router, AppState, ServeConfig, SessionCreated, LATENCY_HEADER};
use contexp_tensor::Tensor;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Assets {
    _dir: tempfile::TempDir,
    config: ServeConfig,
}

fn modulated(config: UNetConfig, seed: u64) -> Model {
    let mut m = build_unet(config, seed).unwrap();
    m.insert_modulation(3).unwrap();
    let names: Vec<String> = m.params().iter().map(|p| p.name.clone()).collect();
    for (i, n) in names.iter().filter(|n| Model::is_modulation_param(n)).enumerate() {
        for (j, v) in m.param_mut(n).unwrap().tensor.data_mut().iter_mut().enumerate() {
            *v += 0.05 * (((i * 31 + j * 17) % 13) as f32 / 6.0 - 1.0);
        }
    }
    m.anchors = vec![
        Anchor { alpha1: 10.0, alpha2: 0.0, exposure: 1.0 },
        Anchor { alpha1: 100.0, alpha2: 1.0, exposure: 10.0 },
    ];
    m
}

/// Checkpoints: a lightly trained base (`trained.cxck`), a modulated model
/// (`mod.cxck`), its base (`base.cxck`) and a desk-size model (`desk.cxck`).
/// Images: two dataset captures at 64x64, a 256x256 ramp, a 40x40 flat
/// field and a file with an odd width.
fn assets() -> &'static Assets {
    static ASSETS: OnceLock<Assets> = OnceLock::new();
    ASSETS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let (cks, imgs) = (dir.path().join("checkpoints"), dir.path().join("images"));
        std::fs::create_dir_all(&imgs).unwrap();

        let data = dir.path().join("data");
        build_dataset(&DatasetConfig { scenes: 10, width: 64, height: 64, seed: 3, black_level: 0.0 }, &data).unwrap();
        let ds = Dataset::open(&data).unwrap();
        let small = UNetConfig { depth: 2, base_channels: 4, slope: 0.2 };
        let mut trained = build_unet(small, 5).unwrap();
        let schedule = TrainSchedule {
            patch_size: 32,
            base_epochs_high: 40,
            base_epochs_low: 10,
            finetune_epochs: 1,
            lr_high: 2e-3,
            lr_low: 2e-4,
            ..TrainSchedule::default()
        };
        train_base(&mut trained, &ds, 0.1, &[1.0], &schedule).unwrap();
        save_checkpoint(&trained, &cks.join("trained.cxck")).unwrap();

        let m = modulated(small, 6);
        save_checkpoint(&m, &cks.join("mod.cxck")).unwrap();
        save_checkpoint(&m.base(), &cks.join("base.cxck")).unwrap();
        save_checkpoint(&modulated(UNetConfig::default(), 7), &cks.join("desk.cxck")).unwrap();

        let scene = &ds.scenes()[0];
        write_raw(&imgs.join("scene64.lxrw"), &scene.raws[ds.exposure_index(0.1).unwrap()]).unwrap();
        let other = &ds.scenes()[1];
        write_raw(&imgs.join("other64.lxrw"), &other.raws[ds.exposure_index(0.1).unwrap()]).unwrap();
        let big = RawImage::new(256, 256, (0..256 * 256).map(|i| (i % 97) as f32 / 970.0).collect(), 0.0).unwrap();
        write_raw(&imgs.join("desk.lxrw"), &big).unwrap();
        write_raw(&imgs.join("small40.lxrw"), &RawImage::new(40, 40, vec![0.02; 1600], 0.0).unwrap()).unwrap();

        // 6x2 re-labelled as 3x4: header-valid, odd width
        let mut odd = encode_raw(&RawImage::new(6, 2, vec![0.01; 12], 0.0).unwrap());
        odd[8..12].copy_from_slice(&3u32.to_le_bytes());
        odd[12..16].copy_from_slice(&4u32.to_le_bytes());
        std::fs::write(imgs.join("odd.lxrw"), odd).unwrap();

        Assets { config: ServeConfig::new(cks, imgs), _dir: dir }
    })
}

fn app() -> Router {
    router(AppState::new(assets().config.clone()))
}

fn app_with(f: impl FnOnce(&mut ServeConfig)) -> Router {
    let mut config = assets().config.clone();
    f(&mut config);
    router(AppState::new(config))
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let (parts, body) = resp.into_parts();
    (parts.status, parts.headers, body.collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn create(app: &Router, checkpoint: &str, image: &str) -> (StatusCode, Value) {
    let req = Request::post("/sessions")
        .header("content-type", "application/json")
        .body(Body::from(json!({ "checkpoint": checkpoint, "image": image }).to_string()))
        .unwrap();
    let (status, _, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap())
}

async fn session(app: &Router, checkpoint: &str, image: &str) -> u64 {
    let (status, body) = create(app, checkpoint, image).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_u64().unwrap()
}

fn decode(png: &[u8]) -> SrgbImage {
    let img = image::load_from_memory(png).unwrap().to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut planar = vec![0.0f32; 3 * w * h];
    for (i, p) in img.pixels().enumerate() {
        for c in 0..3 {
            planar[c * w * h + i] = f32::from(p[c]) / 255.0;
        }
    }
    SrgbImage::new(Tensor::new([3, h, w], planar).unwrap()).unwrap()
}

#[tokio::test]
async fn healthz_before_any_session() {
    let (status, _, body) = get(&app(), "/healthz").await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["sessions"], 0);
}

#[tokio::test]
async fn create_returns_anchors_and_bounds() {
    let app = app();
    let (status, body) = create(&app, "mod.cxck", "scene64.lxrw").await;
    assert_eq!(status, StatusCode::CREATED);
    let created: SessionCreated = serde_json::from_value(body).unwrap();
    let anchors: Vec<(f32, f32)> = created.trained_anchors.iter().map(|a| (a.alpha1, a.alpha2)).collect();
    assert_eq!(anchors, vec![(10.0, 0.0), (100.0, 1.0)]);
    assert_eq!(created.knob_bounds.alpha1_max, 100.0);
    assert_eq!((created.knob_bounds.alpha2_min, created.knob_bounds.alpha2_max), (0.0, 1.0));
    assert_eq!(created.packed_size, [32, 32]);
    let (_, _, health) = get(&app, "/healthz").await;
    let v: Value = serde_json::from_slice(&health).unwrap();
    assert_eq!((v["sessions"].as_u64(), v["models_loaded"].as_u64()), (Some(1), Some(1)));

    let wide = app_with(|c| c.extrapolate = true);
    let (_, body) = create(&wide, "mod.cxck", "scene64.lxrw").await;
    assert_eq!(body["knob_bounds"]["alpha2_min"], -0.5);
    assert_eq!(body["knob_bounds"]["alpha2_max"], 1.5);
}

#[tokio::test]
async fn unknown_or_escaping_assets_are_404() {
    let app = app();
    let (status, body) = create(&app, "mod.cxck", "missing.lxrw").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["asset"], "missing.lxrw");
    assert!(body["error"].as_str().unwrap().contains("missing.lxrw"));
    let (status, _) = create(&app, "nope.cxck", "scene64.lxrw").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = create(&app, "../checkpoints/mod.cxck", "scene64.lxrw").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _, _) = get(&app, "/sessions/999/preview?alpha1=10&alpha2=0").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn incompatible_images_are_422() {
    let app = app();
    let (status, body) = create(&app, "mod.cxck", "odd.lxrw").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert!(body["error"].as_str().unwrap().contains("even"));
    // 40x40 packs to 20x20, not a multiple of 16
    let (status, body) = create(&app, "desk.cxck", "small40.lxrw").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert!(body["error"].as_str().unwrap().contains("pad to 32x32"), "{body}");
}

#[tokio::test]
async fn out_of_range_knobs_are_400_with_the_bound() {
    let app = app();
    let id = session(&app, "mod.cxck", "scene64.lxrw").await;
    let (status, _, body) = get(&app, &format!("/sessions/{id}/preview?alpha1=500&alpha2=0.5")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert!(v["error"].as_str().unwrap().contains("100"), "{v}");
    assert_eq!(v["alpha1_range"], json!([1.0, 100.0]));
    let (status, _, _) = get(&app, &format!("/sessions/{id}/preview?alpha1=10&alpha2=1.2")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = get(&app, &format!("/sessions/{id}/export?alpha1=0.5&alpha2=0")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _, _) = get(&app, &format!("/sessions/{id}/preview?alpha1=10&alpha2=0&scale=0")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let wide = app_with(|c| c.extrapolate = true);
    let id = session(&wide, "mod.cxck", "scene64.lxrw").await;
    let (status, _, _) = get(&wide, &format!("/sessions/{id}/preview?alpha1=10&alpha2=1.2")).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn preview_headers_and_determinism() {
    let app = app();
    let id = session(&app, "mod.cxck", "scene64.lxrw").await;
    let uri = format!("/sessions/{id}/preview?alpha1=30&alpha2=0.4");
    let (status, headers, a) = get(&app, &uri).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers["content-type"], "image/png");
    assert_eq!(headers["cache-control"], "no-store");
    assert!(headers[LATENCY_HEADER].to_str().unwrap().parse::<f64>().unwrap() >= 0.0);
    let (_, _, b) = get(&app, &uri).await;
    assert_eq!(a, b);
    // 32x32 packed at scale 0.5 -> 16x16 packed -> 32x32 sRGB
    let img = decode(&a);
    assert_eq!((img.width(), img.height()), (32, 32));
}

#[tokio::test]
async fn alpha2_zero_preview_equals_the_base_network() {
    let app = app();
    let modulated = session(&app, "mod.cxck", "scene64.lxrw").await;
    let base = session(&app, "base.cxck", "scene64.lxrw").await;
    for alpha1 in [10, 55, 100] {
        let (_, _, a) = get(&app, &format!("/sessions/{modulated}/preview?alpha1={alpha1}&alpha2=0")).await;
        let (_, _, b) = get(&app, &format!("/sessions/{base}/preview?alpha1={alpha1}&alpha2=0")).await;
        assert_eq!(a, b, "alpha1 {alpha1}");
        let (_, _, c) = get(&app, &format!("/sessions/{modulated}/preview?alpha1={alpha1}&alpha2=1")).await;
        assert_ne!(a, c);
    }
}

#[tokio::test]
async fn export_is_full_resolution_and_consistent_with_preview() {
    let app = app();
    let id = session(&app, "trained.cxck", "scene64.lxrw").await;
    let (status, headers, full) = get(&app, &format!("/sessions/{id}/export?alpha1=10&alpha2=0")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(headers["content-disposition"].to_str().unwrap().contains("scene64_a1-10_a2-0.png"));
    let full = decode(&full);
    assert_eq!((full.width(), full.height()), (64, 64));

    let (_, _, small) = get(&app, &format!("/sessions/{id}/preview?alpha1=10&alpha2=0&scale=0.5")).await;
    let small = decode(&small);
    let down = full.downscale(2).unwrap();
    let agree = contexp_core::eval::psnr(&down, &small).unwrap();
    // the same preview against a different scene bounds what "unrelated" looks like
    let other = session(&app, "trained.cxck", "other64.lxrw").await;
    let (_, _, unrelated) = get(&app, &format!("/sessions/{other}/preview?alpha1=10&alpha2=0&scale=0.5")).await;
    let unrelated = contexp_core::eval::psnr(&down, &decode(&unrelated)).unwrap();
    assert!(
        agree >= 20.0 && agree >= unrelated + 5.0,
        "downscaled export vs preview {agree:.2} dB, unrelated {unrelated:.2} dB"
    );
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_sessions_do_not_interfere() {
    let app = app();
    let a = session(&app, "mod.cxck", "scene64.lxrw").await;
    let b = session(&app, "mod.cxck", "other64.lxrw").await;
    let ua = format!("/sessions/{a}/preview?alpha1=20&alpha2=0.7");
    let ub = format!("/sessions/{b}/preview?alpha1=20&alpha2=0.7");
    let (_, _, want_a) = get(&app, &ua).await;
    let (_, _, want_b) = get(&app, &ub).await;
    let mut tasks = Vec::new();
    for i in 0..8 {
        let (app, uri) = (app.clone(), if i % 2 == 0 { ua.clone() } else { ub.clone() });
        tasks.push(tokio::spawn(async move { (i, get(&app, &uri).await.2) }));
    }
    for t in tasks {
        let (i, bytes) = t.await.unwrap();
        assert_eq!(&bytes, if i % 2 == 0 { &want_a } else { &want_b }, "request {i}");
    }
}

#[tokio::test]
async fn desk_preview_meets_the_latency_budget() {
    let app = app();
    let id = session(&app, "desk.cxck", "desk.lxrw").await;
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let (status, headers, _) = get(&app, &format!("/sessions/{id}/preview?alpha1=50&alpha2=0.5")).await;
        assert_eq!(status, StatusCode::OK);
        best = best.min(headers[LATENCY_HEADER].to_str().unwrap().parse().unwrap());
    }
    println!("desk preview latency {best:.1} ms");
    assert!(best <= 200.0, "preview took {best} ms");
}
