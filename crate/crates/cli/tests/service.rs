use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use http_body_util::BodyExt;
use tower::ServiceExt;

use dualseg::dataset::{build_scene, DatasetConfig, SplitConfig};
use dualseg::dualnet::ArchConfig;
use dualseg::grid::{DepthMap, Seed};
use dualseg::inference::{segment_at, Model};
use dualseg::nn::checkpoint_bytes;
use dualseg::pilegen::PileMode;
use dualseg::rle::{dequantize, quantized_component, MaskRle};
use dualseg_cli::service::{router, AppState, DepthPayload, ModelInfo, SceneInfo, SegmentResponse};

fn depths() -> Vec<(String, DepthMap)> {
    let config = DatasetConfig::default();
    let split = SplitConfig::new("test", 2, PileMode::Multi);
    (0..2)
        .map(|i| {
            let g = build_scene(&config, &split, i).unwrap();
            (g.meta.id, g.depth)
        })
        .collect()
}

fn model() -> Model {
    Model::new(ArchConfig::default().init_params(3).unwrap()).unwrap()
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

#[tokio::test]
async fn lists_scenes_and_serves_depth() {
    let scenes = depths();
    let state = AppState::new(scenes.clone(), Some(model()));
    let (status, body) = call(&state, "GET", "/api/scenes", None).await;
    assert_eq!(status, StatusCode::OK);
    let list: Vec<SceneInfo> = serde_json::from_slice(&body).unwrap();
    assert_eq!(list.len(), 2);
    assert_eq!((list[0].id.as_str(), list[0].width, list[0].height), ("scene_0000", 64, 64));

    let (status, body) = call(&state, "GET", "/api/scenes/scene_0001/depth", None).await;
    assert_eq!(status, StatusCode::OK);
    let d: DepthPayload = serde_json::from_slice(&body).unwrap();
    let bytes = STANDARD.decode(&d.data).unwrap();
    let values: Vec<u16> = bytes.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    assert_eq!(values, scenes[1].1.data());
    assert_eq!(d.min_mm, *values.iter().min().unwrap());
    assert_eq!(d.max_mm, *values.iter().max().unwrap());

    let (status, _) = call(&state, "GET", "/api/scenes/nope/depth", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn segment_matches_library_and_client_rule() {
    let scenes = depths();
    let m = model();
    let state = AppState::new(scenes.clone(), Some(m.clone()));
    let body = r#"{"row": 30, "col": 33, "threshold": 0.55}"#;
    let (status, a) = call(&state, "POST", "/api/scenes/scene_0000/segment", Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&a));
    let (_, b) = call(&state, "POST", "/api/scenes/scene_0000/segment", Some(body)).await;
    let ra: SegmentResponse = serde_json::from_slice(&a).unwrap();
    let rb: SegmentResponse = serde_json::from_slice(&b).unwrap();
    assert_eq!(SegmentResponse { elapsed_ms: 0.0, ..ra.clone() }, SegmentResponse { elapsed_ms: 0.0, ..rb });

    let q = ra.mask.decode().unwrap();
    assert_eq!(q.dims(), (64, 64));
    let direct = segment_at(&m, &scenes[0].1, Seed::new(30, 33), 0.55).unwrap();
    for (&v, &p) in q.data().iter().zip(direct.mask_probabilities.data()) {
        assert!((dequantize(v) - p).abs() <= 0.5 / 255.0 + 1e-6);
    }
    let comp = quantized_component(&q, Seed::new(30, 33), 0.55).unwrap();
    assert_eq!(comp.empty, ra.empty);
    assert_eq!(comp.confidence, ra.confidence);
    assert_eq!(ra.edge.decode().unwrap().dims(), (64, 64));
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let state = AppState::new(depths(), Some(model()));
    let url = "/api/scenes/scene_0000/segment";
    for body in [
        r#"{"row": -1, "col": 3}"#,
        r#"{"row": 3, "col": 64}"#,
        r#"{"row": 3, "col": 3, "threshold": 1.5}"#,
    ] {
        let (status, msg) = call(&state, "POST", url, Some(body)).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
        assert!(String::from_utf8_lossy(&msg).contains("error"));
    }
    let (status, msg) = call(&state, "POST", url, Some(r#"{"row": -1, "col": 3}"#)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(String::from_utf8_lossy(&msg).contains("64x64"));
    let (status, _) = call(&state, "POST", "/api/scenes/zzz/segment", Some(r#"{"row": 1, "col": 1}"#)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn model_info_and_missing_model() {
    let m = model();
    let state = AppState::new(depths(), None);
    let (status, _) = call(&state, "GET", "/api/model/info", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    let (status, _) = call(&state, "POST", "/api/scenes/scene_0000/segment", Some(r#"{"row": 1, "col": 1}"#)).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    state.swap_model(Some(m.clone()));
    let (status, body) = call(&state, "GET", "/api/model/info", None).await;
    assert_eq!(status, StatusCode::OK);
    let info: ModelInfo = serde_json::from_slice(&body).unwrap();
    assert_eq!(info.architecture, "dualnet channels=8,16,32,32 bottleneck=2x7 padding=zero");
    assert_eq!(info.parameters, m.params.num_scalars());
    use sha2_check::hex_sha256;
    assert_eq!(info.checkpoint_sha256, hex_sha256(&checkpoint_bytes(&m.params)));
}

#[test]
fn mask_rle_round_trips_json() {
    let scenes = depths();
    let seg = segment_at(&model(), &scenes[0].1, Seed::new(10, 10), 0.8).unwrap();
    let rle = MaskRle::from_probabilities(&seg.mask_probabilities);
    let json = serde_json::to_string(&rle).unwrap();
    let back: MaskRle = serde_json::from_str(&json).unwrap();
    let decoded = back.decode().unwrap();
    assert_eq!(decoded.data().len(), 64 * 64);
    assert_eq!(MaskRle::encode(&decoded), rle);
}

mod sha2_check {
    /// Independent reference: the digest printed by `sha256sum`.
    pub fn hex_sha256(bytes: &[u8]) -> String {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        std::fs::write(&path, bytes).unwrap();
        let out = std::process::Command::new("sha256sum").arg(&path).output().unwrap();
        String::from_utf8(out.stdout).unwrap().split_whitespace().next().unwrap().to_string()
    }
}
