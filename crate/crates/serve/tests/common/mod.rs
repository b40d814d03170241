#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use lesionpipe::nn::compact_config;
use lesionpipe::pipeline::PipelineConfig;
use lesionpipe::synth::{lesion_image, Domain};
use lesionpipe::{Label, PixelImage};
use lesionpipe_serve::{AppConfig, AppState, ModelSnapshot, ServeConfig};
use serde_json::Value;
use tower::ServiceExt;

pub fn config(data_dir: &std::path::Path) -> AppConfig {
    AppConfig {
        pipeline: PipelineConfig { data_dir: data_dir.to_path_buf(), ..Default::default() },
        serve: ServeConfig::default(),
    }
}

pub fn app(cfg: AppConfig) -> Arc<AppState> {
    Arc::new(AppState::open(cfg).unwrap())
}

pub fn zero_model(version: u64) -> ModelSnapshot {
    ModelSnapshot::debug_zero(version, compact_config([3, 16, 16], &[4], 8)).unwrap()
}

pub fn lesion_png(seed: u64) -> Vec<u8> {
    lesion_image(Label::Malignant, Domain::A, 24, seed).encode_png().unwrap()
}

pub fn grey_png() -> Vec<u8> {
    PixelImage::filled(8, 8, 3, 128).unwrap().encode_png().unwrap()
}

pub async fn send(router: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let json = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, json)
}

pub fn post_bytes(uri: &str, body: Vec<u8>) -> Request<Body> {
    Request::post(uri).header("content-type", "application/octet-stream").body(Body::from(body)).unwrap()
}

pub fn post_json(uri: &str, body: &Value) -> Request<Body> {
    Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap()
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

pub async fn classify(router: &Router, png: Vec<u8>) -> (StatusCode, Value) {
    send(router, post_bytes("/api/v1/classify", png)).await
}
