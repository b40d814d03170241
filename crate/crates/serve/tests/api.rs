mod common;

use std::time::Duration;

use common::*;
use axum::http::StatusCode;
use lesionpipe::nn::{build_network, compact_config, ParameterSet};
use lesionpipe::pipeline::Stage;
use lesionpipe::synth::{write_dataset, Domain};
use lesionpipe_serve::{router, ModelSnapshot, TOKEN_HEADER};
use serde_json::json;

#[tokio::test]
async fn health_without_model() {
    let dir = tempfile::tempdir().unwrap();
    let r = router(app(config(dir.path())));
    let (status, body) = send(&r, get("/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok"}));
    assert_eq!(classify(&r, grey_png()).await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(send(&r, get("/api/v1/model")).await.0, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn zero_model_scores_one_half() {
    let dir = tempfile::tempdir().unwrap();
    let state = app(config(dir.path()));
    state.model.hot_swap(zero_model(3)).unwrap();
    let r = router(state);
    let (status, a) = classify(&r, lesion_png(1)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(a["probability"], json!(0.5));
    assert_eq!(a["label"], json!("malignant"));
    assert_eq!(a["model_version"], json!(3));
    assert_eq!(a["request_id"].as_str().unwrap().len(), 32);
    let (_, b) = classify(&r, lesion_png(1)).await;
    assert_eq!(a["probability"], b["probability"]);
    assert_ne!(a["request_id"], b["request_id"]);
    let (status, m) = send(&r, get("/api/v1/model")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(m["version_id"], json!(3));
    assert_eq!(m["stage"], json!("production"));
}

#[tokio::test]
async fn identical_uploads_score_identically() {
    let dir = tempfile::tempdir().unwrap();
    let state = app(config(dir.path()));
    let cfg = compact_config([3, 16, 16], &[4], 8);
    let snap = ModelSnapshot { params: build_network(&cfg, 5).unwrap(), ..ModelSnapshot::debug_zero(1, cfg).unwrap() };
    state.model.hot_swap(snap).unwrap();
    let r = router(state);
    let (_, a) = classify(&r, lesion_png(4)).await;
    let (_, b) = classify(&r, lesion_png(4)).await;
    assert_eq!(a["probability"], b["probability"]);
    let p = a["probability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(a["label"] == json!("malignant"), p >= 0.5);
}

#[tokio::test]
async fn bad_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.serve.body_limit_bytes = 4096;
    let state = app(cfg);
    state.model.hot_swap(zero_model(1)).unwrap();
    let r = router(state);
    let (status, body) = classify(&r, b"just some text".to_vec()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());
    assert_eq!(classify(&r, vec![0u8; 8192]).await.0, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn feedback_rules() {
    let dir = tempfile::tempdir().unwrap();
    let state = app(config(dir.path()));
    state.model.hot_swap(zero_model(1)).unwrap();
    let r = router(state.clone());
    let (_, a) = classify(&r, grey_png()).await;
    let id = a["request_id"].as_str().unwrap();

    let unknown = json!({"request_id": "feedface", "verdict": "correct"});
    assert_eq!(send(&r, post_json("/api/v1/feedback", &unknown)).await.0, StatusCode::NOT_FOUND);
    let no_label = json!({"request_id": id, "verdict": "incorrect"});
    assert_eq!(send(&r, post_json("/api/v1/feedback", &no_label)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    let ok = json!({"request_id": id, "verdict": "incorrect", "true_label": "benign"});
    assert_eq!(send(&r, post_json("/api/v1/feedback", &ok)).await.0, StatusCode::NO_CONTENT);
    assert_eq!(send(&r, post_json("/api/v1/feedback", &ok)).await.0, StatusCode::CONFLICT);
    assert_eq!(state.feedback_len(), 1);

    let (_, s) = send(&r, get("/api/v1/pipeline/status")).await;
    assert_eq!(s["window_fill"], json!(1));
    // the log survives a restart
    let reopened = app(config(dir.path()));
    assert_eq!(reopened.feedback_len(), 1);
}

#[tokio::test]
async fn fresh_status_is_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let r = router(app(config(dir.path())));
    let (status, s) = send(&r, get("/api/v1/pipeline/status")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["rolling_accuracy"], json!(null));
    assert_eq!(s["triggers"], json!({"schedule": false, "degradation": false}));
    assert_eq!(s["last_run"], json!(null));
}

#[tokio::test]
async fn degradation_after_89_of_100() {
    let dir = tempfile::tempdir().unwrap();
    let state = app(config(dir.path()));
    state.model.hot_swap(zero_model(1)).unwrap();
    let r = router(state);
    for i in 0..100 {
        let (_, a) = classify(&r, grey_png()).await;
        let fb = if i < 89 {
            json!({"request_id": a["request_id"], "verdict": "correct"})
        } else {
            json!({"request_id": a["request_id"], "verdict": "incorrect", "true_label": "benign"})
        };
        assert_eq!(send(&r, post_json("/api/v1/feedback", &fb)).await.0, StatusCode::NO_CONTENT);
    }
    let (_, s) = send(&r, get("/api/v1/pipeline/status")).await;
    assert_eq!(s["window_fill"], json!(100));
    assert!((s["rolling_accuracy"].as_f64().unwrap() - 0.89).abs() < 1e-12);
    assert_eq!(s["triggers"]["degradation"], json!(true));
}

#[tokio::test]
async fn token_guard() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.serve.auth_token = Some("s3cret".into());
    let r = router(app(cfg));
    assert_eq!(send(&r, get("/api/v1/pipeline/status")).await.0, StatusCode::UNAUTHORIZED);
    let req = axum::http::Request::get("/api/v1/pipeline/status").header(TOKEN_HEADER, "s3cret").body(axum::body::Body::empty()).unwrap();
    assert_eq!(send(&r, req).await.0, StatusCode::OK);
    assert_eq!(send(&r, get("/health")).await.0, StatusCode::OK);
}

#[tokio::test]
async fn failed_self_test_keeps_old_model() {
    let dir = tempfile::tempdir().unwrap();
    let state = app(config(dir.path()));
    state.model.hot_swap(zero_model(1)).unwrap();
    let cfg = compact_config([3, 16, 16], &[4], 8);
    let mut params = ParameterSet::zeros(&cfg).unwrap();
    params.layers.last_mut().unwrap().bias.data[0] = f32::NAN;
    let broken = ModelSnapshot { params, ..ModelSnapshot::debug_zero(2, cfg).unwrap() };
    assert!(state.model.hot_swap(broken).is_err());
    assert_eq!(state.model.get().unwrap().version_id, 1);
}

#[tokio::test]
async fn spilled_upload_joins_manifest_on_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.serve.spill_uploads = true;
    let state = app(cfg);
    state.model.hot_swap(zero_model(1)).unwrap();
    let r = router(state.clone());
    let (_, a) = classify(&r, lesion_png(2)).await;
    let id = a["request_id"].as_str().unwrap().to_string();
    let pending = dir.path().join("spill/pending").join(format!("{id}.png"));
    assert!(pending.exists());
    let fb = json!({"request_id": id, "verdict": "incorrect", "true_label": "benign"});
    assert_eq!(send(&r, post_json("/api/v1/feedback", &fb)).await.0, StatusCode::NO_CONTENT);
    assert!(!pending.exists());
    let m = lesionpipe::data::load_manifest(&dir.path().join("spill/manifest.json")).unwrap();
    assert_eq!(m.len(), 1);
    assert_eq!(m.records[0].label, lesionpipe::Label::Benign);
    assert_eq!(m.records[0].meta_str("source"), Some("clinician"));
    let img = lesionpipe::data::load_image(&m.records[0].image_path).unwrap();
    assert_eq!((img.width(), img.height()), (16, 16));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn manual_trigger_runs_and_hot_swaps() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_dataset(&data, 30, 30, Domain::A, 16, 5).unwrap();
    let mut cfg = config(&dir.path().join("ws"));
    cfg.pipeline.manifest = Some(data.join("manifest.json"));
    let t = &mut cfg.pipeline.training;
    t.network = compact_config([3, 16, 16], &[8, 16], 16);
    t.init_seed = 7;
    t.augment = false;
    t.train.epochs = 40;
    t.train.batch_size = 8;
    cfg.pipeline.gate.recall_gap_limit = 0.99;
    let state = app(cfg);
    let r = router(state.clone());

    let (status, body) = send(&r, post_json("/api/v1/pipeline/trigger", &json!({"reason": "test"}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let run_id = body["run_id"].as_str().unwrap().to_string();
    assert_eq!(send(&r, post_json("/api/v1/pipeline/trigger", &json!({}))).await.0, StatusCode::CONFLICT);

    let mut status = serde_json::Value::Null;
    for _ in 0..600 {
        status = send(&r, get("/api/v1/pipeline/status")).await.1;
        if status["run_active"] == json!(false) && !status["last_run"].is_null() {
            break;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    assert_eq!(status["last_run"]["run_id"], json!(run_id));
    assert_eq!(status["last_run"]["completed"], json!(true), "{status}");
    assert_eq!(status["last_run"]["promoted"], json!(true), "{}", std::fs::read_to_string(dir.path().join("ws/runs").join(format!("{run_id}.json"))).unwrap());
    assert!(dir.path().join("ws/runs").join(format!("{run_id}.json")).exists());
    let (code, report) = send(&r, get(&format!("/api/v1/pipeline/runs/{run_id}"))).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(report["run_id"], json!(run_id));

    let (_, m) = send(&r, get("/api/v1/model")).await;
    assert_eq!(m["version_id"], json!(1));
    assert_eq!(m["stage"], json!(Stage::Production));
    let stored = state.workspace().registry().unwrap().get(1).unwrap();
    assert_eq!(m["eval"]["accuracy"].as_f64().unwrap(), stored.eval.accuracy);
    let (code, c) = classify(&r, lesion_png(3)).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(c["model_version"], json!(1));
}
