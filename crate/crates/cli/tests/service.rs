use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use innoscope_cli::commands;
use innoscope_cli::service::{router, AppState};
use innoscope_core::bundle::{self, Bundle};
use innoscope_core::classifier::Hyperparams;
use innoscope_core::pipeline::PipelineConfig;
use innoscope_core::whatif::{self, TrialLog};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Shared {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

fn bundle_dir() -> &'static Path {
    static B: OnceLock<Shared> = OnceLock::new();
    &B.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("bundle");
        let cfg = PipelineConfig {
            input: Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/euris_fixture.csv"),
            restarts: 8,
            classifier: Hyperparams { epochs: 20, ..Default::default() },
            out: dir.clone(),
            ..Default::default()
        };
        commands::run_all(&cfg).unwrap();
        Shared { _tmp: tmp, dir }
    })
    .dir
}

fn app(sessions: Option<PathBuf>) -> (axum::Router, Arc<AppState>) {
    let state = Arc::new(AppState::from_bundle(bundle_dir(), sessions).unwrap());
    (router(state.clone()), state)
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

async fn trial(app: &axum::Router, session: &str, overrides: Value) -> (StatusCode, Value) {
    let body = json!({ "base_region": "ITF3", "base_year": 2023, "overrides": overrides, "cumulative": true });
    call(app, Method::POST, &format!("/whatif/{session}/trial"), Some(body)).await
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.clone(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[tokio::test]
async fn read_endpoints() {
    let (app, state) = app(None);
    let (s, health) = get(&app, "/health").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(health["rows"], 1912);
    assert_eq!(health["target"], "Innovation leader");

    let (s, regions) = get(&app, "/regions").await;
    assert_eq!(s, StatusCode::OK);
    let regions = regions.as_array().unwrap();
    assert_eq!(regions.len(), 1912);
    let art = state.artifacts();
    for (r, rec) in regions.iter().zip(&art.labels.regions) {
        assert_eq!(r["region_id"], rec.region_id.as_str());
        assert_eq!(r["year"], rec.year);
        assert_eq!(r["fkm_label"], rec.fkm_label.as_str());
        assert_eq!(r["euris_label"], rec.euris_label);
        assert_eq!(r["pivot"], rec.pivot);
        assert_eq!(r["cluster"], rec.cluster + 1);
    }
    let (_, y2023) = get(&app, "/regions?year=2023").await;
    let n2023 = art.panel.rows.iter().filter(|r| r.year == 2023).count();
    assert_eq!(y2023.as_array().unwrap().len(), n2023);

    let (_, clusters) = get(&app, "/clusters").await;
    let cs = clusters["clusters"].as_array().unwrap();
    assert_eq!(cs.len(), 4);
    let sizes: usize = cs.iter().map(|c| c["size"].as_u64().unwrap() as usize).sum();
    assert_eq!(sizes, 1912);
    assert!(cs.iter().any(|c| c["label"] == "Innovation leader"));
    assert_eq!(clusters["variable_scores"].as_array().unwrap().len(), art.panel.indicator_names.len());

    let (_, pca) = get(&app, "/pca").await;
    assert_eq!(pca["q"], 2);
    assert_eq!(pca["variance"].as_array().unwrap().len(), art.panel.indicator_names.len());

    let (_, shift) = get(&app, "/shift").await;
    assert_eq!(shift["rows"].as_array().unwrap().len(), 42);

    let (s, donors) = get(&app, "/donors?label=Innovation%20leader&indicator=2.3.2").await;
    assert_eq!(s, StatusCode::OK);
    let expect = whatif::donor_lookup(&art.panel, &art.labels.tiers(), 1, "2.3.2").unwrap();
    assert_eq!(donors, serde_json::to_value(&expect).unwrap());
}

#[tokio::test]
async fn empty_trial_returns_the_base_prediction() {
    let (app, state) = app(None);
    let art = state.artifacts();
    let base = &art.panel.rows[art.panel.find("ITF3", 2023).unwrap()].values;
    let (s, t) = trial(&app, "base", json!({})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(t["probability"].as_f64().unwrap(), art.train.classifier.predict_proba(base).unwrap());
    assert_eq!(t["number"], 1);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let (app, _) = app(None);
    let (a, b) = tokio::join!(
        async {
            let mut out = Vec::new();
            for v in [1.0, 2.0, 3.0] {
                out.push(trial(&app, "alpha", json!({ "2.3.2": v })).await.1);
            }
            out
        },
        async {
            let mut out = Vec::new();
            for _ in 0..2 {
                out.push(trial(&app, "beta", json!({})).await.1);
            }
            out
        }
    );
    assert_eq!(a.len(), 3);
    let (_, la) = get(&app, "/whatif/alpha/log").await;
    let (_, lb) = get(&app, "/whatif/beta/log").await;
    assert_eq!(la["trials"].as_array().unwrap().len(), 3);
    assert_eq!(lb["trials"].as_array().unwrap().len(), 2);
    // beta never saw alpha's overrides.
    assert_eq!(b[0]["probability"], b[1]["probability"]);
    assert!(lb["trials"].as_array().unwrap().iter().all(|t| t["overrides"] == json!({})));

    // Many concurrent posts to one session are serialized.
    let handles: Vec<_> = (0..16)
        .map(|i| {
            let app = app.clone();
            tokio::spawn(async move { trial(&app, "gamma", json!({ "2.2.1": i as f64 * 0.1 })).await.0 })
        })
        .collect();
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::OK);
    }
    let (_, lg) = get(&app, "/whatif/gamma/log").await;
    let numbers: Vec<u64> = lg["trials"].as_array().unwrap().iter().map(|t| t["number"].as_u64().unwrap()).collect();
    assert_eq!(numbers, (1..=16).collect::<Vec<u64>>());
}

#[tokio::test]
async fn sweep_points() {
    let (app, state) = app(None);
    let (s, sw) = get(&app, "/sweep?base=ITF3&year=2023&indicator=2.3.2&from=0&to=12&steps=7").await;
    assert_eq!(s, StatusCode::OK);
    let pts = sw["points"].as_array().unwrap();
    assert_eq!(pts.len(), 7);
    let art = state.artifacts();
    let j = art.panel.feature_index("2.3.2").unwrap();
    let mut v = art.panel.rows[art.panel.find("ITF3", 2023).unwrap()].values.clone();
    v[j] = 12.0;
    assert_eq!(pts[6]["probability"].as_f64().unwrap(), art.train.classifier.predict_proba(&v).unwrap());
    let (s, joined) = get(&app, "/sweep?base=ITF3_2023&indicator=2.3.2&from=0&to=12&steps=7").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(joined["points"], sw["points"]);

    // A session-based sweep starts from the session's latest trial.
    trial(&app, "sw", json!({ "2.2.1": 1.5 })).await;
    let (_, from_session) = get(&app, "/sweep?base=ITF3&year=2023&indicator=2.3.2&from=0&to=12&steps=7&session=sw").await;
    let mut w = v.clone();
    w[art.panel.feature_index("2.2.1").unwrap()] = 1.5;
    assert_eq!(from_session["points"][6]["probability"].as_f64().unwrap(), art.train.classifier.predict_proba(&w).unwrap());
}

#[tokio::test]
async fn errors_have_code_stage_message() {
    let (app, _) = app(None);
    let check = |(s, body): (StatusCode, Value), status: StatusCode, code: &str| {
        assert_eq!(s, status, "{body}");
        assert_eq!(body["code"], code, "{body}");
        assert!(body["stage"].is_string());
        assert!(!body["message"].as_str().unwrap().is_empty());
    };
    check(get(&app, "/whatif/nobody/log").await, StatusCode::NOT_FOUND, "lookup");
    check(get(&app, "/sweep?base=XX99&year=2023&indicator=2.3.2&from=0&to=1&steps=3").await, StatusCode::NOT_FOUND, "lookup");
    check(get(&app, "/sweep?base=ITF3&year=2023&indicator=2.3.2&from=0&to=1").await, StatusCode::BAD_REQUEST, "argument");
    check(get(&app, "/sweep?base=ITF3&year=2023&indicator=9.9.9&from=0&to=1&steps=3").await, StatusCode::BAD_REQUEST, "argument");
    check(get(&app, "/sweep?base=ITF3&year=2023&indicator=2.3.2&from=1&to=0&steps=3").await, StatusCode::BAD_REQUEST, "argument");
    check(get(&app, "/donors?label=Galactic&indicator=2.3.2").await, StatusCode::BAD_REQUEST, "classification");
    check(get(&app, "/regions?year=soon").await, StatusCode::BAD_REQUEST, "argument");
    check(get(&app, "/nowhere").await, StatusCode::NOT_FOUND, "not_found");
    check(
        call(&app, Method::POST, "/whatif/s/trial", Some(json!({ "base_year": 2023 }))).await,
        StatusCode::BAD_REQUEST,
        "json",
    );
    check(trial(&app, "bad", json!({ "9.9.9": 1.0 })).await, StatusCode::BAD_REQUEST, "argument");
    check(trial(&app, "bad%20id!", json!({})).await, StatusCode::BAD_REQUEST, "argument");
    let other = json!({ "base_region": "ITC1", "base_year": 2023, "overrides": {}, "cumulative": true });
    trial(&app, "bound", json!({})).await;
    check(call(&app, Method::POST, "/whatif/bound/trial", Some(other)).await, StatusCode::BAD_REQUEST, "argument");
}

#[tokio::test]
async fn persisted_sessions_replay_identically() {
    let before = files(bundle_dir());
    let sessions = tempfile::tempdir().unwrap();
    let first = {
        let (app, _) = app(Some(sessions.path().to_path_buf()));
        trial(&app, "keep", json!({})).await;
        trial(&app, "keep", json!({ "2.2.1": 1.22 })).await;
        trial(&app, "keep", json!({ "2.1.1": 1.04, "2.3.2": 11.8 })).await;
        get(&app, "/whatif/keep/log").await.1
    };
    assert!(sessions.path().join("keep.json").exists());

    let (app, state) = app(Some(sessions.path().to_path_buf()));
    let (s, again) = get(&app, "/whatif/keep/log").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(again, first);
    let log: TrialLog = serde_json::from_value(again).unwrap();
    let replayed = whatif::replay(&log, &state.artifacts().train.classifier).unwrap();
    assert_eq!(replayed, log.trials.iter().map(|t| t.probability).collect::<Vec<_>>());
    let (_, next) = trial(&app, "keep", json!({})).await;
    assert_eq!(next["number"], 4);

    // Serving never touches the bundle.
    assert_eq!(files(bundle_dir()), before);
    Bundle::open(bundle_dir()).unwrap().verify().unwrap();
    bundle::read_artifacts(bundle_dir()).unwrap();
}
