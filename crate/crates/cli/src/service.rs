//! Read-only HTTP/JSON view of a bundle plus per-session what-if logs.
//!
//! | method | path                      | body / query                                   |
//! |--------|---------------------------|------------------------------------------------|
//! | GET    | `/health`                 |                                                |
//! | GET    | `/regions`                | `year` (optional)                              |
//! | GET    | `/clusters`               |                                                |
//! | GET    | `/pca`                    |                                                |
//! | GET    | `/shift`                  |                                                |
//! | GET    | `/donors`                 | `label`, `indicator`                           |
//! | POST   | `/whatif/{session}/trial` | `{base_region, base_year, overrides, cumulative}` |
//! | GET    | `/whatif/{session}/log`   |                                                |
//! | GET    | `/sweep`                  | `base`, `year`, `indicator`, `from`, `to`, `steps`, `session` |
//!
//! Every error is `{code, stage, message}` with a 4xx status for bad
//! requests and 5xx for internal faults.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use innoscope_core::dataset::{self, label_name};
use innoscope_core::pca::VarianceRow;
use innoscope_core::pipeline::RunArtifacts;
use innoscope_core::whatif::{self, Scenario, SweepPoint, Trial, TrialLog};
use innoscope_core::{bundle, Error};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub stage: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn bad_request(code: &str, message: impl Into<String>) -> ApiError {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody { code: code.into(), stage: "request".into(), message: message.into() },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> ApiError {
        let stage = match &e {
            Error::Stage { stage, .. } => stage.to_string(),
            _ => "service".to_string(),
        };
        let status = match e.code() {
            "lookup" => StatusCode::NOT_FOUND,
            "argument" | "range" | "classification" | "parse" | "json" => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, body: ErrorBody { code: e.code().into(), stage, message: e.to_string() } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub struct AppState {
    art: RunArtifacts,
    tiers: Vec<u8>,
    sessions: Mutex<HashMap<String, Arc<Mutex<TrialLog>>>>,
    session_dir: Option<PathBuf>,
}

impl AppState {
    /// Serve `art`; when `session_dir` is given, trial logs are persisted
    /// there and logs already present are loaded.
    pub fn new(art: RunArtifacts, session_dir: Option<PathBuf>) -> Result<AppState, Error> {
        let tiers = art.labels.tiers();
        let mut sessions = HashMap::new();
        if let Some(dir) = &session_dir {
            std::fs::create_dir_all(dir)?;
            for entry in std::fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    let log: TrialLog = serde_json::from_slice(&std::fs::read(&path)?)?;
                    sessions.insert(log.session.clone(), Arc::new(Mutex::new(log)));
                }
            }
        }
        Ok(AppState { art, tiers, sessions: Mutex::new(sessions), session_dir })
    }

    pub fn from_bundle(dir: &Path, session_dir: Option<PathBuf>) -> Result<AppState, Error> {
        AppState::new(bundle::read_artifacts(dir)?, session_dir)
    }

    pub fn artifacts(&self) -> &RunArtifacts {
        &self.art
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/regions", get(regions))
        .route("/clusters", get(clusters))
        .route("/pca", get(pca))
        .route("/shift", get(shift))
        .route("/donors", get(donors))
        .route("/whatif/{session}/trial", post(trial))
        .route("/whatif/{session}/log", get(session_log))
        .route("/sweep", get(sweep))
        .fallback(|| async {
            ApiError { status: StatusCode::NOT_FOUND, body: ErrorBody { code: "not_found".into(), stage: "request".into(), message: "no such endpoint".into() } }
        })
        .with_state(state)
}

async fn health(State(s): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "bundle_version": bundle::VERSION,
        "config_fingerprint": s.art.config_fingerprint,
        "input_sha256": s.art.input_sha256,
        "rows": s.art.panel.n_rows(),
        "target": s.art.train.classifier.target,
    }))
}

#[derive(Serialize)]
struct RegionView<'a> {
    row: usize,
    region_id: &'a str,
    year: i32,
    /// 1-based cluster number.
    cluster: usize,
    fkm_tier: u8,
    fkm_label: &'a str,
    euris_label: u8,
    euris_name: &'static str,
    pivot: bool,
    distance: f64,
    coords: &'a [f64],
}

async fn regions(State(s): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Vec<Value>> {
    let year = match q.get("year") {
        Some(y) => Some(y.parse::<i32>().map_err(|_| ApiError::bad_request("argument", format!("bad year {y:?}")))?),
        None => None,
    };
    let views: Vec<Value> = s
        .art
        .labels
        .regions
        .iter()
        .filter(|r| year.is_none_or(|y| r.year == y))
        .map(|r| {
            serde_json::to_value(RegionView {
                row: r.row,
                region_id: &r.region_id,
                year: r.year,
                cluster: r.cluster + 1,
                fkm_tier: r.fkm_tier,
                fkm_label: &r.fkm_label,
                euris_label: r.euris_label,
                euris_name: label_name(r.euris_label),
                pivot: r.pivot,
                distance: r.dist,
                coords: &r.coords,
            })
            .expect("region view serializes")
        })
        .collect();
    Ok(Json(views))
}

async fn clusters(State(s): State<Arc<AppState>>) -> Json<Value> {
    let m = &s.art.jdrc;
    let lab = &s.art.labels;
    let clusters: Vec<Value> = (0..m.k)
        .map(|c| {
            let near = lab.nearest.iter().find(|p| p.cluster == c);
            let piv = &lab.pivots.clusters[c];
            json!({
                "cluster": c + 1,
                "rank": lab.labeling.clusters[c].rank,
                "label": lab.labeling.clusters[c].label,
                "centroid": m.y.row(c).iter().copied().collect::<Vec<f64>>(),
                "size": m.sizes[c],
                "pivots": piv.pivots,
                "pivot_share": piv.share,
                "distance_to_leader": lab.labeling.clusters[c].distance_to_leader,
                "nearest": near.map(|p| json!({
                    "key": p.key,
                    "coords": p.coords,
                    "distance": p.dist_to_centroid,
                    "squared_distance": p.sq_dist_to_centroid,
                })),
            })
        })
        .collect();
    let scores: Vec<Value> = s
        .art
        .panel
        .indicator_names
        .iter()
        .enumerate()
        .map(|(j, name)| json!({ "indicator": name, "scores": m.a.row(j).iter().copied().collect::<Vec<f64>>() }))
        .collect();
    Json(json!({
        "k": m.k,
        "q": m.q,
        "method": m.method,
        "objective": m.objective,
        "axes": s.art.config.axis_semantics,
        "clusters": clusters,
        "variable_scores": scores,
        "agreement": lab.agreement,
        "compactness": lab.compactness,
    }))
}

#[derive(Serialize)]
struct PcaView<'a> {
    q: usize,
    policy: String,
    eigenvalues: &'a [f64],
    variance: &'a [VarianceRow],
}

async fn pca(State(s): State<Arc<AppState>>) -> Json<Value> {
    let p = &s.art.pca;
    Json(
        serde_json::to_value(PcaView { q: p.q, policy: p.policy.to_string(), eigenvalues: &p.model.eigenvalues, variance: &p.variance })
            .expect("pca view serializes"),
    )
}

async fn shift(State(s): State<Arc<AppState>>) -> Json<Value> {
    Json(serde_json::to_value(&s.art.shift).expect("shift report serializes"))
}

fn required<'a>(q: &'a HashMap<String, String>, key: &str) -> Result<&'a str, ApiError> {
    q.get(key).map(String::as_str).ok_or_else(|| ApiError::bad_request("argument", format!("missing query parameter {key:?}")))
}

fn number<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> Result<T, ApiError> {
    let raw = required(q, key)?;
    raw.parse().map_err(|_| ApiError::bad_request("argument", format!("bad value {raw:?} for {key:?}")))
}

async fn donors(State(s): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<whatif::DonorSummary> {
    let label = required(&q, "label")?;
    let indicator = required(&q, "indicator")?;
    let tier = match dataset::encode_label(label) {
        Ok(t) => t,
        Err(_) => s
            .art
            .labels
            .labeling
            .clusters
            .iter()
            .find(|c| c.label.eq_ignore_ascii_case(label.trim()))
            .map(|c| c.rank)
            .ok_or_else(|| ApiError::bad_request("classification", format!("unknown label {label:?}")))?,
    };
    Ok(Json(whatif::donor_lookup(&s.art.panel, &s.tiers, tier, indicator)?))
}

fn check_session(id: &str) -> Result<(), ApiError> {
    let ok = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request("argument", "session id must be 1-64 characters of [A-Za-z0-9_-]"))
    }
}

#[derive(Debug, Deserialize)]
struct TrialRequest {
    base_region: String,
    base_year: i32,
    #[serde(default)]
    overrides: BTreeMap<String, f64>,
    #[serde(default = "default_true")]
    cumulative: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Serialize)]
struct TrialResponse {
    session: String,
    target: String,
    #[serde(flatten)]
    trial: Trial,
}

async fn trial(State(s): State<Arc<AppState>>, UrlPath(session): UrlPath<String>, body: Bytes) -> Result<Json<TrialResponse>, ApiError> {
    check_session(&session)?;
    let req: TrialRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("json", format!("bad trial body: {e}")))?;
    let model = &s.art.train.classifier;
    let base_row = s.art.panel.find(&req.base_region, req.base_year)?;
    let base_id = s.art.panel.rows[base_row].region_id.clone();
    let log = {
        let mut map = s.sessions.lock().expect("session map lock");
        map.entry(session.clone())
            .or_insert_with(|| Arc::new(Mutex::new(TrialLog::new(&session, &model.target, &base_id, req.base_year))))
            .clone()
    };
    let mut log = log.lock().expect("session lock");
    let same_base = s.art.panel.find(&log.base_region, log.base_year).ok() == Some(base_row);
    if !same_base {
        return Err(ApiError::bad_request(
            "argument",
            format!("session {session} is bound to {} {}; start a new session for another base", log.base_region, log.base_year),
        ));
    }
    let t = whatif::run_trial(&mut log, &s.art.panel, &req.overrides, req.cumulative, model)?.clone();
    if let Some(dir) = &s.session_dir {
        persist(dir, &log)?;
    }
    Ok(Json(TrialResponse { session, target: model.target.clone(), trial: t }))
}

fn persist(dir: &Path, log: &TrialLog) -> Result<(), Error> {
    let tmp = dir.join(format!(".{}.json.tmp", log.session));
    std::fs::write(&tmp, serde_json::to_vec_pretty(log)?)?;
    std::fs::rename(&tmp, dir.join(format!("{}.json", log.session)))?;
    Ok(())
}

async fn session_log(State(s): State<Arc<AppState>>, UrlPath(session): UrlPath<String>) -> ApiResult<TrialLog> {
    check_session(&session)?;
    let log = s
        .sessions
        .lock()
        .expect("session map lock")
        .get(&session)
        .cloned()
        .ok_or_else(|| Error::Lookup(format!("no session {session}")))?;
    let log = log.lock().expect("session lock").clone();
    Ok(Json(log))
}

#[derive(Serialize)]
struct SweepResponse {
    indicator: String,
    base_region: String,
    base_year: i32,
    session: Option<String>,
    points: Vec<SweepPoint>,
}

/// `base` is a region code or full id, with the year either in `year` or
/// appended as `base=ITF3_2023`.
fn parse_base(q: &HashMap<String, String>) -> Result<(String, i32), ApiError> {
    let base = required(q, "base")?;
    if q.contains_key("year") {
        return Ok((base.to_string(), number(q, "year")?));
    }
    let (region, year) = base
        .rsplit_once(['_', ':'])
        .ok_or_else(|| ApiError::bad_request("argument", "base needs a year: base=REGION_YEAR or year="))?;
    let year = year.parse().map_err(|_| ApiError::bad_request("argument", format!("bad year in base {base:?}")))?;
    Ok((region.to_string(), year))
}

async fn sweep(State(s): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> ApiResult<SweepResponse> {
    let (region, year) = parse_base(&q)?;
    let indicator = required(&q, "indicator")?.to_string();
    let from: f64 = number(&q, "from")?;
    let to: f64 = number(&q, "to")?;
    let steps: usize = number(&q, "steps")?;
    if steps > 10_000 {
        return Err(ApiError::bad_request("argument", "at most 10000 steps"));
    }
    let row = s.art.panel.find(&region, year)?;
    let session = q.get("session").cloned();
    let base = match &session {
        Some(id) => {
            check_session(id)?;
            let log = s.sessions.lock().expect("session map lock").get(id).cloned();
            match log {
                Some(log) => {
                    let log = log.lock().expect("session lock");
                    match log.last() {
                        Some(t) if s.art.panel.find(&log.base_region, log.base_year).ok() == Some(row) => t.resolved.clone(),
                        _ => s.art.panel.rows[row].values.clone(),
                    }
                }
                None => return Err(Error::Lookup(format!("no session {id}")).into()),
            }
        }
        None => whatif::resolve(&s.art.panel, &Scenario { base_region: region.clone(), base_year: year, overrides: BTreeMap::new(), cumulative: true })?,
    };
    let grid = whatif::linear_grid(from, to, steps)?;
    let points = whatif::sensitivity_sweep(&s.art.panel, &base, &indicator, &grid, &s.art.train.classifier)?;
    Ok(Json(SweepResponse { indicator, base_region: s.art.panel.rows[row].region_id.clone(), base_year: year, session, points }))
}

/// Bind and serve until interrupted.
pub async fn serve(state: Arc<AppState>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
