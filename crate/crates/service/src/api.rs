use std::collections::HashMap;
use std::path::{Path as FsPath, PathBuf};
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use geolatent::analysis::{project_tsne, TsneParams, DEFAULT_SPLIT_K, ROOT};
use geolatent::autoencoder::{infer_latents, train, TrainConfig};
use geolatent::store::value_based_sample;
use geolatent::tracker::{track, FrameLatents, Region};
use parking_lot::RwLock;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::error::{ApiError, ApiResult};
use crate::jobs::{JobKind, Jobs};
use crate::session::{no_latents, ProjectionKey, Session, SESSION_FILE};

pub struct AppState {
    root: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    pub jobs: Jobs,
}

impl AppState {
    /// Opens (creating if needed) `root` and restores the sessions in it.
    /// Sessions whose dataset can no longer be read are skipped with a warning.
    pub fn open(root: PathBuf) -> std::io::Result<Arc<Self>> {
        std::fs::create_dir_all(&root)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&root)? {
            let dir = entry?.path();
            if !dir.join(SESSION_FILE).is_file() {
                continue;
            }
            match Session::open(&dir) {
                Ok(s) => {
                    sessions.insert(s.id.clone(), Arc::new(s));
                }
                Err(e) => tracing::warn!("skipping session {}: {}", dir.display(), e.body.message),
            }
        }
        Ok(Arc::new(Self {
            root,
            sessions: RwLock::new(sessions),
            jobs: Jobs::default(),
        }))
    }

    pub fn root(&self) -> &FsPath {
        &self.root
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions.read().get(id).cloned().ok_or_else(|| ApiError::not_found("session", id))
    }
}

type AppResult<T> = ApiResult<Json<T>>;
type Shared = State<Arc<AppState>>;

pub fn app(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/frames", get(frames))
        .route("/sessions/{id}/train", post(start_train))
        .route("/sessions/{id}/infer", post(start_infer))
        .route("/sessions/{id}/track", post(start_track))
        .route("/sessions/{id}/tree/{frame}", get(get_tree))
        .route("/sessions/{id}/tree/{frame}/split", post(split))
        .route("/sessions/{id}/tree/{frame}/revoke", post(revoke))
        .route("/sessions/{id}/projection/{frame}", get(projection))
        .route("/sessions/{id}/particles/{frame}", get(particles))
        .route("/jobs/{id}", get(get_job))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker panicked: {e}")))?
}

#[derive(Deserialize)]
struct CreateSession {
    dataset_dir: PathBuf,
}

async fn create_session(State(app): Shared, Json(req): Json<CreateSession>) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let root = app.root.clone();
    let session = blocking(move || Session::create(&root, id, req.dataset_dir)).await?;
    let body = summary(&session);
    app.sessions.write().insert(session.id.clone(), Arc::new(session));
    Ok((StatusCode::CREATED, Json(body)))
}

fn summary(s: &Session) -> Value {
    let st = s.read();
    json!({
        "id": s.id,
        "dataset_dir": s.dataset_dir,
        "frames": s.frames.len(),
        "model": st.model.as_ref().map(|(m, r)| json!({
            "digest": r.digest,
            "radius": m.radius,
            "latent_dim": m.latent_dim(),
            "attr_dim": m.attr_dim(),
        })),
        "latents": st.latents.keys().collect::<Vec<_>>(),
    })
}

async fn list_sessions(State(app): Shared) -> Json<Value> {
    let mut ids: Vec<String> = app.sessions.read().keys().cloned().collect();
    ids.sort();
    Json(json!(ids))
}

async fn get_session(State(app): Shared, Path(id): Path<String>) -> AppResult<Value> {
    Ok(Json(summary(&*app.session(&id)?)))
}

async fn frames(State(app): Shared, Path(id): Path<String>) -> AppResult<Value> {
    let s = app.session(&id)?;
    let list: Vec<Value> = s
        .frames
        .iter()
        .map(|f| json!({ "id": f.id(), "n": f.len(), "d": f.attr_dim(), "attr_names": f.attr_names() }))
        .collect();
    Ok(Json(json!(list)))
}

async fn get_job(State(app): Shared, Path(id): Path<u64>) -> AppResult<crate::jobs::Job> {
    app.jobs.get(id).map(Json).ok_or_else(|| ApiError::not_found("job", id))
}

fn accepted(job: u64) -> (StatusCode, Json<Value>) {
    (StatusCode::ACCEPTED, Json(json!({ "job": job })))
}

/// Spawns `work` as a job; its `Ok` value becomes the job result.
fn spawn_job(app: &Arc<AppState>, session: &str, kind: JobKind, work: impl FnOnce(&Jobs, u64) -> ApiResult<Value> + Send + 'static) -> u64 {
    let id = app.jobs.create(session, kind);
    let app = app.clone();
    tokio::task::spawn_blocking(move || {
        app.jobs.start(id);
        match work(&app.jobs, id) {
            Ok(v) => app.jobs.finish(id, v),
            Err(e) => app.jobs.fail(id, serde_json::to_value(&e.body).unwrap_or(Value::Null)),
        }
    });
    id
}

#[derive(Deserialize)]
struct TrainRequest {
    radius: f64,
    latent_dim: usize,
    #[serde(default)]
    config: TrainConfig,
}

async fn start_train(State(app): Shared, Path(id): Path<String>, Json(req): Json<TrainRequest>) -> ApiResult<(StatusCode, Json<Value>)> {
    let s = app.session(&id)?;
    req.config.validate()?;
    let job = spawn_job(&app, &id, JobKind::Train, move |jobs, job| {
        let model = train(&s.frames, &req.config, req.radius, req.latent_dim, &mut |e| {
            jobs.progress(job, e.epoch, e.mean_loss)
        })?;
        let r = s.install_model(model)?;
        Ok(json!({ "digest": r.digest }))
    });
    Ok(accepted(job))
}

#[derive(Deserialize)]
struct InferRequest {
    frame: u64,
}

async fn start_infer(State(app): Shared, Path(id): Path<String>, Json(req): Json<InferRequest>) -> ApiResult<(StatusCode, Json<Value>)> {
    let s = app.session(&id)?;
    s.frame(req.frame)?;
    let model = s.read().model.as_ref().map(|(m, _)| m.clone()).ok_or_else(no_model)?;
    let job = spawn_job(&app, &id, JobKind::Infer, move |_, _| {
        let field = infer_latents(&model, s.frame(req.frame)?)?;
        let (n, dim) = (field.len(), field.latent_dim);
        let r = s.install_latents(field)?;
        Ok(json!({ "frame": req.frame, "n": n, "latent_dim": dim, "digest": r.digest }))
    });
    Ok(accepted(job))
}

fn no_model() -> ApiError {
    ApiError::conflict("no_model", "the session has no trained model")
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HalfExtent {
    Cube(f64),
    Box([f64; 3]),
}

#[derive(Deserialize)]
struct TrackRequest {
    frame_start: u64,
    frame_end: u64,
    region_center: [f64; 3],
    half_extent: HalfExtent,
}

async fn start_track(State(app): Shared, Path(id): Path<String>, Json(req): Json<TrackRequest>) -> ApiResult<(StatusCode, Json<Value>)> {
    let s = app.session(&id)?;
    let half = match req.half_extent {
        HalfExtent::Cube(h) => [h; 3],
        HalfExtent::Box(b) => b,
    };
    let region = Region::new(req.region_center, half)?;
    if req.frame_end <= req.frame_start {
        return Err(ApiError::bad_request("frame_end must be after frame_start"));
    }
    s.frame(req.frame_start)?;
    s.frame(req.frame_end)?;
    let (model, cached) = {
        let st = s.read();
        let model = st.model.as_ref().map(|(m, _)| m.clone()).ok_or_else(no_model)?;
        (model, st.latents.clone())
    };
    let job = spawn_job(&app, &id, JobKind::Track, move |_, _| {
        let frames: Vec<_> = s.frames.iter().filter(|f| (req.frame_start..=req.frame_end).contains(&f.id())).collect();
        let mut latents = frames
            .iter()
            .map(|f| match cached.get(&f.id()) {
                Some((field, _)) => FrameLatents::from_field(f, field),
                None => FrameLatents::from_model(f, &model),
            })
            .collect::<geolatent::Result<Vec<_>>>()?;
        let trace = track(&mut latents, &region)?;
        serde_json::to_value(&trace).map_err(|e| ApiError::internal(e.to_string()))
    });
    Ok(accepted(job))
}

async fn get_tree(State(app): Shared, Path((id, frame)): Path<(String, u64)>) -> AppResult<Value> {
    let s = app.session(&id)?;
    s.frame(frame)?;
    let tree = s.read().trees.get(&frame).cloned().ok_or_else(|| no_latents(frame))?;
    Ok(Json(serde_json::to_value(&*tree).map_err(|e| ApiError::internal(e.to_string()))?))
}

#[derive(Deserialize)]
struct SplitRequest {
    node: u32,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    seed: u64,
}

fn default_k() -> usize {
    DEFAULT_SPLIT_K
}

async fn split(State(app): Shared, Path((id, frame)): Path<(String, u64)>, Json(req): Json<SplitRequest>) -> AppResult<Value> {
    let s = app.session(&id)?;
    s.frame(frame)?;
    let tree = blocking(move || s.mutate_tree(frame, |t, l| t.split(req.node, req.k, req.seed, l).map(drop))).await?;
    Ok(Json(serde_json::to_value(&*tree).map_err(|e| ApiError::internal(e.to_string()))?))
}

#[derive(Deserialize)]
struct RevokeRequest {
    node: u32,
}

async fn revoke(State(app): Shared, Path((id, frame)): Path<(String, u64)>, Json(req): Json<RevokeRequest>) -> AppResult<Value> {
    let s = app.session(&id)?;
    s.frame(frame)?;
    let tree = blocking(move || s.mutate_tree(frame, |t, _| t.revoke(req.node))).await?;
    Ok(Json(serde_json::to_value(&*tree).map_err(|e| ApiError::internal(e.to_string()))?))
}

#[derive(Deserialize)]
struct ProjectionQuery {
    #[serde(default = "default_fraction")]
    sample_fraction: f64,
    #[serde(default = "default_perplexity")]
    perplexity: f64,
    #[serde(default)]
    seed: u64,
    iterations: Option<usize>,
}

fn default_fraction() -> f64 {
    0.01
}

fn default_perplexity() -> f64 {
    TsneParams::default().perplexity
}

/// t-SNE of a value-based sample of the frame's latents, with the current
/// leaf label of every sampled particle. Coordinates are cached per
/// parameter set; labels always reflect the current tree.
async fn projection(State(app): Shared, Path((id, frame)): Path<(String, u64)>, Query(q): Query<ProjectionQuery>) -> AppResult<Value> {
    let s = app.session(&id)?;
    s.frame(frame)?;
    let params = TsneParams {
        perplexity: q.perplexity,
        iterations: q.iterations.unwrap_or(TsneParams::default().iterations),
        seed: q.seed,
    };
    let key = ProjectionKey {
        frame,
        fraction: q.sample_fraction.to_bits(),
        perplexity: q.perplexity.to_bits(),
        seed: q.seed,
        iterations: params.iterations,
    };
    let (cached, field, digest) = {
        let st = s.read();
        let (field, r) = st.latents.get(&frame).ok_or_else(|| no_latents(frame))?;
        (st.projections.get(&key).cloned(), field.clone(), r.digest.clone())
    };
    let proj = match cached {
        Some(p) => p,
        None => {
            let s2 = s.clone();
            let p = blocking(move || {
                let sample = value_based_sample(s2.frame(frame)?, q.sample_fraction, q.seed)?;
                Ok(Arc::new(project_tsne(&field, &sample, &params)?))
            })
            .await?;
            s.cache_projection(key, p.clone(), &digest);
            p
        }
    };
    let labels = {
        let st = s.read();
        let tree = st.trees.get(&frame).ok_or_else(|| no_latents(frame))?;
        let all = tree.leaf_labels();
        proj.indices.iter().map(|&i| all[i]).collect::<Vec<_>>()
    };
    let mut body = serde_json::to_value(&*proj).map_err(|e| ApiError::internal(e.to_string()))?;
    body["labels"] = json!(labels);
    Ok(Json(body))
}

#[derive(Deserialize)]
struct ParticlesQuery {
    #[serde(default)]
    node: u32,
    attr: Option<String>,
}

fn b64_le<T: Copy>(items: impl Iterator<Item = T>, to_bytes: impl Fn(T) -> [u8; 4]) -> String {
    let bytes: Vec<u8> = items.flat_map(to_bytes).collect();
    B64.encode(bytes)
}

/// Member positions (normalized coordinates) and one attribute of a tree
/// node, as base64 little-endian float32 / uint32 arrays.
async fn particles(State(app): Shared, Path((id, frame)): Path<(String, u64)>, Query(q): Query<ParticlesQuery>) -> AppResult<Value> {
    let s = app.session(&id)?;
    let f = s.frame(frame)?;
    let attr_index = match &q.attr {
        None => 0,
        Some(name) => f
            .attr_names()
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| ApiError::not_found("attribute", name))?,
    };
    let members: Vec<usize> = {
        let st = s.read();
        match st.trees.get(&frame) {
            Some(tree) => tree.node(q.node)?.members.clone(),
            None if q.node == ROOT => (0..f.len()).collect(),
            None => return Err(no_latents(frame)),
        }
    };
    let d = f.attr_dim();
    let indices = b64_le(members.iter().map(|&i| i as u32), u32::to_le_bytes);
    let positions = b64_le(members.iter().flat_map(|&i| f.position(i).iter().map(|&c| c as f32)), f32::to_le_bytes);
    let values = b64_le(members.iter().map(|&i| f.attributes()[i * d + attr_index] as f32), f32::to_le_bytes);
    Ok(Json(json!({
        "frame": frame,
        "node": q.node,
        "count": members.len(),
        "attr": f.attr_names()[attr_index],
        "indices": indices,
        "positions": positions,
        "values": values,
    })))
}
