//! Session state and its on-disk form.
//!
//! Layout of a session directory:
//! ```text
//! <root>/<id>/session.json           dataset, model and latent references, cluster trees
//! <root>/<id>/models/<digest>.gae
//! <root>/<id>/latents/frame_<n>-<digest prefix>.lat1
//! ```
//! Model and latent files are content-named and written before `session.json`
//! is atomically replaced, so the JSON never points at a missing or newer file.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use geolatent::analysis::{ClusterTree, Projection2D};
use geolatent::autoencoder::{AutoencoderModel, LatentField};
use geolatent::io::write_atomic;
use geolatent::store::{load_dataset, ParticleFrame};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

pub const SESSION_FILE: &str = "session.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub file: String,
    pub digest: String,
}

#[derive(Serialize)]
struct SessionFileOut<'a> {
    id: &'a str,
    dataset_dir: &'a Path,
    model: Option<&'a FileRef>,
    latents: &'a BTreeMap<u64, FileRef>,
    trees: BTreeMap<u64, &'a ClusterTree>,
}

#[derive(Deserialize)]
struct SessionFileIn {
    id: String,
    dataset_dir: PathBuf,
    model: Option<FileRef>,
    latents: BTreeMap<u64, FileRef>,
    trees: BTreeMap<u64, ClusterTree>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProjectionKey {
    pub frame: u64,
    pub fraction: u64,
    pub perplexity: u64,
    pub seed: u64,
    pub iterations: usize,
}

#[derive(Default)]
pub struct SessionState {
    pub model: Option<(Arc<AutoencoderModel>, FileRef)>,
    pub latents: BTreeMap<u64, (Arc<LatentField>, FileRef)>,
    pub trees: BTreeMap<u64, Arc<ClusterTree>>,
    pub projections: HashMap<ProjectionKey, Arc<Projection2D>>,
}

pub struct Session {
    pub id: String,
    pub dir: PathBuf,
    pub dataset_dir: PathBuf,
    pub frames: Arc<Vec<ParticleFrame>>,
    state: RwLock<SessionState>,
    /// Serializes mutations; readers only take the state lock briefly.
    writer: Mutex<()>,
}

fn io_err(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::internal(format!("{}: {e}", path.display()))
}

impl Session {
    pub fn create(root: &Path, id: String, dataset_dir: PathBuf) -> ApiResult<Self> {
        let frames = load_dataset(&dataset_dir).map_err(|e| {
            ApiError::new(axum::http::StatusCode::UNPROCESSABLE_ENTITY, "unreadable_dataset", e.to_string())
                .with_detail(serde_json::json!({ "dataset_dir": dataset_dir }))
        })?;
        let dir = root.join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let session = Self {
            id,
            dir,
            dataset_dir,
            frames: Arc::new(frames),
            state: RwLock::new(SessionState::default()),
            writer: Mutex::new(()),
        };
        session.persist(&session.state.read(), None)?;
        Ok(session)
    }

    /// Restores a session directory written by [`Session::persist`].
    pub fn open(dir: &Path) -> ApiResult<Self> {
        let path = dir.join(SESSION_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let file: SessionFileIn =
            serde_json::from_str(&text).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
        let frames = load_dataset(&file.dataset_dir)?;
        let mut state = SessionState::default();
        if let Some(m) = file.model {
            let model = AutoencoderModel::load(&dir.join(&m.file))?;
            if model.digest_hex() != m.digest {
                return Err(ApiError::internal(format!("model file {} does not match its digest", m.file)));
            }
            state.model = Some((Arc::new(model), m));
        }
        for (frame, r) in file.latents {
            let field = LatentField::load(&dir.join(&r.file), frame)?;
            if hex::encode(field.model_digest) != r.digest {
                return Err(ApiError::internal(format!("latent file {} does not match its model", r.file)));
            }
            state.latents.insert(frame, (Arc::new(field), r));
        }
        state.trees = file.trees.into_iter().map(|(k, t)| (k, Arc::new(t))).collect();
        Ok(Self {
            id: file.id,
            dir: dir.to_path_buf(),
            dataset_dir: file.dataset_dir,
            frames: Arc::new(frames),
            state: RwLock::new(state),
            writer: Mutex::new(()),
        })
    }

    pub fn read(&self) -> parking_lot::RwLockReadGuard<'_, SessionState> {
        self.state.read()
    }

    pub fn frame(&self, id: u64) -> ApiResult<&ParticleFrame> {
        self.frames.iter().find(|f| f.id() == id).ok_or_else(|| ApiError::not_found("frame", id))
    }

    /// Writes `session.json` for `state`, with `tree` replacing that frame's tree.
    fn persist(&self, state: &SessionState, tree: Option<(u64, &ClusterTree)>) -> ApiResult<()> {
        let latents: BTreeMap<u64, FileRef> = state.latents.iter().map(|(k, (_, r))| (*k, r.clone())).collect();
        let mut trees: BTreeMap<u64, &ClusterTree> = state.trees.iter().map(|(k, t)| (*k, t.as_ref())).collect();
        if let Some((frame, t)) = tree {
            trees.insert(frame, t);
        }
        let out = SessionFileOut {
            id: &self.id,
            dataset_dir: &self.dataset_dir,
            model: state.model.as_ref().map(|(_, r)| r),
            latents: &latents,
            trees,
        };
        let json = serde_json::to_vec_pretty(&out).map_err(|e| ApiError::internal(e.to_string()))?;
        write_atomic(&self.dir.join(SESSION_FILE), &json)?;
        Ok(())
    }

    /// Applies `f` to a copy of the frame's tree, persists the result, then
    /// publishes it. Mutations are serialized; readers see either the old or
    /// the new tree.
    pub fn mutate_tree(&self, frame: u64, f: impl FnOnce(&mut ClusterTree, &LatentField) -> geolatent::Result<()>) -> ApiResult<Arc<ClusterTree>> {
        let _w = self.writer.lock();
        let (mut tree, latents) = {
            let s = self.state.read();
            let tree = s.trees.get(&frame).ok_or_else(|| no_latents(frame))?;
            let latents = s.latents.get(&frame).ok_or_else(|| no_latents(frame))?.0.clone();
            (ClusterTree::clone(tree), latents)
        };
        f(&mut tree, &latents)?;
        self.persist(&self.state.read(), Some((frame, &tree)))?;
        let tree = Arc::new(tree);
        self.state.write().trees.insert(frame, tree.clone());
        Ok(tree)
    }

    /// Installs a newly trained model; cached latents and trees belong to the
    /// previous model and are dropped.
    pub fn install_model(&self, model: AutoencoderModel) -> ApiResult<FileRef> {
        let _w = self.writer.lock();
        let digest = model.digest_hex();
        let file = format!("models/{digest}.gae");
        let path = self.dir.join(&file);
        std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| io_err(&path, e))?;
        model.save(&path)?;
        let r = FileRef { file, digest };
        let next = SessionState {
            model: Some((Arc::new(model), r.clone())),
            ..Default::default()
        };
        self.persist(&next, None)?;
        *self.state.write() = next;
        Ok(r)
    }

    /// Caches latents for a frame and creates its root tree if it has none.
    pub fn install_latents(&self, field: LatentField) -> ApiResult<FileRef> {
        let _w = self.writer.lock();
        let digest = hex::encode(field.model_digest);
        let current = self.state.read().model.as_ref().map(|(_, r)| r.digest.clone());
        if current.as_deref() != Some(digest.as_str()) {
            return Err(ApiError::conflict("stale_model", "the model changed while latents were being inferred"));
        }
        let frame = field.frame_id;
        let file = format!("latents/frame_{frame}-{}.lat1", &digest[..16]);
        let path = self.dir.join(&file);
        std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| io_err(&path, e))?;
        field.save(&path)?;
        let r = FileRef { file, digest };
        let has_tree = self.state.read().trees.contains_key(&frame);
        let new_tree = if has_tree { None } else { Some(ClusterTree::new(&field)?) };
        let field = Arc::new(field);
        {
            // persist a view that includes the new latents before publishing them
            let s = self.state.read();
            let mut latents: BTreeMap<u64, (Arc<LatentField>, FileRef)> = s.latents.clone();
            latents.insert(frame, (field.clone(), r.clone()));
            let view = SessionState {
                model: s.model.clone(),
                latents,
                trees: s.trees.clone(),
                projections: HashMap::new(),
            };
            self.persist(&view, new_tree.as_ref().map(|t| (frame, t)))?;
        }
        let mut s = self.state.write();
        s.latents.insert(frame, (field, r.clone()));
        s.projections.retain(|k, _| k.frame != frame);
        if let Some(t) = new_tree {
            s.trees.insert(frame, Arc::new(t));
        }
        Ok(r)
    }

    pub fn cache_projection(&self, key: ProjectionKey, p: Arc<Projection2D>, digest: &str) {
        let mut s = self.state.write();
        // only keep it if the latents it came from are still current
        if s.latents.get(&key.frame).is_some_and(|(_, r)| r.digest == digest) {
            s.projections.insert(key, p);
        }
    }
}

pub fn no_latents(frame: u64) -> ApiError {
    ApiError::conflict("no_latents", format!("no latents inferred for frame {frame}; run infer first"))
        .with_detail(serde_json::json!({ "frame": frame }))
}
