//! Embedded store: JSONL ingestion, immutable snapshots and a versioned state file.
//!
//! Writers go through [`Store::write`], which applies a mutation to a private
//! copy of the current snapshot and publishes it atomically. Readers hold an
//! `Arc<Snapshot>` that never changes underneath them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CategorySet, ModelError, ModelParams, DEFAULT_FEATURE_DIM};
use crate::persona::PersonaProfile;
use crate::types::{
    EngagementCounts, FeedbackEvent, InteractionEvent, InteractionKind, Post, Timestamp, UserRecord,
};

pub const STATE_VERSION: u32 = 1;
const MAX_LISTED_OFFENDERS: usize = 10;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file}:{line}: {message}")]
    Malformed { file: String, line: usize, message: String },
    #[error("{file}: duplicate {kind} {id:?} on lines {first_line} and {second_line}")]
    Duplicate { file: String, kind: &'static str, id: String, first_line: usize, second_line: usize },
    #[error("{file}: {total} dangling reference(s): {}", offenders.join("; "))]
    Dangling { file: String, offenders: Vec<String>, total: usize },
    #[error("unsupported state version {found} (expected {expected})")]
    StateVersion { found: u32, expected: u32 },
    #[error("corrupt state: {0}")]
    Corrupt(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io { path: path.display().to_string(), source }
}

/// The serving model and its training bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: ModelParams,
    pub version: u64,
    pub current_round: u64,
    pub last_eval_acc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub users: usize,
    pub posts: usize,
    pub interactions: usize,
}

impl std::fmt::Display for RecordCounts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "users: {}, posts: {}, interactions: {}", self.users, self.posts, self.interactions)
    }
}

/// A consistent, immutable view of all stored data.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Logical version, bumped by every data write (not by persona caching).
    pub version: u64,
    pub categories: CategorySet,
    pub users: BTreeMap<String, UserRecord>,
    pub posts: BTreeMap<String, Post>,
    pub interactions: Vec<InteractionEvent>,
    pub feedback: Vec<FeedbackEvent>,
    /// Materialized personas; always reproducible from history plus feedback.
    pub profiles: BTreeMap<String, PersonaProfile>,
    pub model: ModelState,
    pub next_post_seq: u64,
}

impl Snapshot {
    pub fn empty(categories: CategorySet) -> Self {
        let params = ModelParams::zeros(categories.len(), DEFAULT_FEATURE_DIM).expect("valid default shape");
        Self {
            version: 0,
            categories,
            users: BTreeMap::new(),
            posts: BTreeMap::new(),
            interactions: Vec::new(),
            feedback: Vec::new(),
            profiles: BTreeMap::new(),
            model: ModelState { params, version: 0, current_round: 0, last_eval_acc: None },
            next_post_seq: 1,
        }
    }

    pub fn counts(&self) -> RecordCounts {
        RecordCounts { users: self.users.len(), posts: self.posts.len(), interactions: self.interactions.len() }
    }

    /// Latest timestamp recorded anywhere in the store. Feeds are ranked as of this instant.
    pub fn clock(&self) -> Timestamp {
        let posts = self.posts.values().map(|p| p.created_at);
        let events = self.interactions.iter().map(|e| e.timestamp);
        let fb = self.feedback.iter().map(|f| f.timestamp);
        posts.chain(events).chain(fb).max().unwrap_or(0)
    }

    pub fn user(&self, user_id: &str) -> Result<&UserRecord, StorageError> {
        self.users.get(user_id).ok_or_else(|| StorageError::NotFound(format!("user {user_id:?}")))
    }

    pub fn post(&self, post_id: &str) -> Result<&Post, StorageError> {
        self.posts.get(post_id).ok_or_else(|| StorageError::NotFound(format!("post {post_id:?}")))
    }

    /// Posts whose stored counters disagree with the interaction log.
    pub fn recount_mismatches(&self) -> Vec<String> {
        let recount = recount(&self.interactions);
        self.posts
            .values()
            .filter(|p| p.counts != recount.get(&p.post_id).copied().unwrap_or_default())
            .map(|p| p.post_id.clone())
            .collect()
    }

    /// Appends a validated interaction and updates the post's counters.
    pub fn add_interaction(&mut self, ev: InteractionEvent) -> Result<(), StorageError> {
        self.user(&ev.user_id)?;
        let post = self.post(&ev.post_id)?;
        if ev.timestamp < post.created_at {
            return Err(StorageError::Invalid(format!(
                "interaction at {} precedes post creation at {}",
                ev.timestamp, post.created_at
            )));
        }
        if ev.comment_text.is_some() && ev.kind != InteractionKind::Comment {
            return Err(StorageError::Invalid("comment_text is only allowed on comments".into()));
        }
        self.posts.get_mut(&ev.post_id).unwrap().counts.record(ev.kind);
        self.profiles.remove(&ev.user_id);
        self.interactions.push(ev);
        self.version += 1;
        Ok(())
    }

    /// Stores a new post with a generated id.
    pub fn add_post(&mut self, author_id: &str, text: &str, created_at: Timestamp) -> Result<&Post, StorageError> {
        self.user(author_id)?;
        let mut id = format!("p{}", self.next_post_seq);
        while self.posts.contains_key(&id) {
            self.next_post_seq += 1;
            id = format!("p{}", self.next_post_seq);
        }
        self.next_post_seq += 1;
        let post = Post {
            post_id: id.clone(),
            author_id: author_id.to_string(),
            text: text.to_string(),
            created_at,
            counts: EngagementCounts::default(),
            label: None,
            derived: None,
        };
        self.posts.insert(id.clone(), post);
        self.version += 1;
        Ok(&self.posts[&id])
    }

    pub fn add_feedback(&mut self, ev: FeedbackEvent) -> Result<(), StorageError> {
        self.user(&ev.user_id)?;
        self.post(&ev.post_id)?;
        self.feedback.push(ev);
        self.version += 1;
        Ok(())
    }

    /// Replaces the serving model; materialized personas depend on it and are dropped.
    pub fn swap_model(&mut self, params: ModelParams, rounds_run: u64, last_eval_acc: Option<f64>) -> Result<(), StorageError> {
        if params.num_categories() != self.categories.len() {
            return Err(StorageError::Invalid(format!(
                "model has {} categories, store has {}",
                params.num_categories(),
                self.categories.len()
            )));
        }
        self.model.params = params;
        self.model.version += 1;
        self.model.current_round += rounds_run;
        self.model.last_eval_acc = last_eval_acc;
        self.profiles.clear();
        self.posts.values_mut().for_each(|p| p.derived = None);
        self.version += 1;
        Ok(())
    }
}

fn recount(interactions: &[InteractionEvent]) -> BTreeMap<String, EngagementCounts> {
    let mut out: BTreeMap<String, EngagementCounts> = BTreeMap::new();
    for ev in interactions {
        out.entry(ev.post_id.clone()).or_default().record(ev.kind);
    }
    out
}

fn file_label(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, StorageError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let label = file_label(path);
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| StorageError::Malformed {
            file: label.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn dangling(file: &str, offenders: Vec<String>) -> Result<(), StorageError> {
    if offenders.is_empty() {
        return Ok(());
    }
    let total = offenders.len();
    Err(StorageError::Dangling {
        file: file.to_string(),
        offenders: offenders.into_iter().take(MAX_LISTED_OFFENDERS).collect(),
        total,
    })
}

/// Category set for a labeled corpus: default taxonomy order, then unknown labels sorted.
pub fn categories_from_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Option<CategorySet> {
    let used: BTreeSet<&str> = labels.into_iter().collect();
    if used.is_empty() {
        return None;
    }
    let default = CategorySet::default();
    let mut names: Vec<String> = default.names().iter().filter(|n| used.contains(n.as_str())).cloned().collect();
    names.extend(used.iter().filter(|l| !default.contains(l)).map(|l| l.to_string()));
    CategorySet::new(names).ok()
}

#[derive(Debug, Clone)]
pub struct IngestPaths {
    pub users: PathBuf,
    pub posts: PathBuf,
    pub interactions: PathBuf,
}

/// Loads and cross-validates a JSONL corpus into a fresh snapshot.
///
/// When `categories` is `None`, the set is derived from post labels, or the
/// default taxonomy if no post is labeled.
pub fn ingest(paths: &IngestPaths, categories: Option<CategorySet>, now: Timestamp) -> Result<Snapshot, StorageError> {
    let users_label = file_label(&paths.users);
    let posts_label = file_label(&paths.posts);
    let inter_label = file_label(&paths.interactions);
    let raw_users: Vec<(usize, UserRecord)> = read_jsonl(&paths.users)?;
    let raw_posts: Vec<(usize, Post)> = read_jsonl(&paths.posts)?;
    let raw_events: Vec<(usize, InteractionEvent)> = read_jsonl(&paths.interactions)?;

    let mut users: BTreeMap<String, UserRecord> = BTreeMap::new();
    let mut user_lines: BTreeMap<String, usize> = BTreeMap::new();
    for (line, u) in &raw_users {
        if let Some(&first) = user_lines.get(&u.user_id) {
            return Err(StorageError::Duplicate {
                file: users_label,
                kind: "user_id",
                id: u.user_id.clone(),
                first_line: first,
                second_line: *line,
            });
        }
        if u.friends.contains(&u.user_id) {
            return Err(StorageError::Malformed {
                file: users_label,
                line: *line,
                message: format!("user {:?} lists itself as a friend", u.user_id),
            });
        }
        user_lines.insert(u.user_id.clone(), *line);
        users.insert(u.user_id.clone(), u.clone());
    }
    let mut bad = Vec::new();
    for (line, u) in &raw_users {
        for f in &u.friends {
            if !users.contains_key(f) {
                bad.push(format!("line {line}: friend {f:?} of {:?}", u.user_id));
            }
        }
    }
    dangling(&users_label, bad)?;
    // friendship is symmetric
    let edges: Vec<(String, String)> =
        users.values().flat_map(|u| u.friends.iter().map(move |f| (f.clone(), u.user_id.clone()))).collect();
    for (a, b) in edges {
        users.get_mut(&a).unwrap().friends.insert(b);
    }

    let mut posts: BTreeMap<String, Post> = BTreeMap::new();
    let mut post_lines: BTreeMap<String, usize> = BTreeMap::new();
    let mut bad = Vec::new();
    for (line, p) in raw_posts {
        if let Some(&first) = post_lines.get(&p.post_id) {
            return Err(StorageError::Duplicate {
                file: posts_label,
                kind: "post_id",
                id: p.post_id,
                first_line: first,
                second_line: line,
            });
        }
        if p.created_at > now {
            return Err(StorageError::Malformed {
                file: posts_label,
                line,
                message: format!("created_at {} is in the future", p.created_at),
            });
        }
        if !users.contains_key(&p.author_id) {
            bad.push(format!("line {line}: author {:?} of post {:?}", p.author_id, p.post_id));
        }
        post_lines.insert(p.post_id.clone(), line);
        let mut p = p;
        p.counts = EngagementCounts::default();
        p.derived = None;
        posts.insert(p.post_id.clone(), p);
    }
    dangling(&posts_label, bad)?;

    let categories = match categories {
        Some(c) => c,
        None => categories_from_labels(posts.values().filter_map(|p| p.label.as_deref())).unwrap_or_default(),
    };
    for p in posts.values() {
        if let Some(l) = &p.label {
            if !categories.contains(l) {
                return Err(StorageError::Malformed {
                    file: posts_label,
                    line: post_lines[&p.post_id],
                    message: format!("label {l:?} is not a configured category"),
                });
            }
        }
    }

    let mut bad = Vec::new();
    for (line, ev) in &raw_events {
        if !users.contains_key(&ev.user_id) {
            bad.push(format!("line {line}: user {:?}", ev.user_id));
        }
        match posts.get(&ev.post_id) {
            None => bad.push(format!("line {line}: post {:?}", ev.post_id)),
            Some(p) if ev.timestamp < p.created_at => {
                return Err(StorageError::Malformed {
                    file: inter_label,
                    line: *line,
                    message: format!("timestamp {} precedes post {:?} creation", ev.timestamp, ev.post_id),
                })
            }
            Some(_) => {}
        }
        if ev.comment_text.is_some() && ev.kind != InteractionKind::Comment {
            return Err(StorageError::Malformed {
                file: inter_label,
                line: *line,
                message: "comment_text is only allowed on comments".into(),
            });
        }
    }
    dangling(&inter_label, bad)?;

    let interactions: Vec<InteractionEvent> = raw_events.into_iter().map(|(_, e)| e).collect();
    for (id, c) in recount(&interactions) {
        posts.get_mut(&id).unwrap().counts = c;
    }

    let mut snap = Snapshot::empty(categories);
    snap.users = users;
    snap.posts = posts;
    snap.interactions = interactions;
    snap.version = 1;
    Ok(snap)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    version: u64,
    current_round: u64,
    last_eval_acc: Option<f64>,
    num_categories: usize,
    feature_dim: usize,
    checkpoint: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    version: u32,
    logical_version: u64,
    next_post_seq: u64,
    categories: CategorySet,
    model: ModelMeta,
    users: Vec<UserRecord>,
    posts: Vec<Post>,
    interactions: Vec<InteractionEvent>,
    feedback: Vec<FeedbackEvent>,
    profiles: Vec<PersonaProfile>,
}

/// Sidecar path of the model checkpoint for a state file.
pub fn checkpoint_path(state_path: &Path) -> PathBuf {
    let mut name = state_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".model");
    state_path.with_file_name(name)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes the JSON state file and its binary model sidecar.
pub fn persist(snap: &Snapshot, path: &Path) -> Result<(), StorageError> {
    let ckpt = checkpoint_path(path);
    let mut model_bytes = Vec::new();
    snap.model.params.write_checkpoint(&mut model_bytes).map_err(io_err(&ckpt))?;
    let state = StateFile {
        version: STATE_VERSION,
        logical_version: snap.version,
        next_post_seq: snap.next_post_seq,
        categories: snap.categories.clone(),
        model: ModelMeta {
            version: snap.model.version,
            current_round: snap.model.current_round,
            last_eval_acc: snap.model.last_eval_acc,
            num_categories: snap.model.params.num_categories(),
            feature_dim: snap.model.params.feature_dim(),
            checkpoint: file_label(&ckpt),
        },
        users: snap.users.values().cloned().collect(),
        posts: snap.posts.values().cloned().collect(),
        interactions: snap.interactions.clone(),
        feedback: snap.feedback.clone(),
        profiles: snap.profiles.values().cloned().collect(),
    };
    let mut json = serde_json::to_vec_pretty(&state).map_err(|e| StorageError::Corrupt(e.to_string()))?;
    json.push(b'\n');
    write_atomic(&ckpt, &model_bytes)?;
    write_atomic(path, &json)
}

/// Reads a state file written by [`persist`].
pub fn restore(path: &Path) -> Result<Snapshot, StorageError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| StorageError::Corrupt(format!("{}: {e}", path.display())))?;
    let found = value.get("version").and_then(|v| v.as_u64()).ok_or_else(|| {
        StorageError::Corrupt(format!("{}: missing \"version\" field", path.display()))
    })? as u32;
    if found != STATE_VERSION {
        return Err(StorageError::StateVersion { found, expected: STATE_VERSION });
    }
    let state: StateFile =
        serde_json::from_value(value).map_err(|e| StorageError::Corrupt(format!("{}: {e}", path.display())))?;
    let ckpt = path.with_file_name(&state.model.checkpoint);
    let file = fs::File::open(&ckpt).map_err(io_err(&ckpt))?;
    let params = ModelParams::read_checkpoint(BufReader::new(file))?;
    if params.shape() != (state.model.num_categories, state.model.feature_dim)
        || params.num_categories() != state.categories.len()
    {
        return Err(StorageError::Corrupt("model checkpoint shape does not match state".into()));
    }

    let mut snap = Snapshot::empty(state.categories);
    snap.version = state.logical_version;
    snap.next_post_seq = state.next_post_seq;
    snap.users = state.users.into_iter().map(|u| (u.user_id.clone(), u)).collect();
    snap.posts = state.posts.into_iter().map(|p| (p.post_id.clone(), p)).collect();
    snap.interactions = state.interactions;
    snap.feedback = state.feedback;
    snap.profiles = state.profiles.into_iter().map(|p| (p.user_id.clone(), p)).collect();
    snap.model = ModelState {
        params,
        version: state.model.version,
        current_round: state.model.current_round,
        last_eval_acc: state.model.last_eval_acc,
    };
    let unknown: Vec<String> = snap
        .interactions
        .iter()
        .filter(|e| !snap.posts.contains_key(&e.post_id) || !snap.users.contains_key(&e.user_id))
        .map(|e| format!("{} -> {}", e.user_id, e.post_id))
        .collect();
    if !unknown.is_empty() {
        return Err(StorageError::Corrupt(format!("dangling interactions: {}", unknown.join(", "))));
    }
    Ok(snap)
}

/// Single-writer, many-reader holder of the current snapshot.
#[derive(Debug)]
pub struct Store {
    current: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
}

impl Store {
    pub fn new(snapshot: Snapshot) -> Self {
        Self { current: RwLock::new(Arc::new(snapshot)), writer: Mutex::new(()) }
    }

    pub fn open(path: &Path) -> Result<Self, StorageError> {
        restore(path).map(Self::new)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.current.read().expect("snapshot lock poisoned").clone()
    }

    /// Applies `f` to a copy of the current snapshot and publishes it if `f` succeeds.
    pub fn write<T, E>(&self, f: impl FnOnce(&mut Snapshot) -> Result<T, E>) -> Result<T, E> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        let mut next = (*self.snapshot()).clone();
        let out = f(&mut next)?;
        *self.current.write().expect("snapshot lock poisoned") = Arc::new(next);
        Ok(out)
    }

    /// Persists the current snapshot. Concurrent writers wait; readers do not.
    pub fn persist(&self, path: &Path) -> Result<(), StorageError> {
        let _guard = self.writer.lock().expect("writer lock poisoned");
        persist(&self.snapshot(), path)
    }

    /// Replaces the in-memory state with `path`'s contents; on error nothing changes.
    pub fn restore_from(&self, path: &Path) -> Result<(), StorageError> {
        let snap = restore(path)?;
        let _guard = self.writer.lock().expect("writer lock poisoned");
        *self.current.write().expect("snapshot lock poisoned") = Arc::new(snap);
        Ok(())
    }
}
