//! Append-only persistence on the local filesystem.
//!
//! ```text
//! <root>/blobs/ab/cd/abcd…ef          image bytes, named by SHA-256
//! <root>/blobs/ab/cd/abcd…ef.json     BlobEntry sidecar
//! <root>/sessions/<session_id>.log    one event per line
//! <root>/annotations.log              one annotation per line
//! ```
//!
//! Every log line is `<sha256 of json> <json>`. A line whose digest does not
//! match, or a final line without its newline, makes the log corrupt. Any
//! prefix of a log cut at a line boundary replays to a valid trajectory.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{CallStats, MediaType};
use crate::refine::{HumanFeedback, Prompt, RefinementRound, SessionConfig, SessionStatus, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("refusing to store an empty blob")]
    EmptyBlob,
    #[error("not found: {0}")]
    NotFound(String),
    #[error("corrupt log for {session} at line {line}: {reason}")]
    CorruptLog { session: String, line: usize, reason: String },
    #[error("rejected event for {session}: {reason}")]
    Rejected { session: String, reason: String },
    #[error("session {0} is not finished")]
    SessionIncomplete(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> StoreError {
    let context = context.into();
    move |source| StoreError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub blob_id: String,
    pub media_type: MediaType,
    pub len: u64,
}

/// Backend costs of one round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTimings {
    pub generate: CallStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critique: Option<CallStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "payload", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        original_prompt: Prompt,
        config: SessionConfig,
    },
    RoundCompleted {
        round: RefinementRound,
        #[serde(default)]
        timings: RoundTimings,
    },
    HumanFeedback(HumanFeedback),
    SessionAborted {
        reason: String,
    },
    SessionFinished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub session_id: String,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub case_id: String,
    pub annotator_id: String,
    pub score: u8,
    #[serde(default)]
    pub timestamp_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_blob_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

fn is_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn encode_line<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("log records serialize");
    format!("{} {json}\n", sha256_hex(json.as_bytes()))
}

/// Splits a log into verified JSON payloads.
fn decode_lines(name: &str, text: &str) -> Result<Vec<String>, StoreError> {
    let corrupt = |line: usize, reason: &str| StoreError::CorruptLog {
        session: name.to_string(),
        line,
        reason: reason.to_string(),
    };
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(corrupt(text.lines().count(), "truncated final line"));
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (digest, json) = line.split_once(' ').ok_or_else(|| corrupt(i + 1, "missing digest"))?;
        if sha256_hex(json.as_bytes()) != digest {
            return Err(corrupt(i + 1, "digest mismatch"));
        }
        out.push(json.to_string());
    }
    Ok(out)
}

/// What the next valid event for a session may be.
#[derive(Debug, Clone, Copy)]
struct Cursor {
    next_round: usize,
    terminal: bool,
}

/// Applies `record` to `traj`, enforcing the event grammar.
fn apply(traj: &mut Option<Trajectory>, record: RunRecord) -> Result<(), String> {
    match (traj.as_mut(), record.event) {
        (None, Event::SessionCreated { original_prompt, config }) => {
            *traj = Some(Trajectory::new(record.session_id, original_prompt, config));
            Ok(())
        }
        (None, _) => Err("first event must be session_created".into()),
        (Some(_), Event::SessionCreated { .. }) => Err("duplicate session_created".into()),
        (Some(t), _) if t.status != SessionStatus::Running => Err("event after session end".into()),
        (Some(t), Event::RoundCompleted { round, .. }) => {
            if round.index != t.rounds.len() {
                return Err(format!("expected round {}, got {}", t.rounds.len(), round.index));
            }
            t.rounds.push(round);
            Ok(())
        }
        (Some(t), Event::HumanFeedback(note)) => {
            t.human_feedback.push(note);
            Ok(())
        }
        (Some(t), Event::SessionAborted { reason }) => {
            t.status = SessionStatus::Aborted;
            t.abort_reason = Some(reason);
            Ok(())
        }
        (Some(t), Event::SessionFinished) => {
            t.status = SessionStatus::Finished;
            Ok(())
        }
    }
}

pub struct Store {
    root: PathBuf,
    session_locks: Mutex<HashMap<String, Arc<Mutex<Option<Cursor>>>>>,
    annotation_lock: Mutex<()>,
    tmp_counter: AtomicU64,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for dir in ["blobs", "sessions"] {
            let path = root.join(dir);
            fs::create_dir_all(&path).map_err(io_err(format!("create {}", path.display())))?;
        }
        Ok(Self {
            root,
            session_locks: Mutex::new(HashMap::new()),
            annotation_lock: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Where the bytes of a stored blob live on disk.
    pub fn blob_file(&self, blob_id: &str) -> Result<PathBuf, StoreError> {
        self.blob_entry(blob_id).map(|_| self.blob_path(blob_id))
    }

    fn blob_path(&self, id: &str) -> PathBuf {
        self.root.join("blobs").join(&id[..2]).join(&id[2..4]).join(id)
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{id}.log"))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let tmp = path.with_extension(format!("tmp-{}-{n}", std::process::id()));
        let ctx = || format!("write {}", path.display());
        let mut f = File::create(&tmp).map_err(io_err(ctx()))?;
        f.write_all(bytes).map_err(io_err(ctx()))?;
        f.sync_all().map_err(io_err(ctx()))?;
        fs::rename(&tmp, path).map_err(io_err(ctx()))
    }

    /// Stores `bytes` under their SHA-256. Storing the same bytes again is a
    /// no-op returning the existing entry.
    pub fn put_blob(&self, bytes: &[u8], media_type: MediaType) -> Result<BlobEntry, StoreError> {
        if bytes.is_empty() {
            return Err(StoreError::EmptyBlob);
        }
        let blob_id = sha256_hex(bytes);
        let path = self.blob_path(&blob_id);
        let sidecar = path.with_extension("json");
        if path.exists() && sidecar.exists() {
            return self.blob_entry(&blob_id);
        }
        let dir = path.parent().expect("blob paths have parents");
        fs::create_dir_all(dir).map_err(io_err(format!("create {}", dir.display())))?;
        let entry = BlobEntry {
            blob_id,
            media_type,
            len: bytes.len() as u64,
        };
        self.write_atomic(&path, bytes)?;
        self.write_atomic(&sidecar, &serde_json::to_vec(&entry).expect("entries serialize"))?;
        Ok(entry)
    }

    pub fn blob_entry(&self, blob_id: &str) -> Result<BlobEntry, StoreError> {
        if !is_blob_id(blob_id) {
            return Err(StoreError::NotFound(blob_id.to_string()));
        }
        let sidecar = self.blob_path(blob_id).with_extension("json");
        let text = fs::read(&sidecar).map_err(|_| StoreError::NotFound(blob_id.to_string()))?;
        serde_json::from_slice(&text).map_err(|e| StoreError::CorruptLog {
            session: blob_id.to_string(),
            line: 1,
            reason: e.to_string(),
        })
    }

    pub fn get_blob(&self, blob_id: &str) -> Result<(BlobEntry, Vec<u8>), StoreError> {
        let entry = self.blob_entry(blob_id)?;
        let bytes = fs::read(self.blob_path(blob_id)).map_err(|_| StoreError::NotFound(blob_id.to_string()))?;
        Ok((entry, bytes))
    }

    /// Creates a session and returns its id: `s-` plus 12 hex digits of the
    /// hash of config and prompt, suffixed `-2`, `-3`, … when taken.
    pub fn create_session(&self, original_prompt: &Prompt, config: &SessionConfig) -> Result<String, StoreError> {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(config).expect("configs serialize"));
        hasher.update([0u8]);
        hasher.update(original_prompt.as_str().as_bytes());
        let base = format!("s-{}", &hex::encode(hasher.finalize())[..12]);
        for n in 1u32.. {
            let id = if n == 1 { base.clone() } else { format!("{base}-{n}") };
            let path = self.session_path(&id);
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => {
                    self.append(
                        &id,
                        Event::SessionCreated {
                            original_prompt: original_prompt.clone(),
                            config: config.clone(),
                        },
                    )?;
                    return Ok(id);
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_err(format!("create {}", path.display()))(e)),
            }
        }
        unreachable!("session id space exhausted")
    }

    fn lock_for(&self, session_id: &str) -> Arc<Mutex<Option<Cursor>>> {
        let mut map = self.session_locks.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(session_id.to_string()).or_default().clone()
    }

    /// Appends one event, rejecting anything that would break the log's
    /// grammar (duplicate or skipped round index, events after the end).
    pub fn append(&self, session_id: &str, event: Event) -> Result<(), StoreError> {
        if !is_session_id(session_id) {
            return Err(StoreError::NotFound(session_id.to_string()));
        }
        let lock = self.lock_for(session_id);
        let mut cursor = lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.session_path(session_id);
        let current = match *cursor {
            Some(c) => Some(c),
            None => {
                let text = fs::read_to_string(&path).map_err(|_| StoreError::NotFound(session_id.to_string()))?;
                if text.is_empty() {
                    None
                } else {
                    let t = self.replay(session_id, &text)?;
                    Some(Cursor {
                        next_round: t.rounds.len(),
                        terminal: t.status != SessionStatus::Running,
                    })
                }
            }
        };
        let reject = |reason: String| StoreError::Rejected {
            session: session_id.to_string(),
            reason,
        };
        let next = match (&current, &event) {
            (None, Event::SessionCreated { .. }) => Cursor {
                next_round: 0,
                terminal: false,
            },
            (None, _) => return Err(reject("first event must be session_created".into())),
            (Some(_), Event::SessionCreated { .. }) => return Err(reject("duplicate session_created".into())),
            (Some(c), _) if c.terminal => return Err(reject("event after session end".into())),
            (Some(c), Event::RoundCompleted { round, .. }) => {
                if round.index != c.next_round {
                    return Err(reject(format!("expected round {}, got {}", c.next_round, round.index)));
                }
                Cursor {
                    next_round: c.next_round + 1,
                    terminal: false,
                }
            }
            (Some(c), Event::HumanFeedback(_)) => *c,
            (Some(c), Event::SessionAborted { .. } | Event::SessionFinished) => Cursor {
                next_round: c.next_round,
                terminal: true,
            },
        };
        let record = RunRecord {
            session_id: session_id.to_string(),
            timestamp_ms: now_ms(),
            event,
        };
        let line = encode_line(&record);
        let ctx = || format!("append {}", path.display());
        let mut f = OpenOptions::new().append(true).open(&path).map_err(io_err(ctx()))?;
        f.write_all(line.as_bytes()).map_err(io_err(ctx()))?;
        f.sync_data().map_err(io_err(ctx()))?;
        *cursor = Some(next);
        Ok(())
    }

    fn replay(&self, session_id: &str, text: &str) -> Result<Trajectory, StoreError> {
        let mut traj = None;
        for (i, json) in decode_lines(session_id, text)?.into_iter().enumerate() {
            let corrupt = |reason: String| StoreError::CorruptLog {
                session: session_id.to_string(),
                line: i + 1,
                reason,
            };
            let record: RunRecord = serde_json::from_str(&json).map_err(|e| corrupt(e.to_string()))?;
            if record.session_id != session_id {
                return Err(corrupt(format!("record belongs to {}", record.session_id)));
            }
            apply(&mut traj, record).map_err(corrupt)?;
        }
        traj.ok_or_else(|| StoreError::NotFound(session_id.to_string()))
    }

    pub fn records(&self, session_id: &str) -> Result<Vec<RunRecord>, StoreError> {
        let text = self.read_log(session_id)?;
        decode_lines(session_id, &text)?
            .iter()
            .enumerate()
            .map(|(i, json)| {
                serde_json::from_str(json).map_err(|e| StoreError::CorruptLog {
                    session: session_id.to_string(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect()
    }

    fn read_log(&self, session_id: &str) -> Result<String, StoreError> {
        if !is_session_id(session_id) {
            return Err(StoreError::NotFound(session_id.to_string()));
        }
        fs::read_to_string(self.session_path(session_id)).map_err(|_| StoreError::NotFound(session_id.to_string()))
    }

    /// Rebuilds the trajectory from the session's event log.
    pub fn load_trajectory(&self, session_id: &str) -> Result<Trajectory, StoreError> {
        let text = self.read_log(session_id)?;
        self.replay(session_id, &text)
    }

    pub fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("sessions");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(io_err(format!("list {}", dir.display())))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_suffix(".log").map(str::to_string))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn append_annotation(&self, annotation: &Annotation) -> Result<(), StoreError> {
        let _guard = self.annotation_lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.root.join("annotations.log");
        let ctx = || format!("append {}", path.display());
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(ctx()))?;
        f.write_all(encode_line(annotation).as_bytes()).map_err(io_err(ctx()))?;
        f.sync_data().map_err(io_err(ctx()))
    }

    pub fn annotations(&self) -> Result<Vec<Annotation>, StoreError> {
        let path = self.root.join("annotations.log");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(format!("read {}", path.display()))(e)),
        };
        decode_lines("annotations", &text)?
            .iter()
            .enumerate()
            .map(|(i, json)| {
                serde_json::from_str(json).map_err(|e| StoreError::CorruptLog {
                    session: "annotations".into(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect()
    }

    /// Writes a blinded annotation batch into `out_dir`: `manifest.json` for
    /// annotators, `assignment.json` with the unblinding key, and one image
    /// file per shown image.
    pub fn export_annotation_batch(
        &self,
        session_ids: &[String],
        layout: BatchLayout,
        seed: u64,
        out_dir: &Path,
    ) -> Result<AnnotationBatch, StoreError> {
        let mut trajectories = Vec::with_capacity(session_ids.len());
        for id in session_ids {
            let t = self.load_trajectory(id)?;
            if !t.is_complete() || t.rounds.is_empty() {
                return Err(StoreError::SessionIncomplete(id.clone()));
            }
            trajectories.push(t);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        trajectories.shuffle(&mut rng);
        fs::create_dir_all(out_dir).map_err(io_err(format!("create {}", out_dir.display())))?;

        let mut items = Vec::new();
        let mut key = Vec::new();
        for (n, t) in trajectories.iter().enumerate() {
            let item_id = format!("item-{n:03}");
            let last = t.rounds.len() - 1;
            let shown: Vec<(Option<Side>, usize)> = match layout {
                BatchLayout::FinalOnly => vec![(None, last)],
                BatchLayout::BaseVsFinal => {
                    let (left, right) = if rng.random_bool(0.5) { (0, last) } else { (last, 0) };
                    vec![(Some(Side::Left), left), (Some(Side::Right), right)]
                }
            };
            let mut images = Vec::new();
            for (side, round) in &shown {
                let image = &t.rounds[*round].image;
                let (_, bytes) = self.get_blob(&image.blob_id)?;
                let suffix = side.map_or(String::new(), |s| format!("-{}", s.name()));
                let file = format!("{item_id}{suffix}.{}", image.media_type.extension());
                self.write_atomic(&out_dir.join(&file), &bytes)?;
                images.push(BatchImage {
                    side: *side,
                    file,
                    blob_id: image.blob_id.clone(),
                });
            }
            items.push(BatchItem {
                item_id: item_id.clone(),
                case_id: t.session_id.clone(),
                prompt: t.original_prompt.as_str().to_string(),
                images,
            });
            key.push(BatchKey {
                item_id,
                session_id: t.session_id.clone(),
                rounds: shown.iter().map(|(_, r)| *r).collect(),
            });
        }
        let batch = AnnotationBatch { layout, seed, items };
        let assignment = BatchAssignment { seed, items: key };
        self.write_atomic(&out_dir.join("manifest.json"), pretty(&batch).as_bytes())?;
        self.write_atomic(&out_dir.join("assignment.json"), pretty(&assignment).as_bytes())?;
        Ok(batch)
    }
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("batch files serialize") + "\n"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchLayout {
    FinalOnly,
    BaseVsFinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchImage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<Side>,
    pub file: String,
    pub blob_id: String,
}

/// One item as shown to annotators. Nothing here says which image is the
/// baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub item_id: String,
    /// Key for `POST /annotations`.
    pub case_id: String,
    pub prompt: String,
    pub images: Vec<BatchImage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationBatch {
    pub layout: BatchLayout,
    pub seed: u64,
    pub items: Vec<BatchItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchKey {
    pub item_id: String,
    pub session_id: String,
    /// Round index behind each shown image, in display order.
    pub rounds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchAssignment {
    pub seed: u64,
    pub items: Vec<BatchKey>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::{Feedback, ImageRef};

    fn store() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        (dir, store)
    }

    fn round(store: &Store, index: usize) -> RefinementRound {
        let entry = store.put_blob(format!("img{index}").as_bytes(), MediaType::Png).unwrap();
        RefinementRound {
            index,
            prompt: Prompt::new(format!("p{index}")).unwrap(),
            feedback: (index > 0).then(|| Feedback(format!("f{index}"))),
            image: ImageRef {
                blob_id: entry.blob_id,
                media_type: MediaType::Png,
                seed: 1,
            },
            critic_raw: (index > 0).then(|| "raw".to_string()),
            score: None,
        }
    }

    fn completed(store: &Store, index: usize) -> Event {
        Event::RoundCompleted {
            round: round(store, index),
            timings: RoundTimings::default(),
        }
    }

    fn session(store: &Store, k: usize) -> String {
        let config = SessionConfig {
            max_iterations: k as u32,
            ..SessionConfig::default()
        };
        let id = store.create_session(&Prompt::new("p0").unwrap(), &config).unwrap();
        for i in 0..=k {
            store.append(&id, completed(store, i)).unwrap();
        }
        store.append(&id, Event::SessionFinished).unwrap();
        id
    }

    #[test]
    fn blobs_are_content_addressed() {
        let (_d, s) = store();
        let a = s.put_blob(b"hello", MediaType::Png).unwrap();
        let b = s.put_blob(b"hello", MediaType::Png).unwrap();
        let c = s.put_blob(b"hellp", MediaType::Png).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.blob_id, c.blob_id);
        assert_eq!(a.blob_id, sha256_hex(b"hello"));
        assert_eq!(s.get_blob(&a.blob_id).unwrap().1, b"hello");
        assert!(matches!(s.put_blob(b"", MediaType::Png), Err(StoreError::EmptyBlob)));
        assert!(matches!(s.get_blob("../../etc"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn trajectory_round_trip_and_ids() {
        let (_d, s) = store();
        let id = session(&s, 3);
        let t = s.load_trajectory(&id).unwrap();
        assert_eq!(t.rounds.len(), 4);
        assert!(t.is_complete());
        assert!(id.starts_with("s-") && id.len() == 14);
        let again = session(&s, 3);
        assert_eq!(again, format!("{id}-2"));
        assert!(matches!(s.load_trajectory("s-nope"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn rejects_duplicate_and_late_rounds() {
        let (_d, s) = store();
        let id = s.create_session(&Prompt::new("p0").unwrap(), &SessionConfig::default()).unwrap();
        s.append(&id, completed(&s, 0)).unwrap();
        assert!(matches!(s.append(&id, completed(&s, 0)), Err(StoreError::Rejected { .. })));
        assert!(matches!(s.append(&id, completed(&s, 2)), Err(StoreError::Rejected { .. })));
        s.append(&id, Event::SessionAborted { reason: "x".into() }).unwrap();
        assert!(matches!(s.append(&id, completed(&s, 1)), Err(StoreError::Rejected { .. })));
        // a fresh handle replays the log instead of trusting a cache
        let s2 = Store::open(s.root()).unwrap();
        assert!(matches!(s2.append(&id, completed(&s2, 1)), Err(StoreError::Rejected { .. })));
    }

    #[test]
    fn torn_and_tampered_logs_are_corrupt() {
        let (_d, s) = store();
        let id = session(&s, 2);
        let path = s.session_path(&id);
        let text = fs::read_to_string(&path).unwrap();

        fs::write(&path, &text[..text.len() - 5]).unwrap();
        assert!(matches!(s.load_trajectory(&id), Err(StoreError::CorruptLog { .. })));

        fs::write(&path, text.replacen("\"p1\"", "\"pX\"", 1)).unwrap();
        assert!(matches!(s.load_trajectory(&id), Err(StoreError::CorruptLog { line: 3, .. })));

        // line-boundary prefixes replay to shorter trajectories
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        for n in 1..=lines.len() {
            fs::write(&path, lines[..n].concat()).unwrap();
            let t = s.load_trajectory(&id).unwrap();
            assert_eq!(t.rounds.len(), (n - 1).min(3));
        }
    }

    #[test]
    fn annotation_batches() {
        let (d, s) = store();
        let ids: Vec<String> = (0..10)
            .map(|k| {
                let config = SessionConfig {
                    max_iterations: 2,
                    seed: k,
                    ..SessionConfig::default()
                };
                let id = s.create_session(&Prompt::new("p0").unwrap(), &config).unwrap();
                for i in 0..=2 {
                    s.append(&id, completed(&s, i)).unwrap();
                }
                s.append(&id, Event::SessionFinished).unwrap();
                id
            })
            .collect();
        let out = d.path().join("batch");
        let batch = s.export_annotation_batch(&ids, BatchLayout::BaseVsFinal, 9, &out).unwrap();
        assert_eq!(batch.items.len(), 10);
        assert_eq!(batch.items.iter().map(|i| i.images.len()).sum::<usize>(), 20);
        assert!(out.join("assignment.json").exists());
        let again = s.export_annotation_batch(&ids, BatchLayout::BaseVsFinal, 9, &d.path().join("b2")).unwrap();
        assert_eq!(batch, again);

        let open = s.create_session(&Prompt::new("p9").unwrap(), &SessionConfig::default()).unwrap();
        let mut with_open = ids.clone();
        with_open.push(open.clone());
        match s.export_annotation_batch(&with_open, BatchLayout::FinalOnly, 9, &out) {
            Err(StoreError::SessionIncomplete(id)) => assert_eq!(id, open),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn annotations_persist() {
        let (_d, s) = store();
        assert!(s.annotations().unwrap().is_empty());
        let a = Annotation {
            case_id: "c".into(),
            annotator_id: "a".into(),
            score: 1,
            timestamp_ms: 5,
        };
        s.append_annotation(&a).unwrap();
        assert_eq!(s.annotations().unwrap(), vec![a]);
    }
}
