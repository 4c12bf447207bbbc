//! Human review service: serves blind annotation tasks, stores verdicts in an
//! append-only log, and computes panel unanimity and agreement precision.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::PairEntry;
use crate::qa::QARecord;
use crate::raster::PixelRect;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Agree,
    Disagree,
}

/// What an annotator submits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationInput {
    pub sample_id: String,
    pub annotator_id: String,
    pub verdict: Verdict,
    /// 1 = very simple, 2 = simple, 3 = hard.
    pub difficulty: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative: Option<String>,
}

/// A stored verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub annotator_id: String,
    pub verdict: Verdict,
    pub difficulty: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl AnnotationInput {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.difficulty) {
            return Err(Error::Schema(format!("difficulty {} outside 1..=3", self.difficulty)));
        }
        if self.sample_id.is_empty() || self.annotator_id.is_empty() {
            return Err(Error::Schema("sample_id and annotator_id must be nonempty".into()));
        }
        Ok(())
    }

    pub fn into_record(self, timestamp: u64) -> AnnotationRecord {
        AnnotationRecord {
            sample_id: self.sample_id,
            annotator_id: self.annotator_id,
            verdict: self.verdict,
            difficulty: self.difficulty,
            alternative: self.alternative,
            timestamp,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleAgreement {
    pub sample_id: String,
    /// 1 when every panel member agreed.
    pub unanimous: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub panel_size: usize,
    pub samples: Vec<SampleAgreement>,
    /// Mean unanimity over complete samples; `None` when there are none.
    pub human_agreement: Option<f64>,
    /// `Σ d·A / Σ d` with `d` = 1 for retained samples.
    pub precision: Option<f64>,
    /// Samples with fewer than `panel_size` verdicts, left out of both rates.
    pub incomplete: Vec<String>,
    /// Individual agree rate per annotator over all their verdicts.
    pub annotator_agree_rate: BTreeMap<String, f64>,
}

/// Unanimity over the first `panel_size` verdicts of each sample, in record order.
/// `retained` marks the samples that count toward the precision (all when `None`).
pub fn unanimity_agreement(
    records: &[AnnotationRecord],
    panel_size: usize,
    retained: Option<&HashSet<String>>,
) -> AgreementReport {
    let panel_size = panel_size.max(1);
    let mut order: Vec<&str> = Vec::new();
    let mut panels: HashMap<&str, Vec<Verdict>> = HashMap::new();
    let mut per_annotator: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let v = panels.entry(&r.sample_id).or_insert_with(|| {
            order.push(&r.sample_id);
            Vec::new()
        });
        if v.len() < panel_size {
            v.push(r.verdict);
        }
        let e = per_annotator.entry(r.annotator_id.clone()).or_default();
        e.0 += (r.verdict == Verdict::Agree) as usize;
        e.1 += 1;
    }
    let mut samples = Vec::new();
    let mut incomplete = Vec::new();
    let (mut num, mut den) = (0.0, 0.0);
    for id in order {
        let v = &panels[id];
        if v.len() < panel_size {
            incomplete.push(id.to_string());
            continue;
        }
        let a = v.iter().all(|x| *x == Verdict::Agree) as u8;
        let d = retained.map_or(1.0, |s| s.contains(id) as u8 as f64);
        num += d * a as f64;
        den += d;
        samples.push(SampleAgreement {
            sample_id: id.to_string(),
            unanimous: a,
        });
    }
    let human_agreement = (!samples.is_empty())
        .then(|| samples.iter().map(|s| s.unanimous as f64).sum::<f64>() / samples.len() as f64);
    AgreementReport {
        panel_size,
        samples,
        human_agreement,
        precision: (den > 0.0).then(|| num / den),
        incomplete,
        annotator_agree_rate: per_annotator
            .into_iter()
            .map(|(k, (a, n))| (k, a as f64 / n as f64))
            .collect(),
    }
}

/// Why an append was refused.
#[derive(Debug, thiserror::Error)]
pub enum AppendError {
    #[error("sample {0} already annotated by {1}")]
    Duplicate(String, String),
    #[error(transparent)]
    Other(#[from] Error),
}

struct StoreInner {
    file: File,
    records: Vec<AnnotationRecord>,
    keys: HashSet<(String, String)>,
}

/// Append-only JSONL annotation log. Every append is written and fsynced
/// before it becomes visible; one mutex serialises writers.
pub struct AnnotationStore {
    path: PathBuf,
    inner: Mutex<StoreInner>,
}

impl AnnotationStore {
    /// Opens (creating if needed) and replays the log at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut records = Vec::new();
        let mut keys = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: AnnotationRecord = serde_json::from_str(line)
                .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if keys.insert((r.sample_id.clone(), r.annotator_id.clone())) {
                records.push(r);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            inner: Mutex::new(StoreInner { file, records, keys }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, input: AnnotationInput) -> std::result::Result<AnnotationRecord, AppendError> {
        input.validate()?;
        let mut g = self.inner.lock().expect("store lock");
        let key = (input.sample_id.clone(), input.annotator_id.clone());
        if g.keys.contains(&key) {
            return Err(AppendError::Duplicate(key.0, key.1));
        }
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let rec = input.into_record(ts);
        let mut line = serde_json::to_string(&rec).map_err(Error::from)?;
        line.push('\n');
        g.file
            .write_all(line.as_bytes())
            .and_then(|_| g.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))?;
        g.keys.insert(key);
        g.records.push(rec.clone());
        Ok(rec)
    }

    /// Consistent copy of every record in append order.
    pub fn snapshot(&self) -> Vec<AnnotationRecord> {
        self.inner.lock().expect("store lock").records.clone()
    }
}

/// What an annotator sees: no trail, class label or method identifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub sample_id: String,
    pub before_image_url: String,
    pub after_image_url: String,
    pub bbox: PixelRect,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub answer: String,
    pub progress: Progress,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

pub struct ReviewState {
    pub dataset: Vec<QARecord>,
    pub images: HashMap<String, (PathBuf, PathBuf)>,
    pub store: AnnotationStore,
    pub panel_size: usize,
}

impl ReviewState {
    pub fn new(
        dataset: Vec<QARecord>,
        pairs: &[PairEntry],
        store: AnnotationStore,
        panel_size: usize,
    ) -> Self {
        Self {
            dataset,
            images: pairs
                .iter()
                .map(|p| (p.pair_id.clone(), (p.before_image.clone(), p.after_image.clone())))
                .collect(),
            store,
            panel_size: panel_size.max(1),
        }
    }

    /// The first sample, in dataset order, that `annotator` has not seen and
    /// whose panel is not yet full.
    pub fn next_task(&self, annotator: &str) -> Option<TaskPayload> {
        let records = self.store.snapshot();
        let mut count: HashMap<&str, usize> = HashMap::new();
        let mut mine: HashSet<&str> = HashSet::new();
        for r in &records {
            *count.entry(&r.sample_id).or_default() += 1;
            if r.annotator_id == annotator {
                mine.insert(&r.sample_id);
            }
        }
        let rec = self.dataset.iter().find(|d| {
            !mine.contains(d.sample_id.as_str())
                && count.get(d.sample_id.as_str()).copied().unwrap_or(0) < self.panel_size
        })?;
        Some(TaskPayload {
            sample_id: rec.sample_id.clone(),
            before_image_url: format!("/img/{}/before.png", rec.pair_id),
            after_image_url: format!("/img/{}/after.png", rec.pair_id),
            bbox: rec.bbox,
            question: rec.question.clone(),
            options: rec.options.clone(),
            answer: rec.answer.clone(),
            progress: Progress {
                done: mine.len(),
                total: self.dataset.len(),
            },
        })
    }

    pub fn agreement(&self) -> AgreementReport {
        let retained: HashSet<String> = self.dataset.iter().map(|d| d.sample_id.clone()).collect();
        unanimity_agreement(&self.store.snapshot(), self.panel_size, Some(&retained))
    }
}

/// Reads a dataset JSONL file; any malformed line is an error.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QARecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

type Shared = Arc<ReviewState>;

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
}

fn error_json(status: StatusCode, msg: impl ToString) -> Response {
    (status, Json(serde_json::json!({ "error": msg.to_string() }))).into_response()
}

async fn next_task(State(s): State<Shared>, Query(q): Query<NextQuery>) -> Response {
    match s.next_task(&q.annotator) {
        Some(t) => Json(t).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn post_annotation(State(s): State<Shared>, Json(input): Json<AnnotationInput>) -> Response {
    if !s.dataset.iter().any(|d| d.sample_id == input.sample_id) {
        return error_json(StatusCode::NOT_FOUND, format!("unknown sample {}", input.sample_id));
    }
    let st = s.clone();
    let r = tokio::task::spawn_blocking(move || st.store.append(input)).await;
    match r {
        Ok(Ok(rec)) => (StatusCode::CREATED, Json(rec)).into_response(),
        Ok(Err(e @ AppendError::Duplicate(..))) => error_json(StatusCode::CONFLICT, e),
        Ok(Err(AppendError::Other(e @ Error::Schema(_)))) => error_json(StatusCode::UNPROCESSABLE_ENTITY, e),
        Ok(Err(e)) => error_json(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error_json(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn agreement(State(s): State<Shared>) -> Json<AgreementReport> {
    Json(s.agreement())
}

async fn export(State(s): State<Shared>) -> Response {
    let mut body = String::new();
    for r in s.store.snapshot() {
        body.push_str(&serde_json::to_string(&r).expect("records serialize"));
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn image(State(s): State<Shared>, UrlPath((pair_id, file)): UrlPath<(String, String)>) -> Response {
    let Some((before, after)) = s.images.get(&pair_id) else {
        return error_json(StatusCode::NOT_FOUND, format!("unknown pair {pair_id}"));
    };
    let path = match file.as_str() {
        "before.png" => before,
        "after.png" => after,
        _ => return error_json(StatusCode::NOT_FOUND, "expected before.png or after.png"),
    };
    match tokio::fs::read(path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(e) => error_json(StatusCode::NOT_FOUND, e),
    }
}

/// All API routes, plus the UI bundle under `/` when `static_dir` is given.
pub fn router(state: Shared, static_dir: Option<&Path>) -> Router {
    let app = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/annotations", post(post_annotation))
        .route("/api/agreement", get(agreement))
        .route("/api/export", get(export))
        .route("/img/:pair_id/:file", get(image))
        .with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Shared,
    static_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let app = router(state, static_dir.as_deref());
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| Error::Backend(e.to_string()))
}

/// Binds `addr` and serves on a fresh runtime until Ctrl-C.
pub fn run_blocking(addr: SocketAddr, state: ReviewState, static_dir: Option<PathBuf>) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Backend(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Backend(format!("bind {addr}: {e}")))?;
        log::info!("review server on http://{}", listener.local_addr().map_err(|e| Error::Backend(e.to_string()))?);
        serve(listener, Arc::new(state), static_dir, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}
