//! Background tasks with a shared notification feed and cooperative
//! cancellation.

mod types;

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

pub use types::{Event, FeedPage, Notification, Outcome, TaskKind, TaskRecord, TaskState};

/// Version of the persisted task record layout.
pub const TASK_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_FEED_CAPACITY: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum HubError {
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("task store: {0}")]
    Store(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct HubConfig {
    pub workers: usize,
    pub feed_capacity: usize,
    /// Directory for `<id>.json` task records; `None` keeps tasks in memory.
    pub store: Option<PathBuf>,
}

impl Default for HubConfig {
    fn default() -> Self {
        let cores = thread::available_parallelism().map_or(1, |n| n.get());
        HubConfig { workers: cores.saturating_sub(1).max(1), feed_capacity: DEFAULT_FEED_CAPACITY, store: None }
    }
}

/// Progress sink and cancellation probe handed to running work.
pub trait WorkContext {
    fn is_cancelled(&self) -> bool;
    /// `progress` in [0,1]; values below an earlier report are raised to it.
    /// `None` keeps the previous ETA.
    fn report_progress(&self, progress: f64, eta_seconds: Option<f64>, detail: Value);
}

/// Context for work run outside a hub: never cancelled, progress dropped
/// unless a callback is given.
pub struct Detached<F: Fn(f64, Option<f64>, &Value) = fn(f64, Option<f64>, &Value)>(pub F);

impl Detached {
    pub fn silent() -> Self {
        Detached(|_, _, _| {})
    }
}

impl<F: Fn(f64, Option<f64>, &Value)> WorkContext for Detached<F> {
    fn is_cancelled(&self) -> bool {
        false
    }
    fn report_progress(&self, progress: f64, eta_seconds: Option<f64>, detail: Value) {
        (self.0)(progress, eta_seconds, &detail)
    }
}

type Work = Box<dyn FnOnce(&TaskContext) -> Outcome + Send>;

struct Entry {
    record: TaskRecord,
    cancel: Arc<AtomicBool>,
    work: Option<Work>,
}

struct State {
    tasks: HashMap<String, Entry>,
    order: Vec<String>,
    queue: VecDeque<String>,
    feed: VecDeque<Notification>,
    latest: u64,
    shutdown: bool,
}

struct Inner {
    state: Mutex<State>,
    work_ready: Condvar,
    changed: Condvar,
    capacity: usize,
    store: Option<PathBuf>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Inner {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Appends to the feed; callers hold the lock so the event and the
    /// state change it describes become visible together.
    fn publish(&self, st: &mut State, record: &TaskRecord, event: Event, payload: Value) {
        st.latest += 1;
        st.feed.push_back(Notification {
            sequence: st.latest,
            task_id: record.id.clone(),
            kind: record.kind,
            event,
            payload,
            timestamp_ms: now_ms(),
        });
        while st.feed.len() > self.capacity {
            st.feed.pop_front();
        }
        self.changed.notify_all();
    }

    fn persist(&self, record: &TaskRecord) {
        let Some(dir) = &self.store else { return };
        let mut v = serde_json::to_value(record).expect("record serializes");
        v["schema_version"] = json!(TASK_SCHEMA_VERSION);
        let path = dir.join(format!("{}.json", record.id));
        let tmp = dir.join(format!("{}.json.tmp", record.id));
        let body = serde_json::to_vec_pretty(&v).expect("json");
        // A failed write loses durability, not correctness of the live hub.
        if fs::write(&tmp, body).and_then(|_| fs::rename(&tmp, &path)).is_err() {
            let _ = fs::remove_file(&tmp);
        }
    }

    fn transition(
        &self,
        st: &mut State,
        id: &str,
        next: TaskState,
        payload: Value,
        mutate: impl FnOnce(&mut TaskRecord),
    ) {
        let entry = st.tasks.get_mut(id).expect("known task");
        let rec = &mut entry.record;
        assert!(rec.state.can_become(next), "illegal transition {:?} -> {:?}", rec.state, next);
        rec.state = next;
        match next {
            TaskState::Running => rec.started_ms = Some(now_ms()),
            _ => rec.finished_ms = Some(now_ms()),
        }
        if next == TaskState::Succeeded {
            rec.progress = 1.0;
            rec.eta_seconds = 0.0;
        }
        mutate(rec);
        let rec = rec.clone();
        let event = match next {
            TaskState::Running => Event::Started,
            TaskState::Succeeded => Event::Finished,
            TaskState::Failed => Event::Failed,
            TaskState::Stopped => Event::Stopped,
            TaskState::Queued => unreachable!("nothing transitions into queued"),
        };
        self.persist(&rec);
        self.publish(st, &rec, event, payload);
    }
}

/// Handle given to running work.
pub struct TaskContext {
    inner: Arc<Inner>,
    id: String,
    cancel: Arc<AtomicBool>,
}

impl TaskContext {
    pub fn id(&self) -> &str {
        &self.id
    }
}

impl WorkContext for TaskContext {
    fn is_cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }

    fn report_progress(&self, progress: f64, eta_seconds: Option<f64>, detail: Value) {
        let mut st = self.inner.lock();
        let Some(entry) = st.tasks.get_mut(&self.id) else { return };
        if entry.record.state != TaskState::Running {
            return;
        }
        let p = if progress.is_nan() { 0.0 } else { progress.clamp(0.0, 1.0) };
        entry.record.progress = entry.record.progress.max(p);
        if let Some(eta) = eta_seconds.filter(|e| e.is_finite()) {
            entry.record.eta_seconds = eta.max(0.0);
        }
        let record = entry.record.clone();
        let mut payload = json!({ "progress": record.progress, "eta_seconds": record.eta_seconds });
        if let (Value::Object(extra), Value::Object(map)) = (detail, &mut payload) {
            for (k, v) in extra {
                map.entry(k).or_insert(v);
            }
        }
        self.inner.publish(&mut st, &record, Event::Progress, payload);
    }
}

/// Thread pool running submitted work, with the task table and feed.
pub struct Hub {
    inner: Arc<Inner>,
    workers: Vec<JoinHandle<()>>,
}

impl Hub {
    /// A hub with no persisted history.
    pub fn new(config: HubConfig) -> Hub {
        Hub::start(config, Vec::new())
    }

    /// A hub persisting to `config.store`, loading earlier records from it.
    /// Tasks that were queued or running when the previous process ended
    /// are marked failed with error "interrupted".
    pub fn open(config: HubConfig) -> Result<Hub, HubError> {
        let mut loaded = Vec::new();
        if let Some(dir) = &config.store {
            fs::create_dir_all(dir)?;
            for entry in fs::read_dir(dir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    let Ok(text) = fs::read_to_string(&path) else { continue };
                    let Ok(mut rec) = serde_json::from_str::<TaskRecord>(&text) else { continue };
                    if !rec.state.is_terminal() {
                        rec.state = TaskState::Failed;
                        rec.error = Some("interrupted".into());
                        rec.finished_ms = Some(now_ms());
                    }
                    loaded.push(rec);
                }
            }
        }
        loaded.sort_by(|a, b| (a.created_ms, &a.id).cmp(&(b.created_ms, &b.id)));
        let hub = Hub::start(config, loaded);
        {
            let st = hub.inner.lock();
            for id in &st.order {
                hub.inner.persist(&st.tasks[id].record);
            }
        }
        Ok(hub)
    }

    fn start(config: HubConfig, history: Vec<TaskRecord>) -> Hub {
        let mut tasks = HashMap::new();
        let mut order = Vec::new();
        for record in history {
            order.push(record.id.clone());
            tasks.insert(record.id.clone(), Entry { record, cancel: Arc::new(AtomicBool::new(false)), work: None });
        }
        let inner = Arc::new(Inner {
            state: Mutex::new(State {
                tasks,
                order,
                queue: VecDeque::new(),
                feed: VecDeque::new(),
                latest: 0,
                shutdown: false,
            }),
            work_ready: Condvar::new(),
            changed: Condvar::new(),
            capacity: config.feed_capacity.max(1),
            store: config.store,
        });
        let workers = (0..config.workers.max(1))
            .map(|i| {
                let inner = Arc::clone(&inner);
                thread::Builder::new()
                    .name(format!("task-worker-{i}"))
                    .spawn(move || worker_loop(&inner))
                    .expect("spawn worker")
            })
            .collect();
        Hub { inner, workers }
    }

    pub fn worker_count(&self) -> usize {
        self.workers.len()
    }

    /// Queues `work` and returns its record (state queued).
    pub fn submit<F>(&self, kind: TaskKind, description: Value, work: F) -> TaskRecord
    where
        F: FnOnce(&TaskContext) -> Outcome + Send + 'static,
    {
        let record = TaskRecord {
            id: uuid::Uuid::new_v4().to_string(),
            kind,
            state: TaskState::Queued,
            progress: 0.0,
            eta_seconds: 0.0,
            description,
            created_ms: now_ms(),
            started_ms: None,
            finished_ms: None,
            result: None,
            error: None,
        };
        let mut st = self.inner.lock();
        self.inner.persist(&record);
        st.order.push(record.id.clone());
        st.queue.push_back(record.id.clone());
        st.tasks.insert(
            record.id.clone(),
            Entry { record: record.clone(), cancel: Arc::new(AtomicBool::new(false)), work: Some(Box::new(work)) },
        );
        self.inner.work_ready.notify_one();
        record
    }

    /// Queued tasks stop at once; running tasks get their probe set; `false`
    /// for tasks already finished.
    pub fn cancel(&self, id: &str) -> Result<bool, HubError> {
        let mut st = self.inner.lock();
        let entry = st.tasks.get_mut(id).ok_or_else(|| HubError::UnknownTask(id.to_string()))?;
        match entry.record.state {
            TaskState::Queued => {
                entry.work = None;
                entry.cancel.store(true, Ordering::SeqCst);
                st.queue.retain(|q| q != id);
                self.inner.transition(&mut st, id, TaskState::Stopped, json!({ "result": null }), |_| {});
                Ok(true)
            }
            TaskState::Running => {
                entry.cancel.store(true, Ordering::SeqCst);
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    pub fn get(&self, id: &str) -> Option<TaskRecord> {
        self.inner.lock().tasks.get(id).map(|e| e.record.clone())
    }

    /// All tasks in submission order.
    pub fn list(&self) -> Vec<TaskRecord> {
        let st = self.inner.lock();
        st.order.iter().map(|id| st.tasks[id].record.clone()).collect()
    }

    /// Every retained notification with sequence above `after`.
    pub fn poll_feed(&self, after: u64) -> FeedPage {
        page(&self.inner.lock(), after)
    }

    /// Like [`poll_feed`](Self::poll_feed) but blocks up to `timeout` for
    /// something new.
    pub fn wait_feed(&self, after: u64, timeout: Duration) -> FeedPage {
        let deadline = Instant::now() + timeout;
        let mut st = self.inner.lock();
        while st.latest <= after && !st.shutdown {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            st = self.inner.changed.wait_timeout(st, left).unwrap_or_else(|e| e.into_inner()).0;
        }
        page(&st, after)
    }

    /// Blocks until task `id` is terminal or `timeout` passes.
    pub fn wait(&self, id: &str, timeout: Duration) -> Result<TaskRecord, HubError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.inner.lock();
        loop {
            let rec = &st.tasks.get(id).ok_or_else(|| HubError::UnknownTask(id.to_string()))?.record;
            let left = deadline.saturating_duration_since(Instant::now());
            if rec.state.is_terminal() || left.is_zero() {
                return Ok(rec.clone());
            }
            st = self.inner.changed.wait_timeout(st, left).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    pub fn store(&self) -> Option<&Path> {
        self.inner.store.as_deref()
    }
}

fn page(st: &State, after: u64) -> FeedPage {
    let floor = st.feed.front().map_or(st.latest, |n| n.sequence - 1);
    let start = after.max(floor);
    let skip = (start - floor) as usize;
    FeedPage { floor, latest: st.latest, notifications: st.feed.iter().skip(skip).cloned().collect() }
}

impl Drop for Hub {
    fn drop(&mut self) {
        {
            let mut st = self.inner.lock();
            st.shutdown = true;
            for e in st.tasks.values() {
                if e.record.state == TaskState::Running {
                    e.cancel.store(true, Ordering::SeqCst);
                }
            }
            self.inner.work_ready.notify_all();
            self.inner.changed.notify_all();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn worker_loop(inner: &Arc<Inner>) {
    loop {
        let (id, work, cancel) = {
            let mut st = inner.lock();
            let id = loop {
                if st.shutdown {
                    return;
                }
                if let Some(id) = st.queue.pop_front() {
                    break id;
                }
                st = inner.work_ready.wait(st).unwrap_or_else(|e| e.into_inner());
            };
            let entry = st.tasks.get_mut(&id).expect("queued task exists");
            let Some(work) = entry.work.take() else { continue };
            let cancel = Arc::clone(&entry.cancel);
            let kind = entry.record.kind;
            inner.transition(&mut st, &id, TaskState::Running, json!({ "kind": kind }), |_| {});
            (id, work, cancel)
        };
        let ctx = TaskContext { inner: Arc::clone(inner), id: id.clone(), cancel };
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| work(&ctx))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "task panicked".into());
            Outcome::Failed(msg)
        });
        let mut st = inner.lock();
        // A cancel acknowledged while the last unit ran still ends the task
        // as stopped; the finished result is kept as its partial result.
        let outcome = match outcome {
            Outcome::Succeeded(v) if ctx.is_cancelled() => Outcome::Stopped(v),
            other => other,
        };
        match outcome {
            Outcome::Succeeded(v) => {
                inner.transition(&mut st, &id, TaskState::Succeeded, json!({ "result": v.clone() }), |r| {
                    r.result = Some(v)
                })
            }
            Outcome::Failed(e) => {
                inner.transition(&mut st, &id, TaskState::Failed, json!({ "error": e.clone() }), |r| r.error = Some(e))
            }
            Outcome::Stopped(v) => {
                inner.transition(&mut st, &id, TaskState::Stopped, json!({ "result": v.clone() }), |r| {
                    r.result = Some(v)
                })
            }
        }
    }
}
