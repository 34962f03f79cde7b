use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Import,
    Train,
    Extract,
    Test,
    Export,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Import => "import",
            TaskKind::Train => "train",
            TaskKind::Extract => "extract",
            TaskKind::Test => "test",
            TaskKind::Export => "export",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Queued,
    Running,
    Succeeded,
    Failed,
    Stopped,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Succeeded | TaskState::Failed | TaskState::Stopped)
    }

    /// Whether `self → next` is an allowed transition.
    pub fn can_become(self, next: TaskState) -> bool {
        use TaskState::*;
        matches!((self, next), (Queued, Running) | (Queued, Stopped) | (Running, Succeeded | Failed | Stopped))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: String,
    pub kind: TaskKind,
    pub state: TaskState,
    pub progress: f64,
    pub eta_seconds: f64,
    /// What was submitted, as given by the caller.
    pub description: Value,
    pub created_ms: u64,
    pub started_ms: Option<u64>,
    pub finished_ms: Option<u64>,
    pub result: Option<Value>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Event {
    Started,
    Progress,
    Finished,
    Failed,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub sequence: u64,
    pub task_id: String,
    pub kind: TaskKind,
    pub event: Event,
    pub payload: Value,
    pub timestamp_ms: u64,
}

/// A slice of the feed. `floor` is the highest sequence number no longer
/// retained; a reader whose cursor is below it has missed events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedPage {
    pub floor: u64,
    pub latest: u64,
    pub notifications: Vec<Notification>,
}

/// How a unit of work ended.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Succeeded(Value),
    Failed(String),
    /// Cancelled, with whatever partial result exists.
    Stopped(Value),
}
