use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Infer,
    Track,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub session: String,
    pub kind: JobKind,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
}

/// In-memory job registry. States only move forward:
/// pending → running → done | failed.
#[derive(Default)]
pub struct Jobs {
    next: AtomicU64,
    table: Mutex<BTreeMap<u64, Job>>,
}

impl Jobs {
    pub fn create(&self, session: &str, kind: JobKind) -> u64 {
        let id = self.next.fetch_add(1, Ordering::Relaxed) + 1;
        self.table.lock().insert(
            id,
            Job {
                id,
                session: session.to_string(),
                kind,
                state: JobState::Pending,
                epoch: None,
                loss: None,
                error: None,
                result: None,
            },
        );
        id
    }

    pub fn get(&self, id: u64) -> Option<Job> {
        self.table.lock().get(&id).cloned()
    }

    fn update(&self, id: u64, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.table.lock().get_mut(&id) {
            f(job);
        }
    }

    pub fn start(&self, id: u64) {
        self.update(id, |j| {
            if j.state == JobState::Pending {
                j.state = JobState::Running;
            }
        });
    }

    pub fn progress(&self, id: u64, epoch: usize, loss: f64) {
        self.update(id, |j| {
            j.epoch = Some(epoch);
            j.loss = Some(loss);
        });
    }

    pub fn finish(&self, id: u64, result: Value) {
        self.update(id, |j| {
            if j.state == JobState::Running {
                j.state = JobState::Done;
                j.result = Some(result);
            }
        });
    }

    pub fn fail(&self, id: u64, error: Value) {
        self.update(id, |j| {
            if matches!(j.state, JobState::Pending | JobState::Running) {
                j.state = JobState::Failed;
                j.error = Some(error);
            }
        });
    }
}
