use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use pointlift_core::config::PipelineConfig;
use pointlift_core::edit::{EditError, EditLog, EditOp};
use pointlift_core::{SceneBundle, ScenePointCloud};
use tokio::sync::Semaphore;

/// The single mutable scene session: the segmented cloud and the edit log
/// applied on top of it.
pub struct Session {
    pub bundle: Arc<SceneBundle>,
    base: Arc<ScenePointCloud>,
    pub cloud: Arc<ScenePointCloud>,
    pub log: EditLog,
    pub revision: u64,
}

impl Session {
    pub fn new(bundle: SceneBundle, labeled: ScenePointCloud) -> Self {
        let base = Arc::new(labeled);
        Self {
            bundle: Arc::new(bundle),
            cloud: base.clone(),
            base,
            log: EditLog::new(),
            revision: 0,
        }
    }

    /// The cloud before any edit.
    pub fn base(&self) -> &ScenePointCloud {
        &self.base
    }

    /// Applies `op`; the session is untouched on error.
    pub fn apply(&mut self, op: EditOp) -> Result<u64, EditError> {
        let mut cloud = (*self.cloud).clone();
        let mut log = self.log.clone();
        log.apply(&mut cloud, op)?;
        self.cloud = Arc::new(cloud);
        self.log = log;
        self.revision += 1;
        Ok(self.revision)
    }

    /// Drops the last op by replaying the rest from the base cloud.
    /// Returns `None` when the log is empty.
    pub fn undo(&mut self) -> Result<Option<u64>, EditError> {
        let Some((_, rest)) = self.log.ops.split_last() else {
            return Ok(None);
        };
        let (cloud, log) = EditLog::replay(&self.base, rest)?;
        self.cloud = Arc::new(cloud);
        self.log = log;
        self.revision += 1;
        Ok(Some(self.revision))
    }
}

#[derive(Clone, Debug)]
pub enum JobStatus {
    Pending,
    Running,
    Done(Arc<Vec<u8>>),
    Failed { code: String, message: String },
}

impl JobStatus {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pending => "pending",
            Self::Running => "running",
            Self::Done(_) => "done",
            Self::Failed { .. } => "failed",
        }
    }
}

#[derive(Clone, Debug)]
pub struct JobEntry {
    pub status: JobStatus,
    pub revision: u64,
    pub backend: String,
}

pub struct AppState {
    pub session: RwLock<Session>,
    /// Mirrors `session.revision` for lock-free reads.
    revision: AtomicU64,
    pub jobs: Mutex<HashMap<String, JobEntry>>,
    next_job: AtomicU64,
    pub workers: Arc<Semaphore>,
    pub config: PipelineConfig,
}

impl AppState {
    pub fn new(session: Session, config: PipelineConfig, workers: usize) -> Self {
        Self {
            revision: AtomicU64::new(session.revision),
            session: RwLock::new(session),
            jobs: Mutex::new(HashMap::new()),
            next_job: AtomicU64::new(1),
            workers: Arc::new(Semaphore::new(workers.max(1))),
            config,
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision.load(Ordering::SeqCst)
    }

    /// Runs `f` under the exclusive session lock and publishes the new revision.
    pub fn mutate<T>(&self, f: impl FnOnce(&mut Session) -> T) -> T {
        let mut s = self.session.write().unwrap();
        let out = f(&mut s);
        self.revision.store(s.revision, Ordering::SeqCst);
        out
    }

    pub fn next_job_id(&self) -> String {
        format!("r{:06}", self.next_job.fetch_add(1, Ordering::SeqCst))
    }

    pub fn set_job(&self, id: &str, status: JobStatus) {
        if let Some(e) = self.jobs.lock().unwrap().get_mut(id) {
            e.status = status;
        }
    }
}
