//! On-disk job store:
//!
//! ```text
//! <root>/jobs/<id>/job.json
//! <root>/jobs/<id>/report.json
//! <root>/jobs/<id>/traces/
//! <root>/jobs/<id>/claim        (present once a worker took the job)
//! <root>/rules/active.rules
//! ```
//!
//! Every file is replaced by rename, so readers never see a torn write.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use pkgtrace_core::{BackendSpec, BehaviorReport, PackageSpec};
use serde::{Deserialize, Serialize};

pub const JOB_FILE: &str = "job.json";
pub const REPORT_FILE: &str = "report.json";
pub const CLAIM_FILE: &str = "claim";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Running => "running",
            JobState::Succeeded => "succeeded",
            JobState::Failed => "failed",
        }
    }
}

impl std::str::FromStr for JobState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "queued" => Ok(JobState::Queued),
            "running" => Ok(JobState::Running),
            "succeeded" => Ok(JobState::Succeeded),
            "failed" => Ok(JobState::Failed),
            other => Err(format!("unknown job state `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub state: JobState,
    pub spec: PackageSpec,
    pub backend: BackendSpec,
    pub submitted_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Job {
    pub fn new(id: String, spec: PackageSpec, backend: BackendSpec) -> Self {
        Job {
            id,
            state: JobState::Queued,
            spec,
            backend,
            submitted_at: Utc::now(),
            started_at: None,
            finished_at: None,
            error: None,
        }
    }

    /// Move to `next`, refusing anything but queued → running → terminal.
    pub fn transition(&mut self, next: JobState) -> Result<(), StoreError> {
        let ok = matches!(
            (self.state, next),
            (JobState::Queued, JobState::Running)
                | (JobState::Queued, JobState::Failed)
                | (JobState::Running, JobState::Succeeded)
                | (JobState::Running, JobState::Failed)
        );
        if !ok {
            return Err(StoreError::Transition {
                id: self.id.clone(),
                from: self.state,
                to: next,
            });
        }
        let now = Utc::now();
        match next {
            JobState::Running => self.started_at = Some(now),
            s if s.is_terminal() => self.finished_at = Some(now),
            _ => {}
        }
        self.state = next;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no job with id {0}")]
    NotFound(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Corrupt {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("job {id}: illegal transition {} -> {}", from.as_str(), to.as_str())]
    Transition {
        id: String,
        from: JobState,
        to: JobState,
    },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_at(&tmp))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(io_at(&tmp))?;
    fs::rename(&tmp, path).map_err(io_at(path))
}

/// Ids are `<13-digit unix millis>-<4-digit sequence>`: unique, and their
/// string order is submission order.
pub fn is_job_id(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 18
        && b[13] == b'-'
        && b.iter()
            .enumerate()
            .all(|(i, c)| i == 13 || c.is_ascii_digit())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobPage {
    pub jobs: Vec<Job>,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub pages: usize,
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    /// Last issued (millis, sequence).
    last_id: Mutex<(u64, u32)>,
}

impl Store {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        for dir in [root.join("jobs"), root.join("rules")] {
            fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        }
        let store = Store {
            root: root.to_path_buf(),
            last_id: Mutex::new((0, 0)),
        };
        // Never reissue an id already on disk, even if the clock went back.
        if let Some(max) = store.job_ids()?.last() {
            let (ms, seq) = max.split_once('-').expect("validated id");
            *store.last_id.lock().unwrap() = (ms.parse().unwrap_or(0), seq.parse().unwrap_or(0));
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn next_id(&self) -> String {
        let now = Utc::now().timestamp_millis().max(0) as u64;
        let mut last = self.last_id.lock().unwrap();
        let (mut ms, mut seq) = *last;
        if now > ms {
            (ms, seq) = (now, 0);
        } else if seq >= 9999 {
            (ms, seq) = (ms + 1, 0);
        } else {
            seq += 1;
        }
        *last = (ms, seq);
        format!("{ms:013}-{seq:04}")
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join("jobs").join(id)
    }

    pub fn rules_path(&self) -> PathBuf {
        self.root.join("rules").join("active.rules")
    }

    /// Ids of every complete job (one with a job file), oldest first.
    pub fn job_ids(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("jobs");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_at(&dir))? {
            let entry = entry.map_err(io_at(&dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if is_job_id(&name) && entry.path().join(JOB_FILE).is_file() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn save_job(&self, job: &Job) -> Result<(), StoreError> {
        let dir = self.job_dir(&job.id);
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        let mut bytes = serde_json::to_vec_pretty(job).expect("job serializes");
        bytes.push(b'\n');
        write_atomic(&dir.join(JOB_FILE), &bytes)
    }

    pub fn load_job(&self, id: &str) -> Result<Job, StoreError> {
        if !is_job_id(id) {
            return Err(StoreError::NotFound(id.to_string()));
        }
        let path = self.job_dir(id).join(JOB_FILE);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(id.to_string()))
            }
            Err(e) => return Err(io_at(&path)(e)),
        };
        serde_json::from_slice(&bytes).map_err(|source| StoreError::Corrupt { path, source })
    }

    pub fn jobs(&self) -> Result<Vec<Job>, StoreError> {
        self.job_ids()?.iter().map(|id| self.load_job(id)).collect()
    }

    /// Newest first; `page` counts from 1.
    pub fn list_page(
        &self,
        state: Option<JobState>,
        page: usize,
        page_size: usize,
    ) -> Result<JobPage, StoreError> {
        let page_size = page_size.max(1);
        let page = page.max(1);
        let mut jobs: Vec<Job> = self
            .jobs()?
            .into_iter()
            .filter(|j| state.is_none_or(|s| j.state == s))
            .collect();
        jobs.reverse();
        let total = jobs.len();
        let pages = total.div_ceil(page_size);
        let jobs = jobs
            .into_iter()
            .skip((page - 1) * page_size)
            .take(page_size)
            .collect();
        Ok(JobPage {
            jobs,
            page,
            page_size,
            total,
            pages,
        })
    }

    /// Take exclusive ownership of a job. Only the first caller ever wins,
    /// across threads and restarts.
    pub fn try_claim(&self, id: &str) -> Result<bool, StoreError> {
        let path = self.job_dir(id).join(CLAIM_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(true)
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Ok(false),
            Err(e) => Err(io_at(&path)(e)),
        }
    }

    pub fn is_claimed(&self, id: &str) -> bool {
        self.job_dir(id).join(CLAIM_FILE).exists()
    }

    pub fn write_report(&self, id: &str, report: &BehaviorReport) -> Result<(), StoreError> {
        write_atomic(
            &self.job_dir(id).join(REPORT_FILE),
            report.to_json().as_bytes(),
        )
    }

    /// The stored report text, exactly as written.
    pub fn read_report(&self, id: &str) -> Result<String, StoreError> {
        let path = self.job_dir(id).join(REPORT_FILE);
        fs::read_to_string(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::NotFound(id.to_string()),
            _ => io_at(&path)(e),
        })
    }

    pub fn read_rules(&self) -> Result<Option<String>, StoreError> {
        let path = self.rules_path();
        match fs::read_to_string(&path) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_at(&path)(e)),
        }
    }

    pub fn write_rules(&self, source: &str) -> Result<(), StoreError> {
        write_atomic(&self.rules_path(), source.as_bytes())
    }

    pub fn remove_job_dir(&self, id: &str) {
        if is_job_id(id) {
            let _ = fs::remove_dir_all(self.job_dir(id));
        }
    }
}
