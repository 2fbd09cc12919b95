//! Analysis service: an on-disk job store, a pool of worker threads running
//! the pipeline, and the HTTP API in [`api`].

pub mod api;
pub mod store;
mod worker;

use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;

use pkgtrace_core::ml::Model;
use pkgtrace_core::rules::{RuleError, DEFAULT_RULES};
use pkgtrace_core::sandbox::{
    plan_phases, AdapterRegistry, ReplayBundle, SpecError, DEFAULT_PHASE_TIMEOUT_S,
};
use pkgtrace_core::{parse_ruleset, BackendSpec, PackageSpec, RuleSet};

pub use store::{Job, JobPage, JobState, Store, StoreError};
use worker::Queue;

pub const DEFAULT_WORKERS: usize = 2;
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 64 << 20;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store: PathBuf,
    pub workers: usize,
    pub phase_timeout_s: u64,
    pub max_upload_bytes: usize,
    /// Backend for submissions that are not replay bundles.
    pub live_backend: BackendSpec,
    pub model: Option<Model>,
}

impl ServiceConfig {
    pub fn new(store: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            store: store.into(),
            workers: DEFAULT_WORKERS,
            phase_timeout_s: DEFAULT_PHASE_TIMEOUT_S,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            live_backend: BackendSpec::TracedSubprocess {
                strace_binary_path: "strace".into(),
            },
            model: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("stored ruleset {path} does not parse: {source}")]
    Rules { path: PathBuf, source: RuleError },
    #[error("worker count must be at least 1")]
    NoWorkers,
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("invalid submission ({}): {message}", fields.join(", "))]
    Invalid {
        fields: Vec<String>,
        message: String,
    },
    #[error("replay bundle rejected: {0}")]
    Bundle(String),
    #[error("upload exceeds the {limit} byte limit")]
    TooLarge { limit: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("report not ready: job is {}", .0.as_str())]
    NotReady(JobState),
}

struct ActiveRules {
    source: String,
    set: Arc<RuleSet>,
}

pub(crate) struct Shared {
    store: Store,
    queue: Queue,
    rules: RwLock<ActiveRules>,
    config: ServiceConfig,
    adapters: AdapterRegistry,
}

/// A running service. Dropping it stops the workers after their current
/// job.
pub struct Service {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

pub const INTERRUPTED: &str = "interrupted: the service stopped before this job finished";

impl Service {
    pub fn start(config: ServiceConfig) -> Result<Service, ServiceError> {
        if config.workers == 0 {
            return Err(ServiceError::NoWorkers);
        }
        let store = Store::open(&config.store)?;
        let source = match store.read_rules()? {
            Some(s) => s,
            None => {
                store.write_rules(DEFAULT_RULES)?;
                DEFAULT_RULES.to_string()
            }
        };
        let set = parse_ruleset(&source).map_err(|source| ServiceError::Rules {
            path: store.rules_path(),
            source,
        })?;
        let shared = Arc::new(Shared {
            store,
            queue: Queue::default(),
            rules: RwLock::new(ActiveRules {
                source,
                set: Arc::new(set),
            }),
            config,
            adapters: AdapterRegistry::builtin(),
        });
        shared.recover()?;
        let workers = (0..shared.config.workers)
            .map(|i| {
                let shared = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("pkgtrace-worker-{i}"))
                    .spawn(move || worker::run(&shared))
                    .expect("spawn worker thread")
            })
            .collect();
        Ok(Service { shared, workers })
    }

    pub fn router(&self) -> axum::Router {
        api::router(Arc::clone(&self.shared))
    }

    pub fn store(&self) -> &Store {
        &self.shared.store
    }

    pub fn submit(
        &self,
        spec: PackageSpec,
        backend: Option<BackendSpec>,
    ) -> Result<String, SubmitError> {
        let id = self.shared.store.next_id();
        self.shared.submit(id, spec, backend)
    }

    pub fn job(&self, id: &str) -> Result<Job, StoreError> {
        self.shared.store.load_job(id)
    }

    pub fn report(&self, id: &str) -> Result<String, ReportError> {
        self.shared.report(id)
    }

    pub fn rules_source(&self) -> String {
        self.shared.rules.read().unwrap().source.clone()
    }

    pub fn put_rules(&self, source: &str) -> Result<usize, SubmitRulesError> {
        self.shared.put_rules(source)
    }

    /// Stop taking jobs and wait for the workers to finish their current one.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.queue.close();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitRulesError {
    #[error(transparent)]
    Parse(#[from] RuleError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl Shared {
    /// Fail whatever a previous process left half done and queue the rest.
    fn recover(&self) -> Result<(), StoreError> {
        for mut job in self.store.jobs()? {
            let orphaned = job.state == JobState::Running
                || (job.state == JobState::Queued && self.store.is_claimed(&job.id));
            if orphaned {
                log::warn!("job {} was interrupted; marking it failed", job.id);
                job.transition(JobState::Failed)?;
                job.error = Some(INTERRUPTED.to_string());
                self.store.save_job(&job)?;
            } else if job.state == JobState::Queued {
                self.queue.push(job.id);
            }
        }
        Ok(())
    }

    /// Validate and persist a job under a pre-allocated id, then queue it.
    /// Uploads for the job may already sit in its directory.
    fn submit(
        &self,
        id: String,
        mut spec: PackageSpec,
        backend: Option<BackendSpec>,
    ) -> Result<String, SubmitError> {
        let result = (|| {
            let backend = backend.unwrap_or_else(|| self.config.live_backend.clone());
            match &backend {
                BackendSpec::Replay { bundle_path } => {
                    let bundle = ReplayBundle::load(bundle_path)
                        .map_err(|e| SubmitError::Bundle(e.to_string()))?;
                    let m = &bundle.manifest.package;
                    spec = PackageSpec {
                        ecosystem: m.ecosystem.clone(),
                        name: Some(m.name.clone()),
                        version: m.version.clone(),
                        local_path: None,
                    };
                }
                _ => {
                    plan_phases(&spec, &self.adapters, &self.store.job_dir(&id).join("pkg"))?;
                }
            }
            let job = Job::new(id.clone(), spec, backend);
            self.store.save_job(&job)?;
            Ok(job)
        })();
        match result {
            Ok(job) => {
                log::info!("job {} queued", job.id);
                self.queue.push(job.id.clone());
                Ok(job.id)
            }
            Err(e) => {
                self.store.remove_job_dir(&id);
                Err(e)
            }
        }
    }

    fn report(&self, id: &str) -> Result<String, ReportError> {
        let job = self.store.load_job(id)?;
        if job.state != JobState::Succeeded {
            return Err(ReportError::NotReady(job.state));
        }
        Ok(self.store.read_report(id)?)
    }

    fn put_rules(&self, source: &str) -> Result<usize, SubmitRulesError> {
        let set = parse_ruleset(source)?;
        let n = set.len();
        let mut active = self.rules.write().unwrap();
        self.store.write_rules(source)?;
        *active = ActiveRules {
            source: source.to_string(),
            set: Arc::new(set),
        };
        log::info!("active ruleset replaced ({n} rules)");
        Ok(n)
    }

    fn active_rules(&self) -> Arc<RuleSet> {
        Arc::clone(&self.rules.read().unwrap().set)
    }

    fn job_dir(&self, id: &str) -> PathBuf {
        self.store.job_dir(id)
    }
}
