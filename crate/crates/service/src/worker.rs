use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Condvar, Mutex};

use pkgtrace_core::sandbox::RunConfig;
use pkgtrace_core::{analyze, BehaviorReport};

use crate::store::{JobState, StoreError};
use crate::Shared;

#[derive(Default)]
struct QueueState {
    pending: VecDeque<String>,
    closed: bool,
}

/// FIFO of job ids. Popping blocks until work arrives or the queue closes.
#[derive(Default)]
pub(crate) struct Queue {
    state: Mutex<QueueState>,
    ready: Condvar,
}

impl Queue {
    pub(crate) fn push(&self, id: String) {
        self.state.lock().unwrap().pending.push_back(id);
        self.ready.notify_one();
    }

    fn pop(&self) -> Option<String> {
        let mut s = self.state.lock().unwrap();
        loop {
            if s.closed {
                return None;
            }
            if let Some(id) = s.pending.pop_front() {
                return Some(id);
            }
            s = self.ready.wait(s).unwrap();
        }
    }

    pub(crate) fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}

pub(crate) fn run(shared: &Shared) {
    while let Some(id) = shared.queue.pop() {
        if let Err(e) = process(shared, &id) {
            log::error!("job {id}: {e}");
        }
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}

fn process(shared: &Shared, id: &str) -> Result<(), StoreError> {
    let store = &shared.store;
    if !store.try_claim(id)? {
        return Ok(());
    }
    let mut job = store.load_job(id)?;
    if job.state != JobState::Queued {
        return Ok(());
    }
    job.transition(JobState::Running)?;
    store.save_job(&job)?;
    log::info!("job {id} running");

    let config = RunConfig {
        phase_timeout_s: shared.config.phase_timeout_s,
        backend: job.backend.clone(),
        work_root: shared.job_dir(id),
        adapters: shared.adapters.clone(),
        ..RunConfig::default()
    };
    let rules = shared.active_rules();
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        analyze(&job.spec, &config, &rules, shared.config.model.as_ref())
    }));
    let result: Result<BehaviorReport, String> = match outcome {
        Ok(Ok(report)) => Ok(report),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(format!("analysis panicked: {}", panic_message(p.as_ref()))),
    };
    match result.and_then(|report| store.write_report(id, &report).map_err(|e| e.to_string())) {
        Ok(()) => job.transition(JobState::Succeeded)?,
        Err(e) => {
            job.transition(JobState::Failed)?;
            job.error = Some(e);
        }
    }
    store.save_job(&job)?;
    log::info!("job {id} {}", job.state.as_str());
    Ok(())
}
