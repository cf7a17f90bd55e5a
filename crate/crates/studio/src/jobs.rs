//! Job records and the FIFO worker pool that runs them.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

use crate::pipeline::{JobOutput, Task};
use crate::project::Project;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Render,
    Blend,
    Invert,
    Panorama,
    Transfer,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: Uuid,
    pub kind: JobKind,
    pub state: JobState,
    pub request: Value,
    /// Checkpoint the job ran against; with `request` it reproduces the job.
    pub checkpoint_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_uri: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Milliseconds spent `queued` and `running`.
    #[serde(default)]
    pub timings: BTreeMap<String, u64>,
}

fn millis(d: Duration) -> u64 {
    d.as_millis().try_into().unwrap_or(u64::MAX)
}

impl Job {
    pub fn new(kind: JobKind, request: Value, checkpoint_hash: impl Into<String>) -> Self {
        Job {
            id: Uuid::new_v4(),
            kind,
            state: JobState::Queued,
            request,
            checkpoint_hash: checkpoint_hash.into(),
            result_uri: None,
            artifacts: BTreeMap::new(),
            error: None,
            timings: BTreeMap::new(),
        }
    }

    /// queued → running.
    pub fn start(&mut self, queued_for: Duration) {
        assert_eq!(
            self.state,
            JobState::Queued,
            "job {} started twice",
            self.id
        );
        self.state = JobState::Running;
        self.timings.insert("queued".into(), millis(queued_for));
    }

    /// running → done | failed.
    pub fn finish(&mut self, outcome: Result<JobOutput, String>, ran_for: Duration) {
        assert_eq!(
            self.state,
            JobState::Running,
            "job {} finished while {:?}",
            self.id,
            self.state
        );
        self.timings.insert("running".into(), millis(ran_for));
        match outcome {
            Ok(out) => {
                self.state = JobState::Done;
                self.result_uri = Some(out.result_uri);
                self.artifacts = out.artifacts;
            }
            Err(msg) => {
                self.state = JobState::Failed;
                self.error = Some(msg);
            }
        }
    }
}

struct Pending {
    id: Uuid,
    task: Task,
    enqueued: Instant,
}

#[derive(Default)]
struct State {
    pending: VecDeque<Pending>,
    jobs: HashMap<Uuid, Job>,
    shutdown: bool,
}

struct Shared {
    state: Mutex<State>,
    work: Condvar,
    changed: Condvar,
    project: Arc<Project>,
}

impl Shared {
    fn persist(&self, job: &Job) {
        if let Err(e) = self.project.write_job(job) {
            eprintln!("warning: {e}");
        }
    }

    fn update(&self, id: Uuid, f: impl FnOnce(&mut Job)) {
        let snapshot = {
            let mut st = self.state.lock().unwrap();
            let job = st.jobs.get_mut(&id).expect("queued job is tracked");
            f(job);
            job.clone()
        };
        self.persist(&snapshot);
        self.changed.notify_all();
    }
}

fn worker(shared: Arc<Shared>) {
    loop {
        let next = {
            let mut st = shared.state.lock().unwrap();
            loop {
                if st.shutdown {
                    return;
                }
                if let Some(p) = st.pending.pop_front() {
                    break p;
                }
                st = shared.work.wait(st).unwrap();
            }
        };
        shared.update(next.id, |j| j.start(next.enqueued.elapsed()));
        let started = Instant::now();
        let project = &shared.project;
        let outcome = match catch_unwind(AssertUnwindSafe(|| (next.task)(project))) {
            Ok(r) => r.map_err(|e| e.to_string()),
            Err(_) => Err("job panicked".to_string()),
        };
        shared.update(next.id, |j| j.finish(outcome, started.elapsed()));
    }
}

/// A fixed pool of worker threads consuming jobs in submission order.
///
/// Dropping the queue stops the workers once their current job ends;
/// queued jobs are abandoned.
pub struct JobQueue {
    shared: Arc<Shared>,
}

impl JobQueue {
    pub fn start(project: Arc<Project>, workers: usize) -> Self {
        let shared = Arc::new(Shared {
            state: Mutex::new(State::default()),
            work: Condvar::new(),
            changed: Condvar::new(),
            project,
        });
        for i in 0..workers.max(1) {
            let s = Arc::clone(&shared);
            thread::Builder::new()
                .name(format!("job-worker-{i}"))
                .spawn(move || worker(s))
                .expect("spawn worker");
        }
        JobQueue { shared }
    }

    /// Records `job` as queued and hands `task` to the pool.
    pub fn submit(&self, job: Job, task: Task) -> Job {
        self.shared.persist(&job);
        let mut st = self.shared.state.lock().unwrap();
        st.jobs.insert(job.id, job.clone());
        st.pending.push_back(Pending {
            id: job.id,
            task,
            enqueued: Instant::now(),
        });
        drop(st);
        self.shared.work.notify_one();
        job
    }

    pub fn get(&self, id: Uuid) -> Option<Job> {
        self.shared.state.lock().unwrap().jobs.get(&id).cloned()
    }

    /// Blocks until `id` is done or failed, or `timeout` passes.
    pub fn wait(&self, id: Uuid, timeout: Duration) -> Option<Job> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.state.lock().unwrap();
        loop {
            let job = st.jobs.get(&id)?;
            let now = Instant::now();
            if job.state.is_terminal() || now >= deadline {
                return Some(job.clone());
            }
            st = self
                .shared
                .changed
                .wait_timeout(st, deadline - now)
                .unwrap()
                .0;
        }
    }
}

impl Drop for JobQueue {
    fn drop(&mut self) {
        self.shared.state.lock().unwrap().shutdown = true;
        self.shared.work.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_uri_is_present_exactly_when_done() {
        let mut ok = Job::new(JobKind::Blend, Value::Null, "h");
        assert!(ok.result_uri.is_none());
        ok.start(Duration::ZERO);
        assert!(ok.result_uri.is_none());
        ok.finish(
            Ok(JobOutput {
                result_uri: "images/x.png".into(),
                artifacts: BTreeMap::new(),
            }),
            Duration::from_millis(3),
        );
        assert_eq!(ok.state, JobState::Done);
        assert!(ok.result_uri.is_some() && ok.error.is_none());
        assert_eq!(ok.timings["running"], 3);

        let mut bad = Job::new(JobKind::Invert, Value::Null, "h");
        bad.start(Duration::ZERO);
        bad.finish(Err("boom".into()), Duration::ZERO);
        assert_eq!(bad.state, JobState::Failed);
        assert!(bad.result_uri.is_none());
        assert_eq!(bad.error.as_deref(), Some("boom"));
    }

    #[test]
    #[should_panic(expected = "started twice")]
    fn restarting_a_job_panics() {
        let mut j = Job::new(JobKind::Panorama, Value::Null, "h");
        j.start(Duration::ZERO);
        j.start(Duration::ZERO);
    }
}
