//! Job service, CLI backend and project store for styleweave.
//!
//! A [`Studio`] owns an opened [`Project`] and a [`JobQueue`]. Sampling and
//! rendering answer synchronously; blends, inversions, panoramas, transfers
//! and finetuning are prepared on submission and run on the worker pool.
//! [`api::router`] exposes the same calls over HTTP.

pub mod api;
pub mod assets;
pub mod error;
pub mod jobs;
pub mod pipeline;
pub mod project;

use std::sync::Arc;
use std::time::{Duration, Instant};

use uuid::Uuid;

pub use error::{Result, StudioError};
pub use jobs::{Job, JobKind, JobQueue, JobState};
pub use pipeline::{JobOutput, JobRequest};
pub use project::Project;

use pipeline::{RenderRequest, RenderResponse, SampleRequest, SampleResponse};

pub struct Studio {
    project: Arc<Project>,
    queue: JobQueue,
}

impl Studio {
    pub fn new(project: Project, workers: usize) -> Self {
        let project = Arc::new(project);
        Studio {
            queue: JobQueue::start(Arc::clone(&project), workers),
            project,
        }
    }

    pub fn project(&self) -> &Arc<Project> {
        &self.project
    }

    pub fn sample(&self, req: &SampleRequest) -> Result<SampleResponse> {
        pipeline::sample(&self.project, req)
    }

    pub fn render(&self, req: &RenderRequest) -> Result<RenderResponse> {
        pipeline::render(&self.project, req)
    }

    /// Validates `req` and queues it. Errors here mean nothing was queued.
    pub fn submit(&self, req: &JobRequest) -> Result<Job> {
        let task = req.prepare(&self.project)?;
        let job = Job::new(req.kind(), req.to_value(), self.project.checkpoint_hash());
        Ok(self.queue.submit(job, task))
    }

    /// A job from this session, or a record persisted by an earlier one.
    pub fn job(&self, id: Uuid) -> Result<Job> {
        if let Some(j) = self.queue.get(id) {
            return Ok(j);
        }
        let path = self.project.job_path(id);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(StudioError::NotFound(format!("job {id}")))
            }
            Err(e) => Err(StudioError::io(path, e)),
        }
    }

    pub fn wait(&self, id: Uuid, timeout: Duration) -> Result<Job> {
        match self.queue.wait(id, timeout) {
            Some(j) => Ok(j),
            None => self.job(id),
        }
    }
}

/// Runs `req` in the calling thread, recording it under `jobs/` exactly as
/// the queue would.
pub fn run_inline(project: &Project, req: &JobRequest) -> Result<(Job, JobOutput)> {
    let task = req.prepare(project)?;
    let mut job = Job::new(req.kind(), req.to_value(), project.checkpoint_hash());
    job.start(Duration::ZERO);
    let started = Instant::now();
    let outcome = task(project);
    job.finish(
        outcome
            .as_ref()
            .map(Clone::clone)
            .map_err(ToString::to_string),
        started.elapsed(),
    );
    project.write_job(&job)?;
    Ok((job, outcome?))
}
