//! Serves human annotation tasks for counterfactual simulation and
//! explanation plausibility, gated by a qualification exam, and exports the
//! judgments in the format the evaluation pipeline reads.

mod clock;
mod http;
mod service;

use std::path::Path;

use thiserror::Error;

pub use clock::{Clock, ManualClock, SystemClock};
pub use http::{router, serve, ApiError, SECRET_HEADER};
pub use service::{
    bundled_qualification, load_qualification, load_tasks, Acknowledgement, AnnotationService, Assignment,
    AssignmentState, Instructions, Progress, QualificationItem, QualificationProgress, ServiceConfig, TaskView,
    WorkerProfile, DEFAULT_PASS_THRESHOLD, DEFAULT_RATING_MAX, DEFAULT_REDUNDANCY, DEFAULT_TTL_MINUTES,
};

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("no task is available")]
    NoWork,
    #[error("qualification failed: {score} of {total} correct")]
    NotQualified { score: usize, total: usize },
    #[error("task {0} is not assigned to this worker")]
    NotAssigned(String),
    #[error("reservation for task {0} has expired")]
    ReservationExpired(String),
    #[error("task {0} was already submitted by this worker")]
    AlreadySubmitted(String),
    #[error("task {task_id}: expected {expected}")]
    BadLabelShape { task_id: String, expected: String },
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("duplicate task id {0}")]
    DuplicateTask(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AnnotateError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        AnnotateError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
