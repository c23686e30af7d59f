use thiserror::Error;

use crate::graph::TaskId;
use crate::registry::HandleId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("datum already registered as {existing}")]
    DuplicateRegistration { existing: HandleId },

    #[error("handle {0} is not registered with this runtime")]
    UnknownHandle(HandleId),

    #[error("handle {0} appears more than once in the access list")]
    RepeatedHandle(HandleId),

    #[error("{original} already has a live duplicate {shadow}; clean it first")]
    AlreadyDuplicated { original: HandleId, shadow: HandleId },

    #[error("{0} is itself a duplicate and cannot be duplicated")]
    ShadowOfShadow(HandleId),

    #[error("maybe-write access on {0} in a normal task; use an uncertain task instead")]
    MaybeWriteInNormalTask(HandleId),

    #[error("uncertain task without any maybe-write access; use a normal task instead")]
    NoMaybeWrite,

    #[error("task {task} failed: {message}")]
    TaskFailed { task: TaskId, message: String },

    #[error("task {0} does not exist")]
    UnknownTask(TaskId),
}
