//! Sequential-task-flow runtime with speculative execution.
//!
//! Tasks are inserted from one thread with their data accesses; the runtime
//! derives dependencies so that parallel execution gives the result of
//! running tasks in insertion order. A task declaring a maybe-write access
//! reports whether it actually wrote. The runtime copies the data in front
//! of such a task and runs the following tasks a second time on the copy,
//! in parallel with it. When the uncertain task did not write, select tasks
//! move the speculative result into place; otherwise the speculative work
//! is dropped and the normal path runs.

pub mod analytic;
mod builder;
pub mod engine;
mod error;
mod executor;
mod graph;
mod registry;
pub mod trace;

pub use builder::InsertionReceipt;
pub use engine::{ActivationChange, ActivationContext, ActivationPolicy, ChangeOutcome, GroupState, SpecGroup};
pub use error::Error;
pub use executor::{
    default_num_threads, DisableResult, FifoQueue, LifoQueue, Outcome, Receipt, ReadyQueue, ResolutionEvent,
    ResolutionTrigger, Runtime, RuntimeBuilder, Stats, TaskResult, NUM_THREADS_ENV,
};
pub use graph::{Activation, GraphSnapshot, GroupId, TaskId, TaskInfo, TaskKind, TaskView};
pub use registry::{
    AccessMode, AccessRecord, CleanPredicate, Data, DataRegistry, Datum, DuplicateEntry, HandleId,
};
pub use trace::{DotOptions, TraceRecord};
