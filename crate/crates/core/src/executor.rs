//! Worker pool, ready queue and the public runtime surface.

use std::any::Any;
use std::collections::{HashMap, HashSet, VecDeque};
use std::marker::PhantomData;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use parking_lot::{Condvar, Mutex, MutexGuard};

use crate::builder::{Builder, InsertionReceipt, UserTask};
use crate::engine::{decide_activation, resolve_uncertain_completion, ActivationChange, ActivationPolicy, ChangeOutcome};
use crate::error::Error;
use crate::graph::{Activation, Body, GraphSnapshot, GroupId, Status, TaskGraph, TaskId, TaskKind, TaskOutput, TaskView};
use crate::registry::{
    clone_duplicator, clone_selector, custom_duplicator, custom_selector, AccessMode, AccessRecord, Data, DataRegistry,
    Datum,
};
use crate::trace::{self, DotOptions, TraceRecord};

/// Environment variable read for the default worker count.
pub const NUM_THREADS_ENV: &str = "SPECTASK_NUM_THREADS";

pub fn default_num_threads() -> usize {
    std::env::var(NUM_THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub trait ReadyQueue: Send {
    fn push(&mut self, task: TaskId);
    fn pop(&mut self) -> Option<TaskId>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Default)]
pub struct FifoQueue(VecDeque<TaskId>);

impl ReadyQueue for FifoQueue {
    fn push(&mut self, task: TaskId) {
        self.0.push_back(task);
    }
    fn pop(&mut self) -> Option<TaskId> {
        self.0.pop_front()
    }
    fn len(&self) -> usize {
        self.0.len()
    }
}

#[derive(Default)]
pub struct LifoQueue(Vec<TaskId>);

impl ReadyQueue for LifoQueue {
    fn push(&mut self, task: TaskId) {
        self.0.push(task);
    }
    fn pop(&mut self) -> Option<TaskId> {
        self.0.pop()
    }
    fn len(&self) -> usize {
        self.0.len()
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub tasks_run: usize,
    pub tasks_skipped: usize,
    /// Speculative tasks that ran but whose result was thrown away.
    pub tasks_wasted: usize,
    pub disables_too_late: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum DisableResult {
    Disabled,
    TooLate,
}

/// How a task ended.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TaskResult {
    /// Carries the wrote-flag for uncertain tasks and their twins.
    Completed(Option<bool>),
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome<R> {
    Value(R),
    Skipped,
}

impl<R> Outcome<R> {
    pub fn value(self) -> Option<R> {
        match self {
            Outcome::Value(v) => Some(v),
            Outcome::Skipped => None,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ResolutionTrigger {
    Decision(GroupId),
    Completion { task: TaskId, wrote: bool },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolutionEvent {
    pub trigger: ResolutionTrigger,
    pub changes: Vec<ActivationChange>,
}

enum Step {
    Ready(TaskId),
    Skip(TaskId),
}

struct Sched {
    graph: TaskGraph,
    queue: Box<dyn ReadyQueue>,
    pending: usize,
    commute_held: HashSet<crate::registry::HandleId>,
    commute_waiters: HashMap<crate::registry::HandleId, Vec<TaskId>>,
    policy: ActivationPolicy,
    stats: Stats,
    failure: Option<Error>,
    paused: bool,
    shutdown: bool,
    log: Vec<ResolutionEvent>,
    work: Vec<Step>,
}

struct Shared {
    sched: Mutex<Sched>,
    work_cv: Condvar,
    done_cv: Condvar,
    traces: Vec<Mutex<Vec<TraceRecord>>>,
    epoch: Instant,
    workers: usize,
}

impl Sched {
    fn drain(&mut self, workers: usize) {
        while let Some(step) = self.work.pop() {
            match step {
                Step::Ready(t) => self.make_ready(t, workers),
                Step::Skip(t) => self.skip(t),
            }
        }
    }

    fn make_ready(&mut self, t: TaskId, workers: usize) {
        if let Some(gid) = self.graph.task(t).group {
            let group = self.graph.group(gid);
            if group.state == crate::engine::GroupState::Undefined && group.entry_tasks().contains(&t) {
                let (changes, wasted) = decide_activation(&mut self.graph, gid, &self.policy, self.queue.len(), workers);
                self.apply(ResolutionTrigger::Decision(gid), changes, wasted);
            }
        }
        let activation = self.graph.task(t).activation;
        if self.failure.is_some() {
            self.work.push(Step::Skip(t));
            return;
        }
        match activation {
            Activation::Enabled => {
                self.graph.task_mut(t).status = Status::Queued;
                self.queue.push(t);
            }
            Activation::Disabled => self.work.push(Step::Skip(t)),
            Activation::Undefined => self.graph.task_mut(t).status = Status::Parked,
        }
    }

    fn skip(&mut self, t: TaskId) {
        let node = self.graph.task_mut(t);
        if node.status.is_terminal() {
            return;
        }
        node.status = Status::Skipped;
        self.stats.tasks_skipped += 1;
        self.pending -= 1;
        // a task that never ran did not write
        if let Some(gid) = self.reports_to(t) {
            let (changes, wasted) = resolve_uncertain_completion(&mut self.graph, gid, t, false);
            self.apply(ResolutionTrigger::Completion { task: t, wrote: false }, changes, wasted);
        }
        self.release_successors(t);
    }

    /// Group to notify when `t` ends, if it carries a wrote-flag.
    fn reports_to(&self, t: TaskId) -> Option<GroupId> {
        let node = self.graph.task(t);
        let uncertain = match node.kind {
            TaskKind::Uncertain => true,
            TaskKind::Speculative => node.twin_of.is_some_and(|o| self.graph.task(o).kind == TaskKind::Uncertain),
            _ => false,
        };
        if uncertain {
            node.group
        } else {
            None
        }
    }

    fn release_successors(&mut self, t: TaskId) {
        let succs = self.graph.task(t).succs.clone();
        for s in succs.into_iter().rev() {
            let node = self.graph.task_mut(s);
            node.remaining -= 1;
            if node.remaining == 0 {
                self.work.push(Step::Ready(s));
            }
        }
    }

    fn apply(&mut self, trigger: ResolutionTrigger, changes: Vec<ActivationChange>, wasted: usize) {
        self.stats.tasks_wasted += wasted;
        for change in &changes {
            if change.outcome == ChangeOutcome::TooLate {
                self.stats.disables_too_late += 1;
                continue;
            }
            let status = self.graph.task(change.task).status;
            if status != Status::Parked {
                continue;
            }
            match change.to {
                Activation::Enabled if self.failure.is_none() => {
                    self.graph.task_mut(change.task).status = Status::Queued;
                    self.queue.push(change.task);
                }
                Activation::Enabled | Activation::Disabled => self.work.push(Step::Skip(change.task)),
                Activation::Undefined => {}
            }
        }
        self.log.push(ResolutionEvent { trigger, changes });
    }

    fn complete(&mut self, t: TaskId, output: TaskOutput) {
        let node = self.graph.task_mut(t);
        node.status = Status::Done;
        node.result_wrote = output.wrote;
        node.output = output.value;
        self.stats.tasks_run += 1;
        self.pending -= 1;
        if let (Some(gid), Some(wrote)) = (self.reports_to(t), output.wrote) {
            let (changes, wasted) = resolve_uncertain_completion(&mut self.graph, gid, t, wrote);
            self.apply(ResolutionTrigger::Completion { task: t, wrote }, changes, wasted);
        }
        self.release_successors(t);
    }

    fn fail(&mut self, t: TaskId, message: String) {
        let node = self.graph.task_mut(t);
        node.status = Status::Done;
        self.pending -= 1;
        if self.failure.is_none() {
            self.failure = Some(Error::TaskFailed { task: t, message });
        }
        let parked: Vec<TaskId> = self
            .graph
            .tasks
            .iter()
            .filter(|n| n.status == Status::Parked)
            .map(|n| n.id)
            .collect();
        self.work.extend(parked.into_iter().map(Step::Skip));
        self.release_successors(t);
    }

    fn commute_handles(&self, t: TaskId) -> Vec<crate::registry::HandleId> {
        self.graph
            .task(t)
            .slots
            .iter()
            .filter(|s| s.mode == AccessMode::Commute)
            .map(|s| s.handle)
            .collect()
    }

    fn release_commute(&mut self, handles: &[crate::registry::HandleId]) {
        for h in handles {
            self.commute_held.remove(h);
            if let Some(waiters) = self.commute_waiters.remove(h) {
                for w in waiters {
                    self.queue.push(w);
                }
            }
        }
    }
}

fn worker_loop(shared: Arc<Shared>, index: usize) {
    let mut sched = shared.sched.lock();
    loop {
        if sched.shutdown && sched.queue.is_empty() {
            return;
        }
        if sched.paused || sched.queue.is_empty() {
            shared.work_cv.wait(&mut sched);
            continue;
        }
        let t = sched.queue.pop().expect("non-empty queue");
        if sched.graph.task(t).activation == Activation::Disabled || sched.failure.is_some() {
            sched.skip(t);
            sched.drain(shared.workers);
            shared.done_cv.notify_all();
            shared.work_cv.notify_all();
            continue;
        }
        let commute = sched.commute_handles(t);
        if let Some(&busy) = commute.iter().find(|h| sched.commute_held.contains(h)) {
            sched.commute_waiters.entry(busy).or_default().push(t);
            continue;
        }
        sched.commute_held.extend(commute.iter().copied());

        let node = sched.graph.task_mut(t);
        node.status = Status::Running;
        let body: Body = Arc::clone(&node.body);
        let slots = node.slots.clone();
        let speculative = node.kind == TaskKind::Speculative;
        let kind = node.kind;
        let group = node.group;
        let label = node.label.clone();

        let (start, end, result) = MutexGuard::unlocked(&mut sched, || {
            let view = TaskView::new(slots, speculative, index);
            let start = shared.epoch.elapsed().as_nanos() as u64;
            let result = catch_unwind(AssertUnwindSafe(|| body(&view)));
            let end = shared.epoch.elapsed().as_nanos() as u64;
            drop(view);
            (start, end, result)
        });
        shared.traces[index].lock().push(TraceRecord {
            task: t,
            worker: index,
            start_ns: start,
            end_ns: end,
            kind,
            group,
            label,
        });

        sched.release_commute(&commute);
        match result {
            Ok(output) => sched.complete(t, output),
            Err(payload) => {
                let message = panic_message(payload.as_ref());
                sched.fail(t, message);
            }
        }
        sched.drain(shared.workers);
        shared.done_cv.notify_all();
        shared.work_cv.notify_all();
    }
}

fn panic_message(payload: &(dyn Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "task panicked".to_string()
    }
}

#[derive(Default)]
pub struct RuntimeBuilder {
    workers: Option<usize>,
    policy: ActivationPolicy,
    queue: Option<Box<dyn ReadyQueue>>,
    paused: bool,
}

impl RuntimeBuilder {
    pub fn workers(mut self, n: usize) -> Self {
        assert!(n > 0, "worker count must be positive");
        self.workers = Some(n);
        self
    }

    pub fn policy(mut self, policy: ActivationPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn queue(mut self, queue: impl ReadyQueue + 'static) -> Self {
        self.queue = Some(Box::new(queue));
        self
    }

    /// Workers do not start until [`Runtime::resume`].
    pub fn paused(mut self, paused: bool) -> Self {
        self.paused = paused;
        self
    }

    pub fn build(self) -> Runtime {
        let workers = self.workers.unwrap_or_else(default_num_threads);
        let shared = Arc::new(Shared {
            sched: Mutex::new(Sched {
                graph: TaskGraph::default(),
                queue: self.queue.unwrap_or_else(|| Box::new(FifoQueue::default())),
                pending: 0,
                commute_held: HashSet::new(),
                commute_waiters: HashMap::new(),
                policy: self.policy,
                stats: Stats::default(),
                failure: None,
                paused: self.paused,
                shutdown: false,
                log: Vec::new(),
                work: Vec::new(),
            }),
            work_cv: Condvar::new(),
            done_cv: Condvar::new(),
            traces: (0..workers).map(|_| Mutex::new(Vec::new())).collect(),
            epoch: Instant::now(),
            workers,
        });
        let threads = (0..workers)
            .map(|i| {
                let shared = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("spectask-worker-{i}"))
                    .spawn(move || worker_loop(shared, i))
                    .expect("spawn worker thread")
            })
            .collect();
        Runtime {
            shared,
            registry: Mutex::new(DataRegistry::new()),
            threads,
        }
    }
}

/// Handle on an inserted task's result.
pub struct Receipt<R> {
    shared: Arc<Shared>,
    insertion: InsertionReceipt,
    _marker: PhantomData<fn() -> R>,
}

impl<R> Clone for Receipt<R> {
    fn clone(&self) -> Self {
        Receipt {
            shared: Arc::clone(&self.shared),
            insertion: self.insertion.clone(),
            _marker: PhantomData,
        }
    }
}

impl<R: Any + Clone> Receipt<R> {
    pub fn task(&self) -> TaskId {
        self.insertion.main_task
    }

    pub fn insertion(&self) -> &InsertionReceipt {
        &self.insertion
    }

    /// Blocks until the task's result is settled. When speculation succeeded
    /// the value comes from the speculative twin.
    pub fn wait(&self) -> Outcome<R> {
        let main = self.insertion.main_task;
        let twin = self.insertion.speculative_twin;
        let mut sched = self.shared.sched.lock();
        loop {
            let main_done = sched.graph.task(main).status.is_terminal();
            let twin_done = twin.is_none_or(|t| sched.graph.task(t).status.is_terminal());
            if main_done && (twin_done || sched.graph.task(main).status == Status::Done) {
                break;
            }
            self.shared.done_cv.wait(&mut sched);
        }
        let node = sched.graph.task(main);
        let source = if node.status == Status::Done {
            Some(main)
        } else {
            twin.filter(|&t| {
                let twin_node = sched.graph.task(t);
                let valid = twin_node
                    .group
                    .is_some_and(|g| sched.graph.group(g).validity == Some(true));
                twin_node.status == Status::Done && valid
            })
        };
        source
            .and_then(|t| sched.graph.task(t).output.as_ref())
            .and_then(|v| v.downcast_ref::<R>())
            .map_or(Outcome::Skipped, |v| Outcome::Value(v.clone()))
    }
}

pub struct Runtime {
    shared: Arc<Shared>,
    registry: Mutex<DataRegistry>,
    threads: Vec<JoinHandle<()>>,
}

impl Default for Runtime {
    fn default() -> Self {
        Self::new()
    }
}

impl Runtime {
    pub fn new() -> Self {
        RuntimeBuilder::default().build()
    }

    pub fn with_workers(n: usize) -> Self {
        RuntimeBuilder::default().workers(n).build()
    }

    pub fn builder() -> RuntimeBuilder {
        RuntimeBuilder::default()
    }

    pub fn worker_count(&self) -> usize {
        self.shared.workers
    }

    pub fn register<T: Any + Clone + Send + Sync>(&self, value: T) -> Data<T> {
        self.registry
            .lock()
            .register_value(&Datum::new(value))
            .expect("fresh datum cannot be registered twice")
    }

    /// Registers with user-supplied duplication and selection.
    pub fn register_with<T, D, S>(&self, value: T, duplicator: D, selector: S) -> Data<T>
    where
        T: Any + Send + Sync,
        D: Fn(&T) -> T + Send + Sync + 'static,
        S: Fn(&mut T, &T) + Send + Sync + 'static,
    {
        let datum = Datum::new(value);
        let id = self
            .registry
            .lock()
            .register_data(
                Arc::clone(datum.cell()),
                custom_duplicator(duplicator),
                custom_selector(selector),
            )
            .expect("fresh datum cannot be registered twice");
        Data::from_parts(id, Arc::clone(datum.cell()))
    }

    pub fn register_datum<T: Any + Clone + Send + Sync>(&self, datum: &Datum<T>) -> Result<Data<T>, Error> {
        let id = self.registry.lock().register_data(
            Arc::clone(datum.cell()),
            clone_duplicator::<T>(),
            clone_selector::<T>(),
        )?;
        Ok(Data::from_parts(id, Arc::clone(datum.cell())))
    }

    pub fn task<R, F>(&self, accesses: &[AccessRecord], f: F) -> Result<Receipt<R>, Error>
    where
        R: Any + Send,
        F: Fn(&TaskView) -> R + Send + Sync + 'static,
    {
        self.insert(None, accesses, wrap_normal(f), false)
    }

    pub fn named_task<R, F>(&self, label: &str, accesses: &[AccessRecord], f: F) -> Result<Receipt<R>, Error>
    where
        R: Any + Send,
        F: Fn(&TaskView) -> R + Send + Sync + 'static,
    {
        self.insert(Some(label), accesses, wrap_normal(f), false)
    }

    /// The body returns whether it modified its maybe-write data.
    pub fn uncertain_task<F>(&self, accesses: &[AccessRecord], f: F) -> Result<Receipt<bool>, Error>
    where
        F: Fn(&TaskView) -> bool + Send + Sync + 'static,
    {
        self.insert(None, accesses, wrap_uncertain(f), true)
    }

    pub fn named_uncertain_task<F>(&self, label: &str, accesses: &[AccessRecord], f: F) -> Result<Receipt<bool>, Error>
    where
        F: Fn(&TaskView) -> bool + Send + Sync + 'static,
    {
        self.insert(Some(label), accesses, wrap_uncertain(f), true)
    }

    fn insert<R>(&self, label: Option<&str>, accesses: &[AccessRecord], body: Body, uncertain: bool) -> Result<Receipt<R>, Error> {
        let mut registry = self.registry.lock();
        let mut sched = self.shared.sched.lock();
        let task = UserTask {
            label: label.unwrap_or("").to_string(),
            accesses: accesses.to_vec(),
            body,
        };
        let mut builder = Builder::new(&mut registry, &mut sched.graph);
        let insertion = if uncertain {
            builder.insert_uncertain(task)?
        } else {
            builder.insert_normal(task)?
        };
        if label.is_none() {
            let main = insertion.main_task;
            sched.graph.task_mut(main).label = main.to_string();
            if let Some(twin) = insertion.speculative_twin {
                sched.graph.task_mut(twin).label = format!("{main}'");
            }
        }
        sched.pending += insertion.created.len();
        let ready: Vec<TaskId> = insertion
            .created
            .iter()
            .copied()
            .filter(|&t| sched.graph.task(t).remaining == 0)
            .collect();
        for t in ready {
            sched.work.push(Step::Ready(t));
            sched.drain(self.shared.workers);
        }
        drop(sched);
        self.shared.work_cv.notify_all();
        Ok(Receipt {
            shared: Arc::clone(&self.shared),
            insertion,
            _marker: PhantomData,
        })
    }

    /// Starts workers held back by [`RuntimeBuilder::paused`].
    pub fn resume(&self) {
        self.shared.sched.lock().paused = false;
        self.shared.work_cv.notify_all();
    }

    pub fn wait_all(&self) -> Result<(), Error> {
        self.wait_remain(0)
    }

    /// Blocks until at most `k` tasks are still pending.
    pub fn wait_remain(&self, k: usize) -> Result<(), Error> {
        let mut sched = self.shared.sched.lock();
        if sched.paused && sched.pending > k {
            drop(sched);
            self.resume();
            sched = self.shared.sched.lock();
        }
        while sched.pending > k {
            self.shared.done_cv.wait(&mut sched);
        }
        match &sched.failure {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    pub fn wait_task(&self, task: TaskId) -> Result<TaskResult, Error> {
        let mut sched = self.shared.sched.lock();
        if task.0 >= sched.graph.tasks.len() {
            return Err(Error::UnknownTask(task));
        }
        while !sched.graph.task(task).status.is_terminal() {
            self.shared.done_cv.wait(&mut sched);
        }
        let node = sched.graph.task(task);
        Ok(match node.status {
            Status::Done => TaskResult::Completed(node.result_wrote),
            _ => TaskResult::Skipped,
        })
    }

    /// Disables a task unless its body has already started.
    pub fn try_disable(&self, task: TaskId) -> Result<DisableResult, Error> {
        let mut sched = self.shared.sched.lock();
        if task.0 >= sched.graph.tasks.len() {
            return Err(Error::UnknownTask(task));
        }
        let status = sched.graph.task(task).status;
        if status.has_started() {
            sched.stats.disables_too_late += 1;
            return Ok(DisableResult::TooLate);
        }
        sched.graph.task_mut(task).activation = Activation::Disabled;
        if status == Status::Parked {
            sched.work.push(Step::Skip(task));
            sched.drain(self.shared.workers);
            drop(sched);
            self.shared.done_cv.notify_all();
            self.shared.work_cv.notify_all();
        }
        Ok(DisableResult::Disabled)
    }

    pub fn stats(&self) -> Stats {
        self.shared.sched.lock().stats
    }

    pub fn pending(&self) -> usize {
        self.shared.sched.lock().pending
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        self.shared.sched.lock().graph.snapshot()
    }

    pub fn resolution_log(&self) -> Vec<ResolutionEvent> {
        self.shared.sched.lock().log.clone()
    }

    pub fn generate_dot(&self, options: &DotOptions) -> String {
        trace::generate_dot(&self.snapshot(), options)
    }

    /// Execution records of every task that ran, sorted by start time.
    pub fn trace(&self) -> Vec<TraceRecord> {
        let mut all: Vec<TraceRecord> = self.shared.traces.iter().flat_map(|t| t.lock().clone()).collect();
        all.sort_by_key(|r| (r.start_ns, r.task));
        all
    }

    pub fn clear_trace(&self) {
        for t in &self.shared.traces {
            t.lock().clear();
        }
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        let _ = self.wait_all();
        self.shared.sched.lock().shutdown = true;
        self.shared.work_cv.notify_all();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn wrap_normal<R, F>(f: F) -> Body
where
    R: Any + Send,
    F: Fn(&TaskView) -> R + Send + Sync + 'static,
{
    Arc::new(move |view| TaskOutput {
        value: Some(Box::new(f(view))),
        wrote: None,
    })
}

fn wrap_uncertain<F>(f: F) -> Body
where
    F: Fn(&TaskView) -> bool + Send + Sync + 'static,
{
    Arc::new(move |view| {
        let wrote = f(view);
        TaskOutput {
            value: Some(Box::new(wrote)),
            wrote: Some(wrote),
        }
    })
}
