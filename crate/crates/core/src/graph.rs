//! Task nodes, the union DAG and the view a task body gets of its data.

use std::any::Any;
use std::fmt;
use std::sync::Arc;

use parking_lot::{MappedRwLockReadGuard, MappedRwLockWriteGuard, Mutex, RwLockReadGuard, RwLockWriteGuard};

use crate::engine::SpecGroup;
use crate::registry::{AccessMode, DataCell, HandleId, Value};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId(pub(crate) usize);

impl TaskId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId(pub(crate) usize);

impl GroupId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Normal,
    Uncertain,
    Copy,
    /// Duplicate of a user task running on shadow data.
    Speculative,
    Select,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Normal => "normal",
            TaskKind::Uncertain => "uncertain",
            TaskKind::Copy => "copy",
            TaskKind::Speculative => "speculative",
            TaskKind::Select => "select",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Undefined,
    Enabled,
    Disabled,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Undefined => "undefined",
            Activation::Enabled => "enabled",
            Activation::Disabled => "disabled",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub(crate) enum Status {
    /// Waiting on predecessors.
    Pending,
    /// Predecessors done, activation still undefined.
    Parked,
    Queued,
    Running,
    Done,
    Skipped,
}

impl Status {
    pub(crate) fn is_terminal(self) -> bool {
        matches!(self, Status::Done | Status::Skipped)
    }

    pub(crate) fn has_started(self) -> bool {
        matches!(self, Status::Running | Status::Done)
    }
}

/// What a body hands back to the runtime.
pub(crate) struct TaskOutput {
    pub(crate) value: Option<Box<dyn Any + Send>>,
    pub(crate) wrote: Option<bool>,
}

impl TaskOutput {
    pub(crate) fn none() -> Self {
        TaskOutput { value: None, wrote: None }
    }
}

pub(crate) type Body = Arc<dyn Fn(&TaskView) -> TaskOutput + Send + Sync>;

#[derive(Clone)]
pub(crate) struct Slot {
    pub(crate) handle: HandleId,
    pub(crate) cell: Arc<DataCell>,
    pub(crate) mode: AccessMode,
}

pub(crate) struct TaskNode {
    pub(crate) id: TaskId,
    pub(crate) kind: TaskKind,
    pub(crate) label: String,
    pub(crate) slots: Vec<Slot>,
    pub(crate) body: Body,
    pub(crate) preds: Vec<TaskId>,
    pub(crate) succs: Vec<TaskId>,
    pub(crate) remaining: usize,
    pub(crate) activation: Activation,
    pub(crate) status: Status,
    pub(crate) group: Option<GroupId>,
    pub(crate) twin_of: Option<TaskId>,
    pub(crate) twin: Option<TaskId>,
    pub(crate) result_wrote: Option<bool>,
    pub(crate) output: Option<Box<dyn Any + Send>>,
}

#[derive(Default)]
pub(crate) struct TaskGraph {
    pub(crate) tasks: Vec<TaskNode>,
    pub(crate) groups: Vec<SpecGroup>,
}

pub(crate) struct NewTask {
    pub(crate) kind: TaskKind,
    pub(crate) label: String,
    pub(crate) slots: Vec<Slot>,
    pub(crate) body: Body,
    pub(crate) preds: Vec<TaskId>,
    pub(crate) activation: Activation,
    pub(crate) group: Option<GroupId>,
    pub(crate) twin_of: Option<TaskId>,
}

impl TaskGraph {
    pub(crate) fn next_task_id(&self) -> TaskId {
        TaskId(self.tasks.len())
    }

    pub(crate) fn add_task(&mut self, new: NewTask) -> TaskId {
        let id = self.next_task_id();
        let mut remaining = 0;
        for &p in &new.preds {
            let pred = &mut self.tasks[p.0];
            pred.succs.push(id);
            if !pred.status.is_terminal() {
                remaining += 1;
            }
        }
        if let Some(orig) = new.twin_of {
            self.tasks[orig.0].twin = Some(id);
        }
        self.tasks.push(TaskNode {
            id,
            kind: new.kind,
            label: new.label,
            slots: new.slots,
            body: new.body,
            preds: new.preds,
            succs: Vec::new(),
            remaining,
            activation: new.activation,
            status: Status::Pending,
            group: new.group,
            twin_of: new.twin_of,
            twin: None,
            result_wrote: None,
            output: None,
        });
        id
    }

    pub(crate) fn task(&self, id: TaskId) -> &TaskNode {
        &self.tasks[id.0]
    }

    pub(crate) fn task_mut(&mut self, id: TaskId) -> &mut TaskNode {
        &mut self.tasks[id.0]
    }

    pub(crate) fn group(&self, id: GroupId) -> &SpecGroup {
        &self.groups[id.0]
    }

    pub(crate) fn group_mut(&mut self, id: GroupId) -> &mut SpecGroup {
        &mut self.groups[id.0]
    }

    pub(crate) fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot {
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskInfo {
                    id: t.id,
                    kind: t.kind,
                    label: t.label.clone(),
                    accesses: t.slots.iter().map(|s| (s.handle, s.mode)).collect(),
                    preds: t.preds.clone(),
                    activation: t.activation,
                    group: t.group,
                    twin_of: t.twin_of,
                    executed: t.status == Status::Done,
                    skipped: t.status == Status::Skipped,
                    result_wrote: t.result_wrote,
                })
                .collect(),
            groups: self.groups.clone(),
        }
    }
}

/// Read-only copy of one task's structure and state.
#[derive(Clone, Debug)]
pub struct TaskInfo {
    pub id: TaskId,
    pub kind: TaskKind,
    pub label: String,
    pub accesses: Vec<(HandleId, AccessMode)>,
    pub preds: Vec<TaskId>,
    pub activation: Activation,
    pub group: Option<GroupId>,
    pub twin_of: Option<TaskId>,
    pub executed: bool,
    pub skipped: bool,
    pub result_wrote: Option<bool>,
}

#[derive(Clone, Debug, Default)]
pub struct GraphSnapshot {
    pub tasks: Vec<TaskInfo>,
    pub groups: Vec<SpecGroup>,
}

impl GraphSnapshot {
    pub fn edges(&self) -> Vec<(TaskId, TaskId)> {
        let mut edges: Vec<_> = self
            .tasks
            .iter()
            .flat_map(|t| t.preds.iter().map(move |&p| (p, t.id)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn task(&self, id: TaskId) -> &TaskInfo {
        &self.tasks[id.0]
    }

    pub fn count_kind(&self, kind: TaskKind) -> usize {
        self.tasks.iter().filter(|t| t.kind == kind).count()
    }

    pub fn by_label(&self, label: &str) -> Option<&TaskInfo> {
        self.tasks.iter().find(|t| t.label == label)
    }

    /// True when there is a dependency path from `from` to `to`.
    pub fn reaches(&self, from: TaskId, to: TaskId) -> bool {
        if from == to {
            return true;
        }
        // preds only point backwards, so walk from `to` towards lower ids
        let mut seen = vec![false; self.tasks.len()];
        let mut stack = vec![to];
        while let Some(t) = stack.pop() {
            for &p in &self.tasks[t.0].preds {
                if p == from {
                    return true;
                }
                if p.0 > from.0 && !seen[p.0] {
                    seen[p.0] = true;
                    stack.push(p);
                }
            }
        }
        false
    }
}

/// Access to the data of a running task, in the order the accesses were
/// declared at insertion.
pub struct TaskView {
    slots: Vec<Slot>,
    speculative: bool,
    worker: usize,
    _gates: Vec<parking_lot::ArcMutexGuard<parking_lot::RawMutex, ()>>,
}

impl TaskView {
    pub(crate) fn new(slots: Vec<Slot>, speculative: bool, worker: usize) -> Self {
        let mut gated: Vec<&Slot> = slots.iter().filter(|s| s.mode == AccessMode::AtomicWrite).collect();
        gated.sort_by_key(|s| s.handle);
        let gates = gated.into_iter().map(|s| Mutex::lock_arc(&s.cell.atomic_gate)).collect();
        TaskView {
            slots,
            speculative,
            worker,
            _gates: gates,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Whether this execution runs on shadow copies.
    pub fn is_speculative(&self) -> bool {
        self.speculative
    }

    pub fn worker(&self) -> usize {
        self.worker
    }

    pub fn mode(&self, index: usize) -> AccessMode {
        self.slots[index].mode
    }

    pub fn read<T: Any>(&self, index: usize) -> MappedRwLockReadGuard<'_, T> {
        let slot = &self.slots[index];
        let guard = slot.cell.value.read();
        check_type::<T>(guard.as_ref(), slot.handle);
        RwLockReadGuard::map(guard, |v| v.as_ref().and_then(|v| v.downcast_ref::<T>()).unwrap())
    }

    pub fn write<T: Any>(&self, index: usize) -> MappedRwLockWriteGuard<'_, T> {
        let slot = &self.slots[index];
        assert!(
            slot.mode.mutates(),
            "access {index} on {} was declared read-only",
            slot.handle
        );
        let guard = slot.cell.value.write();
        check_type::<T>(guard.as_ref(), slot.handle);
        RwLockWriteGuard::map(guard, |v| v.as_mut().and_then(|v| v.downcast_mut::<T>()).unwrap())
    }

    pub(crate) fn raw_slot(&self, index: usize) -> &Slot {
        &self.slots[index]
    }
}

fn check_type<T: Any>(value: Option<&Value>, handle: HandleId) {
    match value {
        None => panic!("{handle} has not been materialized"),
        Some(v) if !v.is::<T>() => panic!("{handle} holds a different type than {}", std::any::type_name::<T>()),
        Some(_) => {}
    }
}
