//! Data handles, per-datum STF frontiers and the list of live duplicates.
//!
//! Every user datum seen by the runtime gets a [`HandleId`]. The registry
//! keeps, for each handle, the frontier of tasks that last touched it, which
//! is all that is needed to derive sequential-task-flow edges: a read waits
//! on the last exclusive writer, a write waits on everything since. Shadow
//! handles created for speculation live in the same table with
//! `duplicate_of` pointing at the original.

use std::any::Any;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::marker::PhantomData;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::error::Error;
use crate::graph::{GroupId, TaskId};

/// Type-erased user value stored in a [`DataCell`].
pub type Value = Box<dyn Any + Send + Sync>;

/// Deep-copy capability used by copy tasks.
pub type Duplicator = Arc<dyn Fn(&(dyn Any + Send + Sync)) -> Value + Send + Sync>;

/// Overwrite-original-with-duplicate capability used by select tasks.
pub type Selector = Arc<dyn Fn(&mut (dyn Any + Send + Sync), &(dyn Any + Send + Sync)) + Send + Sync>;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HandleId(pub(crate) u64);

impl HandleId {
    pub fn index(self) -> u64 {
        self.0
    }
}

impl fmt::Display for HandleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

/// How a task touches a datum.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum AccessMode {
    Read,
    Write,
    /// Only legal on uncertain tasks: the task reports whether it wrote.
    MaybeWrite,
    /// Unordered among atomic writers; bodies are serialized per datum.
    AtomicWrite,
    /// Unordered but mutually exclusive among commuting tasks.
    Commute,
}

impl AccessMode {
    pub fn is_read(self) -> bool {
        matches!(self, AccessMode::Read)
    }

    pub fn mutates(self) -> bool {
        !self.is_read()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AccessMode::Read => "read",
            AccessMode::Write => "write",
            AccessMode::MaybeWrite => "maybe-write",
            AccessMode::AtomicWrite => "atomic-write",
            AccessMode::Commute => "commute",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct AccessRecord {
    pub handle: HandleId,
    pub mode: AccessMode,
}

impl AccessRecord {
    pub fn new(handle: HandleId, mode: AccessMode) -> Self {
        AccessRecord { handle, mode }
    }
}

/// Storage behind a handle. Shadow cells start empty and are filled by
/// their copy task.
pub struct DataCell {
    pub(crate) value: RwLock<Option<Value>>,
    pub(crate) atomic_gate: Arc<Mutex<()>>,
}

impl DataCell {
    pub(crate) fn new(value: Value) -> Self {
        DataCell {
            value: RwLock::new(Some(value)),
            atomic_gate: Arc::new(Mutex::new(())),
        }
    }

    pub(crate) fn empty() -> Self {
        DataCell {
            value: RwLock::new(None),
            atomic_gate: Arc::new(Mutex::new(())),
        }
    }

    pub fn is_materialized(&self) -> bool {
        self.value.read().is_some()
    }
}

impl fmt::Debug for DataCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DataCell")
            .field("materialized", &self.is_materialized())
            .finish()
    }
}

/// User-owned storage that can be handed to a runtime exactly once.
pub struct Datum<T> {
    cell: Arc<DataCell>,
    _marker: PhantomData<fn() -> T>,
}

impl<T: Any + Send + Sync> Datum<T> {
    pub fn new(value: T) -> Self {
        Datum {
            cell: Arc::new(DataCell::new(Box::new(value))),
            _marker: PhantomData,
        }
    }

    pub(crate) fn cell(&self) -> &Arc<DataCell> {
        &self.cell
    }
}

impl<T> Clone for Datum<T> {
    fn clone(&self) -> Self {
        Datum {
            cell: Arc::clone(&self.cell),
            _marker: PhantomData,
        }
    }
}

/// Typed handle to a registered datum.
pub struct Data<T> {
    id: HandleId,
    cell: Arc<DataCell>,
    _marker: PhantomData<fn() -> T>,
}

impl<T> Clone for Data<T> {
    fn clone(&self) -> Self {
        Data {
            id: self.id,
            cell: Arc::clone(&self.cell),
            _marker: PhantomData,
        }
    }
}

impl<T> fmt::Debug for Data<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Data({})", self.id)
    }
}

impl<T: Any + Send + Sync> Data<T> {
    pub(crate) fn from_parts(id: HandleId, cell: Arc<DataCell>) -> Self {
        Data {
            id,
            cell,
            _marker: PhantomData,
        }
    }

    pub fn id(&self) -> HandleId {
        self.id
    }

    pub fn read(&self) -> AccessRecord {
        AccessRecord::new(self.id, AccessMode::Read)
    }

    pub fn write(&self) -> AccessRecord {
        AccessRecord::new(self.id, AccessMode::Write)
    }

    pub fn maybe_write(&self) -> AccessRecord {
        AccessRecord::new(self.id, AccessMode::MaybeWrite)
    }

    pub fn atomic_write(&self) -> AccessRecord {
        AccessRecord::new(self.id, AccessMode::AtomicWrite)
    }

    pub fn commute(&self) -> AccessRecord {
        AccessRecord::new(self.id, AccessMode::Commute)
    }

    /// Runs `f` on the current value. Only meaningful once the tasks writing
    /// this datum have completed.
    pub fn with<R>(&self, f: impl FnOnce(&T) -> R) -> R {
        let guard = self.cell.value.read();
        let value = guard
            .as_ref()
            .and_then(|v| v.downcast_ref::<T>())
            .expect("datum holds a value of the registered type");
        f(value)
    }

    pub fn get(&self) -> T
    where
        T: Clone,
    {
        self.with(T::clone)
    }
}

#[derive(Clone, Debug, Default)]
enum Frontier {
    #[default]
    Empty,
    Exclusive(TaskId),
    /// Same-class non-exclusive accesses (read, commute or atomic) since the
    /// last change of class, and what they themselves waited on.
    Shared {
        class: AccessMode,
        members: Vec<TaskId>,
        prev: Vec<TaskId>,
    },
}

pub(crate) struct HandleInfo {
    pub(crate) cell: Arc<DataCell>,
    pub(crate) duplicator: Duplicator,
    pub(crate) selector: Selector,
    pub(crate) duplicate_of: Option<HandleId>,
    frontier: Frontier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DuplicateEntry {
    pub original: HandleId,
    pub shadow: HandleId,
    pub group: GroupId,
    /// Set once a speculative task has read the shadow.
    pub read_used: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CleanPredicate {
    /// Drop shadows already read by a speculative task when the new task
    /// accesses the original in a non-read mode.
    ReadConflict,
    /// Drop every shadow of the given data.
    Any,
}

#[derive(Default)]
pub struct DataRegistry {
    handles: BTreeMap<HandleId, HandleInfo>,
    identities: HashMap<usize, HandleId>,
    duplicates: BTreeMap<HandleId, DuplicateEntry>,
    next_id: u64,
}

impl DataRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a datum whose identity is the address of its cell.
    pub fn register_data(
        &mut self,
        cell: Arc<DataCell>,
        duplicator: Duplicator,
        selector: Selector,
    ) -> Result<HandleId, Error> {
        let identity = Arc::as_ptr(&cell) as usize;
        if let Some(&existing) = self.identities.get(&identity) {
            return Err(Error::DuplicateRegistration { existing });
        }
        let id = self.fresh_id();
        self.identities.insert(identity, id);
        self.handles.insert(
            id,
            HandleInfo {
                cell,
                duplicator,
                selector,
                duplicate_of: None,
                frontier: Frontier::Empty,
            },
        );
        Ok(id)
    }

    pub fn register_value<T>(&mut self, datum: &Datum<T>) -> Result<Data<T>, Error>
    where
        T: Any + Clone + Send + Sync,
    {
        let id = self.register_data(
            Arc::clone(datum.cell()),
            clone_duplicator::<T>(),
            clone_selector::<T>(),
        )?;
        Ok(Data::from_parts(id, Arc::clone(datum.cell())))
    }

    fn fresh_id(&mut self) -> HandleId {
        let id = HandleId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn contains(&self, handle: HandleId) -> bool {
        self.handles.contains_key(&handle)
    }

    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    pub fn duplicate_of(&self, handle: HandleId) -> Option<HandleId> {
        self.handles.get(&handle).and_then(|h| h.duplicate_of)
    }

    pub(crate) fn info(&self, handle: HandleId) -> Option<&HandleInfo> {
        self.handles.get(&handle)
    }

    pub(crate) fn cell(&self, handle: HandleId) -> Arc<DataCell> {
        Arc::clone(&self.handles[&handle].cell)
    }

    /// Computes the STF predecessors of `task` and records it in the
    /// frontier of every accessed datum.
    pub fn resolve_dependencies(&mut self, task: TaskId, accesses: &[AccessRecord]) -> Vec<TaskId> {
        let mut preds = Vec::new();
        for access in accesses {
            let info = self
                .handles
                .get_mut(&access.handle)
                .expect("resolve_dependencies on an unregistered handle");
            let frontier = std::mem::take(&mut info.frontier);
            let (deps, next) = advance(frontier, task, access.mode);
            info.frontier = next;
            preds.extend(deps);
        }
        preds.retain(|&p| p != task);
        preds.sort_unstable();
        preds.dedup();
        preds
    }

    /// Allocates a shadow handle for `original` without publishing it.
    pub(crate) fn create_shadow(&mut self, original: HandleId) -> HandleId {
        let (duplicator, selector, root) = {
            let info = &self.handles[&original];
            (
                Arc::clone(&info.duplicator),
                Arc::clone(&info.selector),
                info.duplicate_of.unwrap_or(original),
            )
        };
        let id = self.fresh_id();
        self.handles.insert(
            id,
            HandleInfo {
                cell: Arc::new(DataCell::empty()),
                duplicator,
                selector,
                duplicate_of: Some(root),
                frontier: Frontier::Empty,
            },
        );
        id
    }

    /// Creates a shadow of `original` and publishes it in the duplicates list
    /// on behalf of `group`. The bytes are copied later by a copy task.
    pub fn duplicate_handle(&mut self, original: HandleId, group: GroupId) -> Result<HandleId, Error> {
        if !self.contains(original) {
            return Err(Error::UnknownHandle(original));
        }
        if let Some(entry) = self.duplicates.get(&original) {
            return Err(Error::AlreadyDuplicated {
                original,
                shadow: entry.shadow,
            });
        }
        if self.duplicate_of(original).is_some() {
            return Err(Error::ShadowOfShadow(original));
        }
        let shadow = self.create_shadow(original);
        self.duplicates.insert(
            original,
            DuplicateEntry {
                original,
                shadow,
                group,
                read_used: false,
            },
        );
        Ok(shadow)
    }

    pub(crate) fn publish_duplicate(&mut self, original: HandleId, shadow: HandleId, group: GroupId) -> Result<(), Error> {
        if let Some(entry) = self.duplicates.get(&original) {
            return Err(Error::AlreadyDuplicated {
                original,
                shadow: entry.shadow,
            });
        }
        self.duplicates.insert(
            original,
            DuplicateEntry {
                original,
                shadow,
                group,
                read_used: false,
            },
        );
        Ok(())
    }

    pub fn live_duplicate(&self, original: HandleId) -> Option<&DuplicateEntry> {
        self.duplicates.get(&original)
    }

    pub fn duplicates(&self) -> impl Iterator<Item = &DuplicateEntry> {
        self.duplicates.values()
    }

    pub(crate) fn mark_read_used(&mut self, original: HandleId) {
        if let Some(entry) = self.duplicates.get_mut(&original) {
            entry.read_used = true;
        }
    }

    /// Removes the duplicates of the accessed data matching `predicate`.
    pub fn clean_duplicates(&mut self, accesses: &[AccessRecord], predicate: CleanPredicate) -> Vec<DuplicateEntry> {
        let mut removed = Vec::new();
        for access in accesses {
            let hit = match (predicate, self.duplicates.get(&access.handle)) {
                (_, None) => false,
                (CleanPredicate::Any, Some(_)) => true,
                (CleanPredicate::ReadConflict, Some(entry)) => entry.read_used && access.mode.mutates(),
            };
            if hit {
                removed.extend(self.duplicates.remove(&access.handle));
            }
        }
        removed
    }

    /// Groups owning a live duplicate of any accessed datum, sorted.
    pub fn find_spec_groups(&self, accesses: &[AccessRecord]) -> Vec<GroupId> {
        let mut groups: Vec<GroupId> = accesses
            .iter()
            .filter_map(|a| self.duplicates.get(&a.handle).map(|e| e.group))
            .collect();
        groups.sort_unstable();
        groups.dedup();
        groups
    }
}

fn advance(frontier: Frontier, task: TaskId, mode: AccessMode) -> (Vec<TaskId>, Frontier) {
    match mode {
        AccessMode::Write | AccessMode::MaybeWrite => {
            let deps = match frontier {
                Frontier::Empty => Vec::new(),
                Frontier::Exclusive(w) => vec![w],
                Frontier::Shared { members, .. } => members,
            };
            (deps, Frontier::Exclusive(task))
        }
        class => match frontier {
            Frontier::Empty => (
                Vec::new(),
                Frontier::Shared {
                    class,
                    members: vec![task],
                    prev: Vec::new(),
                },
            ),
            Frontier::Exclusive(w) => (
                vec![w],
                Frontier::Shared {
                    class,
                    members: vec![task],
                    prev: vec![w],
                },
            ),
            Frontier::Shared {
                class: current,
                mut members,
                prev,
            } if current == class => {
                members.push(task);
                (
                    prev.clone(),
                    Frontier::Shared {
                        class,
                        members,
                        prev,
                    },
                )
            }
            Frontier::Shared { members, .. } => (
                members.clone(),
                Frontier::Shared {
                    class,
                    members: vec![task],
                    prev: members,
                },
            ),
        },
    }
}

pub(crate) fn clone_duplicator<T: Any + Clone + Send + Sync>() -> Duplicator {
    Arc::new(|src| {
        let value = src.downcast_ref::<T>().expect("duplicator type mismatch");
        Box::new(value.clone())
    })
}

pub(crate) fn clone_selector<T: Any + Clone + Send + Sync>() -> Selector {
    Arc::new(|dst, src| {
        let src = src.downcast_ref::<T>().expect("selector type mismatch");
        let dst = dst.downcast_mut::<T>().expect("selector type mismatch");
        dst.clone_from(src);
    })
}

pub(crate) fn custom_duplicator<T, F>(f: F) -> Duplicator
where
    T: Any + Send + Sync,
    F: Fn(&T) -> T + Send + Sync + 'static,
{
    Arc::new(move |src| {
        let value = src.downcast_ref::<T>().expect("duplicator type mismatch");
        Box::new(f(value))
    })
}

pub(crate) fn custom_selector<T, F>(f: F) -> Selector
where
    T: Any + Send + Sync,
    F: Fn(&mut T, &T) + Send + Sync + 'static,
{
    Arc::new(move |dst, src| {
        let src = src.downcast_ref::<T>().expect("selector type mismatch");
        let dst = dst.downcast_mut::<T>().expect("selector type mismatch");
        f(dst, src)
    })
}
