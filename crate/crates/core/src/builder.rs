//! Task insertion: plain STF insertion plus the generation of copy, twin and
//! select tasks when a task lands on top of live duplicates.

use std::collections::HashMap;
use std::sync::Arc;

use crate::engine::SpecGroup;
use crate::error::Error;
use crate::graph::{Activation, Body, GroupId, NewTask, Slot, TaskGraph, TaskId, TaskKind, TaskOutput, TaskView};
use crate::registry::{AccessMode, AccessRecord, CleanPredicate, DataRegistry, HandleId};

/// Everything generated by one insertion.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InsertionReceipt {
    pub main_task: TaskId,
    pub speculative_twin: Option<TaskId>,
    pub copies: Vec<TaskId>,
    pub selects: Vec<TaskId>,
    pub group: Option<GroupId>,
    /// All tasks created, in insertion order.
    pub created: Vec<TaskId>,
}

pub(crate) struct Builder<'a> {
    pub(crate) registry: &'a mut DataRegistry,
    pub(crate) graph: &'a mut TaskGraph,
}

/// A user task about to be inserted.
pub(crate) struct UserTask {
    pub(crate) label: String,
    pub(crate) accesses: Vec<AccessRecord>,
    pub(crate) body: Body,
}

impl<'a> Builder<'a> {
    pub(crate) fn new(registry: &'a mut DataRegistry, graph: &'a mut TaskGraph) -> Self {
        Builder { registry, graph }
    }

    fn validate(&self, accesses: &[AccessRecord]) -> Result<(), Error> {
        let mut seen = Vec::with_capacity(accesses.len());
        for a in accesses {
            if !self.registry.contains(a.handle) {
                return Err(Error::UnknownHandle(a.handle));
            }
            if seen.contains(&a.handle) {
                return Err(Error::RepeatedHandle(a.handle));
            }
            seen.push(a.handle);
        }
        Ok(())
    }

    fn slots(&self, accesses: &[AccessRecord]) -> Vec<Slot> {
        accesses
            .iter()
            .map(|a| Slot {
                handle: a.handle,
                cell: self.registry.cell(a.handle),
                mode: a.mode,
            })
            .collect()
    }

    /// Inserts one node, deriving its predecessors from the data frontiers.
    #[allow(clippy::too_many_arguments)]
    fn internal_insert(
        &mut self,
        kind: TaskKind,
        label: String,
        accesses: &[AccessRecord],
        body: Body,
        activation: Activation,
        group: Option<GroupId>,
        twin_of: Option<TaskId>,
    ) -> TaskId {
        let id = self.graph.next_task_id();
        let preds = self.registry.resolve_dependencies(id, accesses);
        let slots = self.slots(accesses);
        self.graph.add_task(NewTask {
            kind,
            label,
            slots,
            body,
            preds,
            activation,
            group,
            twin_of,
        })
    }

    fn new_group(&mut self, parents: Vec<GroupId>) -> GroupId {
        let id = GroupId(self.graph.groups.len());
        for &p in &parents {
            self.graph.group_mut(p).successors.push(id);
        }
        self.graph.groups.push(SpecGroup::new(id, parents));
        id
    }

    fn any_dead(&self, groups: &[GroupId]) -> bool {
        groups.iter().any(|&g| self.graph.group(g).is_dead())
    }

    /// Copy task filling `shadow` from `source`.
    fn insert_copy(&mut self, source: HandleId, shadow: HandleId, group: GroupId) -> TaskId {
        let duplicator = Arc::clone(&self.registry.info(source).expect("registered").duplicator);
        let body: Body = Arc::new(move |view: &TaskView| {
            let copied = {
                let src = view.raw_slot(0).cell.value.read();
                src.as_ref().map(|v| duplicator(&**v))
            };
            *view.raw_slot(1).cell.value.write() = copied;
            TaskOutput::none()
        });
        let accesses = [
            AccessRecord::new(source, AccessMode::Read),
            AccessRecord::new(shadow, AccessMode::Write),
        ];
        let id = self.internal_insert(
            TaskKind::Copy,
            format!("copy({source}->{shadow})"),
            &accesses,
            body,
            Activation::Undefined,
            Some(group),
            None,
        );
        self.graph.group_mut(group).copies.push(id);
        id
    }

    /// Select task overwriting `original` with `shadow`.
    fn insert_select(&mut self, original: HandleId, shadow: HandleId, group: GroupId) -> TaskId {
        let selector = Arc::clone(&self.registry.info(original).expect("registered").selector);
        let body: Body = Arc::new(move |view: &TaskView| {
            let src = view.raw_slot(1).cell.value.read();
            let mut dst = view.raw_slot(0).cell.value.write();
            if let (Some(dst), Some(src)) = (dst.as_mut(), src.as_ref()) {
                selector(&mut **dst, &**src);
            }
            TaskOutput::none()
        });
        let accesses = [
            AccessRecord::new(original, AccessMode::Write),
            AccessRecord::new(shadow, AccessMode::Read),
        ];
        let id = self.internal_insert(
            TaskKind::Select,
            format!("select({original}<-{shadow})"),
            &accesses,
            body,
            Activation::Undefined,
            Some(group),
            None,
        );
        self.graph.group_mut(group).selects.push(id);
        id
    }

    fn plain(&mut self, task: UserTask, kind: TaskKind, created: &mut Vec<TaskId>) -> TaskId {
        let id = self.internal_insert(kind, task.label, &task.accesses, task.body, Activation::Enabled, None, None);
        created.push(id);
        id
    }

    /// Inserts a task that is certain about its accesses.
    pub(crate) fn insert_normal(&mut self, task: UserTask) -> Result<InsertionReceipt, Error> {
        self.validate(&task.accesses)?;
        if let Some(a) = task.accesses.iter().find(|a| a.mode == AccessMode::MaybeWrite) {
            return Err(Error::MaybeWriteInNormalTask(a.handle));
        }
        self.registry.clean_duplicates(&task.accesses, CleanPredicate::ReadConflict);
        let mut created = Vec::new();

        let groups = self.registry.find_spec_groups(&task.accesses);
        if groups.is_empty() {
            let main = self.plain(task, TaskKind::Normal, &mut created);
            return Ok(receipt(main, created));
        }
        if self.any_dead(&groups) {
            self.registry.clean_duplicates(&task.accesses, CleanPredicate::Any);
            let main = self.plain(task, TaskKind::Normal, &mut created);
            return Ok(receipt(main, created));
        }

        let gid = self.new_group(groups);
        let mut copies = Vec::new();
        let mut twin_map: HashMap<HandleId, HandleId> = HashMap::new();
        let mut select_pairs = Vec::new();
        for a in &task.accesses {
            match self.registry.live_duplicate(a.handle) {
                Some(entry) => {
                    twin_map.insert(a.handle, entry.shadow);
                    if a.mode.mutates() {
                        select_pairs.push((a.handle, entry.shadow));
                    }
                }
                None if a.mode.mutates() => {
                    let shadow = self.registry.create_shadow(a.handle);
                    let copy = self.insert_copy(a.handle, shadow, gid);
                    copies.push(copy);
                    created.push(copy);
                    twin_map.insert(a.handle, shadow);
                    select_pairs.push((a.handle, shadow));
                }
                None => {}
            }
        }

        let main = self.internal_insert(
            TaskKind::Normal,
            task.label.clone(),
            &task.accesses,
            Arc::clone(&task.body),
            Activation::Undefined,
            Some(gid),
            None,
        );
        created.push(main);
        self.graph.group_mut(gid).originals.push(main);

        let twin = self.insert_twin(&task, main, gid, &twin_map);
        created.push(twin);

        let mut selects = Vec::new();
        for (original, shadow) in select_pairs {
            let s = self.insert_select(original, shadow, gid);
            selects.push(s);
            created.push(s);
        }

        let written: Vec<AccessRecord> = task.accesses.iter().filter(|a| a.mode.mutates()).copied().collect();
        self.registry.clean_duplicates(&written, CleanPredicate::Any);

        Ok(InsertionReceipt {
            main_task: main,
            speculative_twin: Some(twin),
            copies,
            selects,
            group: Some(gid),
            created,
        })
    }

    /// Inserts a task that reports whether it wrote its maybe-write data.
    pub(crate) fn insert_uncertain(&mut self, task: UserTask) -> Result<InsertionReceipt, Error> {
        self.validate(&task.accesses)?;
        if !task.accesses.iter().any(|a| a.mode == AccessMode::MaybeWrite) {
            return Err(Error::NoMaybeWrite);
        }
        self.registry.clean_duplicates(&task.accesses, CleanPredicate::ReadConflict);
        let mut created = Vec::new();
        let groups = self.registry.find_spec_groups(&task.accesses);

        if groups.is_empty() || self.any_dead(&groups) {
            self.registry.clean_duplicates(&task.accesses, CleanPredicate::Any);
            let gid = self.new_group(Vec::new());
            let mut copies = Vec::new();
            let mut l1 = Vec::new();
            for a in task.accesses.iter().filter(|a| a.mode == AccessMode::MaybeWrite) {
                let shadow = self.registry.create_shadow(a.handle);
                let copy = self.insert_copy(a.handle, shadow, gid);
                copies.push(copy);
                created.push(copy);
                l1.push((a.handle, shadow));
            }
            let main = self.internal_insert(
                TaskKind::Uncertain,
                task.label,
                &task.accesses,
                task.body,
                Activation::Enabled,
                Some(gid),
                None,
            );
            created.push(main);
            self.graph.group_mut(gid).uncertain_tasks.push(main);
            for (original, shadow) in l1 {
                self.registry.publish_duplicate(original, shadow, gid)?;
            }
            return Ok(InsertionReceipt {
                main_task: main,
                speculative_twin: None,
                copies,
                selects: Vec::new(),
                group: Some(gid),
                created,
            });
        }

        let gid = self.new_group(groups);
        let mut copies = Vec::new();
        let mut twin_map: HashMap<HandleId, HandleId> = HashMap::new();
        let mut select_pairs = Vec::new();
        let mut carries = Vec::new();

        // shadows the twin works on, fresh ones first
        for a in task.accesses.iter().filter(|a| a.mode == AccessMode::MaybeWrite) {
            let in_dup = match self.registry.live_duplicate(a.handle) {
                Some(entry) => entry.shadow,
                None => {
                    let shadow = self.registry.create_shadow(a.handle);
                    let copy = self.insert_copy(a.handle, shadow, gid);
                    copies.push(copy);
                    created.push(copy);
                    shadow
                }
            };
            twin_map.insert(a.handle, in_dup);
            select_pairs.push((a.handle, in_dup));
        }
        // the next link speculates on the value before this task
        for a in task.accesses.iter().filter(|a| a.mode == AccessMode::MaybeWrite) {
            let in_dup = twin_map[&a.handle];
            let carry = self.registry.create_shadow(a.handle);
            let copy = self.insert_copy(in_dup, carry, gid);
            copies.push(copy);
            created.push(copy);
            carries.push((a.handle, carry));
        }
        for a in &task.accesses {
            if a.mode == AccessMode::MaybeWrite {
                continue;
            }
            match self.registry.live_duplicate(a.handle) {
                Some(entry) => {
                    twin_map.insert(a.handle, entry.shadow);
                    if a.mode.mutates() {
                        select_pairs.push((a.handle, entry.shadow));
                    }
                }
                None if a.mode.mutates() => {
                    let shadow = self.registry.create_shadow(a.handle);
                    let copy = self.insert_copy(a.handle, shadow, gid);
                    copies.push(copy);
                    created.push(copy);
                    twin_map.insert(a.handle, shadow);
                    select_pairs.push((a.handle, shadow));
                }
                None => {}
            }
        }

        let main = self.internal_insert(
            TaskKind::Uncertain,
            task.label.clone(),
            &task.accesses,
            Arc::clone(&task.body),
            Activation::Undefined,
            Some(gid),
            None,
        );
        created.push(main);
        {
            let group = self.graph.group_mut(gid);
            group.uncertain_tasks.push(main);
            group.originals.push(main);
        }

        let twin = self.insert_twin(&task, main, gid, &twin_map);
        created.push(twin);

        let mut selects = Vec::new();
        for (original, shadow) in select_pairs {
            let s = self.insert_select(original, shadow, gid);
            selects.push(s);
            created.push(s);
        }

        let written: Vec<AccessRecord> = task.accesses.iter().filter(|a| a.mode.mutates()).copied().collect();
        self.registry.clean_duplicates(&written, CleanPredicate::Any);
        for (original, carry) in carries {
            self.registry.publish_duplicate(original, carry, gid)?;
        }

        Ok(InsertionReceipt {
            main_task: main,
            speculative_twin: Some(twin),
            copies,
            selects,
            group: Some(gid),
            created,
        })
    }

    /// Speculative duplicate of `task`: duplicated data go to their shadow
    /// with the same mode, everything else is shared read-only.
    fn insert_twin(
        &mut self,
        task: &UserTask,
        original: TaskId,
        gid: GroupId,
        twin_map: &HashMap<HandleId, HandleId>,
    ) -> TaskId {
        let accesses: Vec<AccessRecord> = task
            .accesses
            .iter()
            .map(|a| match twin_map.get(&a.handle) {
                Some(&shadow) => AccessRecord::new(shadow, a.mode),
                None => AccessRecord::new(a.handle, AccessMode::Read),
            })
            .collect();
        for a in &task.accesses {
            if a.mode.is_read() && twin_map.contains_key(&a.handle) {
                self.registry.mark_read_used(a.handle);
            }
        }
        let twin = self.internal_insert(
            TaskKind::Speculative,
            format!("{}'", task.label),
            &accesses,
            Arc::clone(&task.body),
            Activation::Undefined,
            Some(gid),
            Some(original),
        );
        self.graph.group_mut(gid).twins.push(twin);
        twin
    }
}

fn receipt(main: TaskId, created: Vec<TaskId>) -> InsertionReceipt {
    InsertionReceipt {
        main_task: main,
        created,
        ..Default::default()
    }
}
