//! Speculative task groups and their resolution.
//!
//! A group is created each time a task is inserted on top of live
//! duplicates (or, for the first uncertain task of a chain, when its data is
//! duplicated for later speculation). The group's twin ran on shadow data
//! that is only correct if every parent group *succeeded*: its main
//! uncertain task, or the twin standing in for it, left the data untouched.
//!
//! * `validity` is whether the twin's inputs were correct. Known once all parents
//!   have an outcome (and this group was enabled).
//! * `outcome` is validity and no write by the main task. Children read the
//!   shadows this group carried forward, so their validity is the
//!   conjunction of their parents' outcomes.
//!
//! On valid: originals are disabled and selects enabled. On invalid: twins
//! are disabled (or left to finish unused), originals enabled, selects
//! disabled. Failure is never revisited, which makes every chain predictive:
//! once a link fails, everything downstream falls back to the normal path.

use std::fmt;
use std::sync::Arc;

use crate::graph::{Activation, GroupId, TaskGraph, TaskId, TaskKind};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum GroupState {
    Undefined,
    Enabled,
    Disabled,
}

#[derive(Clone, Debug)]
pub struct SpecGroup {
    pub id: GroupId,
    pub copies: Vec<TaskId>,
    pub uncertain_tasks: Vec<TaskId>,
    /// Normal-path tasks shadowed by a twin.
    pub originals: Vec<TaskId>,
    pub twins: Vec<TaskId>,
    pub selects: Vec<TaskId>,
    pub parents: Vec<GroupId>,
    pub successors: Vec<GroupId>,
    pub state: GroupState,
    /// Some uncertain task of the group (or its valid twin) wrote.
    pub failed: bool,
    pub validity: Option<bool>,
    pub outcome: Option<bool>,
    pub(crate) main_result: Option<bool>,
    pub(crate) twin_result: Option<bool>,
}

impl SpecGroup {
    pub(crate) fn new(id: GroupId, parents: Vec<GroupId>) -> Self {
        SpecGroup {
            id,
            copies: Vec::new(),
            uncertain_tasks: Vec::new(),
            originals: Vec::new(),
            twins: Vec::new(),
            selects: Vec::new(),
            parents,
            successors: Vec::new(),
            state: GroupState::Undefined,
            failed: false,
            validity: None,
            outcome: None,
            main_result: None,
            twin_result: None,
        }
    }

    /// A group without a twin: the head of a speculation chain.
    pub fn is_root(&self) -> bool {
        self.twins.is_empty()
    }

    pub fn size(&self) -> usize {
        self.copies.len() + self.uncertain_tasks.len() + self.originals.len() + self.twins.len() + self.selects.len()
    }

    /// Known not to lead anywhere: new insertions must not speculate on it.
    pub fn is_dead(&self) -> bool {
        self.state == GroupState::Disabled || self.outcome == Some(false)
    }

    /// Tasks whose readiness triggers the activation decision.
    pub(crate) fn entry_tasks(&self) -> &[TaskId] {
        if self.copies.is_empty() {
            &self.twins
        } else {
            &self.copies
        }
    }
}

/// Inputs available to an activation policy.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct ActivationContext {
    pub ready_tasks: usize,
    pub workers: usize,
    pub group_size: usize,
}

/// Decides whether a group speculates. Must be pure.
#[derive(Clone)]
pub struct ActivationPolicy(Arc<dyn Fn(ActivationContext) -> bool + Send + Sync>);

impl ActivationPolicy {
    pub fn new(f: impl Fn(ActivationContext) -> bool + Send + Sync + 'static) -> Self {
        ActivationPolicy(Arc::new(f))
    }

    pub fn always() -> Self {
        Self::new(|_| true)
    }

    pub fn never() -> Self {
        Self::new(|_| false)
    }

    /// Speculate only while there are fewer ready tasks than workers.
    pub fn when_underloaded() -> Self {
        Self::new(|ctx| ctx.ready_tasks < ctx.workers)
    }

    pub fn decide(&self, ctx: ActivationContext) -> bool {
        (self.0)(ctx)
    }
}

impl Default for ActivationPolicy {
    fn default() -> Self {
        Self::always()
    }
}

impl fmt::Debug for ActivationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ActivationPolicy(..)")
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ChangeOutcome {
    Applied,
    /// The body had already started; it runs to completion unused.
    TooLate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationChange {
    pub task: TaskId,
    pub kind: TaskKind,
    pub group: GroupId,
    pub to: Activation,
    pub outcome: ChangeOutcome,
}

/// Collects activation changes while mutating the graph.
pub(crate) struct Resolver<'g> {
    graph: &'g mut TaskGraph,
    pub(crate) changes: Vec<ActivationChange>,
    pub(crate) wasted: usize,
}

impl<'g> Resolver<'g> {
    pub(crate) fn new(graph: &'g mut TaskGraph) -> Self {
        Resolver {
            graph,
            changes: Vec::new(),
            wasted: 0,
        }
    }

    fn enable(&mut self, group: GroupId, task: TaskId) {
        let node = self.graph.task_mut(task);
        if node.activation == Activation::Undefined {
            node.activation = Activation::Enabled;
            let kind = node.kind;
            self.changes.push(ActivationChange {
                task,
                kind,
                group,
                to: Activation::Enabled,
                outcome: ChangeOutcome::Applied,
            });
        }
    }

    fn disable(&mut self, group: GroupId, task: TaskId) -> ChangeOutcome {
        let node = self.graph.task_mut(task);
        let kind = node.kind;
        if node.status.has_started() {
            self.changes.push(ActivationChange {
                task,
                kind,
                group,
                to: Activation::Disabled,
                outcome: ChangeOutcome::TooLate,
            });
            return ChangeOutcome::TooLate;
        }
        if node.activation != Activation::Disabled {
            node.activation = Activation::Disabled;
            self.changes.push(ActivationChange {
                task,
                kind,
                group,
                to: Activation::Disabled,
                outcome: ChangeOutcome::Applied,
            });
        }
        ChangeOutcome::Applied
    }

    pub(crate) fn decide(&mut self, gid: GroupId, policy: &ActivationPolicy, ready_tasks: usize, workers: usize) {
        let group = self.graph.group(gid);
        assert_eq!(group.state, GroupState::Undefined, "{gid} decided twice");
        let doomed = group.validity == Some(false)
            || group.parents.iter().any(|&p| self.graph.group(p).is_dead());
        let enable = !doomed
            && policy.decide(ActivationContext {
                ready_tasks,
                workers,
                group_size: group.size(),
            });
        if enable {
            self.graph.group_mut(gid).state = GroupState::Enabled;
            let group = self.graph.group(gid);
            let to_enable: Vec<_> = group.copies.iter().chain(&group.twins).copied().collect();
            for t in to_enable {
                self.enable(gid, t);
            }
        } else {
            self.graph.group_mut(gid).state = GroupState::Disabled;
            if self.graph.group(gid).validity.is_none() {
                self.invalidate(gid);
            } else {
                let copies = self.graph.group(gid).copies.clone();
                for t in copies {
                    self.disable(gid, t);
                }
            }
        }
        self.settle(gid);
    }

    /// Records the wrote-flag of an uncertain task or of a twin standing in
    /// for one, then settles the group and everything downstream.
    pub(crate) fn record_completion(&mut self, gid: GroupId, task: TaskId, wrote: bool) {
        let group = self.graph.group_mut(gid);
        if group.uncertain_tasks.contains(&task) {
            group.main_result = Some(wrote);
            if wrote && group.validity != Some(true) {
                // the normal path ran this one: its write is the real one
                group.failed = group.failed || group.validity == Some(false) || group.is_root();
            }
        } else if group.twins.contains(&task) {
            group.twin_result = Some(wrote);
        }
        self.settle(gid);
    }

    fn validate(&mut self, gid: GroupId) {
        self.graph.group_mut(gid).validity = Some(true);
        let group = self.graph.group(gid);
        let originals = group.originals.clone();
        let selects = group.selects.clone();
        for t in originals {
            let outcome = self.disable(gid, t);
            debug_assert_eq!(outcome, ChangeOutcome::Applied, "original started before its group resolved");
        }
        for t in selects {
            self.enable(gid, t);
        }
    }

    fn invalidate(&mut self, gid: GroupId) {
        let group = self.graph.group_mut(gid);
        group.validity = Some(false);
        if group.state == GroupState::Undefined {
            group.state = GroupState::Disabled;
        }
        let group = self.graph.group(gid);
        let twins = group.twins.clone();
        let copies = group.copies.clone();
        let originals = group.originals.clone();
        let selects = group.selects.clone();
        for t in twins {
            if self.disable(gid, t) == ChangeOutcome::TooLate {
                self.wasted += 1;
            }
        }
        for t in copies {
            let node = self.graph.task(t);
            if !node.status.has_started() {
                self.disable(gid, t);
            }
        }
        for t in originals {
            self.enable(gid, t);
        }
        for t in selects {
            self.disable(gid, t);
        }
    }

    /// Updates validity and outcome of one group. Returns true when the
    /// outcome became known during this call.
    fn settle_one(&mut self, gid: GroupId) -> bool {
        let group = self.graph.group(gid);
        if group.validity.is_none() {
            let parent_outcomes: Vec<Option<bool>> =
                group.parents.iter().map(|&p| self.graph.group(p).outcome).collect();
            if group.state == GroupState::Disabled || parent_outcomes.contains(&Some(false)) {
                self.invalidate(gid);
            } else if group.state == GroupState::Enabled && parent_outcomes.iter().all(|o| *o == Some(true)) {
                self.validate(gid);
            }
        }

        let group = self.graph.group_mut(gid);
        if group.validity == Some(false) && group.main_result == Some(true) {
            group.failed = true;
        }
        if group.outcome.is_some() {
            return false;
        }
        let outcome = match group.validity {
            None => None,
            Some(false) => Some(false),
            Some(true) if group.uncertain_tasks.is_empty() => Some(true),
            Some(true) => {
                let effective = if group.is_root() {
                    group.main_result
                } else {
                    group.twin_result
                };
                effective.map(|wrote| {
                    if wrote {
                        group.failed = true;
                    }
                    !wrote
                })
            }
        };
        group.outcome = outcome;
        outcome.is_some()
    }

    fn settle(&mut self, gid: GroupId) {
        if self.settle_one(gid) {
            self.propagate(gid);
        }
    }

    /// Depth-first walk over successor groups, settling each once.
    pub(crate) fn propagate(&mut self, gid: GroupId) -> Vec<GroupId> {
        let mut visited = Vec::new();
        let mut seen = vec![false; self.graph.groups.len()];
        let mut stack: Vec<GroupId> = self.graph.group(gid).successors.iter().rev().copied().collect();
        while let Some(g) = stack.pop() {
            if seen[g.0] {
                continue;
            }
            seen[g.0] = true;
            visited.push(g);
            self.settle_one(g);
            stack.extend(self.graph.group(g).successors.iter().rev().copied());
        }
        visited
    }
}

/// Takes the activation decision for a group whose first entry task became
/// ready.
pub(crate) fn decide_activation(
    graph: &mut TaskGraph,
    gid: GroupId,
    policy: &ActivationPolicy,
    ready_tasks: usize,
    workers: usize,
) -> (Vec<ActivationChange>, usize) {
    let mut r = Resolver::new(graph);
    r.decide(gid, policy, ready_tasks, workers);
    (r.changes, r.wasted)
}

/// Applies the wrote-flag reported by `task` to its group.
pub(crate) fn resolve_uncertain_completion(
    graph: &mut TaskGraph,
    gid: GroupId,
    task: TaskId,
    wrote: bool,
) -> (Vec<ActivationChange>, usize) {
    let mut r = Resolver::new(graph);
    r.record_completion(gid, task, wrote);
    (r.changes, r.wasted)
}

#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn propagate_to_successors(graph: &mut TaskGraph, gid: GroupId) -> (Vec<GroupId>, Vec<ActivationChange>) {
    let mut r = Resolver::new(graph);
    let visited = r.propagate(gid);
    (visited, r.changes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NewTask, TaskOutput};

    fn add(graph: &mut TaskGraph, kind: TaskKind, label: &str, activation: Activation, group: Option<GroupId>) -> TaskId {
        graph.add_task(NewTask {
            kind,
            label: label.into(),
            slots: Vec::new(),
            body: Arc::new(|_| TaskOutput::none()),
            preds: Vec::new(),
            activation,
            group,
            twin_of: None,
        })
    }

    fn add_group(graph: &mut TaskGraph, parents: &[GroupId]) -> GroupId {
        let id = GroupId(graph.groups.len());
        graph.groups.push(SpecGroup::new(id, parents.to_vec()));
        for &p in parents {
            graph.group_mut(p).successors.push(id);
        }
        id
    }

    /// copy, B (root group) then C / C' / select speculating over B.
    fn fig2() -> (TaskGraph, GroupId, GroupId, [TaskId; 5]) {
        let mut g = TaskGraph::default();
        let root = add_group(&mut g, &[]);
        let copy = add(&mut g, TaskKind::Copy, "copy", Activation::Undefined, Some(root));
        let b = add(&mut g, TaskKind::Uncertain, "B", Activation::Enabled, Some(root));
        g.group_mut(root).copies.push(copy);
        g.group_mut(root).uncertain_tasks.push(b);
        let child = add_group(&mut g, &[root]);
        let c = add(&mut g, TaskKind::Normal, "C", Activation::Undefined, Some(child));
        let c2 = add(&mut g, TaskKind::Speculative, "C'", Activation::Undefined, Some(child));
        let sel = add(&mut g, TaskKind::Select, "select", Activation::Undefined, Some(child));
        let grp = g.group_mut(child);
        grp.originals.push(c);
        grp.twins.push(c2);
        grp.selects.push(sel);
        (g, root, child, [copy, b, c, c2, sel])
    }

    fn act(g: &TaskGraph, t: TaskId) -> Activation {
        g.task(t).activation
    }

    #[test]
    fn default_policy_enables() {
        let (mut g, root, _, [copy, ..]) = fig2();
        decide_activation(&mut g, root, &ActivationPolicy::default(), 0, 4);
        assert_eq!(g.group(root).state, GroupState::Enabled);
        assert_eq!(act(&g, copy), Activation::Enabled);
    }

    #[test]
    fn underloaded_policy_with_busy_queue_disables() {
        let policy = ActivationPolicy::when_underloaded();
        assert!(!policy.decide(ActivationContext {
            ready_tasks: 30,
            workers: 5,
            group_size: 3
        }));
        let (mut g, root, child, [copy, _, c, c2, sel]) = fig2();
        decide_activation(&mut g, root, &policy, 30, 5);
        assert_eq!(g.group(root).state, GroupState::Disabled);
        assert_eq!(act(&g, copy), Activation::Disabled);
        // the child can no longer succeed: plain STF
        assert_eq!(act(&g, c), Activation::Enabled);
        assert_eq!(act(&g, c2), Activation::Disabled);
        assert_eq!(act(&g, sel), Activation::Disabled);
        assert_eq!(g.group(child).validity, Some(false));
    }

    #[test]
    #[should_panic(expected = "decided twice")]
    fn double_decision_panics() {
        let (mut g, root, ..) = fig2();
        decide_activation(&mut g, root, &ActivationPolicy::always(), 0, 1);
        decide_activation(&mut g, root, &ActivationPolicy::always(), 0, 1);
    }

    #[test]
    fn uncertain_wrote_cancels_twin() {
        let (mut g, root, child, [_, b, c, c2, sel]) = fig2();
        decide_activation(&mut g, root, &ActivationPolicy::always(), 0, 4);
        decide_activation(&mut g, child, &ActivationPolicy::always(), 0, 4);
        let (changes, _) = resolve_uncertain_completion(&mut g, root, b, true);
        assert!(g.group(root).failed);
        assert_eq!(act(&g, c2), Activation::Disabled);
        assert_eq!(act(&g, c), Activation::Enabled);
        assert_eq!(act(&g, sel), Activation::Disabled);
        assert!(changes.iter().any(|ch| ch.task == c2 && ch.to == Activation::Disabled));
        assert_eq!(g.group(child).outcome, Some(false));
    }

    #[test]
    fn uncertain_kept_data_enables_select() {
        let (mut g, root, child, [_, b, c, c2, sel]) = fig2();
        decide_activation(&mut g, root, &ActivationPolicy::always(), 0, 4);
        decide_activation(&mut g, child, &ActivationPolicy::always(), 0, 4);
        resolve_uncertain_completion(&mut g, root, b, false);
        assert!(!g.group(root).failed);
        assert_eq!(act(&g, c), Activation::Disabled);
        assert_eq!(act(&g, sel), Activation::Enabled);
        assert_eq!(act(&g, c2), Activation::Enabled);
        assert_eq!(g.group(child).outcome, Some(true));
    }

    #[test]
    fn running_twin_reports_too_late() {
        let (mut g, root, child, [_, b, _, c2, _]) = fig2();
        decide_activation(&mut g, root, &ActivationPolicy::always(), 0, 4);
        decide_activation(&mut g, child, &ActivationPolicy::always(), 0, 4);
        g.task_mut(c2).status = crate::graph::Status::Running;
        let (changes, wasted) = resolve_uncertain_completion(&mut g, root, b, true);
        let ch = changes.iter().find(|ch| ch.task == c2).unwrap();
        assert_eq!(ch.outcome, ChangeOutcome::TooLate);
        assert_eq!(wasted, 1);
    }

    /// Two uncertain tasks B and F on different data feed one twin: either
    /// writing sinks the whole group.
    #[test]
    fn two_parent_group_fails_on_either() {
        let mut g = TaskGraph::default();
        let gb = add_group(&mut g, &[]);
        let b = add(&mut g, TaskKind::Uncertain, "B", Activation::Enabled, Some(gb));
        g.group_mut(gb).uncertain_tasks.push(b);
        let gf = add_group(&mut g, &[]);
        let f = add(&mut g, TaskKind::Uncertain, "F", Activation::Enabled, Some(gf));
        g.group_mut(gf).uncertain_tasks.push(f);
        let gc = add_group(&mut g, &[gb, gf]);
        let c = add(&mut g, TaskKind::Normal, "C", Activation::Undefined, Some(gc));
        let c2 = add(&mut g, TaskKind::Speculative, "C'", Activation::Undefined, Some(gc));
        let s1 = add(&mut g, TaskKind::Select, "s1", Activation::Undefined, Some(gc));
        let s2 = add(&mut g, TaskKind::Select, "s2", Activation::Undefined, Some(gc));
        {
            let grp = g.group_mut(gc);
            grp.originals.push(c);
            grp.twins.push(c2);
            grp.selects.extend([s1, s2]);
        }
        for gid in [gb, gf, gc] {
            decide_activation(&mut g, gid, &ActivationPolicy::always(), 0, 4);
        }
        resolve_uncertain_completion(&mut g, gb, b, false);
        assert_eq!(g.group(gc).validity, None, "partial completion leaves the group pending");
        assert_eq!(act(&g, c), Activation::Undefined);
        resolve_uncertain_completion(&mut g, gf, f, true);
        assert_eq!(act(&g, s1), Activation::Disabled);
        assert_eq!(act(&g, s2), Activation::Disabled);
        assert_eq!(act(&g, c), Activation::Enabled);
        assert_eq!(act(&g, c2), Activation::Disabled);
    }

    fn chain(len: usize) -> (TaskGraph, Vec<GroupId>, Vec<TaskId>) {
        let mut g = TaskGraph::default();
        let root = add_group(&mut g, &[]);
        let head = add(&mut g, TaskKind::Uncertain, "U0", Activation::Enabled, Some(root));
        g.group_mut(root).uncertain_tasks.push(head);
        let mut groups = vec![root];
        let mut twins = Vec::new();
        for i in 1..len {
            let gid = add_group(&mut g, &[*groups.last().unwrap()]);
            let orig = add(&mut g, TaskKind::Uncertain, &format!("U{i}"), Activation::Undefined, Some(gid));
            let twin = add(&mut g, TaskKind::Speculative, &format!("U{i}'"), Activation::Undefined, Some(gid));
            let grp = g.group_mut(gid);
            grp.uncertain_tasks.push(orig);
            grp.originals.push(orig);
            grp.twins.push(twin);
            groups.push(gid);
            twins.push(twin);
        }
        for &gid in &groups {
            decide_activation(&mut g, gid, &ActivationPolicy::always(), 0, 4);
        }
        (g, groups, twins)
    }

    #[test]
    fn chain_head_failure_reaches_every_group() {
        let (mut g, groups, twins) = chain(3);
        let head = g.group(groups[0]).uncertain_tasks[0];
        resolve_uncertain_completion(&mut g, groups[0], head, true);
        for &gid in &groups {
            assert_eq!(g.group(gid).outcome, Some(false));
        }
        for t in twins {
            assert_eq!(act(&g, t), Activation::Disabled);
        }
        // idempotent
        let (visited, changes) = propagate_to_successors(&mut g, groups[0]);
        assert_eq!(visited, vec![groups[1], groups[2]]);
        assert!(changes.is_empty());
    }

    #[test]
    fn propagate_without_successors() {
        let (mut g, groups, _) = chain(1);
        let (visited, _) = propagate_to_successors(&mut g, groups[0]);
        assert!(visited.is_empty());
    }

    #[test]
    fn diamond_child_visited_once() {
        let mut g = TaskGraph::default();
        let top = add_group(&mut g, &[]);
        let left = add_group(&mut g, &[top]);
        let right = add_group(&mut g, &[top]);
        let bottom = add_group(&mut g, &[left, right]);
        let (visited, _) = propagate_to_successors(&mut g, top);
        assert_eq!(visited.iter().filter(|&&v| v == bottom).count(), 1);
        assert_eq!(visited.len(), 3);
    }

    #[test]
    fn twin_write_fails_the_next_link_only() {
        // U0 keeps, U1' writes: U1's own select stays enabled, U2 falls back.
        let (mut g, groups, twins) = chain(3);
        let head = g.group(groups[0]).uncertain_tasks[0];
        resolve_uncertain_completion(&mut g, groups[1], twins[0], true);
        assert_eq!(g.group(groups[1]).outcome, None);
        resolve_uncertain_completion(&mut g, groups[0], head, false);
        assert_eq!(g.group(groups[1]).validity, Some(true));
        assert_eq!(g.group(groups[1]).outcome, Some(false));
        assert!(g.group(groups[1]).failed);
        assert_eq!(g.group(groups[2]).validity, Some(false));
        let u2 = g.group(groups[2]).originals[0];
        assert_eq!(act(&g, u2), Activation::Enabled);
        assert_eq!(act(&g, twins[1]), Activation::Disabled);
    }
}
