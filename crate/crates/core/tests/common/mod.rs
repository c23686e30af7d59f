//! Random task programs and a strict insertion-order oracle.

#![allow(dead_code)]

pub mod dot;

use proptest::prelude::*;
use spectask::{AccessMode, AccessRecord, ActivationPolicy, Data, Outcome, Receipt, Runtime, TaskView};

#[derive(Clone, Debug)]
pub enum Decision {
    /// Index into the flag vector.
    Scripted(usize),
    /// Parity of the task's inputs.
    FromData,
}

#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub accesses: Vec<(usize, AccessMode)>,
    pub constant: i64,
    pub decision: Option<Decision>,
}

impl TaskSpec {
    pub fn is_uncertain(&self) -> bool {
        self.decision.is_some()
    }
}

#[derive(Clone, Debug)]
pub struct Program {
    pub initial: Vec<i64>,
    pub tasks: Vec<TaskSpec>,
}

impl Program {
    pub fn scripted_count(&self) -> usize {
        self.tasks
            .iter()
            .filter(|t| matches!(t.decision, Some(Decision::Scripted(_))))
            .count()
    }

    pub fn uncertain_count(&self) -> usize {
        self.tasks.iter().filter(|t| t.is_uncertain()).count()
    }
}

/// Result of one task: the wrote-flag for uncertain tasks, a checksum
/// otherwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskValue {
    Flag(bool),
    Sum(i64),
}

/// The arithmetic every task performs, on plain values.
pub fn apply(spec: &TaskSpec, values: &mut [i64], flags: &[bool]) -> TaskValue {
    let reads = spec
        .accesses
        .iter()
        .filter(|(_, m)| *m == AccessMode::Read)
        .fold(0i64, |acc, &(d, _)| acc.wrapping_add(values[d]));
    let wrote = match spec.decision {
        None => false,
        Some(Decision::Scripted(i)) => flags[i],
        Some(Decision::FromData) => {
            let maybe = spec
                .accesses
                .iter()
                .filter(|(_, m)| *m == AccessMode::MaybeWrite)
                .fold(reads, |acc, &(d, _)| acc.wrapping_add(values[d]));
            maybe.rem_euclid(2) == 0
        }
    };
    let mut sum = reads;
    for &(d, mode) in &spec.accesses {
        let x = &mut values[d];
        match mode {
            AccessMode::Read => {}
            AccessMode::Write => *x = x.wrapping_mul(3).wrapping_add(reads).wrapping_add(spec.constant),
            AccessMode::Commute | AccessMode::AtomicWrite => *x = x.wrapping_add(spec.constant + 1),
            AccessMode::MaybeWrite => {
                if wrote {
                    *x = x.wrapping_mul(5).wrapping_add(reads).wrapping_add(spec.constant);
                }
            }
        }
        if mode != AccessMode::Commute && mode != AccessMode::AtomicWrite {
            sum = sum.wrapping_add(*x);
        }
    }
    if spec.is_uncertain() {
        TaskValue::Flag(wrote)
    } else {
        TaskValue::Sum(sum)
    }
}

pub fn oracle(program: &Program, flags: &[bool]) -> (Vec<i64>, Vec<TaskValue>) {
    let mut values = program.initial.clone();
    let outputs = program.tasks.iter().map(|t| apply(t, &mut values, flags)).collect();
    (values, outputs)
}

/// Same arithmetic through a task view.
fn run_view(spec: &TaskSpec, view: &TaskView, flags: &[bool]) -> TaskValue {
    let mut local: Vec<i64> = (0..view.len())
        .map(|i| if view.mode(i).is_read() { *view.read::<i64>(i) } else { *view.write::<i64>(i) })
        .collect();
    let local_spec = TaskSpec {
        accesses: spec.accesses.iter().enumerate().map(|(i, &(_, m))| (i, m)).collect(),
        constant: spec.constant,
        decision: spec.decision.clone(),
    };
    let before = local.clone();
    let out = apply(&local_spec, &mut local, flags);
    for i in 0..view.len() {
        if !view.mode(i).is_read() && local[i] != before[i] {
            *view.write::<i64>(i) = local[i];
        }
    }
    out
}

pub enum AnyReceipt {
    Normal(Receipt<i64>),
    Uncertain(Receipt<bool>),
}

impl AnyReceipt {
    pub fn value(&self) -> Option<TaskValue> {
        match self {
            AnyReceipt::Normal(r) => match r.wait() {
                Outcome::Value(v) => Some(TaskValue::Sum(v)),
                Outcome::Skipped => None,
            },
            AnyReceipt::Uncertain(r) => match r.wait() {
                Outcome::Value(v) => Some(TaskValue::Flag(v)),
                Outcome::Skipped => None,
            },
        }
    }
}

/// Inserts the program into `rt` and returns its data and receipts.
pub fn insert(rt: &Runtime, program: &Program, flags: &[bool]) -> (Vec<Data<i64>>, Vec<AnyReceipt>) {
    let data: Vec<Data<i64>> = program.initial.iter().map(|&v| rt.register(v)).collect();
    let mut receipts = Vec::new();
    for (i, spec) in program.tasks.iter().enumerate() {
        let accesses: Vec<AccessRecord> = spec
            .accesses
            .iter()
            .map(|&(d, m)| AccessRecord::new(data[d].id(), m))
            .collect();
        let spec_c = spec.clone();
        let flags = flags.to_vec();
        let label = format!("T{i}");
        if spec.is_uncertain() {
            let r = rt
                .named_uncertain_task(&label, &accesses, move |v| match run_view(&spec_c, v, &flags) {
                    TaskValue::Flag(b) => b,
                    TaskValue::Sum(_) => unreachable!(),
                })
                .expect("valid uncertain task");
            receipts.push(AnyReceipt::Uncertain(r));
        } else {
            let r = rt
                .named_task(&label, &accesses, move |v| match run_view(&spec_c, v, &flags) {
                    TaskValue::Sum(s) => s,
                    TaskValue::Flag(_) => unreachable!(),
                })
                .expect("valid task");
            receipts.push(AnyReceipt::Normal(r));
        }
    }
    (data, receipts)
}

/// Runs the program and compares data and per-task values with the oracle.
pub fn check(rt: &Runtime, program: &Program, flags: &[bool]) -> Result<(), String> {
    let (data, receipts) = insert(rt, program, flags);
    rt.wait_all().map_err(|e| e.to_string())?;
    let (expected, outputs) = oracle(program, flags);
    let got: Vec<i64> = data.iter().map(|d| d.get()).collect();
    if got != expected {
        return Err(format!("data {got:?} != oracle {expected:?} (flags {flags:?})"));
    }
    for (i, (r, want)) in receipts.iter().zip(outputs).enumerate() {
        match r.value() {
            Some(v) if v == want => {}
            other => return Err(format!("task {i}: {other:?} != oracle {want:?} (flags {flags:?})")),
        }
    }
    Ok(())
}

/// Every flag vector for the scripted uncertain tasks.
pub fn flag_vectors(count: usize) -> impl Iterator<Item = Vec<bool>> {
    (0..1u32 << count).map(move |bits| (0..count).map(|i| bits >> i & 1 == 1).collect())
}

pub fn runtime(workers: usize, policy: ActivationPolicy) -> Runtime {
    Runtime::builder().workers(workers).policy(policy).build()
}

const MODES: [AccessMode; 5] = [
    AccessMode::Read,
    AccessMode::Write,
    AccessMode::MaybeWrite,
    AccessMode::AtomicWrite,
    AccessMode::Commute,
];

fn raw_task(n_data: usize) -> impl Strategy<Value = (Vec<Option<usize>>, i64, bool, bool)> {
    (
        prop::collection::vec(prop::option::weighted(0.6, 0..MODES.len()), n_data),
        -5i64..=5,
        prop::bool::weighted(0.45),
        prop::bool::weighted(0.2),
    )
}

/// Up to 10 tasks over up to 4 data, at most 5 uncertain.
pub fn program_strategy() -> impl Strategy<Value = Program> {
    (1usize..=4)
        .prop_flat_map(|n_data| {
            (
                prop::collection::vec(-3i64..=3, n_data),
                prop::collection::vec(raw_task(n_data), 1..=10),
            )
        })
        .prop_map(|(initial, raw)| {
            let mut tasks = Vec::new();
            let mut scripted = 0;
            let mut uncertain = 0;
            for (modes, constant, wants_uncertain, from_data) in raw {
                let mut accesses: Vec<(usize, AccessMode)> =
                    modes.iter().enumerate().filter_map(|(d, m)| m.map(|m| (d, MODES[m]))).collect();
                let is_uncertain = wants_uncertain && uncertain < 5;
                if is_uncertain {
                    if !accesses.iter().any(|(_, m)| *m == AccessMode::MaybeWrite) {
                        match accesses.first_mut() {
                            Some(first) => first.1 = AccessMode::MaybeWrite,
                            None => accesses.push((0, AccessMode::MaybeWrite)),
                        }
                    }
                    uncertain += 1;
                } else {
                    for a in &mut accesses {
                        if a.1 == AccessMode::MaybeWrite {
                            a.1 = AccessMode::Write;
                        }
                    }
                    if accesses.is_empty() {
                        accesses.push((0, AccessMode::Write));
                    }
                }
                let decision = is_uncertain.then(|| {
                    if from_data {
                        Decision::FromData
                    } else {
                        scripted += 1;
                        Decision::Scripted(scripted - 1)
                    }
                });
                tasks.push(TaskSpec {
                    accesses,
                    constant,
                    decision,
                });
            }
            Program { initial, tasks }
        })
}
