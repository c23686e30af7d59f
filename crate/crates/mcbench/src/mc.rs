//! Monte Carlo and replica-exchange drivers on the task runtime.
//!
//! Each step moves one domain, updates the energy and applies the
//! Metropolis test, as a single task. In `Spec` and `Reject` modes the step
//! is an uncertain task that may write the energy matrix and its domain;
//! every `spec_depth`-th step is inserted as a normal task instead.

use std::fmt;
use std::str::FromStr;

use spectask::trace::BarClass;
use spectask::{AccessRecord, Data, Outcome, Receipt, Runtime, TaskKind, TaskView, TraceRecord};

use crate::physics::{
    compute_energy, exchange_threshold, metropolis_accept, move_domain, random_domain, update_energy, EnergyMatrix,
    ParticleDomain, PhysicsError,
};
use crate::rng::{Purpose, RngKey};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Task,
    Spec,
    Reject,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Task => "task",
            Mode::Spec => "spec",
            Mode::Reject => "reject",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = McError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "task" => Ok(Mode::Task),
            "spec" => Ok(Mode::Spec),
            "reject" => Ok(Mode::Reject),
            other => Err(McError::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum McError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Runtime(#[from] spectask::Error),
    #[error("energy audit failed for replica {replica}: relative gap {gap:e}")]
    Audit { replica: usize, gap: f64 },
    #[error("step {0} produced no result")]
    MissingResult(String),
}

/// Box length giving an acceptance ratio near 0.44 at the default
/// temperature for 5 domains of 200 particles.
pub const DEFAULT_BOX: f64 = 75.0;
pub const DEFAULT_TEMPERATURE: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct McConfig {
    pub domains: usize,
    pub particles: usize,
    pub box_len: f64,
    pub iterations: usize,
    pub mode: Mode,
    pub spec_depth: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            domains: 5,
            particles: 200,
            box_len: DEFAULT_BOX,
            iterations: 20,
            mode: Mode::Spec,
            spec_depth: 5,
            threads: spectask::default_num_threads(),
            seed: 1,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<(), McError> {
        let bad = |m: &str| Err(McError::Config(m.to_string()));
        if self.domains == 0 {
            return bad("need at least one domain");
        }
        if self.spec_depth == 0 {
            return bad("spec depth must be at least 1");
        }
        if self.threads == 0 {
            return bad("need at least one thread");
        }
        if !(self.box_len > 0.0 && self.box_len.is_finite()) {
            return bad("box length must be positive");
        }
        Ok(())
    }

    pub fn runtime(&self) -> Runtime {
        Runtime::with_workers(self.threads)
    }
}

/// Replica exchange settings on top of a per-replica configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RemcConfig {
    pub mc: McConfig,
    pub temperatures: Vec<f64>,
    pub exchange_every: usize,
}

impl RemcConfig {
    /// Geometric ladder from `t_min` to `t_max`.
    pub fn ladder(t_min: f64, t_max: f64, replicas: usize) -> Vec<f64> {
        if replicas == 1 {
            return vec![t_min];
        }
        let r = (t_max / t_min).powf(1.0 / (replicas - 1) as f64);
        (0..replicas).map(|i| t_min * r.powi(i as i32)).collect()
    }

    pub fn validate(&self) -> Result<(), McError> {
        self.mc.validate()?;
        if self.temperatures.is_empty() {
            return Err(McError::Config("need at least one replica".into()));
        }
        if self.temperatures.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(McError::Config("temperatures must be positive".into()));
        }
        if self.exchange_every == 0 {
            return Err(McError::Config("exchange period must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McSummary {
    /// Accepted flag per step, iteration-major.
    pub accepted: Vec<bool>,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub energy: EnergyMatrix,
    pub domains: Vec<ParticleDomain>,
}

impl McSummary {
    pub fn accept_count(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }

    /// Relative gap between the tracked total and a full recomputation.
    pub fn audit(&self) -> Result<f64, PhysicsError> {
        let full = compute_energy(&self.domains)?.total;
        let scale = full.abs().max(f64::MIN_POSITIVE);
        Ok((full - self.energy.total).abs() / scale)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExchangeRecord {
    pub iteration: usize,
    pub pair: (usize, usize),
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemcSummary {
    pub replicas: Vec<McSummary>,
    pub exchanges: Vec<ExchangeRecord>,
}

/// Data of one replica inside a runtime.
pub struct Replica {
    pub index: usize,
    pub temperature: f64,
    pub domains: Vec<Data<ParticleDomain>>,
    pub energy: Data<EnergyMatrix>,
}

impl Replica {
    /// Registers randomly placed domains and inserts the initial energy
    /// computation.
    pub fn setup(rt: &Runtime, cfg: &McConfig, index: usize, temperature: f64) -> (Self, Receipt<f64>) {
        let domains: Vec<_> = (0..cfg.domains)
            .map(|d| {
                let key = RngKey::new(cfg.seed, index, 0, d, Purpose::Init);
                rt.register(random_domain(d, cfg.particles, cfg.box_len, key))
            })
            .collect();
        let energy = rt.register(EnergyMatrix::zeros(cfg.domains));
        let mut accesses = vec![energy.write()];
        accesses.extend(domains.iter().map(Data::read));
        let n = cfg.domains;
        let receipt = rt
            .named_task(&format!("init(r{index})"), &accesses, move |v| {
                let ds: Vec<ParticleDomain> = (0..n).map(|j| v.read::<ParticleDomain>(j + 1).clone()).collect();
                let em = compute_energy(&ds).unwrap_or_else(|e| panic!("initial configuration: {e}"));
                let total = em.total;
                *v.write::<EnergyMatrix>(0) = em;
                total
            })
            .expect("fresh data");
        (
            Replica {
                index,
                temperature,
                domains,
                energy,
            },
            receipt,
        )
    }

    pub fn snapshot(&self) -> (EnergyMatrix, Vec<ParticleDomain>) {
        (self.energy.get(), self.domains.iter().map(Data::get).collect())
    }
}

#[derive(Copy, Clone)]
struct StepParams {
    seed: u64,
    replica: usize,
    iteration: usize,
    domain: usize,
    domains: usize,
    temperature: f64,
    box_len: f64,
    force_reject: bool,
}

/// View slot of domain `j` when domain `d` moves: energy first, then the
/// moved domain, then the others in order.
fn slot(j: usize, d: usize) -> usize {
    match j.cmp(&d) {
        std::cmp::Ordering::Equal => 1,
        std::cmp::Ordering::Less => j + 2,
        std::cmp::Ordering::Greater => j + 1,
    }
}

fn step_body(p: StepParams, v: &TaskView) -> bool {
    let d = p.domain;
    let proposal = {
        let em = v.read::<EnergyMatrix>(0);
        let guards: Vec<_> = (0..p.domains).map(|j| v.read::<ParticleDomain>(slot(j, d))).collect();
        let refs: Vec<&ParticleDomain> = guards.iter().map(|g| &**g).collect();
        let key = RngKey::new(p.seed, p.replica, p.iteration, d, Purpose::Move);
        let candidate = move_domain(p.box_len, refs[d], key);
        update_energy(&em, &refs, &candidate).map(|u| (u, candidate, em.total))
    };
    // A coincident pair rejects the configuration.
    let Ok((update, candidate, old)) = proposal else {
        return false;
    };
    let key = RngKey::new(p.seed, p.replica, p.iteration, d, Purpose::Accept);
    let accept = !p.force_reject && metropolis_accept(update.total, old, p.temperature, key);
    if accept {
        *v.write::<ParticleDomain>(1) = candidate;
        v.write::<EnergyMatrix>(0).apply(&update);
    }
    accept
}

/// Inserts steps for one replica; tracks the position in the
/// uncertain/normal cycle across calls.
struct StepInserter<'a> {
    rt: &'a Runtime,
    cfg: &'a McConfig,
    replica: &'a Replica,
    inserted: usize,
    receipts: Vec<Receipt<bool>>,
}

impl<'a> StepInserter<'a> {
    fn new(rt: &'a Runtime, cfg: &'a McConfig, replica: &'a Replica) -> Self {
        StepInserter {
            rt,
            cfg,
            replica,
            inserted: 0,
            receipts: Vec::new(),
        }
    }

    fn iteration(&mut self, iteration: usize) -> Result<(), McError> {
        for d in 0..self.cfg.domains {
            self.step(iteration, d)?;
        }
        Ok(())
    }

    fn step(&mut self, iteration: usize, d: usize) -> Result<(), McError> {
        let r = self.replica;
        let params = StepParams {
            seed: self.cfg.seed,
            replica: r.index,
            iteration,
            domain: d,
            domains: self.cfg.domains,
            temperature: r.temperature,
            box_len: self.cfg.box_len,
            force_reject: self.cfg.mode == Mode::Reject,
        };
        self.inserted += 1;
        let uncertain = self.cfg.mode != Mode::Task && !self.inserted.is_multiple_of(self.cfg.spec_depth);
        let moved = if uncertain {
            vec![r.energy.maybe_write(), r.domains[d].maybe_write()]
        } else {
            vec![r.energy.write(), r.domains[d].write()]
        };
        let mut accesses: Vec<AccessRecord> = moved;
        accesses.extend((0..self.cfg.domains).filter(|&j| j != d).map(|j| r.domains[j].read()));
        let label = format!("move(r{},i{},d{})", r.index, iteration, d);
        let receipt = if uncertain {
            self.rt.named_uncertain_task(&label, &accesses, move |v| step_body(params, v))?
        } else {
            self.rt.named_task(&label, &accesses, move |v| step_body(params, v))?
        };
        self.receipts.push(receipt);
        Ok(())
    }
}

fn value<R: std::any::Any + Clone>(r: &Receipt<R>, what: &str) -> Result<R, McError> {
    match r.wait() {
        Outcome::Value(v) => Ok(v),
        Outcome::Skipped => Err(McError::MissingResult(what.to_string())),
    }
}

fn summarize(replica: &Replica, init: &Receipt<f64>, steps: &[Receipt<bool>]) -> Result<McSummary, McError> {
    let accepted = steps
        .iter()
        .enumerate()
        .map(|(i, r)| value(r, &format!("r{} step {i}", replica.index)))
        .collect::<Result<Vec<_>, _>>()?;
    let (energy, domains) = replica.snapshot();
    Ok(McSummary {
        accepted,
        initial_energy: value(init, "init")?,
        final_energy: energy.total,
        energy,
        domains,
    })
}

/// Single-chain Monte Carlo at `temperature`.
pub fn mc_core(rt: &Runtime, cfg: &McConfig, temperature: f64) -> Result<McSummary, McError> {
    cfg.validate()?;
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(McError::Config("temperature must be positive".into()));
    }
    let (replica, init) = Replica::setup(rt, cfg, 0, temperature);
    let mut steps = StepInserter::new(rt, cfg, &replica);
    for it in 0..cfg.iterations {
        steps.iteration(it)?;
    }
    rt.wait_all()?;
    summarize(&replica, &init, &steps.receipts)
}

/// Pairs tested at the `round`-th exchange (1-based): (0,1), (2,3), ... on
/// odd rounds and (1,2), (3,4), ... on even rounds.
pub fn exchange_pairs(round: usize, replicas: usize) -> Vec<(usize, usize)> {
    let start = if round % 2 == 1 { 0 } else { 1 };
    (start..replicas.saturating_sub(1)).step_by(2).map(|s| (s, s + 1)).collect()
}

fn insert_exchange(
    rt: &Runtime,
    seed: u64,
    iteration: usize,
    a: &Replica,
    b: &Replica,
) -> Result<Receipt<bool>, McError> {
    let n = a.domains.len();
    let mut accesses = vec![a.energy.write(), b.energy.write()];
    accesses.extend(a.domains.iter().chain(&b.domains).map(Data::write));
    let (ta, tb, ia) = (a.temperature, b.temperature, a.index);
    let label = format!("exchange(i{iteration},r{}-r{})", a.index, b.index);
    Ok(rt.named_task(&label, &accesses, move |v| {
        let ea = v.read::<EnergyMatrix>(0).total;
        let eb = v.read::<EnergyMatrix>(1).total;
        let u = RngKey::new(seed, ia, iteration, 0, Purpose::Exchange).uniform();
        let accept = u <= exchange_threshold(ea, eb, ta, tb);
        if accept {
            let mut ma = v.write::<EnergyMatrix>(0);
            let mut mb = v.write::<EnergyMatrix>(1);
            std::mem::swap(&mut *ma, &mut *mb);
            for d in 0..n {
                let mut da = v.write::<ParticleDomain>(2 + d);
                let mut db = v.write::<ParticleDomain>(2 + n + d);
                std::mem::swap(&mut da.particles, &mut db.particles);
            }
        }
        accept
    })?)
}

/// Replica exchange: one chain per temperature, with a swap round after
/// every `exchange_every` iterations.
pub fn remc(rt: &Runtime, cfg: &RemcConfig) -> Result<RemcSummary, McError> {
    cfg.validate()?;
    let setups: Vec<_> = cfg
        .temperatures
        .iter()
        .enumerate()
        .map(|(i, &t)| Replica::setup(rt, &cfg.mc, i, t))
        .collect();
    let replicas: Vec<&Replica> = setups.iter().map(|(r, _)| r).collect();
    let mut inserters: Vec<_> = replicas.iter().map(|r| StepInserter::new(rt, &cfg.mc, r)).collect();
    let mut exchanges = Vec::new();
    for it in 0..cfg.mc.iterations {
        for ins in &mut inserters {
            ins.iteration(it)?;
        }
        if (it + 1) % cfg.exchange_every == 0 {
            let round = (it + 1) / cfg.exchange_every;
            for (a, b) in exchange_pairs(round, replicas.len()) {
                let r = insert_exchange(rt, cfg.mc.seed, it, replicas[a], replicas[b])?;
                exchanges.push((it, (a, b), r));
            }
        }
    }
    rt.wait_all()?;
    let summaries = setups
        .iter()
        .zip(&inserters)
        .map(|((rep, init), ins)| summarize(rep, init, &ins.receipts))
        .collect::<Result<Vec<_>, _>>()?;
    let exchanges = exchanges
        .into_iter()
        .map(|(iteration, pair, r)| {
            Ok(ExchangeRecord {
                iteration,
                pair,
                accepted: value(&r, "exchange")?,
            })
        })
        .collect::<Result<Vec<_>, McError>>()?;
    Ok(RemcSummary {
        replicas: summaries,
        exchanges,
    })
}

/// Bar colours for the Gantt chart: energy initialisation, normal steps,
/// speculative steps and runtime-generated copies and selects.
pub fn bar_class(r: &TraceRecord) -> BarClass {
    match r.kind {
        _ if r.label.starts_with("init") => BarClass::Init,
        TaskKind::Speculative => BarClass::Speculative,
        TaskKind::Copy | TaskKind::Select => BarClass::Runtime,
        TaskKind::Normal | TaskKind::Uncertain => BarClass::Normal,
    }
}
