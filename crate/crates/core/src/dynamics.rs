//! One synchronous step of the coupled adoption-opinion recurrence and
//! trajectory simulation with scheduled market-entry events.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, SystemState, Tech, ValidatedConfig, ValidationReport, BLOCK_NAMES};
use crate::netgraph::{dot, WeightedDigraph};

/// Negative values of smaller magnitude are rounding noise and are clamped to zero.
pub const CLAMP_EPS: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("state does not match the config: expected {expected} nodes, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid state: {0}")]
    InvalidState(ValidationReport),
    #[error("{block} became {value:e} at node {node}; the update left the simplex")]
    Negative { block: &'static str, node: usize, value: f64 },
    #[error("invalid event: {0}")]
    Event(String),
}

/// How matrix-vector products inside a step are evaluated.
///
/// Rows are always summed left to right, so both modes give bit-identical
/// results; `Parallel` only spreads rows across threads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    #[default]
    Sequential,
    Parallel,
}

fn matvec(m: &WeightedDigraph, v: &[f64], exec: Exec) -> Vec<f64> {
    match exec {
        Exec::Sequential => m.mul_vec(v),
        Exec::Parallel => (0..m.n()).into_par_iter().map(|i| dot(m.row(i), v)).collect(),
    }
}

/// Result of a single step plus the number of entries clamped at zero.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: SystemState,
    pub clamped: usize,
}

/// Advances the state by one step.
pub fn step(cfg: &ValidatedConfig, st: &SystemState) -> Result<SystemState, DynamicsError> {
    step_with(cfg, st, Exec::Sequential).map(|o| o.state)
}

pub fn step_with(cfg: &ValidatedConfig, st: &SystemState, exec: Exec) -> Result<StepOutcome, DynamicsError> {
    step_on_market(cfg, st, exec, [true; 2])
}

/// Step where `on_market[k] == false` blocks every inflow into the adopters
/// of technology `k`: no fresh adoption and no switching from the rival's
/// dissatisfied pool.
fn step_on_market(
    cfg: &ValidatedConfig,
    st: &SystemState,
    exec: Exec,
    on_market: [bool; 2],
) -> Result<StepOutcome, DynamicsError> {
    let n = cfg.n();
    if st.n() != n || !st.is_dimension_consistent() {
        return Err(DynamicsError::Dimension { expected: n, got: st.n() });
    }
    let rep = model::validate_initial_state(st, model::STATE_TOL);
    if !rep.pass() {
        return Err(DynamicsError::InvalidState(rep));
    }

    let exposure = [matvec(&cfg.physical, &st.a[0], exec), matvec(&cfg.physical, &st.a[1], exec)];
    let social_mix = [matvec(&cfg.social, &st.x[0], exec), matvec(&cfg.social, &st.x[1], exec)];

    let mut next = SystemState::zeros(n);
    for i in 0..n {
        let s = st.s[i];
        let adopt: [f64; 2] =
            std::array::from_fn(
                |k| {
                    if on_market[k] {
                        cfg.tech[k].beta[i] * st.x[k][i] * s * exposure[k][i]
                    } else {
                        0.0
                    }
                },
            );
        next.s[i] = s - adopt[0] - adopt[1];
        for k in Tech::BOTH {
            let (k, l) = (k.idx(), k.other().idx());
            let p = &cfg.tech[k];
            let q = &cfg.tech[l];
            let dissatisfy = p.delta[i] * st.a[k][i];
            // rival's dissatisfied switching to k, and k's dissatisfied leaving for the rival
            let switch_in = if on_market[k] { p.gamma[i] * st.x[k][i] * st.d[l][i] } else { 0.0 };
            let switch_out = if on_market[l] { q.gamma[i] * st.x[l][i] * st.d[k][i] } else { 0.0 };
            next.a[k][i] = st.a[k][i] + adopt[k] - dissatisfy + switch_in;
            next.d[k][i] = st.d[k][i] - switch_out + dissatisfy;
            next.x[k][i] =
                (1.0 - p.lambda[i] - p.xi[i]) * p.x0[i] + p.lambda[i] * social_mix[k][i] + p.xi[i] * exposure[k][i];
        }
    }

    let mut clamped = 0;
    for (name, block) in BLOCK_NAMES.iter().zip(next.blocks_mut()) {
        for (node, v) in block.iter_mut().enumerate() {
            if *v < 0.0 {
                if *v > -CLAMP_EPS {
                    *v = 0.0;
                    clamped += 1;
                } else {
                    return Err(DynamicsError::Negative { block: name, node, value: *v });
                }
            }
        }
    }
    Ok(StepOutcome { state: next, clamped })
}

/// One-time transfer of `fraction` (capped at the available susceptibles)
/// from `s` to the adopters of `tech` at every node.
///
/// When `tech` has neither adopters nor dissatisfied users in the initial
/// state, its first event is its market entry: until then nobody can adopt
/// it or switch to it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionEvent {
    pub time: usize,
    pub tech: Tech,
    pub fraction: f64,
}

impl InjectionEvent {
    pub fn new(time: usize, tech: Tech, fraction: f64) -> Result<Self, DynamicsError> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(DynamicsError::Event(format!("fraction {fraction} ∉ (0,1)")));
        }
        Ok(Self { time, tech, fraction })
    }

    fn apply(&self, st: &mut SystemState) {
        let k = self.tech.idx();
        for i in 0..st.n() {
            let moved = self.fraction.min(st.s[i]);
            st.s[i] -= moved;
            st.a[k][i] += moved;
        }
    }
}

fn check_events(events: &[InjectionEvent]) -> Result<(), DynamicsError> {
    if events.windows(2).any(|w| w[0].time > w[1].time) {
        return Err(DynamicsError::Event("events must be sorted by time".into()));
    }
    for e in events {
        if !(e.fraction > 0.0 && e.fraction < 1.0) {
            return Err(DynamicsError::Event(format!("fraction {} ∉ (0,1)", e.fraction)));
        }
    }
    Ok(())
}

/// States `y(0), ..., y(horizon)`. An event scheduled at `t` is applied to
/// `y(t)` before stepping, and the stored `y(t)` is the post-event state.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub states: Vec<SystemState>,
    pub events: Vec<InjectionEvent>,
    pub config_digest: String,
    pub clamped: usize,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Whether an event was applied at step `t`.
    pub fn is_injection_step(&self, t: usize) -> bool {
        self.events.iter().any(|e| e.time == t)
    }
}

/// Summary of a streamed run, which keeps only the latest state.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_state: SystemState,
    pub events: Vec<InjectionEvent>,
    pub clamped: usize,
}

/// Runs the recurrence, handing every state to `observer` as it is produced.
pub fn simulate_streaming(
    cfg: &ValidatedConfig,
    st0: &SystemState,
    horizon: usize,
    events: &[InjectionEvent],
    exec: Exec,
    mut observer: impl FnMut(usize, &SystemState),
) -> Result<RunSummary, DynamicsError> {
    check_events(events)?;
    let rep = model::validate_initial_state(st0, model::STATE_TOL);
    if !rep.pass() {
        return Err(DynamicsError::InvalidState(rep));
    }
    // A technology without users at t = 0 and with a scheduled event has not
    // entered the market yet; it enters with its first event.
    let mut on_market = Tech::BOTH.map(|k| {
        let absent = st0.a[k.idx()].iter().chain(&st0.d[k.idx()]).all(|&v| v == 0.0);
        !(absent && events.iter().any(|e| e.tech == k))
    });
    let mut pending = events.iter().filter(|e| e.time <= horizon).peekable();
    let mut applied = Vec::new();
    let mut clamped = 0;
    let mut state = st0.clone();
    for t in 0..=horizon {
        while let Some(e) = pending.next_if(|e| e.time == t) {
            e.apply(&mut state);
            on_market[e.tech.idx()] = true;
            applied.push(*e);
        }
        observer(t, &state);
        if t < horizon {
            let out = step_on_market(cfg, &state, exec, on_market)?;
            clamped += out.clamped;
            state = out.state;
        }
    }
    Ok(RunSummary { final_state: state, events: applied, clamped })
}

/// Full in-memory trajectory.
pub fn simulate(
    cfg: &ValidatedConfig,
    st0: &SystemState,
    horizon: usize,
    events: &[InjectionEvent],
) -> Result<Trajectory, DynamicsError> {
    simulate_with(cfg, st0, horizon, events, Exec::Sequential)
}

pub fn simulate_with(
    cfg: &ValidatedConfig,
    st0: &SystemState,
    horizon: usize,
    events: &[InjectionEvent],
    exec: Exec,
) -> Result<Trajectory, DynamicsError> {
    let mut states = Vec::with_capacity(horizon + 1);
    let summary = simulate_streaming(cfg, st0, horizon, events, exec, |_, s| states.push(s.clone()))?;
    Ok(Trajectory { states, events: summary.events, config_digest: cfg.digest(), clamped: summary.clamped })
}

/// Node means of every block at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepMetrics {
    pub t: usize,
    pub mean_s: f64,
    pub mean_a: [f64; 2],
    pub mean_d: [f64; 2],
    pub mean_x: [f64; 2],
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl StepMetrics {
    pub fn of(t: usize, st: &SystemState) -> Self {
        Self {
            t,
            mean_s: mean(&st.s),
            mean_a: [mean(&st.a[0]), mean(&st.a[1])],
            mean_d: [mean(&st.d[0]), mean(&st.d[1])],
            mean_x: [mean(&st.x[0]), mean(&st.x[1])],
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [self.mean_s, self.mean_a[0], self.mean_a[1], self.mean_d[0], self.mean_d[1], self.mean_x[0], self.mean_x[1]]
    }
}

pub fn trajectory_metrics(tr: &Trajectory) -> Vec<StepMetrics> {
    tr.states.iter().enumerate().map(|(t, s)| StepMetrics::of(t, s)).collect()
}
