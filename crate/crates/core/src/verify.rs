//! Numerical checks of the model's structural properties on concrete
//! trajectories and equilibria. Every checker is pure and returns a
//! [`PropertyReport`] rather than an error.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, Exec, Trajectory};
use crate::equilibrium::{self, Equilibrium, EquilibriumError, EquilibriumKind, SolverOptions};
use crate::model::{self, ModelError, SystemState, Tech, ValidatedConfig, BLOCK_NAMES};

/// Slack for the non-increasing susceptible check.
pub const MONOTONE_SLACK: f64 = 1e-15;
/// Slack for the opinion lower bound.
pub const OPINION_SLACK: f64 = 1e-14;
/// Slack for the instability lower bound.
pub const INSTABILITY_SLACK: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyId {
    Invariance,
    MonotoneS,
    OpinionFloor,
    Instability,
    NoPartialAdoption,
    Coexistence,
}

impl PropertyId {
    pub fn as_str(self) -> &'static str {
        match self {
            PropertyId::Invariance => "invariance",
            PropertyId::MonotoneS => "monotone_s",
            PropertyId::OpinionFloor => "opinion_floor",
            PropertyId::Instability => "instability",
            PropertyId::NoPartialAdoption => "no_partial_adoption",
            PropertyId::Coexistence => "coexistence",
        }
    }
}

impl fmt::Display for PropertyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of one property check. `worst` is the largest violation measure
/// seen; a failed check always has `worst > tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub property: PropertyId,
    pub pass: bool,
    pub worst: f64,
    pub tolerance: f64,
    /// `(t, node)` of the worst case; `t` is 0 for equilibrium checks.
    pub location: Option<(usize, usize)>,
    pub note: String,
    pub values: BTreeMap<String, f64>,
}

impl PropertyReport {
    fn new(property: PropertyId, worst: f64, tolerance: f64, location: Option<(usize, usize)>) -> Self {
        Self {
            property,
            pass: worst <= tolerance,
            worst,
            tolerance,
            location,
            note: String::new(),
            values: BTreeMap::new(),
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    fn with_value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.to_string(), v);
        self
    }

    /// `instance property pass|fail worst=<float> at=(t,node)`.
    pub fn line(&self, instance: &str) -> String {
        let at = match self.location {
            Some((t, i)) => format!("({t},{i})"),
            None => "(-,-)".to_string(),
        };
        format!(
            "{instance} {} {} worst={:e} at={at}",
            self.property,
            if self.pass { "pass" } else { "fail" },
            self.worst
        )
    }
}

/// Tracks the largest measure and where it occurred.
struct Worst {
    value: f64,
    at: Option<(usize, usize)>,
}

impl Worst {
    fn new() -> Self {
        Self { value: 0.0, at: None }
    }

    fn see(&mut self, v: f64, t: usize, i: usize) {
        if v > self.value || self.at.is_none() {
            self.value = self.value.max(v);
            self.at = Some((t, i));
        }
    }
}

fn box_excess(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        (-v).max(v - 1.0).max(0.0)
    }
}

/// Every entry within `[-tol, 1 + tol]` at every step.
pub fn check_box(tr: &Trajectory, tol: f64) -> PropertyReport {
    let mut w = Worst::new();
    for (t, st) in tr.states.iter().enumerate() {
        for i in 0..st.n() {
            let e = st.node_values(i).into_iter().map(box_excess).fold(0.0, f64::max);
            w.see(e, t, i);
        }
    }
    PropertyReport::new(PropertyId::Invariance, w.value, tol, w.at).with_note("box [0,1]")
}

/// Per-node compartment sums within `tol` of one at every step.
pub fn check_simplex(tr: &Trajectory, tol: f64) -> PropertyReport {
    let mut w = Worst::new();
    for (t, st) in tr.states.iter().enumerate() {
        for i in 0..st.n() {
            w.see((st.compartment_sum(i) - 1.0).abs(), t, i);
        }
    }
    PropertyReport::new(PropertyId::Invariance, w.value, tol, w.at).with_note("compartment sums")
}

/// Box and simplex together. Injection steps are included: the transfer
/// stays inside the simplex.
pub fn check_invariance(tr: &Trajectory, tol: f64) -> PropertyReport {
    let b = check_box(tr, tol);
    let s = check_simplex(tr, tol);
    let (worst, at) = if b.worst >= s.worst { (b.worst, b.location) } else { (s.worst, s.location) };
    PropertyReport::new(PropertyId::Invariance, worst, tol, at)
        .with_note(format!("box excess {:e}, simplex deviation {:e}", b.worst, s.worst))
        .with_value("box_excess", b.worst)
        .with_value("simplex_deviation", s.worst)
}

/// `s(t) <= s(t-1) + 1e-15` entrywise, skipping steps that carry an injection.
pub fn check_monotone_s(tr: &Trajectory) -> PropertyReport {
    let mut w = Worst::new();
    let mut exempt = 0;
    for t in 1..tr.states.len() {
        if tr.is_injection_step(t) {
            exempt += 1;
            continue;
        }
        let (prev, cur) = (&tr.states[t - 1].s, &tr.states[t].s);
        for i in 0..cur.len() {
            w.see((cur[i] - prev[i]).max(0.0), t, i);
        }
    }
    PropertyReport::new(PropertyId::MonotoneS, w.value, MONOTONE_SLACK, w.at)
        .with_note(format!("{exempt} injection steps exempt"))
}

/// `x_k(t) >= (1 - lambda_k - xi_k) x0_k` entrywise at every step.
pub fn check_opinion_floor(cfg: &ValidatedConfig, tr: &Trajectory, slack: f64) -> PropertyReport {
    let floors = [cfg.tech[0].opinion_floor(), cfg.tech[1].opinion_floor()];
    let mut w = Worst::new();
    let mut min_opinion = f64::INFINITY;
    for (t, st) in tr.states.iter().enumerate().skip(1) {
        for k in 0..2 {
            for (i, (&x, &f)) in st.x[k].iter().zip(&floors[k]).enumerate() {
                w.see((f - x).max(0.0), t, i);
                min_opinion = min_opinion.min(x);
            }
        }
    }
    PropertyReport::new(PropertyId::OpinionFloor, w.value, slack, w.at)
        .with_value("min_opinion", if min_opinion.is_finite() { min_opinion } else { 0.0 })
}

/// Starts from `s = 1 - eps`, `a1 = eps`, opinions at the adoption-free
/// values, and checks `||s(t) - 1||_inf >= eps` for every `t <= horizon`.
pub fn demo_instability(cfg: &ValidatedConfig, eps: f64, horizon: usize) -> Result<PropertyReport, VerifyError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ModelError::Argument(format!("eps {eps} ∉ (0,1)")).into());
    }
    let free = equilibrium::adoption_free_equilibrium(cfg, 1e-14)?;
    let n = cfg.n();
    let mut st0 = free.state.clone();
    st0.s = vec![1.0 - eps; n];
    st0.a[0] = vec![eps; n];

    let mut min_gap = f64::INFINITY;
    let mut worst_t = 0;
    let summary = dynamics::simulate_streaming(cfg, &st0, horizon, &[], Exec::Sequential, |t, st| {
        let gap = st.s.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        if gap < min_gap {
            min_gap = gap;
            worst_t = t;
        }
    })?;
    let final_distance = summary.final_state.max_abs_diff(&free.state);
    let shortfall = (eps - min_gap).max(0.0);
    Ok(PropertyReport::new(PropertyId::Instability, shortfall, INSTABILITY_SLACK, Some((worst_t, 0)))
        .with_note(format!("eps {eps}, min ||s-1|| {min_gap}, final ||y-y_e|| {final_distance}"))
        .with_value("eps", eps)
        .with_value("min_gap", min_gap)
        .with_value("margin", min_gap - eps)
        .with_value("final_distance", final_distance))
}

/// Either every `s*_i <= tol` or every `s*_i >= 1 - tol`. `worst` is the
/// distance to the nearer of the two patterns.
pub fn check_no_partial_adoption(eq: &Equilibrium, tol: f64) -> PropertyReport {
    check_susceptible_pattern(&eq.state, tol)
}

fn check_susceptible_pattern(st: &SystemState, tol: f64) -> PropertyReport {
    let (mut hi, mut hi_at) = (0.0f64, 0);
    let (mut lo, mut lo_at) = (0.0f64, 0);
    for (i, &s) in st.s.iter().enumerate() {
        if s > hi {
            (hi, hi_at) = (s, i);
        }
        if 1.0 - s > lo {
            (lo, lo_at) = (1.0 - s, i);
        }
    }
    let (worst, node, pattern) = if hi <= lo { (hi, hi_at, "adoption-diffused") } else { (lo, lo_at, "adoption-free") };
    let rep = PropertyReport::new(PropertyId::NoPartialAdoption, worst, tol, Some((0, node)));
    if rep.pass {
        rep.with_note(format!("{pattern} pattern"))
    } else {
        let mixed: Vec<usize> =
            st.s.iter().enumerate().filter(|(_, &s)| s > tol && s < 1.0 - tol).map(|(i, _)| i).collect();
        let diffused: Vec<usize> = st.s.iter().enumerate().filter(|(_, &s)| s <= tol).map(|(i, _)| i).collect();
        rep.with_note(format!("mixed susceptibles: s≈0 at {diffused:?}, s>0 at {mixed:?}"))
    }
}

/// Both technologies present everywhere (`a_k >= tol`) and the ratio law
/// `a2 delta2 = a1 delta1` within `tol`. `worst` is the larger of the ratio
/// error and `2 tol - min a`, which exceeds `tol` exactly when some
/// adoption falls below `tol`.
pub fn check_coexistence(cfg: &ValidatedConfig, eq: &Equilibrium, tol: f64) -> PropertyReport {
    let st = &eq.state;
    let mut min_a = f64::INFINITY;
    let mut min_at = 0;
    for k in 0..2 {
        for (i, &a) in st.a[k].iter().enumerate() {
            if a < min_a {
                (min_a, min_at) = (a, i);
            }
        }
    }
    let [p1, p2] = &cfg.tech;
    let mut ratio_err = 0.0f64;
    let mut ratio_at = 0;
    for i in 0..st.n() {
        let e = (st.a[1][i] * p2.delta[i] - st.a[0][i] * p1.delta[i]).abs();
        if e > ratio_err {
            (ratio_err, ratio_at) = (e, i);
        }
    }
    let presence = 2.0 * tol - min_a;
    let (worst, node) = if presence > ratio_err { (presence, min_at) } else { (ratio_err, ratio_at) };
    let rep = PropertyReport::new(PropertyId::Coexistence, worst, tol, Some((0, node)))
        .with_value("min_adoption", min_a)
        .with_value("ratio_error", ratio_err);
    let monopoly = Tech::BOTH.iter().any(|k| st.a[k.idx()].iter().all(|&a| a < tol));
    if monopoly {
        rep.with_note("monopoly pattern")
    } else if min_a < tol {
        rep.with_note("technology absent at some nodes")
    } else {
        rep
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockDistance {
    pub block: &'static str,
    pub distance: f64,
}

/// Distance between a simulated endpoint and the solved equilibrium. Not a
/// pass/fail check: trajectory convergence is observed, not guaranteed.
#[derive(Debug, Clone, Serialize)]
pub struct CrossValidationReport {
    pub horizon: usize,
    pub blocks: Vec<BlockDistance>,
    pub max_distance: f64,
    pub solver_residual: f64,
    pub solver_converged: bool,
}

pub fn cross_validate(cfg: &ValidatedConfig, horizon: usize, tol: f64) -> Result<CrossValidationReport, VerifyError> {
    let st0 = model::early_stage_state(cfg, model::DEFAULT_SEED_FRACTION, &Tech::BOTH)?;
    cross_validate_from(cfg, &st0, horizon, tol)
}

pub fn cross_validate_from(
    cfg: &ValidatedConfig,
    st0: &SystemState,
    horizon: usize,
    tol: f64,
) -> Result<CrossValidationReport, VerifyError> {
    let end = dynamics::simulate_streaming(cfg, st0, horizon, &[], Exec::Sequential, |_, _| {})?.final_state;
    let eq = equilibrium::solve_adoption_diffused(cfg, tol, equilibrium::DEFAULT_MAX_ITER)?;
    if !eq.converged {
        return Err(EquilibriumError::NotConverged { residual: eq.residual, iterations: eq.iterations }.into());
    }
    let d = end.block_distances(&eq.state);
    Ok(CrossValidationReport {
        horizon,
        blocks: BLOCK_NAMES.iter().zip(d).map(|(&block, distance)| BlockDistance { block, distance }).collect(),
        max_distance: d.into_iter().fold(0.0, f64::max),
        solver_residual: eq.residual,
        solver_converged: eq.converged,
    })
}

/// Settings for [`run_suite`].
#[derive(Debug, Clone, Serialize)]
pub struct SuiteOptions {
    pub horizon: usize,
    pub seed_fraction: f64,
    pub eps: f64,
    /// Box and simplex tolerance along trajectories.
    pub state_tol: f64,
    /// Tolerance for the equilibrium pattern checks.
    pub pattern_tol: f64,
    pub solver: SolverSettings,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            horizon: 1000,
            seed_fraction: model::DEFAULT_SEED_FRACTION,
            eps: 0.01,
            state_tol: model::STATE_TOL,
            pattern_tol: 1e-9,
            solver: SolverSettings { tol: equilibrium::DEFAULT_TOL, max_iter: equilibrium::DEFAULT_MAX_ITER },
        }
    }
}

/// The six property checks on one instance, in a fixed order.
pub fn run_suite(cfg: &ValidatedConfig, opts: &SuiteOptions) -> Result<Vec<PropertyReport>, VerifyError> {
    let st0 = model::early_stage_state(cfg, opts.seed_fraction, &Tech::BOTH)?;
    let tr = dynamics::simulate(cfg, &st0, opts.horizon, &[])?;
    let mut out = vec![
        check_invariance(&tr, opts.state_tol),
        check_monotone_s(&tr),
        check_opinion_floor(cfg, &tr, OPINION_SLACK),
        demo_instability(cfg, opts.eps, opts.horizon)?,
    ];
    let eq = equilibrium::solve_from(
        cfg,
        &vec![1.0; cfg.n()],
        SolverOptions { tol: opts.solver.tol, max_iter: opts.solver.max_iter },
    )?;
    if eq.converged && eq.kind == EquilibriumKind::AdoptionDiffused {
        out.push(check_no_partial_adoption(&eq, opts.pattern_tol));
        out.push(check_coexistence(cfg, &eq, opts.pattern_tol));
    } else {
        for p in [PropertyId::NoPartialAdoption, PropertyId::Coexistence] {
            out.push(
                PropertyReport::new(p, eq.residual.max(f64::MIN_POSITIVE), 0.0, None)
                    .with_note(format!("solver did not converge (residual {:e})", eq.residual)),
            );
        }
    }
    Ok(out)
}
