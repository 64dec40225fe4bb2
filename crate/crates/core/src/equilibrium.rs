//! Equilibria of the coupled model.
//!
//! The adoption-free equilibrium has everyone susceptible and opinions at
//! the solution of `(I - diag(lambda) W_s) x = (1 - lambda - xi) x0`.
//!
//! The adoption-diffused equilibrium has no susceptibles left. Its adopter
//! shares satisfy `a2 = (delta1 / delta2) a1` nodewise, and `a1` is the fixed
//! point of
//!
//! ```text
//! T_i(a) = 1 - (delta1_i / delta2_i) a_i
//!            - delta1_i a_i (1 / (gamma1_i x1_i(a)) + 1 / (gamma2_i x2_i(a)))
//! ```
//!
//! where `x_k(a)` is the opinion vector held in balance by adoption `a_k`.
//! `T` maps the box `[u, 1]` into itself; the solver runs a damped,
//! projected iteration on that box with an adaptive step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{max_abs_diff, SystemState, Tech, ValidatedConfig};
use crate::netgraph::WeightedDigraph;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Opinions at or below this are treated as degenerate in `T`.
pub const OPINION_FLOOR: f64 = 1e-12;

const LINEAR_MAX_ITER: usize = 100_000;
const ETA_INITIAL: f64 = 0.2;
const ETA_GROWTH: f64 = 1.25;
const ETA_GROWTH_AFTER: usize = 5;
const ETA_MIN: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("opinion system did not reach residual {tol:e} (achieved {residual:e} after {iterations} sweeps)")]
    LinearSolve { tol: f64, residual: f64, iterations: usize },
    #[error("delta must be strictly positive for the diffused solve (offending nodes: {0:?})")]
    NonPositiveDelta(Vec<(Tech, usize)>),
    #[error("x0 must be strictly positive for the diffused solve (offending nodes: {0:?})")]
    NonPositiveOpinion(Vec<(Tech, usize)>),
    #[error("opinion degenerate: {tech} opinion {value:e} at node {node}")]
    OpinionDegenerate { tech: Tech, node: usize, value: f64 },
    #[error("adoption vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("fixed-point iteration did not converge: best residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },
    #[error("reconstructed equilibrium violates the simplex by {err:e} (allowed {allowed:e})")]
    Simplex { err: f64, allowed: f64 },
}

/// Solves `(I - D) x = b` for `D = diag(lambda) W_s` by the iteration
/// `x <- D x + b`, which contracts in the max-norm because the rows of `D`
/// sum to at most `max(lambda) < 1`. Returns the iterate and its residual
/// `max |x - D x - b|`.
pub fn solve_opinion_system(
    damped: &WeightedDigraph,
    rhs: &[f64],
    tol: f64,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, f64), EquilibriumError> {
    let mut x = warm.map_or_else(|| rhs.to_vec(), <[f64]>::to_vec);
    let mut next = vec![0.0; rhs.len()];
    let mut residual = f64::INFINITY;
    for _ in 0..LINEAR_MAX_ITER {
        damped.mul_vec_into(&x, &mut next);
        residual = 0.0;
        for ((y, &b), &xi) in next.iter_mut().zip(rhs).zip(&x) {
            *y += b;
            residual = f64::max(residual, (*y - xi).abs());
        }
        if residual <= tol {
            return Ok((x, residual));
        }
        std::mem::swap(&mut x, &mut next);
    }
    Err(EquilibriumError::LinearSolve { tol, residual, iterations: LINEAR_MAX_ITER })
}

/// Inner linear solves run well below the outer tolerance so that `T` is
/// evaluated accurately even where opinions are small.
fn inner_tol(tol: f64) -> f64 {
    (tol / 10.0).min(1e-14)
}

/// Opinions at the adoption-free equilibrium, with the linear residuals.
#[derive(Debug, Clone)]
pub struct AdoptionFreeOpinions {
    pub x: [Vec<f64>; 2],
    pub residual: [f64; 2],
}

pub fn adoption_free_opinions(cfg: &ValidatedConfig, tol: f64) -> Result<AdoptionFreeOpinions, EquilibriumError> {
    let solve = |k: Tech| solve_opinion_system(cfg.damped_social(k), &cfg.params(k).opinion_floor(), tol, None);
    let (x1, r1) = solve(Tech::One)?;
    let (x2, r2) = solve(Tech::Two)?;
    Ok(AdoptionFreeOpinions { x: [x1, x2], residual: [r1, r2] })
}

/// Opinions balanced against adoption `a1` (and `a2` from the share ratio).
#[derive(Debug, Clone)]
pub struct OpinionResponse {
    pub a2: Vec<f64>,
    pub x: [Vec<f64>; 2],
}

fn check_delta(cfg: &ValidatedConfig) -> Result<(), EquilibriumError> {
    let bad: Vec<(Tech, usize)> = Tech::BOTH
        .into_iter()
        .flat_map(|k| cfg.params(k).delta.iter().enumerate().filter(|(_, &d)| !(d > 0.0)).map(move |(i, _)| (k, i)))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(EquilibriumError::NonPositiveDelta(bad))
    }
}

fn check_anchor(cfg: &ValidatedConfig) -> Result<(), EquilibriumError> {
    let bad: Vec<(Tech, usize)> = Tech::BOTH
        .into_iter()
        .flat_map(|k| cfg.params(k).x0.iter().enumerate().filter(|(_, &x)| !(x > 0.0)).map(move |(i, _)| (k, i)))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(EquilibriumError::NonPositiveOpinion(bad))
    }
}

/// `delta1 / delta2`, nodewise.
pub fn share_ratio(cfg: &ValidatedConfig) -> Result<Vec<f64>, EquilibriumError> {
    check_delta(cfg)?;
    Ok(cfg.tech[0].delta.iter().zip(&cfg.tech[1].delta).map(|(d1, d2)| d1 / d2).collect())
}

/// Precomputed pieces of `T` for one config.
struct FixedPointMap<'a> {
    cfg: &'a ValidatedConfig,
    ratio: Vec<f64>,
    floor: [Vec<f64>; 2],
    linear_tol: f64,
}

impl<'a> FixedPointMap<'a> {
    fn new(cfg: &'a ValidatedConfig, tol: f64) -> Result<Self, EquilibriumError> {
        let ratio = share_ratio(cfg)?;
        Ok(Self {
            cfg,
            ratio,
            floor: [cfg.tech[0].opinion_floor(), cfg.tech[1].opinion_floor()],
            linear_tol: inner_tol(tol),
        })
    }

    fn response(&self, a1: &[f64], warm: Option<&[Vec<f64>; 2]>) -> Result<OpinionResponse, EquilibriumError> {
        let n = self.cfg.n();
        if a1.len() != n {
            return Err(EquilibriumError::Dimension { expected: n, got: a1.len() });
        }
        let a2: Vec<f64> = a1.iter().zip(&self.ratio).map(|(a, r)| r * a).collect();
        let mut x: [Vec<f64>; 2] = Default::default();
        for k in Tech::BOTH {
            let adoption = if k == Tech::One { a1 } else { &a2 };
            let exposure = self.cfg.physical.mul_vec(adoption);
            let p = self.cfg.params(k);
            let rhs: Vec<f64> =
                self.floor[k.idx()].iter().zip(&p.xi).zip(&exposure).map(|((f, xi), e)| f + xi * e).collect();
            let (sol, _) = solve_opinion_system(
                self.cfg.damped_social(k),
                &rhs,
                self.linear_tol,
                warm.map(|w| w[k.idx()].as_slice()),
            )?;
            x[k.idx()] = sol;
        }
        Ok(OpinionResponse { a2, x })
    }

    fn apply(&self, a1: &[f64], resp: &OpinionResponse) -> Result<Vec<f64>, EquilibriumError> {
        let [p1, p2] = &self.cfg.tech;
        for k in Tech::BOTH {
            if let Some((node, &value)) = resp.x[k.idx()].iter().enumerate().find(|(_, &v)| !(v > OPINION_FLOOR)) {
                return Err(EquilibriumError::OpinionDegenerate { tech: k, node, value });
            }
        }
        Ok((0..a1.len())
            .map(|i| {
                let a = a1[i];
                let churn = 1.0 / (p1.gamma[i] * resp.x[0][i]) + 1.0 / (p2.gamma[i] * resp.x[1][i]);
                1.0 - self.ratio[i] * a - p1.delta[i] * a * churn
            })
            .collect())
    }
}

/// Opinion response to adoption `a1`, with `a2 = (delta1/delta2) a1`.
pub fn opinion_response(cfg: &ValidatedConfig, a1: &[f64], tol: f64) -> Result<OpinionResponse, EquilibriumError> {
    FixedPointMap::new(cfg, tol)?.response(a1, None)
}

/// The fixed-point map `T` evaluated at `a1`.
pub fn t_map(cfg: &ValidatedConfig, a1: &[f64], tol: f64) -> Result<Vec<f64>, EquilibriumError> {
    let map = FixedPointMap::new(cfg, tol)?;
    let resp = map.response(a1, None)?;
    map.apply(a1, &resp)
}

/// Lower corner `u` of the box `[u, 1]` that `T` maps into itself:
/// `u_i = max(0, 1 - delta1_i/delta2_i - phi_i)` where `phi_i` bounds the
/// churn term using the adoption-free opinions.
pub fn lower_bound_u(cfg: &ValidatedConfig, tol: f64) -> Result<Vec<f64>, EquilibriumError> {
    let ratio = share_ratio(cfg)?;
    let xe = adoption_free_opinions(cfg, inner_tol(tol))?.x;
    let [p1, p2] = &cfg.tech;
    Ok((0..cfg.n())
        .map(|i| {
            let phi = p1.delta[i] * (1.0 / (p1.gamma[i] * xe[0][i]) + 1.0 / (p2.gamma[i] * xe[1][i]));
            f64::max(0.0, 1.0 - ratio[i] - phi)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumKind {
    AdoptionFree,
    AdoptionDiffused,
}

/// Summary of the adaptive step history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaTrace {
    pub initial: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
    pub halvings: usize,
    pub raises: usize,
}

impl EtaTrace {
    fn start(eta: f64) -> Self {
        Self { initial: eta, last: eta, min: eta, max: eta, halvings: 0, raises: 0 }
    }

    fn record(&mut self, eta: f64) {
        self.last = eta;
        self.min = self.min.min(eta);
        self.max = self.max.max(eta);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Equilibrium {
    pub kind: EquilibriumKind,
    pub state: SystemState,
    /// `max |a - T(a)|` for the diffused kind; the opinion-system residual
    /// for the adoption-free kind.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub lower_bound: Vec<f64>,
    pub ratio_check_max_err: f64,
    pub simplex_max_err: f64,
    /// Whether the returned point touches the safeguard box `[u, 1]`.
    pub on_safeguard_boundary: bool,
    pub solver: Option<EtaTrace>,
}

/// `max_i |a2_i delta2_i - a1_i delta1_i|`.
pub fn ratio_error(cfg: &ValidatedConfig, st: &SystemState) -> f64 {
    let [p1, p2] = &cfg.tech;
    (0..st.n()).map(|i| (st.a[1][i] * p2.delta[i] - st.a[0][i] * p1.delta[i]).abs()).fold(0.0, f64::max)
}

fn simplex_error(st: &SystemState) -> f64 {
    (0..st.n()).map(|i| (st.compartment_sum(i) - 1.0).abs()).fold(0.0, f64::max)
}

pub fn adoption_free_equilibrium(cfg: &ValidatedConfig, tol: f64) -> Result<Equilibrium, EquilibriumError> {
    let xe = adoption_free_opinions(cfg, tol)?;
    let state = SystemState::adoption_free(xe.x);
    Ok(Equilibrium {
        kind: EquilibriumKind::AdoptionFree,
        simplex_max_err: simplex_error(&state),
        ratio_check_max_err: 0.0,
        state,
        residual: xe.residual[0].max(xe.residual[1]),
        iterations: 0,
        converged: true,
        lower_bound: vec![0.0; cfg.n()],
        on_safeguard_boundary: false,
        solver: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

fn project(a: &mut [f64], lo: &[f64]) {
    for (v, &l) in a.iter_mut().zip(lo) {
        *v = v.clamp(l, 1.0);
    }
}

/// Solves for the adoption-diffused equilibrium from the all-ones start.
pub fn solve_adoption_diffused(
    cfg: &ValidatedConfig,
    tol: f64,
    max_iter: usize,
) -> Result<Equilibrium, EquilibriumError> {
    solve_from(cfg, &vec![1.0; cfg.n()], SolverOptions { tol, max_iter })
}

/// Damped projected iteration `a <- clamp((1 - eta) a + eta T(a), u, 1)`
/// from `start`. `eta` starts at 0.2, halves whenever the residual grows and
/// grows by 1.25 (capped at 1) after five consecutive decreases.
pub fn solve_from(cfg: &ValidatedConfig, start: &[f64], opts: SolverOptions) -> Result<Equilibrium, EquilibriumError> {
    check_anchor(cfg)?;
    let map = FixedPointMap::new(cfg, opts.tol)?;
    let n = cfg.n();
    if start.len() != n {
        return Err(EquilibriumError::Dimension { expected: n, got: start.len() });
    }
    let u = lower_bound_u(cfg, opts.tol)?;

    let mut a = start.to_vec();
    project(&mut a, &u);
    let mut resp = map.response(&a, None)?;
    let mut image = map.apply(&a, &resp)?;
    let mut residual = max_abs_diff(&a, &image);
    let mut best = (residual, a.clone(), resp.clone());

    let mut eta = ETA_INITIAL;
    let mut trace = EtaTrace::start(eta);
    let mut decreases = 0;
    let mut iterations = 0;
    while residual > opts.tol && iterations < opts.max_iter && eta >= ETA_MIN {
        let mut next: Vec<f64> = a.iter().zip(&image).map(|(x, t)| (1.0 - eta) * x + eta * t).collect();
        project(&mut next, &u);
        let next_resp = map.response(&next, Some(&resp.x))?;
        let next_image = map.apply(&next, &next_resp)?;
        let next_residual = max_abs_diff(&next, &next_image);
        iterations += 1;

        if next_residual > residual {
            eta *= 0.5;
            trace.halvings += 1;
            decreases = 0;
        } else {
            decreases += 1;
            if decreases >= ETA_GROWTH_AFTER {
                eta = (eta * ETA_GROWTH).min(1.0);
                trace.raises += 1;
                decreases = 0;
            }
        }
        trace.record(eta);

        a = next;
        resp = next_resp;
        image = next_image;
        residual = next_residual;
        if residual < best.0 {
            best = (residual, a.clone(), resp.clone());
        }
    }

    let converged = best.0 <= opts.tol;
    let (residual, a1, resp) = best;
    let state = reconstruct(cfg, &a1, &resp);
    let simplex_max_err = simplex_error(&state);
    if converged && simplex_max_err > 10.0 * opts.tol {
        return Err(EquilibriumError::Simplex { err: simplex_max_err, allowed: 10.0 * opts.tol });
    }
    let on_safeguard_boundary = a1.iter().zip(&u).any(|(&v, &l)| (l > 0.0 && v == l) || v == 1.0);
    Ok(Equilibrium {
        kind: EquilibriumKind::AdoptionDiffused,
        ratio_check_max_err: ratio_error(cfg, &state),
        simplex_max_err,
        state,
        residual,
        iterations,
        converged,
        lower_bound: u,
        on_safeguard_boundary,
        solver: Some(trace),
    })
}

/// Full state from the tech-1 adoption vector: shares by the ratio law,
/// dissatisfied pools from the balance of switching flows, no susceptibles.
fn reconstruct(cfg: &ValidatedConfig, a1: &[f64], resp: &OpinionResponse) -> SystemState {
    let [p1, p2] = &cfg.tech;
    let n = a1.len();
    let mut st = SystemState::zeros(n);
    for i in 0..n {
        let outflow = p1.delta[i] * a1[i];
        st.a[0][i] = a1[i];
        st.a[1][i] = resp.a2[i];
        st.d[0][i] = outflow / (p2.gamma[i] * resp.x[1][i]);
        st.d[1][i] = outflow / (p1.gamma[i] * resp.x[0][i]);
    }
    st.x = resp.x.clone();
    st
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub runs: usize,
    /// Converged fixed points `a1*`, in run order.
    pub fixed_points: Vec<Vec<f64>>,
    /// Run indices that did not converge.
    pub non_converged: Vec<usize>,
    pub max_pairwise_distance: f64,
    pub tolerance: f64,
    /// At least one run converged, every run converged and all fixed points
    /// lie within `10 * tol` of each other.
    pub corroborated: bool,
}

/// Runs the solver from the corners `u` and `1` and from `starts` random
/// points of `[u, 1]`, and measures how far apart the fixed points are.
pub fn multi_start_uniqueness_check(
    cfg: &ValidatedConfig,
    tol: f64,
    starts: usize,
    seed: u64,
) -> Result<UniquenessReport, EquilibriumError> {
    multi_start_with(cfg, SolverOptions { tol, max_iter: DEFAULT_MAX_ITER }, starts, seed)
}

pub fn multi_start_with(
    cfg: &ValidatedConfig,
    opts: SolverOptions,
    starts: usize,
    seed: u64,
) -> Result<UniquenessReport, EquilibriumError> {
    let u = lower_bound_u(cfg, opts.tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = vec![u.clone(), vec![1.0; cfg.n()]];
    for _ in 0..starts {
        points.push(u.iter().map(|&l| l + (1.0 - l) * rng.gen::<f64>()).collect());
    }

    let mut fixed_points = Vec::new();
    let mut non_converged = Vec::new();
    for (run, p) in points.iter().enumerate() {
        let eq = solve_from(cfg, p, opts)?;
        if eq.converged {
            fixed_points.push(eq.state.a[0].clone());
        } else {
            non_converged.push(run);
        }
    }
    let mut max_pairwise_distance = 0.0f64;
    for (i, p) in fixed_points.iter().enumerate() {
        for q in &fixed_points[i + 1..] {
            max_pairwise_distance = max_pairwise_distance.max(max_abs_diff(p, q));
        }
    }
    Ok(UniquenessReport {
        runs: points.len(),
        corroborated: !fixed_points.is_empty() && non_converged.is_empty() && max_pairwise_distance <= 10.0 * opts.tol,
        fixed_points,
        non_converged,
        max_pairwise_distance,
        tolerance: opts.tol,
    })
}
