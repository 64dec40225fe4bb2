//! Model parameters, the 7n-dimensional state, structural validation and
//! seeded random instances.

use std::fmt;
use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::netgraph::{self, GraphError, WeightedDigraph};

/// Identifier of the generator behind [`random_instance`], recorded in run
/// manifests.
pub const PRNG_ALGORITHM: &str = "ChaCha8Rng/seed_from_u64 (rand_chacha 0.3)";

/// Upper cap on `beta1 + beta2` enforced while sampling.
pub const BETA_SUM_CAP: f64 = 0.95;
/// Upper cap on `lambda + xi` enforced while sampling.
pub const LAMBDA_XI_CAP: f64 = 0.9;
/// Default susceptible-to-adopter seed used for early-stage initial states.
pub const DEFAULT_SEED_FRACTION: f64 = 0.01;
/// Default compartment-sum tolerance for states produced by long runs.
pub const STATE_TOL: f64 = 1e-9;
/// Compartment-sum tolerance for freshly constructed states.
pub const FRESH_STATE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("infeasible parameter range `{name}`: {reason}")]
    InfeasibleRange { name: String, reason: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("generated instance failed validation: {0}")]
    Generated(ValidationReport),
}

/// One of the two competing technologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tech {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

impl Tech {
    pub const BOTH: [Tech; 2] = [Tech::One, Tech::Two];

    #[inline]
    pub fn idx(self) -> usize {
        match self {
            Tech::One => 0,
            Tech::Two => 1,
        }
    }

    #[inline]
    pub fn other(self) -> Tech {
        match self {
            Tech::One => Tech::Two,
            Tech::Two => Tech::One,
        }
    }

    pub fn from_number(k: u32) -> Option<Tech> {
        match k {
            1 => Some(Tech::One),
            2 => Some(Tech::Two),
            _ => None,
        }
    }

    pub fn number(self) -> u32 {
        self.idx() as u32 + 1
    }
}

impl fmt::Display for Tech {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tech{}", self.number())
    }
}

/// Per-node rates of one technology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechParams {
    /// Adoption susceptibility, in `[0, 1]`.
    pub beta: Vec<f64>,
    /// Switching rate out of the rival's dissatisfied pool, in `(0, 1)`.
    pub gamma: Vec<f64>,
    /// Dissatisfaction rate, in `[0, 1]`.
    pub delta: Vec<f64>,
    /// Weight on neighbors' opinions.
    pub lambda: Vec<f64>,
    /// Weight on observed adoption; strictly positive.
    pub xi: Vec<f64>,
    /// Initial opinion, which also anchors the opinion update.
    pub x0: Vec<f64>,
}

impl TechParams {
    /// Same value at every node.
    pub fn uniform(n: usize, beta: f64, gamma: f64, delta: f64, lambda: f64, xi: f64, x0: f64) -> Self {
        Self {
            beta: vec![beta; n],
            gamma: vec![gamma; n],
            delta: vec![delta; n],
            lambda: vec![lambda; n],
            xi: vec![xi; n],
            x0: vec![x0; n],
        }
    }

    fn fields(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("delta", &self.delta),
            ("lambda", &self.lambda),
            ("xi", &self.xi),
            ("x0", &self.x0),
        ]
    }

    /// `1 - lambda - xi`, the weight on the anchor opinion.
    pub fn anchor_weight(&self) -> Vec<f64> {
        self.lambda.iter().zip(&self.xi).map(|(l, x)| 1.0 - l - x).collect()
    }

    /// Entrywise `(1 - lambda - xi) x0`: the floor for every opinion iterate.
    pub fn opinion_floor(&self) -> Vec<f64> {
        self.anchor_weight().iter().zip(&self.x0).map(|(w, x)| w * x).collect()
    }
}

/// A model instance: physical network, social network and both technologies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub physical: WeightedDigraph,
    pub social: WeightedDigraph,
    pub tech: [TechParams; 2],
}

impl ModelConfig {
    pub fn new(
        physical: WeightedDigraph,
        social: WeightedDigraph,
        tech1: TechParams,
        tech2: TechParams,
    ) -> Result<Self, ModelError> {
        let cfg = Self { physical, social, tech: [tech1, tech2] };
        cfg.check_dimensions()?;
        Ok(cfg)
    }

    pub fn n(&self) -> usize {
        self.physical.n()
    }

    pub fn params(&self, k: Tech) -> &TechParams {
        &self.tech[k.idx()]
    }

    pub fn check_dimensions(&self) -> Result<(), ModelError> {
        let n = self.physical.n();
        if self.social.n() != n {
            return Err(ModelError::Dimension(format!(
                "physical graph has {n} nodes, social graph has {}",
                self.social.n()
            )));
        }
        for k in Tech::BOTH {
            for (name, v) in self.params(k).fields() {
                if v.len() != n {
                    return Err(ModelError::Dimension(format!("{k} {name} has length {}, expected {n}", v.len())));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Runs [`validate_assumption1`] and wraps the config on success.
    pub fn validate(self, tol: f64) -> Result<ValidatedConfig, ValidationReport> {
        let report = validate_assumption1(&self, tol);
        if report.pass() {
            Ok(ValidatedConfig::wrap(self))
        } else {
            Err(report)
        }
    }

    /// Wraps a config whose dimensions agree without checking the rate
    /// constraints. For degenerate instances in tests (e.g. `xi = 0`).
    pub fn assume_validated(self) -> Result<ValidatedConfig, ModelError> {
        self.check_dimensions()?;
        Ok(ValidatedConfig::wrap(self))
    }
}

/// A config that passed [`validate_assumption1`], with `diag(lambda_k) W_social`
/// precomputed for both technologies.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    cfg: ModelConfig,
    damped_social: [WeightedDigraph; 2],
}

impl ValidatedConfig {
    fn wrap(cfg: ModelConfig) -> Self {
        let damped_social = [cfg.social.scale_rows(&cfg.tech[0].lambda), cfg.social.scale_rows(&cfg.tech[1].lambda)];
        Self { cfg, damped_social }
    }

    /// `diag(lambda_k) W_social`.
    pub fn damped_social(&self, k: Tech) -> &WeightedDigraph {
        &self.damped_social[k.idx()]
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn into_inner(self) -> ModelConfig {
        self.cfg
    }
}

impl Deref for ValidatedConfig {
    type Target = ModelConfig;
    fn deref(&self) -> &ModelConfig {
        &self.cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    Dimension,
    RowStochastic,
    Irreducible,
    AnchorReachable,
    BetaRange,
    BetaSum,
    GammaRange,
    DeltaRange,
    LambdaRange,
    XiPositive,
    LambdaXiSum,
    X0Range,
    NonFinite,
    Box,
    Simplex,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub clause: Clause,
    pub message: String,
}

/// Outcome of a validation: passes iff there are no violations.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, clause: Clause) -> bool {
        self.violations.iter().any(|v| v.clause == clause)
    }

    fn push(&mut self, clause: Clause, message: impl Into<String>) {
        self.violations.push(Violation { clause, message: message.into() });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.pass() {
            return write!(f, "pass");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}", v.message)?;
        }
        Ok(())
    }
}

/// Checks every structural and rate condition the model's analysis relies on.
pub fn validate_assumption1(cfg: &ModelConfig, tol: f64) -> ValidationReport {
    let mut rep = ValidationReport::default();
    if let Err(e) = cfg.check_dimensions() {
        rep.push(Clause::Dimension, e.to_string());
        return rep;
    }
    let n = cfg.n();

    for (layer, g) in [("physical", &cfg.physical), ("social", &cfg.social)] {
        let rs = netgraph::check_row_stochastic(g, tol);
        for (row, dev) in rs.offending_rows {
            rep.push(Clause::RowStochastic, format!("{layer} graph row {row} deviates from sum 1 by {dev:e}"));
        }
    }
    if !netgraph::is_irreducible(&cfg.physical) {
        rep.push(Clause::Irreducible, "physical graph is not strongly connected");
    }

    for k in Tech::BOTH {
        let p = cfg.params(k);
        for (name, v) in p.fields() {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                rep.push(Clause::NonFinite, format!("{k} {name} is not finite at node {i}"));
            }
        }
        for i in 0..n {
            if !(0.0..=1.0).contains(&p.beta[i]) {
                rep.push(Clause::BetaRange, format!("{k} β = {} ∉ [0,1] at node {i}", p.beta[i]));
            }
            if !(p.gamma[i] > 0.0 && p.gamma[i] < 1.0) {
                rep.push(Clause::GammaRange, format!("{k} γ = {} ∉ (0,1) at node {i}", p.gamma[i]));
            }
            if !(0.0..=1.0).contains(&p.delta[i]) {
                rep.push(Clause::DeltaRange, format!("{k} δ = {} ∉ [0,1] at node {i}", p.delta[i]));
            }
            if !(p.lambda[i] >= 0.0) {
                rep.push(Clause::LambdaRange, format!("{k} λ = {} is negative at node {i}", p.lambda[i]));
            }
            if !(p.lambda[i] + p.xi[i] < 1.0) {
                rep.push(
                    Clause::LambdaXiSum,
                    format!("{k} λ + ξ = {} is not below 1 at node {i}", p.lambda[i] + p.xi[i]),
                );
            }
            if !(0.0..=1.0).contains(&p.x0[i]) {
                rep.push(Clause::X0Range, format!("{k} x0 = {} ∉ [0,1] at node {i}", p.x0[i]));
            }
        }
        let bad_xi: Vec<usize> = (0..n).filter(|&i| !(p.xi[i] > 0.0)).collect();
        if !bad_xi.is_empty() {
            rep.push(Clause::XiPositive, format!("{k} ξ must be strictly positive (nodes {bad_xi:?})"));
        }
        let anchored: Vec<bool> = (0..n).map(|j| p.lambda[j] < 1.0 && p.x0[j] > 0.0).collect();
        let reach = netgraph::check_reachability_to_anchored(&cfg.social, &anchored);
        let stranded: Vec<usize> = (0..n).filter(|&i| !reach[i]).collect();
        if !stranded.is_empty() {
            rep.push(
                Clause::AnchorReachable,
                format!("{k}: nodes {stranded:?} reach no node with λ < 1 and x0 > 0 in the social graph"),
            );
        }
    }

    for i in 0..n {
        let sum = cfg.tech[0].beta[i] + cfg.tech[1].beta[i];
        if !(sum > 0.0 && sum < 1.0) {
            rep.push(Clause::BetaSum, format!("β sum = {sum} ∉ (0,1) at node {i}"));
        }
    }
    rep
}

/// Full state `(s, a1, a2, d1, d2, x1, x2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub s: Vec<f64>,
    pub a: [Vec<f64>; 2],
    pub d: [Vec<f64>; 2],
    pub x: [Vec<f64>; 2],
}

/// Column names of the seven state blocks, in storage order.
pub const BLOCK_NAMES: [&str; 7] = ["s", "a1", "a2", "d1", "d2", "x1", "x2"];

impl SystemState {
    /// Everyone susceptible, no adopters, opinions `x`.
    pub fn adoption_free(x: [Vec<f64>; 2]) -> Self {
        let n = x[0].len();
        Self { s: vec![1.0; n], a: [vec![0.0; n], vec![0.0; n]], d: [vec![0.0; n], vec![0.0; n]], x }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            s: vec![0.0; n],
            a: [vec![0.0; n], vec![0.0; n]],
            d: [vec![0.0; n], vec![0.0; n]],
            x: [vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn blocks(&self) -> [&[f64]; 7] {
        [&self.s, &self.a[0], &self.a[1], &self.d[0], &self.d[1], &self.x[0], &self.x[1]]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 7] {
        let [a1, a2] = &mut self.a;
        let [d1, d2] = &mut self.d;
        let [x1, x2] = &mut self.x;
        [&mut self.s, a1, a2, d1, d2, x1, x2]
    }

    /// `s + a1 + a2 + d1 + d2` at node `i`.
    pub fn compartment_sum(&self, i: usize) -> f64 {
        self.s[i] + self.a[0][i] + self.a[1][i] + self.d[0][i] + self.d[1][i]
    }

    /// The seven values at node `i`, in block order.
    pub fn node_values(&self, i: usize) -> [f64; 7] {
        self.blocks().map(|b| b[i])
    }

    pub fn is_dimension_consistent(&self) -> bool {
        let n = self.n();
        self.blocks().iter().all(|b| b.len() == n)
    }

    /// Max-norm distance per block.
    pub fn block_distances(&self, other: &SystemState) -> [f64; 7] {
        let (a, b) = (self.blocks(), other.blocks());
        std::array::from_fn(|k| max_abs_diff(a[k], b[k]))
    }

    /// Max-norm distance over all 7n entries.
    pub fn max_abs_diff(&self, other: &SystemState) -> f64 {
        self.block_distances(other).into_iter().fold(0.0, f64::max)
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Box `[0,1]^{7n}` and per-node compartment sum equal to one, within `tol`.
pub fn validate_initial_state(st: &SystemState, tol: f64) -> ValidationReport {
    let mut rep = ValidationReport::default();
    if !st.is_dimension_consistent() {
        rep.push(Clause::Dimension, "state blocks have different lengths");
        return rep;
    }
    for (name, block) in BLOCK_NAMES.iter().zip(st.blocks()) {
        for (i, &v) in block.iter().enumerate() {
            if !v.is_finite() {
                rep.push(Clause::NonFinite, format!("{name} is not finite at node {i}"));
            } else if v < -tol || v > 1.0 + tol {
                rep.push(Clause::Box, format!("{name} = {v} ∉ [0,1] at node {i}"));
            }
        }
    }
    for i in 0..st.n() {
        let sum = st.compartment_sum(i);
        if (sum - 1.0).abs() > tol {
            rep.push(Clause::Simplex, format!("compartment sum = {sum} ≠ 1 at node {i}"));
        }
    }
    rep
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Sampling ranges for [`random_instance`]. Indexed by technology where
/// the two differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub beta: [Interval; 2],
    pub gamma: [Interval; 2],
    pub delta: [Interval; 2],
    pub lambda: Interval,
    pub xi: Interval,
    pub x0: Interval,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            beta: [Interval::new(0.25, 0.45), Interval::new(0.15, 0.35)],
            gamma: [Interval::new(0.3, 0.7); 2],
            delta: [Interval::new(0.15, 0.3), Interval::new(0.05, 0.15)],
            lambda: Interval::new(0.1, 0.4),
            xi: Interval::new(0.1, 0.4),
            x0: Interval::new(0.3, 0.7),
        }
    }
}

impl ParamRanges {
    /// Technology 1 adopts faster but disappoints more, at every node:
    /// disjoint ranges give `beta1 > beta2` and `delta1 > delta2` nodewise.
    pub fn marketing_vs_quality() -> Self {
        Self {
            beta: [Interval::new(0.55, 0.65), Interval::new(0.15, 0.25)],
            delta: [Interval::new(0.2, 0.3), Interval::new(0.05, 0.12)],
            ..Self::default()
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        let infeasible = |name: &str, reason: String| ModelError::InfeasibleRange { name: name.to_string(), reason };
        let named = [
            ("beta1", self.beta[0]),
            ("beta2", self.beta[1]),
            ("gamma1", self.gamma[0]),
            ("gamma2", self.gamma[1]),
            ("delta1", self.delta[0]),
            ("delta2", self.delta[1]),
            ("lambda", self.lambda),
            ("xi", self.xi),
            ("x0", self.x0),
        ];
        for (name, r) in named {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return Err(infeasible(name, format!("[{}, {}] is not a valid interval", r.lo, r.hi)));
            }
        }
        for (name, r) in &named[..2] {
            if r.lo < 0.0 || r.hi > 1.0 {
                return Err(infeasible(name, "must lie in [0,1]".into()));
            }
        }
        if self.beta[0].lo + self.beta[1].lo >= BETA_SUM_CAP {
            return Err(infeasible(
                "beta1+beta2",
                format!(
                    "smallest sum {} is not below {BETA_SUM_CAP}; β sums can exceed the cap",
                    self.beta[0].lo + self.beta[1].lo
                ),
            ));
        }
        if self.beta[0].hi + self.beta[1].hi <= 0.0 {
            return Err(infeasible("beta1+beta2", "β sum would be zero".into()));
        }
        for (name, r) in &named[2..4] {
            if r.lo <= 0.0 || r.hi >= 1.0 {
                return Err(infeasible(name, "must lie in (0,1)".into()));
            }
        }
        for (name, r) in &named[4..6] {
            if r.lo < 0.0 || r.hi > 1.0 {
                return Err(infeasible(name, "must lie in [0,1]".into()));
            }
        }
        if self.lambda.lo < 0.0 {
            return Err(infeasible("lambda", "must be nonnegative".into()));
        }
        if self.xi.lo <= 0.0 {
            return Err(infeasible("xi", "must be strictly positive".into()));
        }
        if self.lambda.lo + self.xi.lo >= LAMBDA_XI_CAP {
            return Err(infeasible(
                "lambda+xi",
                format!("smallest sum {} is not below {LAMBDA_XI_CAP}", self.lambda.lo + self.xi.lo),
            ));
        }
        if self.x0.lo <= 0.0 || self.x0.hi > 1.0 {
            return Err(infeasible("x0", "must lie in (0,1]".into()));
        }
        Ok(())
    }
}

/// Directed Erdős–Rényi graph without self-loops, plus the ring
/// `i -> i+1 (mod n)` so it is strongly connected, then row-normalized.
/// Positive weights are uniform on `[0.1, 1]` before normalization.
fn random_graph<R: Rng>(rng: &mut R, n: usize, density: f64) -> Result<WeightedDigraph, GraphError> {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen::<f64>() < density {
                w[i * n + j] = rng.gen_range(0.1..=1.0);
            }
        }
        let next = (i + 1) % n;
        if w[i * n + next] == 0.0 {
            w[i * n + next] = rng.gen_range(0.1..=1.0);
        }
    }
    WeightedDigraph::from_dense(n, w)?.row_normalized()
}

/// Seeded random instance; identical arguments give bit-identical configs.
pub fn random_instance(n: usize, seed: u64, ranges: &ParamRanges, density: f64) -> Result<ValidatedConfig, ModelError> {
    if n == 0 {
        return Err(ModelError::Argument("n must be positive".into()));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(ModelError::Argument(format!("density {density} ∉ (0,1]")));
    }
    ranges.check()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let physical = random_graph(&mut rng, n, density)?;
    let social = random_graph(&mut rng, n, density)?;

    let mut tech = [TechParams::uniform(n, 0., 0., 0., 0., 0., 0.), TechParams::uniform(n, 0., 0., 0., 0., 0., 0.)];
    for i in 0..n {
        let (b1, b2) = loop {
            let b1 = ranges.beta[0].sample(&mut rng);
            let b2 = ranges.beta[1].sample(&mut rng);
            let sum = b1 + b2;
            if sum > 0.0 && sum < BETA_SUM_CAP {
                break (b1, b2);
            }
        };
        tech[0].beta[i] = b1;
        tech[1].beta[i] = b2;
        for k in 0..2 {
            let p = &mut tech[k];
            p.gamma[i] = ranges.gamma[k].sample(&mut rng);
            p.delta[i] = ranges.delta[k].sample(&mut rng);
            let (l, x) = loop {
                let l = ranges.lambda.sample(&mut rng);
                let x = ranges.xi.sample(&mut rng);
                if l + x <= LAMBDA_XI_CAP {
                    break (l, x);
                }
            };
            p.lambda[i] = l;
            p.xi[i] = x;
            p.x0[i] = ranges.x0.sample(&mut rng);
        }
    }
    let [t1, t2] = tech;
    let cfg = ModelConfig::new(physical, social, t1, t2)?;
    cfg.validate(FRESH_STATE_TOL).map_err(ModelError::Generated)
}

/// Early diffusion: `seed_fraction` of each node adopted each technology in
/// `which`, nobody dissatisfied, opinions at `x0`.
pub fn early_stage_state(cfg: &ModelConfig, seed_fraction: f64, which: &[Tech]) -> Result<SystemState, ModelError> {
    let mut seeded = [false; 2];
    for k in which {
        seeded[k.idx()] = true;
    }
    let count = seeded.iter().filter(|&&b| b).count() as f64;
    if !(seed_fraction > 0.0 && seed_fraction < 1.0) || seed_fraction * count >= 1.0 {
        return Err(ModelError::Argument(format!(
            "seed fraction {seed_fraction} for {count} technologies leaves no susceptibles"
        )));
    }
    let n = cfg.n();
    let mut st = SystemState::adoption_free([cfg.tech[0].x0.clone(), cfg.tech[1].x0.clone()]);
    for k in Tech::BOTH {
        if seeded[k.idx()] {
            st.a[k.idx()] = vec![seed_fraction; n];
        }
    }
    let s = 1.0 - seed_fraction * count;
    st.s = vec![s; n];
    Ok(st)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Scalar instance used throughout the test suite.
    pub(crate) fn e1() -> ModelConfig {
        let one = WeightedDigraph::from_rows(vec![vec![1.0]]).unwrap();
        ModelConfig::new(
            one.clone(),
            one,
            TechParams::uniform(1, 0.3, 0.5, 0.2, 0.2, 0.3, 0.5),
            TechParams::uniform(1, 0.2, 0.5, 0.1, 0.2, 0.3, 0.5),
        )
        .unwrap()
    }

    #[test]
    fn e1_passes_validation() {
        let rep = validate_assumption1(&e1(), 1e-12);
        assert!(rep.pass(), "{rep}");
    }

    #[test]
    fn beta_sum_violation_is_reported() {
        let mut cfg = e1();
        cfg.tech[0].beta = vec![0.6];
        cfg.tech[1].beta = vec![0.5];
        let rep = validate_assumption1(&cfg, 1e-12);
        assert!(!rep.pass());
        assert!(rep.has(Clause::BetaSum));
        let msg = &rep.violations.iter().find(|v| v.clause == Clause::BetaSum).unwrap().message;
        assert!(msg.contains("1.1") && msg.contains("node 0"), "{msg}");
    }

    #[test]
    fn zero_xi_is_reported() {
        let mut cfg = e1();
        cfg.tech[0].xi = vec![0.0];
        cfg.tech[1].xi = vec![0.0];
        let rep = validate_assumption1(&cfg, 1e-12);
        assert!(rep.has(Clause::XiPositive));
        assert!(rep.to_string().contains("ξ must be strictly positive"));
    }

    #[test]
    fn gamma_one_is_rejected() {
        let mut cfg = e1();
        cfg.tech[1].gamma = vec![1.0];
        assert!(validate_assumption1(&cfg, 1e-12).has(Clause::GammaRange));
    }

    #[test]
    fn reducible_physical_graph_is_rejected() {
        let id = WeightedDigraph::identity(2).unwrap();
        let cfg = ModelConfig::new(
            id.clone(),
            id,
            TechParams::uniform(2, 0.3, 0.5, 0.2, 0.2, 0.3, 0.5),
            TechParams::uniform(2, 0.2, 0.5, 0.1, 0.2, 0.3, 0.5),
        )
        .unwrap();
        let rep = validate_assumption1(&cfg, 1e-12);
        assert!(rep.has(Clause::Irreducible));
        // self-loops still let every node reach itself in the social layer
        assert!(!rep.has(Clause::AnchorReachable));
    }

    #[test]
    fn unanchored_social_node_is_rejected() {
        // node 0 listens only to itself and has x0 = 0
        let social = WeightedDigraph::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let mut t = TechParams::uniform(2, 0.3, 0.5, 0.2, 0.2, 0.3, 0.5);
        t.x0 = vec![0.0, 0.5];
        let cfg = ModelConfig::new(
            WeightedDigraph::ring(2).unwrap(),
            social,
            t,
            TechParams::uniform(2, 0.2, 0.5, 0.1, 0.2, 0.3, 0.5),
        )
        .unwrap();
        let rep = validate_assumption1(&cfg, 1e-12);
        assert!(rep.has(Clause::AnchorReachable), "{rep}");
    }

    #[test]
    fn dimension_mismatch() {
        let one = WeightedDigraph::from_rows(vec![vec![1.0]]).unwrap();
        let err = ModelConfig::new(
            one.clone(),
            WeightedDigraph::ring(2).unwrap(),
            TechParams::uniform(1, 0.3, 0.5, 0.2, 0.2, 0.3, 0.5),
            TechParams::uniform(1, 0.2, 0.5, 0.1, 0.2, 0.3, 0.5),
        );
        assert!(matches!(err, Err(ModelError::Dimension(_))));
    }

    #[test]
    fn initial_state_checks() {
        let st = SystemState::adoption_free([vec![0.3, 0.9], vec![0.0, 1.0]]);
        assert!(validate_initial_state(&st, FRESH_STATE_TOL).pass());

        let mut bad = SystemState::zeros(1);
        bad.s[0] = 0.8;
        bad.a[0][0] = 0.3;
        let rep = validate_initial_state(&bad, FRESH_STATE_TOL);
        assert!(rep.has(Clause::Simplex) && !rep.has(Clause::Box));

        let mut bad = SystemState::adoption_free([vec![0.5], vec![0.5]]);
        bad.x[0][0] = 1.2;
        assert!(validate_initial_state(&bad, FRESH_STATE_TOL).has(Clause::Box));
    }

    #[test]
    fn random_instance_is_deterministic() {
        let r = ParamRanges::default();
        let a = random_instance(50, 7, &r, 0.2).unwrap();
        let b = random_instance(50, 7, &r, 0.2).unwrap();
        assert_eq!(a.config(), b.config());
        assert_eq!(a.digest(), b.digest());
        let c = random_instance(50, 8, &r, 0.2).unwrap();
        assert_ne!(a.config(), c.config());
    }

    #[test]
    fn random_instances_validate() {
        let r = ParamRanges::default();
        for n in [1, 2, 10, 50] {
            for seed in 0..30 {
                let cfg = random_instance(n, seed, &r, 0.2).unwrap();
                assert!(validate_assumption1(&cfg, 1e-12).pass());
            }
        }
    }

    #[test]
    fn infeasible_beta_ranges_are_rejected() {
        let r = ParamRanges { beta: [Interval::new(0.6, 0.9), Interval::new(0.6, 0.9)], ..ParamRanges::default() };
        match random_instance(50, 7, &r, 0.2) {
            Err(ModelError::InfeasibleRange { name, .. }) => assert_eq!(name, "beta1+beta2"),
            other => panic!("expected infeasible range, got {other:?}"),
        }
    }

    #[test]
    fn marketing_vs_quality_is_ordered_nodewise() {
        let cfg = random_instance(50, 3, &ParamRanges::marketing_vs_quality(), 0.2).unwrap();
        for i in 0..50 {
            assert!(cfg.tech[0].beta[i] > cfg.tech[1].beta[i]);
            assert!(cfg.tech[0].delta[i] > cfg.tech[1].delta[i]);
        }
    }

    #[test]
    fn early_stage_shapes() {
        let cfg = e1();
        let st = early_stage_state(&cfg, 0.01, &Tech::BOTH).unwrap();
        assert_eq!(st.s, vec![0.98]);
        assert_eq!(st.a, [vec![0.01], vec![0.01]]);
        assert_eq!(st.d, [vec![0.0], vec![0.0]]);
        assert_eq!(st.x, [vec![0.5], vec![0.5]]);
        assert!(validate_initial_state(&st, FRESH_STATE_TOL).pass());

        let st = early_stage_state(&cfg, 0.01, &[Tech::One]).unwrap();
        assert_eq!(st.a[1], vec![0.0]);
        assert_eq!(st.s, vec![0.99]);

        assert!(early_stage_state(&cfg, 0.5, &Tech::BOTH).is_err());
        assert!(early_stage_state(&cfg, 0.0, &[Tech::One]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn generated_configs_roundtrip_through_json(n in 1usize..12, seed in any::<u64>()) {
                let cfg = random_instance(n, seed, &ParamRanges::default(), 0.3).unwrap().into_inner();
                let text = serde_json::to_string(&cfg).unwrap();
                let back: ModelConfig = serde_json::from_str(&text).unwrap();
                prop_assert_eq!(back, cfg);
            }

            #[test]
            fn early_stage_conserves_mass(
                n in 1usize..20,
                seed in any::<u64>(),
                frac in 1e-6f64..0.49,
                both in any::<bool>(),
            ) {
                let cfg = random_instance(n, seed, &ParamRanges::default(), 0.3).unwrap();
                let which: &[Tech] = if both { &Tech::BOTH } else { &[Tech::Two] };
                let st = early_stage_state(&cfg, frac, which).unwrap();
                for i in 0..n {
                    prop_assert!((st.compartment_sum(i) - 1.0).abs() <= 1e-15);
                }
            }
        }
    }
}
