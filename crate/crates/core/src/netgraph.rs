//! Dense weighted digraphs and the structural checks the model needs:
//! row-stochasticity, strong connectivity, reachability of anchored nodes
//! and a certified power-iteration estimate of the spectral radius.
//!
//! Entry `(i, j)` of the weight matrix is the influence of node `j` on
//! node `i`. Following the influence, node `i` "listens to" node `j`
//! whenever `weights[i][j] > 0`.

use std::collections::VecDeque;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("row {row} has {len} entries, expected {n}")]
    Ragged { row: usize, len: usize, n: usize },
    #[error("weight at ({row}, {col}) is {value}; weights must be finite and nonnegative")]
    BadWeight { row: usize, col: usize, value: f64 },
    #[error("edge {src}->{dst} is out of range for {n} nodes")]
    OutOfRange { src: usize, dst: usize, n: usize },
    #[error("row {0} sums to zero and cannot be normalized")]
    ZeroRow(usize),
    #[error("edge list: {0}")]
    Csv(#[from] csv::Error),
}

/// Directed weighted graph stored as a dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct WeightedDigraph {
    n: usize,
    weights: Vec<f64>,
}

impl WeightedDigraph {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, GraphError> {
        let n = rows.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut weights = Vec::with_capacity(n * n);
        for (row, r) in rows.into_iter().enumerate() {
            if r.len() != n {
                return Err(GraphError::Ragged { row, len: r.len(), n });
            }
            weights.extend(r);
        }
        Self::from_dense(n, weights)
    }

    /// Builds from a row-major buffer of length `n * n`.
    pub fn from_dense(n: usize, weights: Vec<f64>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if weights.len() != n * n {
            return Err(GraphError::Ragged { row: 0, len: weights.len(), n: n * n });
        }
        for (idx, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(GraphError::BadWeight { row: idx / n, col: idx % n, value: w });
            }
        }
        Ok(Self { n, weights })
    }

    pub fn identity(n: usize) -> Result<Self, GraphError> {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Self::from_dense(n, w)
    }

    /// Directed ring where node `i` listens to node `i + 1 (mod n)` with weight 1.
    pub fn ring(n: usize) -> Result<Self, GraphError> {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + (i + 1) % n] = 1.0;
        }
        Self::from_dense(n, w)
    }

    /// Reads an edge list with header `src,dst,weight`. Each line adds
    /// `weight` to entry `(dst, src)`: the source influences the destination.
    /// Repeated edges accumulate.
    pub fn from_edge_csv<R: Read>(reader: R, n: usize, normalize: bool) -> Result<Self, GraphError> {
        #[derive(Deserialize)]
        struct Edge {
            src: usize,
            dst: usize,
            weight: f64,
        }
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut w = vec![0.0; n * n];
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for rec in rdr.deserialize() {
            let e: Edge = rec?;
            if e.src >= n || e.dst >= n {
                return Err(GraphError::OutOfRange { src: e.src, dst: e.dst, n });
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(GraphError::BadWeight { row: e.dst, col: e.src, value: e.weight });
            }
            w[e.dst * n + e.src] += e.weight;
        }
        let g = Self::from_dense(n, w)?;
        if normalize {
            g.row_normalized()
        } else {
            Ok(g)
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.weights.chunks_exact(self.n)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Number of positive entries.
    pub fn edge_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// Matrix-vector product `W v`, each row summed left to right.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n);
        self.rows().map(|r| dot(r, v)).collect()
    }

    /// `W v` into a caller-owned buffer.
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        for (o, r) in out.iter_mut().zip(self.rows()) {
            *o = dot(r, v);
        }
    }

    /// `diag(scale) W`.
    pub fn scale_rows(&self, scale: &[f64]) -> Self {
        assert_eq!(scale.len(), self.n);
        let mut weights = self.weights.clone();
        for (r, &c) in weights.chunks_exact_mut(self.n).zip(scale) {
            r.iter_mut().for_each(|w| *w *= c);
        }
        Self { n: self.n, weights }
    }

    /// Divides every row by its sum.
    pub fn row_normalized(&self) -> Result<Self, GraphError> {
        let mut weights = self.weights.clone();
        for (i, r) in weights.chunks_exact_mut(self.n).enumerate() {
            let sum: f64 = r.iter().sum();
            if sum <= 0.0 {
                return Err(GraphError::ZeroRow(i));
            }
            r.iter_mut().for_each(|w| *w /= sum);
        }
        Ok(Self { n: self.n, weights })
    }

    /// Node `i`'s out-neighbors in the listens-to sense: all `j` with `W_ij > 0`.
    fn listens_to(&self) -> Vec<Vec<usize>> {
        self.rows().map(|r| r.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(j, _)| j).collect()).collect()
    }

    fn heard_by(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (i, r) in self.rows().enumerate() {
            for (j, &w) in r.iter().enumerate() {
                if w > 0.0 {
                    adj[j].push(i);
                }
            }
        }
        adj
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                weights[j * n + i] = self.weights[i * n + j];
            }
        }
        Self { n, weights }
    }
}

impl TryFrom<Vec<Vec<f64>>> for WeightedDigraph {
    type Error = GraphError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::from_rows(rows)
    }
}

impl From<WeightedDigraph> for Vec<Vec<f64>> {
    fn from(g: WeightedDigraph) -> Self {
        g.to_rows()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowStochasticReport {
    pub pass: bool,
    pub worst_deviation: f64,
    /// `(row, |sum - 1|)` for every row outside tolerance.
    pub offending_rows: Vec<(usize, f64)>,
}

pub fn check_row_stochastic(g: &WeightedDigraph, tol: f64) -> RowStochasticReport {
    let mut worst = 0.0f64;
    let mut offending_rows = Vec::new();
    for (i, r) in g.rows().enumerate() {
        let dev = (r.iter().sum::<f64>() - 1.0).abs();
        worst = worst.max(dev);
        if dev > tol {
            offending_rows.push((i, dev));
        }
    }
    RowStochasticReport { pass: offending_rows.is_empty(), worst_deviation: worst, offending_rows }
}

fn bfs(adj: &[Vec<usize>], sources: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::new();
    for s in sources {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Strong connectivity of the positive-weight graph, by a forward and a
/// backward search from node 0. A single node is always irreducible.
pub fn is_irreducible(g: &WeightedDigraph) -> bool {
    if g.n() == 1 {
        return true;
    }
    bfs(&g.listens_to(), [0]).into_iter().all(|b| b) && bfs(&g.heard_by(), [0]).into_iter().all(|b| b)
}

/// Entry `i` is true when a chain `i -> j1 -> ... -> j` of listens-to links
/// (`W_{i j1} > 0`, ...) ends at an anchored node `j`. Every node reaches itself.
///
/// This is the direction along which anchored opinions propagate into `i`,
/// so it is what keeps `rho(diag(lambda) W)` below one.
pub fn check_reachability_to_anchored(g: &WeightedDigraph, anchored: &[bool]) -> Vec<bool> {
    assert_eq!(anchored.len(), g.n(), "anchored mask length");
    // Search backwards from the anchors over heard-by links.
    let sources = anchored.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i);
    bfs(&g.heard_by(), sources)
}

#[derive(Debug, Error, PartialEq)]
#[error("power iteration did not converge in {iterations} iterations (estimate {estimate}, bracket width {residual})")]
pub struct SpectralError {
    pub estimate: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Spectral radius of a nonnegative matrix by power iteration.
///
/// Iterates on `(M + I) / 2`, which has the same Perron vector and is
/// aperiodic, from the all-ones vector. Since the iterate stays strictly
/// positive, the Collatz-Wielandt quotients `min_i (Mv)_i / v_i` and
/// `max_i (Mv)_i / v_i` bracket `rho(M)`; iteration stops once the bracket is
/// narrower than `tol` and returns its midpoint. For reducible matrices the
/// bracket may not close, in which case the error carries the midpoint.
pub fn spectral_radius(m: &WeightedDigraph, tol: f64, max_iter: usize) -> Result<f64, SpectralError> {
    assert!(tol > 0.0, "tol must be positive");
    let n = m.n();
    let mut v = vec![1.0; n];
    let mut mv = vec![0.0; n];
    let mut estimate = 0.0;
    let mut width = f64::INFINITY;
    for iter in 0..max_iter.max(1) {
        m.mul_vec_into(&v, &mut mv);
        let (lo, hi) = v
            .iter()
            .zip(&mv)
            .map(|(&vi, &wi)| wi / vi)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| (lo.min(q), hi.max(q)));
        estimate = 0.5 * (lo + hi);
        width = hi - lo;
        if width <= tol {
            return Ok(estimate);
        }
        if iter + 1 == max_iter {
            break;
        }
        // v <- (M v + v) / 2, rescaled to unit max-norm.
        let mut norm = 0.0f64;
        for (vi, &wi) in v.iter_mut().zip(&mv) {
            *vi = 0.5 * (*vi + wi);
            norm = norm.max(*vi);
        }
        v.iter_mut().for_each(|vi| *vi /= norm);
    }
    Err(SpectralError { estimate, residual: width, iterations: max_iter })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(rows: &[&[f64]]) -> WeightedDigraph {
        WeightedDigraph::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn row_stochastic_examples() {
        assert!(check_row_stochastic(&g(&[&[1.0]]), 1e-12).pass);
        assert!(check_row_stochastic(&g(&[&[0.5, 0.5], &[0.3, 0.7]]), 1e-12).pass);
        let r = check_row_stochastic(&g(&[&[0.6, 0.5], &[0.3, 0.7]]), 1e-12);
        assert!(!r.pass);
        assert_eq!(r.offending_rows.len(), 1);
        assert_eq!(r.offending_rows[0].0, 0);
        assert!((r.offending_rows[0].1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn irreducibility_examples() {
        assert!(is_irreducible(&g(&[&[1.0]])));
        assert!(is_irreducible(&g(&[&[0.0]])));
        assert!(is_irreducible(&WeightedDigraph::ring(3).unwrap()));
        assert!(!is_irreducible(&g(&[&[0.0, 1.0], &[0.0, 1.0]])));
        assert!(!is_irreducible(&WeightedDigraph::identity(2).unwrap()));
    }

    #[test]
    fn reachability_examples() {
        let ring = WeightedDigraph::ring(2).unwrap();
        assert_eq!(check_reachability_to_anchored(&ring, &[true, true]), vec![true, true]);
        assert_eq!(check_reachability_to_anchored(&ring, &[true, false]), vec![true, true]);
        let iso = WeightedDigraph::identity(2).unwrap();
        assert_eq!(check_reachability_to_anchored(&iso, &[true, false]), vec![true, false]);
    }

    #[test]
    fn reachability_follows_listening_direction() {
        // Node 0 listens to node 1; node 1 listens only to itself.
        let star = g(&[&[0.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(check_reachability_to_anchored(&star, &[false, true]), vec![true, true]);
        assert_eq!(check_reachability_to_anchored(&star, &[true, false]), vec![true, false]);
    }

    #[test]
    fn spectral_radius_examples() {
        let id = WeightedDigraph::identity(3).unwrap();
        assert!((spectral_radius(&id, 1e-12, 1000).unwrap() - 1.0).abs() <= 1e-12);
        let scalar = g(&[&[0.2]]);
        assert!((spectral_radius(&scalar, 1e-12, 1000).unwrap() - 0.2).abs() <= 1e-12);
        let stoch = g(&[&[0.1, 0.9, 0.0], &[0.0, 0.2, 0.8], &[0.5, 0.0, 0.5]]);
        assert!((spectral_radius(&stoch, 1e-10, 10_000).unwrap() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn spectral_radius_of_periodic_ring() {
        let ring = WeightedDigraph::ring(4).unwrap().scale_rows(&[0.5; 4]);
        assert!((spectral_radius(&ring, 1e-12, 10_000).unwrap() - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn spectral_radius_matches_two_by_two_closed_form() {
        // [[a, b], [c, d]]: rho = (a + d)/2 + sqrt(((a - d)/2)^2 + bc)
        let (a, b, c, d) = (0.1, 0.3, 0.25, 0.2);
        let expected = (a + d) / 2.0 + (((a - d) / 2.0_f64).powi(2) + b * c).sqrt();
        let m = g(&[&[a, b], &[c, d]]);
        assert!((spectral_radius(&m, 1e-13, 100_000).unwrap() - expected).abs() <= 1e-13);
    }

    #[test]
    fn spectral_radius_reports_nonconvergence() {
        let m = g(&[&[0.1, 0.9, 0.0], &[0.0, 0.2, 0.3], &[0.5, 0.0, 0.5]]);
        let err = spectral_radius(&m, 1e-15, 2).unwrap_err();
        assert_eq!(err.iterations, 2);
        assert!(err.residual > 1e-15);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(matches!(WeightedDigraph::from_rows(vec![]), Err(GraphError::Empty)));
        assert!(matches!(WeightedDigraph::from_rows(vec![vec![-0.1]]), Err(GraphError::BadWeight { .. })));
        assert!(matches!(WeightedDigraph::from_rows(vec![vec![0.5, 0.5], vec![1.0]]), Err(GraphError::Ragged { .. })));
    }

    #[test]
    fn edge_csv_loading() {
        let text = "src,dst,weight\n0,1,2.0\n1,0,1.0\n1,1,2.0\n";
        let gr = WeightedDigraph::from_edge_csv(text.as_bytes(), 2, true).unwrap();
        assert_eq!(gr.to_rows(), vec![vec![0.0, 1.0], vec![0.5, 0.5]]);
        assert!(check_row_stochastic(&gr, 1e-12).pass);

        let neg = "src,dst,weight\n0,1,-1\n";
        assert!(matches!(WeightedDigraph::from_edge_csv(neg.as_bytes(), 2, false), Err(GraphError::BadWeight { .. })));
        let oob = "src,dst,weight\n0,2,1\n";
        assert!(matches!(WeightedDigraph::from_edge_csv(oob.as_bytes(), 2, false), Err(GraphError::OutOfRange { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix() -> impl Strategy<Value = WeightedDigraph> {
            (1usize..8).prop_flat_map(|n| {
                proptest::collection::vec(prop_oneof![Just(0.0), 0.01f64..1.0], n * n)
                    .prop_map(move |w| WeightedDigraph::from_dense(n, w).unwrap())
            })
        }

        proptest! {
            #[test]
            fn normalization_is_row_stochastic(m in matrix()) {
                if let Ok(norm) = m.row_normalized() {
                    prop_assert!(check_row_stochastic(&norm, 1e-12).pass);
                }
            }

            #[test]
            fn irreducibility_invariant_under_transpose(m in matrix()) {
                prop_assert_eq!(is_irreducible(&m), is_irreducible(&m.transpose()));
            }

            #[test]
            fn scaled_stochastic_radius_below_one(
                m in matrix(),
                lambdas in proptest::collection::vec(0.0f64..0.95, 8),
            ) {
                if let Ok(norm) = m.row_normalized() {
                    let lam = &lambdas[..norm.n()];
                    let scaled = norm.scale_rows(lam);
                    let max_lambda = lam.iter().cloned().fold(0.0, f64::max);
                    // reducible matrices may leave the bracket open
                    if let Ok(rho) = spectral_radius(&scaled, 1e-9, 200_000) {
                        prop_assert!(rho < 1.0 && rho <= max_lambda + 1e-9);
                    }
                }
            }
        }
    }
}
