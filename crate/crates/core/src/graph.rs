//! Laplacian spectra of dynamic graph streams.
//!
//! A stream of weighted edge updates `(u, v, Δ)` on `n` vertices defines an
//! edge–vertex incidence matrix `X` with one row per unordered pair, so
//! `N = n(n−1)/2`. For an update on the pair `{a, b}` with `a < b`, row
//! `r(a, b)` of `X` gains `+Δ` in column `a` and `−Δ` in column `b`. The
//! sketch follows the same rule column by column:
//!
//! ```text
//! y_a ← y_a + Δ φ_r        y_b ← y_b − Δ φ_r
//! ```
//!
//! For unit weights `XᵀX` is the graph Laplacian `L = diag(d) − A`, so the
//! squared singular values of the sketch estimate the nonzero Laplacian
//! eigenvalues, and `rank(L) = n − c` with `c` the number of connected
//! components.
//!
//! With non-unit weights the accumulated incidence entries give `XᵀX` with
//! squared weights off the diagonal, which is not `diag(d) − A`. The oracle
//! reports both matrices and flags the difference.

use nalgebra::{DMatrix, SymmetricEigen};
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::budget::Budget;
use crate::error::{domain, Error, Result};
use crate::jl::{JlFamily, SketchConfig};
use crate::oracle::sorted_desc;
use crate::spectral::{sketched_svd, SpectralEstimate};
use crate::turnstile::{decode_state, MatrixUpdate, SketchState, StreamMode};

/// Final edge weights at or below this magnitude count as absent.
pub const ZERO_WEIGHT_TOL: f64 = 1e-12;

/// One edge update `A(u, v) += delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeUpdate {
    pub u: usize,
    pub v: usize,
    pub delta: f64,
}

impl EdgeUpdate {
    pub fn new(u: usize, v: usize, delta: f64) -> Self {
        EdgeUpdate { u, v, delta }
    }

    /// Parses one JSON Lines record `{"u": .., "v": .., "delta": ..}`.
    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Format(format!("bad edge record: {e}")))
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("edge serialization is infallible")
    }
}

/// Number of unordered vertex pairs, `n(n−1)/2`.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Row of the incidence matrix holding the pair `{u, v}`, in lexicographic
/// order of `(min, max)`.
pub fn edge_row_index(u: usize, v: usize, n: usize) -> Result<usize> {
    if u == v {
        return Err(Error::Graph(format!("self-loop on vertex {u}")));
    }
    if u >= n || v >= n {
        return domain(format!("edge ({u}, {v}) out of range for {n} vertices"));
    }
    let (a, b) = if u < v { (u, v) } else { (v, u) };
    Ok(a * n - a * (a + 1) / 2 + (b - a - 1))
}

/// Sketch of the implicit incidence matrix of a graph stream.
#[derive(Debug, Clone)]
pub struct GraphSketch {
    vertices: usize,
    inner: SketchState,
    scratch: Vec<f64>,
}

impl PartialEq for GraphSketch {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.inner == other.inner
    }
}

impl GraphSketch {
    /// Wraps a config whose shape is `N = n(n−1)/2` rows by `n` columns.
    pub fn new(config: SketchConfig) -> Result<Self> {
        let n = config.cols;
        if n < 2 {
            return domain("a graph sketch needs at least two vertices");
        }
        if config.rows != pair_count(n) {
            return domain(format!(
                "graph on {n} vertices needs N = {} rows, config has {}",
                pair_count(n),
                config.rows
            ));
        }
        Self::from_state(SketchState::new(config)?)
    }

    /// Graph sketch on `vertices` vertices with `m` chosen for rank `k`.
    pub fn for_rank(
        seed: u64,
        family: JlFamily,
        vertices: usize,
        k: usize,
        eps: f64,
        delta: f64,
    ) -> Result<Self> {
        Self::new(SketchConfig::for_rank(seed, family, pair_count(vertices), vertices, k, eps, delta)?)
    }

    fn from_state(inner: SketchState) -> Result<Self> {
        let n = inner.config().cols;
        if n < 2 || inner.config().rows != pair_count(n) {
            return domain("state shape is not an incidence-matrix sketch");
        }
        Ok(GraphSketch {
            vertices: n,
            scratch: vec![0.0; inner.config().m],
            inner,
        })
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    pub fn state(&self) -> &SketchState {
        &self.inner
    }

    pub fn into_state(self) -> SketchState {
        self.inner
    }

    pub fn config(&self) -> &SketchConfig {
        self.inner.config()
    }

    /// Applies `y_a += Δ φ_r`, `y_b −= Δ φ_r` for the canonical pair `a < b`.
    pub fn apply_edge_update(&mut self, e: &EdgeUpdate) -> Result<()> {
        let row = edge_row_index(e.u, e.v, self.vertices)?;
        if !e.delta.is_finite() {
            return domain(format!("non-finite delta {}", e.delta));
        }
        let (a, b) = (e.u.min(e.v), e.u.max(e.v));
        self.inner.phi().fill_column(row, &mut self.scratch)?;
        self.inner.add_scaled_column(a, e.delta, &self.scratch);
        self.inner.add_scaled_column(b, -e.delta, &self.scratch);
        self.inner.bump_counter(1);
        Ok(())
    }

    pub fn merge(self, other: GraphSketch) -> Result<GraphSketch> {
        Self::from_state(self.inner.merge(other.inner)?)
    }

    pub fn spectrum(&self, tol: f64) -> Result<SpectralEstimate> {
        graph_spectrum(self, tol)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes_with_mode(StreamMode::Graph)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (state, mode) = decode_state(bytes)?;
        if mode != StreamMode::Graph {
            return Err(Error::Format("state was not written by a graph sketch".into()));
        }
        Self::from_state(state).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Truncated SVD of the graph sketch. The eigenvalue estimates are the
/// nonzero Laplacian eigenvalue estimates; the right vectors estimate the
/// matching Laplacian eigenvectors.
pub fn graph_spectrum(g: &GraphSketch, tol: f64) -> Result<SpectralEstimate> {
    sketched_svd(g.inner.sketch(), tol)
}

/// Entry updates to the incidence matrix implied by an edge stream.
pub fn incidence_updates(log: &[EdgeUpdate], n: usize) -> Result<Vec<MatrixUpdate>> {
    let mut out = Vec::with_capacity(2 * log.len());
    for e in log {
        let row = edge_row_index(e.u, e.v, n)?;
        let (a, b) = (e.u.min(e.v), e.u.max(e.v));
        out.push(MatrixUpdate::new(row, a, e.delta));
        out.push(MatrixUpdate::new(row, b, -e.delta));
    }
    Ok(out)
}

/// What to do when a pair ends the stream with negative weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeWeightPolicy {
    #[default]
    Error,
    Warn,
}

/// Dense ground truth for a graph stream.
#[derive(Debug, Clone)]
pub struct LaplacianOracle {
    /// `diag(d) − A`.
    pub laplacian: DMatrix<f64>,
    /// `N × n` incidence matrix accumulated from the stream.
    pub incidence: DMatrix<f64>,
    /// `XᵀX`; equal to `laplacian` for unit weights.
    pub incidence_gram: DMatrix<f64>,
    /// Connected components over pairs with nonzero final weight.
    pub components: usize,
    /// Final nonzero weights keyed by canonical pair.
    pub weights: Vec<((usize, usize), f64)>,
    pub unit_weight: bool,
    pub warnings: Vec<String>,
}

impl LaplacianOracle {
    /// `n − c`.
    pub fn expected_rank(&self) -> usize {
        self.laplacian.nrows() - self.components
    }

    /// Eigenvalues of `XᵀX`, descending.
    pub fn gram_eigenvalues(&self) -> Vec<f64> {
        sorted_desc(SymmetricEigen::new(self.incidence_gram.clone()).eigenvalues.iter().copied())
    }

    /// Eigenvalues of `diag(d) − A`, descending.
    pub fn laplacian_eigenvalues(&self) -> Vec<f64> {
        sorted_desc(SymmetricEigen::new(self.laplacian.clone()).eigenvalues.iter().copied())
    }
}

/// Replays an edge stream into the Laplacian, the incidence matrix and the
/// component count.
pub fn oracle_laplacian(
    log: &[EdgeUpdate],
    n: usize,
    policy: NegativeWeightPolicy,
    budget: &Budget,
) -> Result<LaplacianOracle> {
    if n < 2 {
        return domain("a graph needs at least two vertices");
    }
    let rows = pair_count(n);
    budget.check_oracle_shape("incidence matrix", rows, n)?;
    let mut incidence = DMatrix::zeros(rows, n);
    let mut pair_weight = vec![0.0f64; rows];
    let mut scale = 0.0f64;
    for e in log {
        let row = edge_row_index(e.u, e.v, n)?;
        if !e.delta.is_finite() {
            return domain(format!("non-finite delta {}", e.delta));
        }
        let (a, b) = (e.u.min(e.v), e.u.max(e.v));
        incidence[(row, a)] += e.delta;
        incidence[(row, b)] -= e.delta;
        pair_weight[row] += e.delta;
        scale = scale.max(e.delta.abs());
    }

    let zero_cut = ZERO_WEIGHT_TOL * scale.max(1.0);
    let mut laplacian = DMatrix::zeros(n, n);
    let mut uf = UnionFind::<usize>::new(n);
    let mut weights = Vec::new();
    let mut warnings = Vec::new();
    let mut unit_weight = true;
    let mut row = 0;
    for a in 0..n {
        for b in a + 1..n {
            let w = pair_weight[row];
            row += 1;
            if w.abs() <= zero_cut {
                continue;
            }
            if w < 0.0 {
                let msg = format!("pair ({a}, {b}) has negative final weight {w}");
                match policy {
                    NegativeWeightPolicy::Error => return Err(Error::Graph(msg)),
                    NegativeWeightPolicy::Warn => warnings.push(msg),
                }
            }
            if w != 1.0 {
                unit_weight = false;
            }
            laplacian[(a, b)] -= w;
            laplacian[(b, a)] -= w;
            laplacian[(a, a)] += w;
            laplacian[(b, b)] += w;
            uf.union(a, b);
            weights.push(((a, b), w));
        }
    }
    if !unit_weight {
        warnings.push("non-unit weights: XᵀX differs from diag(d) − A; certify against XᵀX".into());
    }
    let mut labels = uf.into_labeling();
    labels.sort_unstable();
    labels.dedup();

    let incidence_gram = incidence.transpose() * &incidence;
    Ok(LaplacianOracle {
        laplacian,
        incidence,
        incidence_gram,
        components: labels.len(),
        weights,
        unit_weight,
        warnings,
    })
}
