//! Dense ground truth and perturbation diagnostics.
//!
//! Everything here materializes `X` or `Φ` and is meant for desk-scale
//! verification only. The diagnostics expose the quantities the relative
//! error argument runs through:
//!
//! * `Δ_Φ = ΦᵀΦ − I`, and its compression `U_Xᵀ Δ_Φ U_X` onto the column
//!   space of `X`, whose 2-norm `η` plays the role of the distortion `ε`;
//! * `E = V_X Σ_X U_Xᵀ Δ_Φ U_X Σ_X V_Xᵀ`, the additive perturbation with
//!   `YᵀY = XᵀX + E`;
//! * `M = V_Xᵀ YᵀY V_X`, a `k × k` matrix with the same nonzero eigenvalues
//!   as `YᵀY`.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use serde::Serialize;

use crate::bounds::ENVELOPE_SLACK;
use crate::budget::Budget;
use crate::error::{domain, Error, Result};
use crate::jl::{materialize_phi, SketchConfig};
use crate::spectral::{numerical_rank, SpectralEstimate};
use crate::turnstile::MatrixUpdate;

const SVD_MAX_ITER: usize = 10_000;

/// Truncated SVD `X = U_X Σ_X V_Xᵀ` of a materialized data matrix.
#[derive(Debug, Clone)]
pub struct OracleDecomposition {
    pub x: DMatrix<f64>,
    /// `N × k`.
    pub u: DMatrix<f64>,
    /// `σ_1 ≥ … ≥ σ_k > 0`.
    pub singular_values: Vec<f64>,
    /// `n × k`.
    pub v: DMatrix<f64>,
    pub tol_used: f64,
}

impl OracleDecomposition {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `λ_j = σ_j²`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.singular_values.iter().map(|s| s * s).collect()
    }
}

/// Accumulates an update log into a dense `rows × cols` matrix.
pub fn materialize_x(log: &[MatrixUpdate], rows: usize, cols: usize, budget: &Budget) -> Result<DMatrix<f64>> {
    budget.check_oracle_shape("data matrix", rows, cols)?;
    let mut x = DMatrix::zeros(rows, cols);
    for u in log {
        if u.row >= rows || u.col >= cols {
            return domain(format!("update ({}, {}) outside {rows}x{cols}", u.row, u.col));
        }
        if !u.delta.is_finite() {
            return domain(format!("non-finite delta {}", u.delta));
        }
        x[(u.row, u.col)] += u.delta;
    }
    Ok(x)
}

/// Truncated SVD of `x`, keeping singular values above `tol · σ_max`.
///
/// Runs the one-sided Golub–Kahan SVD directly on `x`; the sketch path
/// reduces by QR first, so the two routes do not share a factorization.
pub fn exact_svd(x: DMatrix<f64>, tol: f64) -> Result<OracleDecomposition> {
    if x.iter().any(|v| !v.is_finite()) {
        return domain("data matrix contains non-finite entries");
    }
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 || x.iter().all(|&v| v == 0.0) {
        return Ok(OracleDecomposition {
            u: DMatrix::zeros(rows, 0),
            v: DMatrix::zeros(cols, 0),
            singular_values: Vec::new(),
            tol_used: tol,
            x,
        });
    }
    let svd = SVD::try_new(x.clone(), true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical(format!("oracle SVD of {rows}x{cols} matrix did not converge")))?;
    let sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    let k = numerical_rank(&sigma, tol)?;
    let u = svd.u.expect("requested U").columns(0, k).into_owned();
    let v = svd.v_t.expect("requested V").transpose().columns(0, k).into_owned();
    Ok(OracleDecomposition {
        x,
        u,
        singular_values: sigma[..k].to_vec(),
        v,
        tol_used: tol,
    })
}

/// Perturbation quantities for one draw of `Φ`.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbationDiagnostics {
    /// `‖ΦᵀΦ − I‖₂` over all of `ℝ^N`; only computed on request.
    pub delta_phi_norm: Option<f64>,
    /// `η = ‖U_Xᵀ Δ_Φ U_X‖₂`.
    pub projected_norm: f64,
    /// `‖E‖₂`.
    pub e_norm: f64,
    /// `U_Xᵀ Δ_Φ U_X`, `k × k`.
    #[serde(skip)]
    pub projected: DMatrix<f64>,
    /// `M = V_Xᵀ YᵀY V_X`, `k × k`.
    #[serde(skip)]
    pub m: DMatrix<f64>,
}

impl PerturbationDiagnostics {
    /// Eigenvalues of `M`, descending.
    pub fn m_eigenvalues(&self) -> Vec<f64> {
        sorted_desc(SymmetricEigen::new(symmetrize(&self.m)).eigenvalues.iter().copied())
    }

    /// `xᵀMx / xᵀΣ_X²x`.
    pub fn rayleigh_quotient(&self, sigma: &[f64], x: &DVector<f64>) -> f64 {
        let num = x.dot(&(&self.m * x));
        let den: f64 = x.iter().zip(sigma).map(|(xi, s)| xi * xi * s * s).sum();
        num / den
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DiagnosticsOptions {
    pub budget: Budget,
    /// Also compute `‖ΦᵀΦ − I‖₂`, which needs an SVD of the full `m × N` operator.
    pub full_delta_phi: bool,
}

/// Computes `U_XᵀΔ_ΦU_X`, `E` and `M` for the operator described by `config`.
pub fn perturbation_diagnostics(
    config: &SketchConfig,
    oracle: &OracleDecomposition,
    y: &DMatrix<f64>,
    opts: &DiagnosticsOptions,
) -> Result<PerturbationDiagnostics> {
    check_shapes(config, oracle)?;
    if y.shape() != (config.m, config.cols) {
        return domain(format!("sketch shape {:?} != ({}, {})", y.shape(), config.m, config.cols));
    }
    let phi = materialize_phi(config, &opts.budget)?;
    let k = oracle.rank();

    let phi_u = &phi * &oracle.u;
    let projected = symmetrize(&(phi_u.transpose() * &phi_u - DMatrix::identity(k, k)));
    let projected_norm = spectral_norm_sym(&projected);

    let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&oracle.singular_values));
    let e = &oracle.v * &sigma * &projected * &sigma * oracle.v.transpose();
    let e_norm = spectral_norm_sym(&symmetrize(&e));

    let yv = y * &oracle.v;
    let m = symmetrize(&(yv.transpose() * yv));

    let delta_phi_norm = if opts.full_delta_phi {
        let (rows, cols) = phi.shape();
        let s = SVD::try_new(phi, false, false, f64::EPSILON, SVD_MAX_ITER).ok_or_else(|| {
            Error::Numerical(format!("SVD of {rows}x{cols} sketching operator did not converge"))
        })?;
        let mut worst = s.singular_values.iter().map(|s| (s * s - 1.0).abs()).fold(0.0, f64::max);
        if rows < cols {
            // ΦᵀΦ has a nontrivial null space, on which ΦᵀΦ − I acts as −I.
            worst = worst.max(1.0);
        }
        Some(worst)
    } else {
        None
    };

    Ok(PerturbationDiagnostics {
        delta_phi_norm,
        projected_norm,
        e_norm,
        projected,
        m,
    })
}

/// Outcome of the additive eigenvalue perturbation check.
#[derive(Debug, Clone, Serialize)]
pub struct WeylReport {
    pub pass: bool,
    /// `|λ′_j − λ_j|` per index.
    pub deviations: Vec<f64>,
    /// `‖E‖₂`.
    pub bound: f64,
}

/// `|λ′_j − λ_j| ≤ ‖E‖₂` for every index, with slack
/// `1e−9·‖E‖₂ + 1e−12` for rounding. The inequality is deterministic, so a
/// failure points at a bug rather than an unlucky draw.
pub fn weyl_check(
    oracle: &OracleDecomposition,
    diagnostics: &PerturbationDiagnostics,
    estimate: &SpectralEstimate,
) -> Result<WeylReport> {
    let lambda = oracle.eigenvalues();
    let lambda_est = &estimate.eigenvalues;
    if lambda.len() != lambda_est.len() {
        return domain(format!(
            "oracle has {} eigenvalues but estimate has {}",
            lambda.len(),
            lambda_est.len()
        ));
    }
    let bound = diagnostics.e_norm;
    let limit = bound + 1e-9 * bound + ENVELOPE_SLACK;
    let deviations: Vec<f64> = lambda.iter().zip(lambda_est).map(|(l, le)| (le - l).abs()).collect();
    Ok(WeylReport {
        pass: deviations.iter().all(|d| *d <= limit),
        deviations,
        bound,
    })
}

/// Extreme singular values of `ΦU_X` against `[√(1−ε), √(1+ε)]`.
#[derive(Debug, Clone, Serialize)]
pub struct EmbeddingCheck {
    pub pass: bool,
    pub s_min: f64,
    pub s_max: f64,
}

/// Checks that `Φ` is a `(1 ± ε)` embedding of `colspan(U_X)`:
/// `√(1−ε)‖x‖ ≤ ‖Φx‖ ≤ √(1+ε)‖x‖` for all `x` in the span. Over the
/// span this is exactly a statement about the extreme singular values of
/// `ΦU_X`.
pub fn subspace_embedding_check(
    config: &SketchConfig,
    oracle: &OracleDecomposition,
    eps: f64,
    budget: &Budget,
) -> Result<EmbeddingCheck> {
    if !(eps > 0.0 && eps < 1.0) {
        return domain(format!("eps must lie strictly inside (0, 1), got {eps}"));
    }
    check_shapes(config, oracle)?;
    let k = oracle.rank();
    if k == 0 {
        return domain("oracle has rank 0");
    }
    let phi = materialize_phi(config, budget)?;
    let phi_u = phi * &oracle.u;
    let (rows, cols) = phi_u.shape();
    let s = SVD::try_new(phi_u, false, false, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical(format!("SVD of {rows}x{cols} matrix did not converge")))?;
    let s_max = s.singular_values.max();
    // fewer sketch rows than k: ΦU_X has a null vector
    let s_min = if rows < cols { 0.0 } else { s.singular_values.min() };
    let pass = s_min >= (1.0 - eps).sqrt() - ENVELOPE_SLACK && s_max <= (1.0 + eps).sqrt() + ENVELOPE_SLACK;
    Ok(EmbeddingCheck { pass, s_min, s_max })
}

fn check_shapes(config: &SketchConfig, oracle: &OracleDecomposition) -> Result<()> {
    if oracle.x.shape() != (config.rows, config.cols) {
        return domain(format!(
            "oracle matrix is {:?} but config describes {}x{}",
            oracle.x.shape(),
            config.rows,
            config.cols
        ));
    }
    Ok(())
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn spectral_norm_sym(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(a.clone()).eigenvalues.iter().fold(0.0f64, |acc, l| acc.max(l.abs()))
}

pub(crate) fn sorted_desc(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jl::JlFamily;
    use crate::spectral::sketched_svd;
    use crate::turnstile::SketchState;

    fn identity_setup() -> (SketchConfig, OracleDecomposition, SketchState) {
        let mut x = DMatrix::zeros(6, 3);
        x[(0, 0)] = 3.0;
        x[(1, 1)] = 2.0;
        x[(4, 0)] = 1.0;
        let cfg = SketchConfig {
            seed: 1,
            family: JlFamily::Identity,
            m: 6,
            rows: 6,
            cols: 3,
            eps: 0.5,
            delta: 0.05,
            k_hint: None,
        };
        let mut state = SketchState::new(cfg.clone()).unwrap();
        for i in 0..6 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            state.apply_row(i, &row).unwrap();
        }
        (cfg, exact_svd(x, 1e-8).unwrap(), state)
    }

    #[test]
    fn materialize_basics() {
        let b = Budget::default();
        assert_eq!(materialize_x(&[], 3, 2, &b).unwrap(), DMatrix::zeros(3, 2));
        let x = materialize_x(&[MatrixUpdate::new(2, 1, 4.5)], 3, 2, &b).unwrap();
        let mut e = DMatrix::zeros(3, 2);
        e[(2, 1)] = 4.5;
        assert_eq!(x, e);
        assert!(materialize_x(&[MatrixUpdate::new(3, 0, 1.0)], 3, 2, &b).is_err());
        assert!(matches!(materialize_x(&[], 30_000, 2, &b), Err(Error::Budget(_))));
    }

    #[test]
    fn exact_svd_diagonal_and_zero() {
        let mut x = DMatrix::zeros(5, 4);
        x[(0, 0)] = 3.0;
        x[(1, 1)] = 2.0;
        let o = exact_svd(x, 1e-8).unwrap();
        assert_eq!(o.rank(), 2);
        assert!((o.singular_values[0] - 3.0).abs() < 1e-14);
        assert!((o.singular_values[1] - 2.0).abs() < 1e-14);
        let z = exact_svd(DMatrix::zeros(4, 3), 1e-8).unwrap();
        assert_eq!(z.rank(), 0);
    }

    #[test]
    fn identity_sketch_has_no_perturbation() {
        let (cfg, oracle, state) = identity_setup();
        let opts = DiagnosticsOptions {
            full_delta_phi: true,
            ..Default::default()
        };
        let d = perturbation_diagnostics(&cfg, &oracle, state.sketch(), &opts).unwrap();
        assert!(d.delta_phi_norm.unwrap() < 1e-14);
        assert!(d.projected_norm < 1e-15);
        assert!(d.e_norm < 1e-13);
        let lam = oracle.eigenvalues();
        for (i, l) in lam.iter().enumerate() {
            assert!((d.m[(i, i)] - l).abs() < 1e-12);
        }
        let est = sketched_svd(state.sketch(), 1e-8).unwrap();
        let w = weyl_check(&oracle, &d, &est).unwrap();
        assert!(w.pass);
        let emb = subspace_embedding_check(&cfg, &oracle, 0.01, &Budget::default()).unwrap();
        assert!(emb.pass);
        assert!((emb.s_min - 1.0).abs() < 1e-14 && (emb.s_max - 1.0).abs() < 1e-14);
    }

    #[test]
    fn weyl_negative_control() {
        let mut x = DMatrix::zeros(40, 4);
        for i in 0..40 {
            x[(i, i % 4)] = 1.0 + (i as f64 * 0.7).sin();
            x[(i, (i + 1) % 4)] = (i as f64 * 1.3).cos();
        }
        let oracle = exact_svd(x.clone(), 1e-8).unwrap();
        let cfg = SketchConfig {
            seed: 9,
            family: JlFamily::Gaussian,
            m: 60,
            rows: 40,
            cols: 4,
            eps: 0.5,
            delta: 0.05,
            k_hint: None,
        };
        let mut state = SketchState::new(cfg.clone()).unwrap();
        for i in 0..40 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            state.apply_row(i, &row).unwrap();
        }
        let d = perturbation_diagnostics(&cfg, &oracle, state.sketch(), &DiagnosticsOptions::default()).unwrap();
        let mut est = sketched_svd(state.sketch(), 1e-8).unwrap();
        assert!(weyl_check(&oracle, &d, &est).unwrap().pass);
        est.eigenvalues[0] += 2.0 * d.e_norm;
        assert!(!weyl_check(&oracle, &d, &est).unwrap().pass);
        est.eigenvalues.pop();
        assert!(weyl_check(&oracle, &d, &est).is_err());
    }

    #[test]
    fn too_few_rows_fails_embedding() {
        let mut x = DMatrix::zeros(20, 5);
        for j in 0..3 {
            x[(j, j)] = (j + 1) as f64;
        }
        let oracle = exact_svd(x, 1e-8).unwrap();
        assert_eq!(oracle.rank(), 3);
        let cfg = SketchConfig {
            seed: 4,
            family: JlFamily::Gaussian,
            m: 2,
            rows: 20,
            cols: 5,
            eps: 0.5,
            delta: 0.05,
            k_hint: None,
        };
        let emb = subspace_embedding_check(&cfg, &oracle, 0.9, &Budget::default()).unwrap();
        assert!(!emb.pass);
        assert_eq!(emb.s_min, 0.0);
    }

    #[test]
    fn shape_mismatch_is_domain_error() {
        let (mut cfg, oracle, state) = identity_setup();
        cfg.cols = 4;
        assert!(perturbation_diagnostics(&cfg, &oracle, state.sketch(), &DiagnosticsOptions::default()).is_err());
    }
}
