//! Spectral recovery from a sketch.
//!
//! The estimator is deliberately plain: take the SVD of `Y`, keep the
//! numerically nonzero part, and report `Σ_Y` and `V_Y` as the estimates of
//! `Σ_X` and `V_X`. `λ′_j = σ′_j²` are the matching eigenvalue estimates of
//! `XᵀX`.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{domain, Error, Result};

/// Relative threshold below which singular values count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

const SVD_MAX_ITER: usize = 10_000;

/// Truncated SVD of a sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEstimate {
    /// `σ′_1 ≥ … ≥ σ′_r > tol_used · σ′_1`.
    pub singular_values: Vec<f64>,
    /// `n × r`, orthonormal columns `v′_j`.
    pub right_vectors: DMatrix<f64>,
    /// `λ′_j = σ′_j²`.
    pub eigenvalues: Vec<f64>,
    pub rank: usize,
    pub tol_used: f64,
    /// `m × r` left vectors, only when requested.
    pub left_vectors: Option<DMatrix<f64>>,
}

/// Detected rank versus an expected rank.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankReport {
    pub detected: usize,
    pub hint: Option<usize>,
    /// Number of leading indices that can be certified.
    pub certified: usize,
    pub warning: Option<String>,
}

impl SpectralEstimate {
    fn empty(n: usize, m: usize, tol: f64, keep_left: bool) -> Self {
        SpectralEstimate {
            singular_values: Vec::new(),
            right_vectors: DMatrix::zeros(n, 0),
            eigenvalues: Vec::new(),
            rank: 0,
            tol_used: tol,
            left_vectors: keep_left.then(|| DMatrix::zeros(m, 0)),
        }
    }

    /// Compares the detected rank against `k_hint`. A hint above the
    /// detected rank is reported as a warning, never an error.
    pub fn rank_report(&self, k_hint: Option<usize>) -> RankReport {
        let detected = self.rank;
        let (certified, warning) = match k_hint {
            Some(k) if k > detected => (
                detected,
                Some(format!("expected rank {k} but sketch has numerical rank {detected}")),
            ),
            Some(k) => (k, None),
            None => (detected, None),
        };
        RankReport {
            detected,
            hint: k_hint,
            certified,
            warning,
        }
    }

    /// `U′ Σ′ V′ᵀ`; requires left vectors.
    pub fn reconstruct(&self) -> Option<DMatrix<f64>> {
        let u = self.left_vectors.as_ref()?;
        let mut us = u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        Some(us * self.right_vectors.transpose())
    }
}

#[derive(Serialize, Deserialize)]
struct EstimateWire {
    rank: usize,
    tol_used: f64,
    singular_values: Vec<f64>,
    eigenvalues: Vec<f64>,
    right_vectors: Vec<Vec<f64>>,
}

impl Serialize for SpectralEstimate {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        EstimateWire {
            rank: self.rank,
            tol_used: self.tol_used,
            singular_values: self.singular_values.clone(),
            eigenvalues: self.eigenvalues.clone(),
            right_vectors: rows_of(&self.right_vectors),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for SpectralEstimate {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let w = EstimateWire::deserialize(de)?;
        if w.singular_values.len() != w.rank || w.eigenvalues.len() != w.rank {
            return Err(D::Error::custom("rank does not match spectrum lengths"));
        }
        let n = w.right_vectors.len();
        if w.right_vectors.iter().any(|r| r.len() != w.rank) {
            return Err(D::Error::custom("right_vectors rows must have `rank` entries"));
        }
        let flat: Vec<f64> = w.right_vectors.into_iter().flatten().collect();
        Ok(SpectralEstimate {
            right_vectors: DMatrix::from_row_slice(n, w.rank, &flat),
            singular_values: w.singular_values,
            eigenvalues: w.eigenvalues,
            rank: w.rank,
            tol_used: w.tol_used,
            left_vectors: None,
        })
    }
}

/// Row-major nested copy of a matrix.
pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Number of singular values strictly above `tol · σ_max`.
pub fn numerical_rank(singular_values: &[f64], tol: f64) -> Result<usize> {
    if !(tol >= 0.0 && tol.is_finite()) {
        return domain(format!("rank tolerance must be finite and nonnegative, got {tol}"));
    }
    if singular_values.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return domain("singular values must be finite and nonnegative");
    }
    if singular_values.windows(2).any(|w| w[0] < w[1]) {
        return domain("singular values must be sorted in descending order");
    }
    let Some(&max) = singular_values.first() else {
        return Ok(0);
    };
    if max == 0.0 {
        return Ok(0);
    }
    let cut = tol * max;
    Ok(singular_values.iter().take_while(|&&s| s > cut).count())
}

/// Truncated SVD of the sketch `Y`, discarding the left vectors.
pub fn sketched_svd(y: &DMatrix<f64>, tol: f64) -> Result<SpectralEstimate> {
    sketched_svd_with(y, tol, false)
}

/// Truncated SVD of the sketch `Y`; `keep_left` retains `U_Y`.
pub fn sketched_svd_with(y: &DMatrix<f64>, tol: f64, keep_left: bool) -> Result<SpectralEstimate> {
    if y.iter().any(|x| !x.is_finite()) {
        return domain("sketch contains non-finite entries");
    }
    if !(tol >= 0.0 && tol.is_finite()) {
        return domain(format!("rank tolerance must be finite and nonnegative, got {tol}"));
    }
    let (m, n) = y.shape();
    if m == 0 || n == 0 || y.iter().all(|&x| x == 0.0) {
        return Ok(SpectralEstimate::empty(n, m, tol, keep_left));
    }

    let (u, sigma, v) = thin_svd(y, keep_left)?;
    let rank = numerical_rank(&sigma, tol)?;
    let singular_values = sigma[..rank].to_vec();
    let eigenvalues = singular_values.iter().map(|s| s * s).collect();
    Ok(SpectralEstimate {
        right_vectors: v.columns(0, rank).into_owned(),
        left_vectors: u.map(|u| u.columns(0, rank).into_owned()),
        singular_values,
        eigenvalues,
        rank,
        tol_used: tol,
    })
}

/// Left vectors if requested, singular values, right vectors.
type ThinSvd = (Option<DMatrix<f64>>, Vec<f64>, DMatrix<f64>);

/// Descending thin SVD. Tall inputs are reduced by Householder QR first so
/// the iterative phase only sees the `n × n` triangular factor.
fn thin_svd(
    y: &DMatrix<f64>,
    keep_left: bool,
) -> Result<ThinSvd> {
    let (m, n) = y.shape();
    if m >= 2 * n {
        let qr = y.clone().qr();
        let r = qr.r();
        let svd = run_svd(r, keep_left)?;
        let v = svd.v_t.expect("requested V").transpose();
        let u = svd.u.map(|ur| qr.q() * ur);
        Ok((u, svd.singular_values.iter().copied().collect(), v))
    } else {
        let svd = run_svd(y.clone(), keep_left)?;
        let v = svd.v_t.expect("requested V").transpose();
        Ok((svd.u, svd.singular_values.iter().copied().collect(), v))
    }
}

fn run_svd(a: DMatrix<f64>, keep_left: bool) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let (m, n) = a.shape();
    SVD::try_new(a, keep_left, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::Numerical(format!("SVD of {m}x{n} matrix did not converge")))
}

/// Flips each estimate column whose inner product with the matching
/// reference column is negative. Zero inner products are left alone.
pub fn align_signs(reference: &DMatrix<f64>, estimate: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if reference.shape() != estimate.shape() {
        return domain(format!(
            "shape mismatch: reference {:?} vs estimate {:?}",
            reference.shape(),
            estimate.shape()
        ));
    }
    let mut out = estimate.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        if reference.column(j).dot(&col) < 0.0 {
            col.neg_mut();
        }
    }
    Ok(out)
}

/// `λ′_j = σ′_j²`.
pub fn eigen_estimates(estimate: &SpectralEstimate) -> Vec<f64> {
    estimate.singular_values.iter().map(|s| s * s).collect()
}
