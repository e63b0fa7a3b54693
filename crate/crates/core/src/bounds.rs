//! Relative-error envelopes for sketched singular values and vectors, and
//! per-trial certification against a dense oracle.
//!
//! With probability at least `1 − δ` over the draw of `Φ`, for every
//! `j ≤ k`:
//!
//! ```text
//! √(1−ε) ≤ σ′_j / σ_j ≤ √(1+ε)
//!
//! ‖v_j − v′_j‖₂ ≤ min{ √2,  ε√(1+ε)/√(1−ε) · max_{i≠j} √2 σ_i σ_j / min_{c∈[−1,1]} |σ_i² − σ_j²(1+cε)| }
//! ```
//!
//! where `v′_j` is sign-aligned so that `⟨v_j, v′_j⟩ ≥ 0`. The vector bound
//! degrades as neighbouring singular values approach each other, and
//! collapses to the trivial `√2` whenever some `σ_i²` falls inside the band
//! `σ_j²[1−ε, 1+ε]`.

use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::error::{domain, Result};
use crate::oracle::OracleDecomposition;
use crate::spectral::{align_signs, SpectralEstimate};

/// Absolute slack on envelope comparisons, absorbing rounding in the
/// envelope itself.
pub const ENVELOPE_SLACK: f64 = 1e-12;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        domain(format!("eps must lie strictly inside (0, 1), got {eps}"))
    }
}

/// `(√(1−ε), √(1+ε))`.
pub fn value_envelope(eps: f64) -> Result<(f64, f64)> {
    check_eps(eps)?;
    Ok(((1.0 - eps).sqrt(), (1.0 + eps).sqrt()))
}

/// `min_{c∈[−1,1]} |σ_i² − σ_j²(1 + cε)|` in closed form.
///
/// The argument is linear in `c`, so the minimum is zero when `σ_i²` lies in
/// `[σ_j²(1−ε), σ_j²(1+ε)]` and otherwise sits at the nearer endpoint.
pub fn min_over_c_denominator(sigma_i: f64, sigma_j: f64, eps: f64) -> Result<f64> {
    if !(sigma_i > 0.0 && sigma_j > 0.0) || !sigma_i.is_finite() || !sigma_j.is_finite() {
        return domain(format!("singular values must be positive, got {sigma_i}, {sigma_j}"));
    }
    check_eps(eps)?;
    let li = sigma_i * sigma_i;
    let lj = sigma_j * sigma_j;
    let lo = lj * (1.0 - eps);
    let hi = lj * (1.0 + eps);
    if li >= lo && li <= hi {
        Ok(0.0)
    } else {
        Ok((li - lo).abs().min((li - hi).abs()))
    }
}

/// Right-singular-vector error bound for index `index` (0-based) of the
/// descending spectrum `singular_values`.
///
/// A single-value spectrum has no competitors; its bound is `0`.
pub fn vector_error_bound(singular_values: &[f64], eps: f64, index: usize) -> Result<f64> {
    check_eps(eps)?;
    if index >= singular_values.len() {
        return domain(format!(
            "index {index} out of range for spectrum of length {}",
            singular_values.len()
        ));
    }
    if singular_values.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return domain("singular values must be positive and finite");
    }
    if singular_values.len() == 1 {
        return Ok(0.0);
    }
    let sj = singular_values[index];
    let mut worst = 0.0f64;
    for (i, &si) in singular_values.iter().enumerate() {
        if i == index {
            continue;
        }
        let denom = min_over_c_denominator(si, sj, eps)?;
        if denom == 0.0 {
            return Ok(SQRT_2);
        }
        worst = worst.max(SQRT_2 * si * sj / denom);
    }
    let prefactor = eps * (1.0 + eps).sqrt() / (1.0 - eps).sqrt();
    Ok(SQRT_2.min(prefactor * worst))
}

/// `1 − ε ≤ λ′_j / λ_j ≤ 1 + ε` per index.
pub fn eigenvalue_envelope_check(lambda_true: &[f64], lambda_est: &[f64], eps: f64) -> Result<Vec<bool>> {
    check_eps(eps)?;
    if lambda_true.len() != lambda_est.len() {
        return domain(format!(
            "length mismatch: {} true vs {} estimated eigenvalues",
            lambda_true.len(),
            lambda_est.len()
        ));
    }
    if lambda_true.iter().any(|l| l.is_nan() || *l <= 0.0) {
        return domain("true eigenvalues must be positive");
    }
    Ok(lambda_true
        .iter()
        .zip(lambda_est)
        .map(|(l, le)| {
            let r = le / l;
            r >= 1.0 - eps - ENVELOPE_SLACK && r <= 1.0 + eps + ENVELOPE_SLACK
        })
        .collect())
}

/// Relative eigenvalue gaps `ρ_j = min_{i≠j} |λ_i − λ_j| / |λ_j|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumGaps {
    pub relative_gaps: Vec<f64>,
}

pub fn relative_gaps(eigenvalues: &[f64]) -> Result<SpectrumGaps> {
    if eigenvalues.iter().any(|l| l.is_nan() || *l <= 0.0) {
        return domain("eigenvalues must be positive");
    }
    if eigenvalues.len() < 2 {
        return Ok(SpectrumGaps {
            relative_gaps: Vec::new(),
        });
    }
    let relative_gaps = eigenvalues
        .iter()
        .enumerate()
        .map(|(j, lj)| {
            eigenvalues
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .map(|(_, li)| (li - lj).abs() / lj.abs())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(SpectrumGaps { relative_gaps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    /// Both tests evaluated.
    Certified,
    /// Rank-one spectrum: the vector bound is identically zero.
    Singleton,
    /// Index present in only one of the oracle and the estimate.
    RankMismatch,
}

/// Comparison of one singular triple against its envelopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    /// 1-based index into the descending spectrum.
    pub j: usize,
    pub sigma_true: Option<f64>,
    pub sigma_est: Option<f64>,
    pub ratio: Option<f64>,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub value_pass: bool,
    pub vector_err: Option<f64>,
    pub vector_bound: Option<f64>,
    pub vector_pass: bool,
    pub status: RecordStatus,
}

impl IndexRecord {
    pub fn passed(&self) -> bool {
        self.value_pass && self.vector_pass
    }
}

/// Per-trial verdict on a sketched spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCertificate {
    pub eps: f64,
    pub rank_true: usize,
    pub rank_est: usize,
    pub records: Vec<IndexRecord>,
    pub gaps: SpectrumGaps,
    pub overall_pass: bool,
    pub m: Option<usize>,
    pub seed: Option<u64>,
    pub trial_id: Option<u64>,
}

impl ErrorCertificate {
    /// Attaches the sketch size, seed and trial number for reproducibility.
    pub fn with_context(mut self, m: usize, seed: u64, trial_id: Option<u64>) -> Self {
        self.m = Some(m);
        self.seed = Some(seed);
        self.trial_id = trial_id;
        self
    }

    /// True when every index passes the singular-value envelope.
    pub fn values_pass(&self) -> bool {
        self.records.iter().all(|r| r.value_pass)
    }

    pub fn vectors_pass(&self) -> bool {
        self.records.iter().all(|r| r.vector_pass)
    }
}

/// Certifies a sketched spectrum against the dense oracle.
///
/// Estimated vectors are sign-aligned to the oracle before measuring
/// `‖v_j − v′_j‖₂`. Indices present in only one of the two spectra fail with
/// [`RecordStatus::RankMismatch`].
pub fn certify(oracle: &OracleDecomposition, estimate: &SpectralEstimate, eps: f64) -> Result<ErrorCertificate> {
    let (lo, hi) = value_envelope(eps)?;
    let k = oracle.rank();
    if k == 0 {
        return domain("oracle has rank 0; nothing to certify");
    }
    let n = oracle.v.nrows();
    if estimate.right_vectors.nrows() != n {
        return domain(format!(
            "oracle has n = {n} columns but estimate vectors have length {}",
            estimate.right_vectors.nrows()
        ));
    }
    let r = estimate.rank;
    let common = k.min(r);
    let sigma = &oracle.singular_values;
    let aligned = align_signs(
        &oracle.v.columns(0, common).into_owned(),
        &estimate.right_vectors.columns(0, common).into_owned(),
    )?;

    let mut records = Vec::with_capacity(k.max(r));
    for idx in 0..k.max(r) {
        let sigma_true = sigma.get(idx).copied();
        let sigma_est = estimate.singular_values.get(idx).copied();
        let record = if idx < common {
            let (st, se) = (sigma[idx], estimate.singular_values[idx]);
            let ratio = se / st;
            let value_pass = ratio >= lo - ENVELOPE_SLACK && ratio <= hi + ENVELOPE_SLACK;
            let err = (oracle.v.column(idx) - aligned.column(idx)).norm();
            let bound = vector_error_bound(sigma, eps, idx)?;
            IndexRecord {
                j: idx + 1,
                sigma_true,
                sigma_est,
                ratio: Some(ratio),
                ratio_lo: lo,
                ratio_hi: hi,
                value_pass,
                vector_err: Some(err),
                vector_bound: Some(bound),
                vector_pass: err <= bound + ENVELOPE_SLACK,
                status: if k == 1 {
                    RecordStatus::Singleton
                } else {
                    RecordStatus::Certified
                },
            }
        } else {
            IndexRecord {
                j: idx + 1,
                sigma_true,
                sigma_est,
                ratio: None,
                ratio_lo: lo,
                ratio_hi: hi,
                value_pass: false,
                vector_err: None,
                vector_bound: None,
                vector_pass: false,
                status: RecordStatus::RankMismatch,
            }
        };
        records.push(record);
    }
    let lambdas: Vec<f64> = sigma.iter().map(|s| s * s).collect();
    let overall_pass = records.iter().all(IndexRecord::passed);
    Ok(ErrorCertificate {
        eps,
        rank_true: k,
        rank_est: r,
        records,
        gaps: relative_gaps(&lambdas)?,
        overall_pass,
        m: None,
        seed: None,
        trial_id: None,
    })
}
