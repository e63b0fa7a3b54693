//! Linear sketch state under turnstile updates.
//!
//! The state holds `Y = ΦX` for an implicit `N × n` data matrix `X` that is
//! only ever seen as a stream of additive entry updates `(row, col, delta)`.
//! Each update adds `delta · φ_row` to column `col` of `Y`. Because the map
//! `X ↦ ΦX` is linear, states built from disjoint parts of a stream with the
//! same operator can be summed.
//!
//! On disk a state is `SKSV1\n`, a one-line JSON header, `\n`, then the
//! `m·n` entries of `Y` as row-major little-endian `f64`.

use std::io::Read;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::jl::{PhiGenerator, SketchConfig};

pub const MAGIC: &[u8; 6] = b"SKSV1\n";

/// One additive update `X[row, col] += delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixUpdate {
    pub row: usize,
    pub col: usize,
    pub delta: f64,
}

impl MatrixUpdate {
    pub fn new(row: usize, col: usize, delta: f64) -> Self {
        MatrixUpdate { row, col, delta }
    }

    /// Parses one JSON Lines record `{"row": .., "col": .., "delta": ..}`.
    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Format(format!("bad update record: {e}")))
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("update serialization is infallible")
    }
}

/// Which kind of stream a persisted state was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamMode {
    Matrix,
    Graph,
}

/// The live sketch `Y` together with the operator that produced it.
#[derive(Debug, Clone)]
pub struct SketchState {
    config: SketchConfig,
    y: DMatrix<f64>,
    updates_applied: u64,
    phi: PhiGenerator,
    scratch: Vec<f64>,
}

impl PartialEq for SketchState {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.updates_applied == other.updates_applied
            && self.y == other.y
    }
}

impl SketchState {
    /// Empty sketch: `Y = 0`, no updates applied.
    pub fn new(config: SketchConfig) -> Result<Self> {
        let phi = PhiGenerator::new(&config)?;
        Ok(SketchState {
            y: DMatrix::zeros(config.m, config.cols),
            scratch: vec![0.0; config.m],
            updates_applied: 0,
            phi,
            config,
        })
    }

    pub fn config(&self) -> &SketchConfig {
        &self.config
    }

    pub fn updates_applied(&self) -> u64 {
        self.updates_applied
    }

    /// Borrow of the current `m × n` sketch.
    pub fn sketch(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// Owned copy of the current `m × n` sketch.
    pub fn snapshot(&self) -> DMatrix<f64> {
        self.y.clone()
    }

    pub(crate) fn phi(&self) -> &PhiGenerator {
        &self.phi
    }

    pub fn validate_update(&self, u: &MatrixUpdate) -> Result<()> {
        if u.row >= self.config.rows {
            return domain(format!("row {} out of range [0, {})", u.row, self.config.rows));
        }
        if u.col >= self.config.cols {
            return domain(format!("column {} out of range [0, {})", u.col, self.config.cols));
        }
        if !u.delta.is_finite() {
            return domain(format!("non-finite delta {}", u.delta));
        }
        Ok(())
    }

    /// `Y[:, col] += delta · φ_row`. A rejected update leaves the state untouched.
    pub fn apply_update(&mut self, u: &MatrixUpdate) -> Result<()> {
        self.validate_update(u)?;
        self.phi.fill_column(u.row, &mut self.scratch)?;
        axpy(self.y.column_mut(u.col).as_mut_slice(), u.delta, &self.scratch);
        self.updates_applied += 1;
        Ok(())
    }

    /// Applies a whole row of `X` at once: equivalent to the updates
    /// `(row, j, values[j])` for `j = 0..n` in order, but draws `φ_row` once.
    pub fn apply_row(&mut self, row: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.config.cols {
            return domain(format!("row has {} values, expected n = {}", values.len(), self.config.cols));
        }
        for (col, &delta) in values.iter().enumerate() {
            self.validate_update(&MatrixUpdate { row, col, delta })?;
        }
        self.phi.fill_column(row, &mut self.scratch)?;
        for (col, &delta) in values.iter().enumerate() {
            axpy(self.y.column_mut(col).as_mut_slice(), delta, &self.scratch);
        }
        self.updates_applied += values.len() as u64;
        Ok(())
    }

    /// Applies a batch with one worker per touched column.
    ///
    /// Updates to the same column are applied in batch order, so the result
    /// is bit-identical to calling [`apply_update`](Self::apply_update) on
    /// each element in sequence. The whole batch is validated first; on error
    /// nothing is applied.
    pub fn apply_batch(&mut self, updates: &[MatrixUpdate]) -> Result<()> {
        for u in updates {
            self.validate_update(u)?;
        }
        let mut per_col: Vec<Vec<&MatrixUpdate>> = vec![Vec::new(); self.config.cols];
        for u in updates {
            per_col[u.col].push(u);
        }
        let m = self.config.m;
        let phi = &self.phi;
        self.y
            .as_mut_slice()
            .par_chunks_mut(m)
            .zip(per_col.par_iter())
            .try_for_each(|(column, ups)| -> Result<()> {
                if ups.is_empty() {
                    return Ok(());
                }
                let mut buf = vec![0.0; m];
                for u in ups {
                    phi.fill_column(u.row, &mut buf)?;
                    axpy(column, u.delta, &buf);
                }
                Ok(())
            })?;
        self.updates_applied += updates.len() as u64;
        Ok(())
    }

    /// `Y[:, col] += delta · φ_row` for a pre-generated `φ_row`.
    pub(crate) fn add_scaled_column(&mut self, col: usize, delta: f64, phi_col: &[f64]) {
        axpy(self.y.column_mut(col).as_mut_slice(), delta, phi_col);
    }

    pub(crate) fn bump_counter(&mut self, by: u64) {
        self.updates_applied += by;
    }

    /// Sum of two sketches of the same operator.
    pub fn merge(mut self, other: SketchState) -> Result<SketchState> {
        if self.config != other.config {
            return Err(Error::Incompatible(format!(
                "config {} does not match {}",
                self.config.to_json(),
                other.config.to_json()
            )));
        }
        self.y += &other.y;
        self.updates_applied += other.updates_applied;
        Ok(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with_mode(StreamMode::Matrix)
    }

    pub(crate) fn to_bytes_with_mode(&self, mode: StreamMode) -> Vec<u8> {
        let header = StateHeader {
            config: self.config.clone(),
            updates_applied: self.updates_applied,
            mode,
        };
        let header = serde_json::to_string(&header).expect("header serialization is infallible");
        let (m, n) = self.y.shape();
        let mut out = Vec::with_capacity(MAGIC.len() + header.len() + 1 + 8 * m * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for i in 0..m {
            for j in 0..n {
                out.extend_from_slice(&self.y[(i, j)].to_le_bytes());
            }
        }
        out
    }

    /// Decodes a persisted state of either mode.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(decode_state(bytes)?.0)
    }
}

/// Header line of a persisted state: the config fields followed by the
/// state counters.
#[derive(Serialize, Deserialize)]
struct StateHeader {
    #[serde(flatten)]
    config: SketchConfig,
    updates_applied: u64,
    mode: StreamMode,
}

/// Decodes a persisted state and reports which stream mode wrote it.
pub fn decode_state(bytes: &[u8]) -> Result<(SketchState, StreamMode)> {
    let rest = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| Error::Format("missing SKSV1 magic".into()))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("unterminated header".into()))?;
    let header: StateHeader = serde_json::from_slice(&rest[..nl])
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let payload = &rest[nl + 1..];
    let (m, n) = (header.config.m, header.config.cols);
    let expected = m
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {expected} for {m}x{n}",
            payload.len()
        )));
    }
    let mut state = SketchState::new(header.config).map_err(|e| Error::Format(e.to_string()))?;
    for (idx, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
        state.y[(idx / n, idx % n)] = v;
    }
    state.updates_applied = header.updates_applied;
    Ok((state, header.mode))
}

/// Reads and decodes a persisted state.
pub fn read_state<R: Read>(mut reader: R) -> Result<(SketchState, StreamMode)> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    decode_state(&buf)
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
