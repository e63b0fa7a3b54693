//! Memory caps for dense oracle materializations.

use crate::error::{Error, Result};

/// Environment variable that caps dense materialization, in MiB.
pub const BUDGET_ENV: &str = "SKSV_BUDGET_MB";

/// Upper bounds on dense matrices built for verification.
///
/// The oracle path is desk-scale only; streaming code never consults this.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_bytes: u64,
    /// Largest ambient row count `N` the oracle will materialize.
    pub max_rows: usize,
    /// Largest column count `n` the oracle will materialize.
    pub max_cols: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_bytes: 512 << 20,
            max_rows: 20_000,
            max_cols: 256,
        }
    }
}

impl Budget {
    /// Default budget with the byte cap taken from `SKSV_BUDGET_MB` when set.
    pub fn from_env() -> Result<Self> {
        let mut budget = Budget::default();
        if let Ok(raw) = std::env::var(BUDGET_ENV) {
            let mb: u64 = raw.trim().parse().map_err(|_| {
                Error::Domain(format!("{BUDGET_ENV} must be an integer number of MiB, got {raw:?}"))
            })?;
            budget.max_bytes = mb << 20;
        }
        Ok(budget)
    }

    pub fn unlimited() -> Self {
        Budget {
            max_bytes: u64::MAX,
            max_rows: usize::MAX,
            max_cols: usize::MAX,
        }
    }

    /// Checks that a dense `rows x cols` f64 matrix fits.
    pub fn check_dense(&self, what: &'static str, rows: usize, cols: usize) -> Result<()> {
        let needed = (rows as u64)
            .saturating_mul(cols as u64)
            .saturating_mul(std::mem::size_of::<f64>() as u64);
        if needed > self.max_bytes {
            return Err(Error::Budget(format!(
                "{what} needs {needed} bytes, budget is {} bytes (raise {BUDGET_ENV})",
                self.max_bytes
            )));
        }
        Ok(())
    }

    /// Checks the oracle shape limits as well as the byte cap.
    pub fn check_oracle_shape(&self, what: &'static str, rows: usize, cols: usize) -> Result<()> {
        if rows > self.max_rows || cols > self.max_cols {
            return Err(Error::Budget(format!(
                "{what} is {rows}x{cols}, oracle limit is {}x{}",
                self.max_rows, self.max_cols
            )));
        }
        self.check_dense(what, rows, cols)
    }
}
