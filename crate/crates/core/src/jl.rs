//! Johnson–Lindenstrauss sketching operators.
//!
//! A sketching operator `Φ` is an `m × N` random matrix whose squared-norm
//! distortion of any fixed vector has an exponentially small tail:
//!
//! ```text
//! Pr[ | ‖Φx‖² − ‖x‖² | > ε‖x‖² ] ≤ 2 exp(−m f(ε))
//! ```
//!
//! `Φ` is never stored. Every entry is a pure function of
//! `(seed, column, row)`, produced by a ChaCha8 keystream where the column
//! selects the stream and the row selects the position inside it. A turnstile
//! update to row `i` of the data matrix therefore touches exactly one
//! generated column `φ_i`, and any column can be regenerated in isolation on
//! any machine.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::budget::Budget;
use crate::error::{domain, Error, Result};

/// Random matrix family used to draw `Φ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JlFamily {
    /// i.i.d. `N(0, 1/m)` entries.
    Gaussian,
    /// i.i.d. `±1/√m` entries.
    Rademacher,
    /// Entries `±√(s/m)` each with probability `1/(2s)`, zero otherwise.
    SparseSign { s: u32 },
    /// `Φ = I` with `m = N`. Exact isometry, for oracle tests only.
    Identity,
}

impl JlFamily {
    pub const DEFAULT_SPARSITY: u32 = 3;

    pub fn sparse_sign() -> Self {
        JlFamily::SparseSign {
            s: Self::DEFAULT_SPARSITY,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            JlFamily::Gaussian => "gaussian",
            JlFamily::Rademacher => "rademacher",
            JlFamily::SparseSign { .. } => "sparse_sign",
            JlFamily::Identity => "identity",
        }
    }

    fn sparsity(&self) -> Option<u32> {
        match self {
            JlFamily::SparseSign { s } => Some(*s),
            _ => None,
        }
    }
}

impl fmt::Display for JlFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JlFamily::SparseSign { s } => write!(f, "sparse_sign(s={s})"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for JlFamily {
    type Err = Error;

    /// Parses `gaussian`, `rademacher`, `identity`, `sparse_sign` (default
    /// sparsity) or `sparse_sign:<s>`. Hyphens are accepted for underscores.
    fn from_str(raw: &str) -> Result<Self> {
        let norm = raw.trim().to_ascii_lowercase().replace('-', "_");
        let (name, arg) = match norm.split_once(':') {
            Some((n, a)) => (n.to_string(), Some(a.to_string())),
            None => (norm, None),
        };
        let family = match (name.as_str(), arg) {
            ("gaussian", None) => JlFamily::Gaussian,
            ("rademacher", None) => JlFamily::Rademacher,
            ("identity", None) => JlFamily::Identity,
            ("sparse_sign", None) => JlFamily::sparse_sign(),
            ("sparse_sign", Some(a)) => {
                let s: u32 = a
                    .parse()
                    .map_err(|_| Error::Domain(format!("bad sparsity {a:?}")))?;
                if s == 0 {
                    return domain("sparse_sign sparsity must be positive");
                }
                JlFamily::SparseSign { s }
            }
            _ => return domain(format!("unknown sketch family {raw:?}")),
        };
        Ok(family)
    }
}

/// Immutable description of a sketching operator and its accuracy target.
///
/// `rows` is the ambient dimension `N` of the data matrix and `cols` its
/// column count `n`. `m > N` is permitted.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchConfig {
    pub seed: u64,
    pub family: JlFamily,
    pub m: usize,
    pub rows: usize,
    pub cols: usize,
    pub eps: f64,
    pub delta: f64,
    pub k_hint: Option<usize>,
}

impl SketchConfig {
    /// Config with `m` chosen by [`required_measurements`] for rank `k`.
    ///
    /// For [`JlFamily::Identity`] the sketch size is forced to `m = N`.
    pub fn for_rank(
        seed: u64,
        family: JlFamily,
        rows: usize,
        cols: usize,
        k: usize,
        eps: f64,
        delta: f64,
    ) -> Result<Self> {
        let m = match family {
            JlFamily::Identity => rows,
            _ => required_measurements(k, eps, delta, family)?,
        };
        let cfg = SketchConfig {
            seed,
            family,
            m,
            rows,
            cols,
            eps,
            delta,
            k_hint: Some(k),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.rows == 0 || self.cols == 0 {
            return domain(format!(
                "sketch dimensions must be positive (m={}, N={}, n={})",
                self.m, self.rows, self.cols
            ));
        }
        check_unit_interval("eps", self.eps)?;
        check_unit_interval("delta", self.delta)?;
        if let Some(k) = self.k_hint {
            if k == 0 || k > self.cols {
                return domain(format!("k_hint {k} must lie in [1, n={}]", self.cols));
            }
        }
        match self.family {
            JlFamily::SparseSign { s: 0 } => domain("sparse_sign sparsity must be positive"),
            JlFamily::Identity if self.m != self.rows => domain(format!(
                "identity sketch requires m == N (m={}, N={})",
                self.m, self.rows
            )),
            _ => Ok(()),
        }
    }

    /// Canonical JSON text of this config.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization is infallible")
    }
}

/// Wire layout of [`SketchConfig`]; the field order here is the canonical order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigWire {
    seed: u64,
    family: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    s: Option<u32>,
    m: usize,
    #[serde(rename = "N")]
    rows: usize,
    #[serde(rename = "n")]
    cols: usize,
    eps: f64,
    delta: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    k_hint: Option<usize>,
}

impl Serialize for SketchConfig {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ConfigWire {
            seed: self.seed,
            family: self.family.name().to_string(),
            s: self.family.sparsity(),
            m: self.m,
            rows: self.rows,
            cols: self.cols,
            eps: self.eps,
            delta: self.delta,
            k_hint: self.k_hint,
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for SketchConfig {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let wire = ConfigWire::deserialize(de)?;
        let family = match (wire.family.as_str(), wire.s) {
            ("sparse_sign", Some(s)) => JlFamily::SparseSign { s },
            ("sparse_sign", None) => JlFamily::sparse_sign(),
            (_, Some(_)) => return Err(D::Error::custom("`s` is only valid for sparse_sign")),
            (name, None) => name.parse().map_err(D::Error::custom)?,
        };
        let cfg = SketchConfig {
            seed: wire.seed,
            family,
            m: wire.m,
            rows: wire.rows,
            cols: wire.cols,
            eps: wire.eps,
            delta: wire.delta,
            k_hint: wire.k_hint,
        };
        cfg.validate().map_err(D::Error::custom)?;
        Ok(cfg)
    }
}

fn check_unit_interval(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        domain(format!("{name} must lie strictly inside (0, 1), got {x}"))
    }
}

/// The tail exponent `f(ε)` of the distributional JL property.
///
/// Gaussian, Rademacher and sparse-sign families all use the classical
/// subgaussian exponent `ε²/4 − ε³/6`. The identity operator has no tail and
/// is rejected.
pub fn concentration_exponent(family: JlFamily, eps: f64) -> Result<f64> {
    check_unit_interval("eps", eps)?;
    match family {
        JlFamily::Gaussian | JlFamily::Rademacher | JlFamily::SparseSign { .. } => {
            Ok(subgaussian_exponent(eps))
        }
        JlFamily::Identity => domain("identity sketch has no concentration exponent"),
    }
}

/// `ε²/4 − ε³/6`, positive on `(0, 1)`.
pub fn subgaussian_exponent(eps: f64) -> f64 {
    eps * eps / 4.0 - eps * eps * eps / 6.0
}

/// Number of sketch rows that guarantees a `(1 ± ε)` embedding of a
/// `k`-dimensional subspace with probability at least `1 − δ`:
///
/// ```text
/// m = ⌈ (k ln(42/ε) + ln(2/δ)) / f(ε/√2) ⌉
/// ```
///
/// ```
/// use sksv::jl::{required_measurements, JlFamily};
/// assert_eq!(required_measurements(4, 0.5, 0.05, JlFamily::Gaussian).unwrap(), 897);
/// ```
pub fn required_measurements(k: usize, eps: f64, delta: f64, family: JlFamily) -> Result<usize> {
    required_measurements_with(k, eps, delta, |e| concentration_exponent(family, e))
}

/// [`required_measurements`] with a caller-supplied tail exponent `f`.
pub fn required_measurements_with<F>(k: usize, eps: f64, delta: f64, exponent: F) -> Result<usize>
where
    F: Fn(f64) -> Result<f64>,
{
    if k == 0 {
        return domain("k must be at least 1");
    }
    check_unit_interval("eps", eps)?;
    check_unit_interval("delta", delta)?;
    let f = exponent(eps / std::f64::consts::SQRT_2)?;
    if !(f > 0.0 && f.is_finite()) {
        return domain(format!("tail exponent must be positive and finite, got {f}"));
    }
    let numer = k as f64 * (42.0 / eps).ln() + (2.0 / delta).ln();
    let m = (numer / f).ceil();
    if m >= usize::MAX as f64 {
        return domain("required sketch size overflows");
    }
    Ok(m as usize)
}

/// Random-access generator for the columns of `Φ`.
#[derive(Clone)]
pub struct PhiGenerator {
    family: JlFamily,
    m: usize,
    rows: usize,
    key: [u8; 32],
}

impl fmt::Debug for PhiGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhiGenerator")
            .field("family", &self.family)
            .field("m", &self.m)
            .field("rows", &self.rows)
            .finish_non_exhaustive()
    }
}

const U53_SCALE: f64 = 1.0 / (1u64 << 53) as f64;

impl PhiGenerator {
    pub fn new(config: &SketchConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self::from_parts(config.seed, config.family, config.m, config.rows))
    }

    fn from_parts(seed: u64, family: JlFamily, m: usize, rows: usize) -> Self {
        // SplitMix64 expansion of the 64-bit seed into a 256-bit ChaCha key.
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        PhiGenerator {
            family,
            m,
            rows,
            key,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    fn check_col(&self, col: usize) -> Result<()> {
        if col >= self.rows {
            return domain(format!("column index {col} out of range [0, {})", self.rows));
        }
        Ok(())
    }

    /// Writes column `col` of `Φ` into `out` (length `m`).
    pub fn fill_column(&self, col: usize, out: &mut [f64]) -> Result<()> {
        self.check_col(col)?;
        if out.len() != self.m {
            return domain(format!("output length {} != m = {}", out.len(), self.m));
        }
        if let JlFamily::Identity = self.family {
            out.fill(0.0);
            out[col] = 1.0;
            return Ok(());
        }
        let mut rng = self.stream(col);
        for slot in out.iter_mut() {
            let a = rng.next_u64();
            let b = rng.next_u64();
            *slot = self.entry_from_words(a, b);
        }
        Ok(())
    }

    pub fn column(&self, col: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.m];
        self.fill_column(col, &mut out)?;
        Ok(out)
    }

    /// Single entry `Φ[row, col]`, without generating the rest of the column.
    pub fn entry(&self, row: usize, col: usize) -> Result<f64> {
        self.check_col(col)?;
        if row >= self.m {
            return domain(format!("row index {row} out of range [0, {})", self.m));
        }
        if let JlFamily::Identity = self.family {
            return Ok(if row == col { 1.0 } else { 0.0 });
        }
        let mut rng = self.stream(col);
        // Each entry consumes two 64-bit outputs, i.e. four 32-bit words.
        rng.set_word_pos(4 * row as u128);
        let a = rng.next_u64();
        let b = rng.next_u64();
        Ok(self.entry_from_words(a, b))
    }

    fn stream(&self, col: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(col as u64);
        rng
    }

    fn entry_from_words(&self, a: u64, b: u64) -> f64 {
        let m = self.m as f64;
        match self.family {
            JlFamily::Gaussian => {
                // Box–Muller with libm so the transcendental calls are
                // bit-identical across platforms.
                let u1 = ((a >> 11) + 1) as f64 * U53_SCALE;
                let u2 = (b >> 11) as f64 * U53_SCALE;
                let z = (-2.0 * libm::log(u1)).sqrt() * libm::cos(2.0 * PI * u2);
                z / m.sqrt()
            }
            JlFamily::Rademacher => {
                if a >> 63 == 0 {
                    1.0 / m.sqrt()
                } else {
                    -1.0 / m.sqrt()
                }
            }
            JlFamily::SparseSign { s } => {
                let scale = (s as f64 / m).sqrt();
                match a % (2 * s as u64) {
                    0 => scale,
                    1 => -scale,
                    _ => 0.0,
                }
            }
            JlFamily::Identity => unreachable!("identity entries are not drawn from the keystream"),
        }
    }
}

/// Column `col_index` of `Φ`.
pub fn phi_column(config: &SketchConfig, col_index: usize) -> Result<Vec<f64>> {
    PhiGenerator::new(config)?.column(col_index)
}

/// Dense `m × N` copy of `Φ`, for oracle use.
pub fn materialize_phi(config: &SketchConfig, budget: &Budget) -> Result<DMatrix<f64>> {
    let gen = PhiGenerator::new(config)?;
    budget.check_dense("sketching operator", config.m, config.rows)?;
    let mut phi = DMatrix::zeros(config.m, config.rows);
    for (i, mut col) in phi.column_iter_mut().enumerate() {
        gen.fill_column(i, col.as_mut_slice())?;
    }
    Ok(phi)
}
