//! Streaming sketched SVD.
//!
//! `sksv` maintains a compressive sketch `Y = ΦX` of a tall `N × n` data
//! matrix that arrives as a turnstile stream of entry updates, recovers the
//! singular values and right singular vectors of `X` from the SVD of `Y`, and
//! certifies them against relative-error envelopes using a dense oracle.
//!
//! | module | contents |
//! |---|---|
//! | [`jl`] | seed-keyed JL operators and the sketch-size formula |
//! | [`turnstile`] | the linear, mergeable, persistable sketch state |
//! | [`spectral`] | truncated SVD of the sketch |
//! | [`bounds`] | value/vector envelopes and certificates |
//! | [`graph`] | dynamic graph streams and Laplacian spectra |
//! | [`oracle`] | dense ground truth and perturbation diagnostics |
//!
//! ```
//! use sksv::jl::{JlFamily, SketchConfig};
//! use sksv::spectral::{sketched_svd, DEFAULT_RANK_TOL};
//! use sksv::turnstile::{MatrixUpdate, SketchState};
//!
//! // X is 1000 x 3 with rank one; the sketch has far fewer rows.
//! let cfg = SketchConfig::for_rank(7, JlFamily::Gaussian, 1000, 3, 1, 0.5, 0.05)?;
//! let mut state = SketchState::new(cfg)?;
//! for i in 0..1000 {
//!     let a = (i as f64).sin();
//!     state.apply_row(i, &[a, 2.0 * a, -a])?;
//! }
//! let est = sketched_svd(state.sketch(), DEFAULT_RANK_TOL)?;
//! assert_eq!(est.rank, 1);
//! # Ok::<(), sksv::Error>(())
//! ```

pub mod bounds;
pub mod budget;
mod error;
pub mod graph;
pub mod jl;
pub mod oracle;
pub mod spectral;
pub mod turnstile;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/sketching.md")]
    mod sketching {}
    #[doc = include_str!("../../../book/src/turnstile.md")]
    mod turnstile {}
    #[doc = include_str!("../../../book/src/recovery.md")]
    mod recovery {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
