//! Heterogeneity-agnostic beam and panel selection for multi-panel antenna arrays.
//!
//! The crate models the full pipeline at desk scale:
//!
//! 1. [`geometry`] / [`antenna`] — coordinate transforms, element patterns,
//!    steering vectors, and the combined array response that folds every
//!    antenna-heterogeneity parameter (size, orientation, polarization angle,
//!    pattern, codebook) into one analytical object.
//! 2. [`channel`] — synthetic multipath scenes, the double-directional
//!    clustered channel, and Zadoff-Chu LS channel estimation for noisy RSRP.
//! 3. [`rsrp`] — the RSRP model family, from the exact per-subcarrier average
//!    down to the compact PSD form `RSRP = Σ γ_r γ_t tr(R̂ B)` that separates
//!    propagation (path information) from antenna configuration.
//! 4. [`tracer`] — alternating path-tracing optimization: derivative-free
//!    angle search (Powell) alternated with PSD-constrained least squares,
//!    recovering path information from beamformed RSRP measurements.
//! 5. [`predictor`] — a three-stage location-to-path-information network
//!    (count prediction, autoregressive AoD prediction, Cholesky-factor path
//!    matrices) on a minimal reverse-mode tape.
//! 6. [`selection`] — beam/panel subset selection, sweep protocols, effective
//!    SNR, spectral efficiency with training overhead, and the genie /
//!    exhaustive / hierarchical / learned baselines.
//! 7. [`harness`] — seeded, reproducible experiment pipeline with JSON/CSV
//!    persistence.
//!
//! All angles are radians and all powers are linear watts internally; degrees
//! and dBm appear only at configuration and CLI boundaries.

pub mod antenna;
pub mod channel;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod predictor;
pub mod rsrp;
pub mod seeding;
pub mod selection;
pub mod tracer;

pub use error::{Error, Result};
