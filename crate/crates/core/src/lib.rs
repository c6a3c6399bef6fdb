//! Verification testbench for score-based diffusion samplers.
//!
//! Targets are finite Dirac mixtures (optionally Gaussian-smoothed), for which
//! the score of every noised marginal is available in closed form. On top of
//! that the crate provides the Euler–Maruyama, Euler and Heun samplers,
//! coupled strong-error diagnostics, empirical and closed-form Wasserstein-2
//! estimators, the closed-form error bounds the samplers are checked against,
//! and a finite-time blow-up simulator for non-Lipschitz score perturbations.
//!
//! Time conventions: `t` passed to a score is *forward* (noising) time; the
//! samplers run in reverse time `t_n = n h` and query the score at `T - t_n`.

pub mod assignment;
pub mod bounds;
pub mod error;
pub mod explosion;
pub mod rng;
pub mod samplers;
pub mod score;
pub mod stats;
pub mod target;
pub mod transport;

pub use bounds::{BoundInputs, BoundReport, EpsScore, InitVariant};
pub use error::{Error, Result};
pub use explosion::ExplosionOutcome;
pub use rng::{Purpose, StreamKey};
pub use samplers::{Algorithm, CoupledRun, SamplerSpec};
pub use score::{FieldKind, RegularityEnvelope, ScoreField};
pub use stats::{L2Estimate, MeanEstimate};
pub use target::{SampleBatch, TargetDistribution, TimeGrid};
pub use transport::{W2Estimate, W2Method};
