//! Trainable wave-equation layers.
//!
//! A layer treats each channel of its hidden state as a displacement field on
//! a periodic grid and propagates it through a learned medium (wave speed
//! `c(x)`, damping `γ(x)`) with a spectral-Laplacian velocity-Verlet solver.
//! Gradients come from an exact reverse sweep over the recorded rollout.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the
//! `*64` / `*32` aliases below name the common instantiations.

pub mod adjoint;
pub mod dynamics;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod scalar;
pub mod spectral;
pub mod training;

pub use adjoint::{backward, record_rollout, LaplacianAdjoint, RolloutGradients, RolloutTape};
pub use dynamics::{
    discrete_energy, euler_step, rollout, rollout_final, verlet_stability_bound, verlet_step,
    wecs, Integrator, Medium, RolloutConfig, WaveState,
};
pub use error::{Result, WaveError};
pub use scalar::Real;
pub use spectral::{
    shared_grid, spectral_gradient, spectral_laplacian, wavenumbers, Field, SpectralGrid,
    WavenumberTable,
};

pub type Field64 = Field<f64>;
pub type Field32 = Field<f32>;
pub type Medium64 = Medium<f64>;
pub type Medium32 = Medium<f32>;
pub type WaveState64 = WaveState<f64>;
pub type WaveState32 = WaveState<f32>;
pub type RolloutTape64 = RolloutTape<f64>;
pub type HiddenSequence64 = model::HiddenSequence<f64>;
pub type HiddenSequence32 = model::HiddenSequence<f32>;
pub type LayerParams64 = model::LayerParams<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type Adam64 = training::Adam<f64>;
