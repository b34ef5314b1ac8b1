//! Euler–Maruyama schemes for stochastic delay differential equations
//! driven by linear fractional stable motion, together with the tools used
//! to check their strong error rates and the laws of the rescaled errors.
//!
//! The equation solved is
//!
//! ```text
//! X_t = x0(0) + ∫_0^t ∫_[0,τ] b(X_{s-r}) η(dr) ds + Z_t,   X_t = x0(t) on [-τ, 0],
//! ```
//!
//! where `Z_t = ∫ [(t-s)_+^β - (-s)_+^β] dL_s` with `β = H - 1/α` and `L` a
//! symmetric α-stable Lévy process.
//!
//! Module map:
//! - [`stable_noise`]: stable variates, seeded streams and integral scales.
//! - [`lfsm`]: path synthesis for `Z` and its past/present split.
//! - [`delay`]: the delay measure `η` and its grid projections.
//! - [`sdde`]: the Euler scheme, reference and Picard solvers, error processes.
//! - [`resolvent`]: differential resolvents, the bias term and the limit equation.
//! - [`limits`]: the statistic `S_n`, the kernel `g`, limit noise and fitting tools.
//! - [`experiments`]: coupled Monte Carlo studies and their reports.

pub mod delay;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod lfsm;
pub mod limits;
pub mod quad;
pub mod resolvent;
pub mod sdde;
pub mod stable_noise;

pub use delay::DelayMeasure;
pub use error::{Error, Result};
pub use grid::GridPath;
pub use lfsm::{LfsmParams, NoiseRealization};
pub use sdde::{Drift, InitialPath, SchemeResult, SddeSpec};
pub use stable_noise::{SeededStream, StableParams};
