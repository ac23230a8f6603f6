//! Flow-rate control for an all-vanadium redox flow battery.
//!
//! The crate models the coupled cell/tank vanadium concentration dynamics,
//! embeds them in a linear parameter varying (LPV) state-space description,
//! synthesizes convex-polytopic gain-scheduled LQR flow controllers with
//! integral action and disturbance accommodation, certifies closed-loop
//! boundedness via ultimate-bound invariant sets, and simulates charging and
//! discharging scenarios under fluctuating current.
//!
//! Module map:
//! - [`numerics`]: small dense matrix kernels (DARE, LQR, eigenvalues n <= 3).
//! - [`plant`]: ground-truth nonlinear concentration ODEs, OCV sensors, pump map.
//! - [`lpv`]: states, varying parameters, polytope vertices and convex weights.
//! - [`controller`]: vertex gain synthesis and the scheduled tracking control law.
//! - [`analysis`]: controllability and invariant-set stability certificates.
//! - [`sim`]: scenario orchestration, current profiles, calibration sweeps, CSV logs.
//! - [`config`]: flat key-value scenario configuration files.

pub mod analysis;
pub mod config;
pub mod controller;
pub mod lpv;
pub mod numerics;
pub mod plant;
pub mod rng;
pub mod sim;

pub(crate) mod logging;

pub use logging::LogLevel;
