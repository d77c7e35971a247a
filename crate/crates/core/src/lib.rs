//! Key rates of passive decoy-state QKD with a transformed weak-coherent-pulse
//! source and intensity fluctuations.
//!
//! Two phase-randomised weak coherent pulses interfere on a beam splitter.
//! One output is monitored by Alice's threshold detector and the other is
//! sent to Bob. Alice's click / no-click outcome splits the pulses into two
//! ensembles with different photon-number statistics. Those ensembles play
//! the role of decoy settings without any active intensity modulation.
//!
//! Modules, bottom up:
//!
//! - [`numerics`]: I₀, periodic quadrature, Poisson weights, binary entropy.
//! - [`source`]: photon-number statistics of the source, split by outcome.
//! - [`channel`]: fiber + Bob's detection model, gains and QBERs.
//! - [`passive`]: fluctuation-free single-photon bounds and GLLP rate.
//! - [`fluctuation`]: worst-case bounds when the true intensities are only
//!   known to lie in a box.
//! - [`active`]: 2- and 3-intensity active decoy baselines.
//! - [`mc`]: photon-level Monte Carlo oracle and bound-soundness battery.
//! - [`study`]: sweeps, fidelity, cutoffs and method comparison.

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active;
pub mod channel;
pub mod error;
pub mod flags;
pub mod fluctuation;
pub mod mc;
pub mod numerics;
pub mod passive;
pub mod source;
pub mod study;

pub use active::{active_bounds, active_rate, ActiveBounds, ActiveDecoyParams, ActiveRateResult};
pub use channel::{observe, ChannelParams, Observables, QberModel};
pub use error::{Error, Result};
pub use flags::{Flag, Flags};
pub use fluctuation::{
    E1Variant, FluctuationBounds, FluctuationEstimator, FluctuationOptions, FluctuationSpec, NoClickTransfer,
    RealizationSet,
};
pub use mc::{run_trials, soundness_battery, BatteryConfig, BatteryReport, McReport};
pub use passive::{evaluate, ProtocolParams, RateResult, Totaling};
pub use source::{build_stats, PhotonNumberStats, SourceParams};
pub use study::{consistency_suite, Comparison, Method, Scenario};
