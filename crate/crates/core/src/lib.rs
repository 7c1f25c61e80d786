//! Filtering with model error for a two-state switching linear SDE.
//!
//! The truth model is `du = −γ u dt + σ_u dB` where `γ` jumps between a
//! stable value `γ+ > 0` and an unstable value `γ− < 0` with rates `λ±/ε`.
//! The crate provides:
//!
//! * [`switching`]: transition laws and moment generating functions of `∫γ`.
//! * [`truth`]: exact path simulation, observations and Monte Carlo oracles.
//! * [`gaussian`]: Gaussian and Gaussian-mixture states with Kalman analysis.
//! * [`ssm`]: reference filters for the switching model itself.
//! * [`reduced`]: MSM, DSM (SPEKF), dMSM and dDSM filters.
//! * [`calibration`]: naive parameter sets and objective-based calibration.
//! * [`experiment`]: the batch driver behind the `switchfilter` CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod quadrature;
pub mod reduced;
pub mod special;
pub mod ssm;
pub mod switching;
pub mod trace;
pub mod truth;

pub use calibration::{Calibrated, CalibrationConfig};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ModelId, ReferenceMode};
pub use gaussian::{Gaussian1, Gaussian2, GaussianMixture, MixtureKernel, ReductionPolicy};
pub use reduced::{ReducedModel, ReducedState, ThetaDdsm, ThetaDsm};
pub use ssm::{SsmConfig, SsmFilterState};
pub use switching::{Conditioning, MgfEngine, MgfRequest, Mode, ModeDistribution, SwitchingParams};
pub use trace::StepRecord;
pub use truth::{ObservationModel, TruthPath};
