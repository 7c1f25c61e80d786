//! Per-step filter records shared by every filter driver.

use serde::{Deserialize, Serialize};

use crate::gaussian::{Gaussian1, GaussianMixture};

/// One predict/analyze cycle of a filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Observation index, starting at 1.
    pub n: usize,
    pub y: f64,
    /// `u` marginal of the forecast, moment-matched for mixtures.
    pub prior: Gaussian1,
    /// `u` marginal after the analysis, moment-matched for mixtures.
    pub posterior: Gaussian1,
    /// Kernel weights after the analysis (empty for single-Gaussian filters).
    pub weights: Vec<f64>,
    /// Forecast mixture over `u`, when the filter carries one.
    pub prior_mixture: Option<GaussianMixture<Gaussian1>>,
    /// Posterior mixture over `u` before any reduction.
    pub posterior_mixture: Option<GaussianMixture<Gaussian1>>,
}
