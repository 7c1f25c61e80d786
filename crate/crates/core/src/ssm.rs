//! Reference filters for the switching model itself.
//!
//! Both filters assume `u` and `γ` are independent at the start of each
//! forecast. By variation of constants,
//!
//! ```text
//! ⟨u_T⟩    = ⟨e^{−Γ_T}⟩ ⟨u_0⟩
//! Var(u_T) = ⟨e^{−2Γ_T}⟩ ⟨u_0²⟩ − ⟨e^{−Γ_T}⟩² ⟨u_0⟩² + σ_u² ∫₀ᵀ ⟨e^{−2(Γ_T − Γ_t)}⟩ dt
//! ```
//!
//! The Gaussian filter evaluates these under the current mode law; the
//! Gaussian-sum filter evaluates them once per initial mode, giving a
//! two-kernel forecast that is merged back to one Gaussian after analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{
    kalman_update, mixture_update, moment_match, Gaussian1, GaussianMixture, MixtureKernel,
};
use crate::quadrature::simpson_weights;
use crate::switching::{
    conditional_mgf, transition_matrix, transition_probs, MgfEngine, Mode, ModeDistribution,
    SwitchingParams,
};
use crate::trace::StepRecord;
use crate::truth::ObservationModel;

/// How the mode law for the next forecast is formed after a mixture analysis.
///
/// The mixture kernels are labelled by the mode at the *start* of the
/// forecast window, so their posterior weights describe `γ` one interval in
/// the past.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeHandoff {
    /// Posterior start-mode weights pushed through the transition matrix,
    /// giving the posterior law of `γ` at the observation time.
    #[default]
    PosteriorPropagated,
    /// Posterior start-mode weights used directly.
    Posterior,
    /// Prior mode law pushed through the transition matrix, ignoring the data.
    Preserve,
}

/// Which reference filter to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsmFilterKind {
    Gaussian,
    Mixture,
}

/// Numerical settings shared by the reference filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsmConfig {
    pub engine: MgfEngine,
    /// Nodes of the composite Simpson rule for the noise integral.
    pub quad_nodes: usize,
    pub handoff: ModeHandoff,
}

impl Default for SsmConfig {
    fn default() -> Self {
        Self {
            engine: MgfEngine::default(),
            quad_nodes: 65,
            handoff: ModeHandoff::default(),
        }
    }
}

/// Belief over `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UBelief {
    Gaussian(Gaussian1),
    Mixture(GaussianMixture<Gaussian1>),
}

impl UBelief {
    /// Single Gaussian with the belief's first two moments.
    pub fn collapsed(&self) -> Gaussian1 {
        match self {
            UBelief::Gaussian(g) => *g,
            UBelief::Mixture(m) => moment_match(m),
        }
    }
}

/// Product-form filter state: `u` belief and an independent mode law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmFilterState {
    pub u: UBelief,
    pub modes: ModeDistribution,
    pub step: usize,
}

impl SsmFilterState {
    pub fn new(u: Gaussian1, modes: ModeDistribution) -> Self {
        Self {
            u: UBelief::Gaussian(u),
            modes,
            step: 0,
        }
    }
}

/// Forecast ingredients conditioned on the mode at the start of the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMoments {
    /// `⟨e^{−Γ_T} | γ₀⟩`.
    pub m1: f64,
    /// `⟨e^{−2Γ_T} | γ₀⟩`.
    pub m2: f64,
    /// `σ_u² ∫₀ᵀ ⟨e^{−2(Γ_T − Γ_t)} | γ₀⟩ dt`.
    pub noise: f64,
}

impl ModeMoments {
    /// Forecast of `u_T` from `u_0 ~ prior`, independent of `γ`.
    pub fn forecast(&self, prior: &Gaussian1) -> Gaussian1 {
        let m = prior.mean;
        let mean = self.m1 * m;
        let var = self.m2 * prior.var + (self.m2 - self.m1 * self.m1) * m * m + self.noise;
        Gaussian1 { mean, var }
    }

    fn mix(parts: &[(f64, ModeMoments); 2]) -> ModeMoments {
        let mut out = ModeMoments {
            m1: 0.0,
            m2: 0.0,
            noise: 0.0,
        };
        for (w, mm) in parts {
            out.m1 += w * mm.m1;
            out.m2 += w * mm.m2;
            out.noise += w * mm.noise;
        }
        out
    }
}

fn check_interval(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param(
            "T",
            "forecast interval must be finite and > 0",
        ));
    }
    Ok(())
}

/// Per-start-mode forecast ingredients over `[0, T]`, indexed by [`Mode::index`].
///
/// The noise integrand `Σ_k P(γ_t = k | γ₀) ⟨e^{−2Γ_{T−t}} | γ₀ = k⟩` is
/// integrated with composite Simpson after subtracting `e^{−2γ̄(T−t)}`
/// (`γ̄` the stationary mean), whose integral is added back in closed form.
pub fn mode_moments(
    params: &SwitchingParams,
    t: f64,
    config: &SsmConfig,
) -> Result<[ModeMoments; 2]> {
    check_interval(t)?;
    if config.quad_nodes < 2 {
        return Err(Error::param("quad_nodes", "must be >= 2"));
    }
    let engine = config.engine;
    let nodes = config.quad_nodes;
    let h = t / (nodes - 1) as f64;
    let weights = simpson_weights(0.0, t, nodes);
    let (gbar, _) = crate::switching::stationary_mode_stats(params);
    let control = |tau: f64| (-2.0 * gbar * tau).exp();
    // ∫₀ᵀ e^{−2γ̄τ} dτ
    let control_integral = t * crate::special::one_minus_exp_neg_over(2.0 * gbar * t);
    // Kernel values at durations τ_i = T − t_i.
    let kernel: Vec<[f64; 2]> = (0..nodes)
        .map(|i| {
            let tau = t - i as f64 * h;
            [
                conditional_mgf(params, -2.0, tau, Mode::Plus, engine),
                conditional_mgf(params, -2.0, tau, Mode::Minus, engine),
            ]
        })
        .collect();
    let mut out = [ModeMoments {
        m1: 0.0,
        m2: 0.0,
        noise: 0.0,
    }; 2];
    for start in Mode::BOTH {
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            let ti = i as f64 * h;
            let p = transition_matrix(params, ti)[start.index()];
            let f = p[0] * kernel[i][0] + p[1] * kernel[i][1];
            acc += w * (f - control(t - ti));
        }
        let sigma2 = params.sigma_u * params.sigma_u;
        out[start.index()] = ModeMoments {
            m1: conditional_mgf(params, -1.0, t, start, engine),
            m2: conditional_mgf(params, -2.0, t, start, engine),
            noise: sigma2 * (acc + control_integral),
        };
    }
    Ok(out)
}

/// Gaussian forecast under the current mode law.
pub fn ssm_gaussian_predict(
    state: &SsmFilterState,
    params: &SwitchingParams,
    t: f64,
    config: &SsmConfig,
) -> Result<SsmFilterState> {
    let mm = mode_moments(params, t, config)?;
    gaussian_forecast(state, params, t, &mm)
}

fn gaussian_forecast(
    state: &SsmFilterState,
    params: &SwitchingParams,
    t: f64,
    mm: &[ModeMoments; 2],
) -> Result<SsmFilterState> {
    let law = state.modes;
    let mixed = ModeMoments::mix(&[(law.p_plus, mm[0]), (law.p_minus, mm[1])]);
    Ok(SsmFilterState {
        u: UBelief::Gaussian(mixed.forecast(&state.u.collapsed())),
        modes: transition_probs(params, law, t)?,
        step: state.step,
    })
}

/// Two-kernel forecast split on the mode at the start of the window. Kernel
/// weights equal the current mode law; modes with zero probability are
/// dropped.
pub fn ssm_mixture_predict(
    state: &SsmFilterState,
    params: &SwitchingParams,
    t: f64,
    config: &SsmConfig,
) -> Result<SsmFilterState> {
    let mm = mode_moments(params, t, config)?;
    mixture_forecast(state, params, t, &mm)
}

fn mixture_forecast(
    state: &SsmFilterState,
    params: &SwitchingParams,
    t: f64,
    mm: &[ModeMoments; 2],
) -> Result<SsmFilterState> {
    let prior = state.u.collapsed();
    let kernels = Mode::BOTH
        .iter()
        .filter(|m| state.modes.prob(**m) > 0.0)
        .map(|&m| MixtureKernel {
            weight: state.modes.prob(m),
            dist: mm[m.index()].forecast(&prior),
            mode: Some(m),
        })
        .collect();
    Ok(SsmFilterState {
        u: UBelief::Mixture(GaussianMixture::from_unnormalized(kernels)?),
        modes: transition_probs(params, state.modes, t)?,
        step: state.step,
    })
}

/// One forecast/analysis cycle of a reference filter.
pub fn ssm_filter_step(
    state: &SsmFilterState,
    params: &SwitchingParams,
    obs: &ObservationModel,
    y: f64,
    kind: SsmFilterKind,
    config: &SsmConfig,
) -> Result<(SsmFilterState, StepRecord)> {
    let mm = mode_moments(params, obs.interval, config)?;
    ssm_filter_step_with(state, params, obs, y, kind, config, &mm)
}

/// As [`ssm_filter_step`] with precomputed [`mode_moments`] for `obs.interval`.
pub fn ssm_filter_step_with(
    state: &SsmFilterState,
    params: &SwitchingParams,
    obs: &ObservationModel,
    y: f64,
    kind: SsmFilterKind,
    config: &SsmConfig,
    mm: &[ModeMoments; 2],
) -> Result<(SsmFilterState, StepRecord)> {
    let n = state.step + 1;
    match kind {
        SsmFilterKind::Gaussian => {
            let fc = gaussian_forecast(state, params, obs.interval, mm)?;
            let prior = fc.u.collapsed();
            let (post, _) = kalman_update(&prior, y, obs.r)?;
            let record = StepRecord {
                n,
                y,
                prior,
                posterior: post,
                weights: Vec::new(),
                prior_mixture: None,
                posterior_mixture: None,
            };
            let next = SsmFilterState {
                u: UBelief::Gaussian(post),
                modes: fc.modes,
                step: n,
            };
            Ok((next, record))
        }
        SsmFilterKind::Mixture => {
            let fc = mixture_forecast(state, params, obs.interval, mm)?;
            let UBelief::Mixture(prior_mix) = &fc.u else {
                unreachable!("mixture forecast always yields a mixture");
            };
            let post_mix = mixture_update(prior_mix, y, obs.r)?;
            let start_law = ModeDistribution::from_weights(
                post_mix.mode_weight(Mode::Plus),
                post_mix.mode_weight(Mode::Minus),
            )?;
            let modes = match config.handoff {
                ModeHandoff::PosteriorPropagated => {
                    transition_probs(params, start_law, obs.interval)?
                }
                ModeHandoff::Posterior => start_law,
                ModeHandoff::Preserve => fc.modes,
            };
            let post = moment_match(&post_mix);
            let record = StepRecord {
                n,
                y,
                prior: moment_match(prior_mix),
                posterior: post,
                weights: post_mix.weights(),
                prior_mixture: Some(prior_mix.clone()),
                posterior_mixture: Some(post_mix),
            };
            let next = SsmFilterState {
                u: UBelief::Gaussian(post),
                modes,
                step: n,
            };
            Ok((next, record))
        }
    }
}

/// Gaussian-sum filter without any merging, for short horizons only.
///
/// Every kernel carries the start mode of its most recent forecast window, so
/// after `n` steps there are up to `2ⁿ` kernels. Each kernel's next forecast
/// uses the law of `γ` implied by its own start mode.
#[derive(Debug, Clone)]
pub struct ExactMixtureFilter {
    kernels: Vec<(f64, Gaussian1, ModeDistribution)>,
    step: usize,
}

/// Largest step count accepted by [`ExactMixtureFilter`].
pub const EXACT_FILTER_MAX_STEPS: usize = 12;

impl ExactMixtureFilter {
    pub fn new(u0: Gaussian1, modes: ModeDistribution) -> Self {
        Self {
            kernels: vec![(1.0, u0, modes)],
            step: 0,
        }
    }

    pub fn kernel_count(&self) -> usize {
        self.kernels.len()
    }

    /// Mode law at the current time, aggregated over kernels.
    pub fn mode_law(&self) -> ModeDistribution {
        let p: f64 = self.kernels.iter().map(|(w, _, m)| w * m.p_plus).sum();
        ModeDistribution {
            p_plus: p,
            p_minus: 1.0 - p,
        }
    }

    /// Mixture over `u` at the current time.
    pub fn u_mixture(&self) -> GaussianMixture<Gaussian1> {
        GaussianMixture::from_unnormalized(
            self.kernels
                .iter()
                .map(|(w, g, _)| MixtureKernel {
                    weight: *w,
                    dist: *g,
                    mode: None,
                })
                .collect(),
        )
        .expect("weights stay normalized")
    }

    /// Forecast and analysis; returns the forecast `u` moments.
    pub fn step(
        &mut self,
        params: &SwitchingParams,
        obs: &ObservationModel,
        y: f64,
        mm: &[ModeMoments; 2],
    ) -> Result<Gaussian1> {
        if self.step >= EXACT_FILTER_MAX_STEPS {
            return Err(Error::InvalidInput(format!(
                "exact mixture filter is limited to {EXACT_FILTER_MAX_STEPS} steps"
            )));
        }
        let after = transition_matrix(params, obs.interval);
        let mut children = Vec::with_capacity(2 * self.kernels.len());
        for (w, g, law) in &self.kernels {
            for start in Mode::BOTH {
                let p = law.prob(start);
                if p > 0.0 {
                    let row = after[start.index()];
                    children.push((
                        w * p,
                        mm[start.index()].forecast(g),
                        ModeDistribution {
                            p_plus: row[0],
                            p_minus: row[1],
                        },
                    ));
                }
            }
        }
        let prior = GaussianMixture::from_unnormalized(
            children
                .iter()
                .map(|(w, g, _)| MixtureKernel {
                    weight: *w,
                    dist: *g,
                    mode: None,
                })
                .collect(),
        )?;
        let forecast = moment_match(&prior);
        let post = mixture_update(&prior, y, obs.r)?;
        self.kernels = post
            .kernels()
            .iter()
            .zip(children)
            .map(|(k, (_, _, law))| (k.weight, k.dist, law))
            .collect();
        self.step += 1;
        Ok(forecast)
    }
}
