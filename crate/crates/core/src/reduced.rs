//! Filters built on reduced models of the switching dynamics.
//!
//! * MSM freezes `γ` at a constant `γ̄`; its forecast is an exact OU step.
//! * DSM replaces `γ` by an OU process
//!   `dγ̂ = −(ν/ε)(γ̂ − μ) dt + (σ/√ε) dW`; the joint `(û, γ̂)` moments are
//!   propagated exactly through Gaussian exponential-moment identities.
//! * dMSM and dDSM draw one of two frozen parameterizations at `t = 0` and
//!   never switch afterwards; they are filtered as Gaussian sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{
    joint_kalman_update, kalman_update, mixture_update, moment_match, reduce, repair_psd,
    Gaussian1, Gaussian2, GaussianMixture, KernelState, MixtureKernel, ReductionPolicy,
};
use crate::quadrature::simpson_weights;
use crate::special::{one_minus_exp_neg_over, ou_double_integral_factor};
use crate::switching::Mode;
use crate::trace::StepRecord;
use crate::truth::ObservationModel;

/// DSM parameters `Θ = {μ, ν, σ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaDsm {
    pub mu: f64,
    pub nu: f64,
    pub sigma: f64,
}

impl ThetaDsm {
    pub fn new(mu: f64, nu: f64, sigma: f64) -> Result<Self> {
        let t = Self { mu, nu, sigma };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::param("mu", "must be finite"));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::param("nu", "must be finite and > 0"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::param("sigma", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Stationary variance `σ²/(2ν)` of `γ̂` (independent of `ε`).
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.nu)
    }
}

/// dDSM parameters `Θ' = {ρ̂±, μ±, ν±, σ±}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaDdsm {
    pub rho_plus: f64,
    pub plus: ThetaDsm,
    pub minus: ThetaDsm,
}

impl ThetaDdsm {
    pub fn new(rho_plus: f64, plus: ThetaDsm, minus: ThetaDsm) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho_plus) {
            return Err(Error::param("rho_plus", "must lie in [0, 1]"));
        }
        plus.validate()?;
        minus.validate()?;
        Ok(Self {
            rho_plus,
            plus,
            minus,
        })
    }

    pub fn mode(&self, mode: Mode) -> &ThetaDsm {
        match mode {
            Mode::Plus => &self.plus,
            Mode::Minus => &self.minus,
        }
    }

    pub fn mode_mut(&mut self, mode: Mode) -> &mut ThetaDsm {
        match mode {
            Mode::Plus => &mut self.plus,
            Mode::Minus => &mut self.minus,
        }
    }

    pub fn rho(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Plus => self.rho_plus,
            Mode::Minus => 1.0 - self.rho_plus,
        }
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

/// MSM forecast: exact OU step with constant rate `γ̄`.
pub fn msm_predict(prior: &Gaussian1, gamma_bar: f64, sigma_u: f64, t: f64) -> Result<Gaussian1> {
    check_interval(t)?;
    let decay = (-gamma_bar * t).exp();
    // σ²(1 − e^{−2γ̄T})/(2γ̄), tending to σ²T as γ̄ → 0.
    let forcing = sigma_u * sigma_u * t * one_minus_exp_neg_over(2.0 * gamma_bar * t);
    Ok(Gaussian1 {
        mean: decay * prior.mean,
        var: decay * decay * prior.var + forcing,
    })
}

/// Shorthand for the OU coefficients of a DSM parameterization at scale `ε`.
#[derive(Debug, Clone, Copy)]
struct Ou {
    mu: f64,
    /// Damping `d = ν/ε`.
    d: f64,
    /// Noise variance rate `s² = σ²/ε`.
    s2: f64,
}

impl Ou {
    fn new(theta: &ThetaDsm, epsilon: f64) -> Self {
        Self {
            mu: theta.mu,
            d: theta.nu / epsilon,
            s2: theta.sigma * theta.sigma / epsilon,
        }
    }

    /// `b(t) = (1 − e^{−dt})/d`.
    fn b(&self, t: f64) -> f64 {
        t * one_minus_exp_neg_over(self.d * t)
    }

    /// Variance of the integrated OU noise over a window of length `t`.
    fn integral_noise_var(&self, t: f64) -> f64 {
        self.s2 * t * t * t * ou_double_integral_factor(self.d * t)
    }

    /// Variance added to `γ̂` over `t`: `s²(1 − e^{−2dt})/(2d)`.
    fn state_noise_var(&self, t: f64) -> f64 {
        self.s2 * t * one_minus_exp_neg_over(2.0 * self.d * t)
    }

    fn gamma_mean(&self, m0: f64, t: f64) -> f64 {
        self.mu + (m0 - self.mu) * (-self.d * t).exp()
    }

    fn gamma_var(&self, v0: f64, t: f64) -> f64 {
        (-2.0 * self.d * t).exp() * v0 + self.state_noise_var(t)
    }
}

/// `⟨B_T²⟩ = σ_u² ∫₀ᵀ ⟨e^{−2(Γ̂_T − Γ̂_s)}⟩ ds`, by composite Simpson after
/// subtracting the control variate `e^{−2μ(T−s)}`.
pub fn spekf_noise_integral(
    gamma0: &Gaussian1,
    theta: &ThetaDsm,
    sigma_u: f64,
    epsilon: f64,
    t: f64,
    quad_nodes: usize,
) -> Result<f64> {
    check_interval(t)?;
    if quad_nodes < 2 {
        return Err(Error::param("quad_nodes", "must be >= 2"));
    }
    let ou = Ou::new(theta, epsilon);
    let h = t / (quad_nodes - 1) as f64;
    let w = simpson_weights(0.0, t, quad_nodes);
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let s = i as f64 * h;
        let tau = t - s;
        let b = ou.b(tau);
        let mean = ou.mu * (tau - b) + b * ou.gamma_mean(gamma0.mean, s);
        let var = b * b * ou.gamma_var(gamma0.var, s) + ou.integral_noise_var(tau);
        let f = (-2.0 * mean + 2.0 * var).exp();
        acc += wi * (f - (-2.0 * ou.mu * tau).exp());
    }
    let control = t * one_minus_exp_neg_over(2.0 * ou.mu * t);
    Ok(sigma_u * sigma_u * (acc + control))
}

/// Exact first and second moments of `(û_T, γ̂_T)` under the DSM.
pub fn spekf_predict(
    prior: &Gaussian2,
    theta: &ThetaDsm,
    sigma_u: f64,
    epsilon: f64,
    t: f64,
    quad_nodes: usize,
) -> Result<Gaussian2> {
    check_interval(t)?;
    if !(epsilon > 0.0) {
        return Err(Error::param("epsilon", "must be > 0"));
    }
    let p = repair_psd(prior.cov)?;
    let (mu_u, mu_g) = (prior.mean[0], prior.mean[1]);
    let (p_uu, p_ug, p_gg) = (p[0][0], p[0][1], p[1][1]);
    let ou = Ou::new(theta, epsilon);
    let b = ou.b(t);
    let decay = (-ou.d * t).exp();

    // z = −Γ̂_T, jointly Gaussian with (u₀, γ̂_T).
    let z_mean = -ou.mu * (t - b) - b * mu_g;
    let z_var = b * b * p_gg + ou.integral_noise_var(t);
    let cov_uz = -b * p_ug;
    let g_mean = ou.gamma_mean(mu_g, t);
    let g_var = ou.gamma_var(p_gg, t);
    let cov_ug = decay * p_ug;
    let cov_gz = -b * decay * p_gg - 0.5 * ou.s2 * b * b;

    let e1 = (z_mean + 0.5 * z_var).exp();
    let a_mean = e1 * (mu_u + cov_uz);
    let a_gamma = e1 * (cov_ug + (mu_u + cov_uz) * (g_mean + cov_gz));
    let a_sq = (2.0 * z_mean + 2.0 * z_var).exp() * (p_uu + (mu_u + 2.0 * cov_uz).powi(2));
    let b_sq = spekf_noise_integral(
        &prior.gamma_marginal(),
        theta,
        sigma_u,
        epsilon,
        t,
        quad_nodes,
    )?;

    let u_var = a_sq - a_mean * a_mean + b_sq;
    let cross = a_gamma - a_mean * g_mean;
    let cov = repair_psd([[u_var, cross], [cross, g_var]])?;
    Ok(Gaussian2 {
        mean: [a_mean, g_mean],
        cov,
    })
}

/// Gaussian MGF `⟨e^{α(Γ̂_{t_hi} − Γ̂_{t_lo})}⟩` of the OU integral, with
/// `γ̂₀ ~ gamma0`.
pub fn ou_integral_mgf(
    theta: &ThetaDsm,
    gamma0: &Gaussian1,
    alpha: f64,
    t_lo: f64,
    t_hi: f64,
    epsilon: f64,
) -> Result<f64> {
    if !(t_lo >= 0.0) || !(t_hi >= t_lo) || !t_hi.is_finite() {
        return Err(Error::param("t", "requires 0 <= t_lo <= t_hi"));
    }
    let ou = Ou::new(theta, epsilon);
    let tau = t_hi - t_lo;
    let b = ou.b(tau);
    let mean = ou.mu * (tau - b) + b * ou.gamma_mean(gamma0.mean, t_lo);
    let var = b * b * ou.gamma_var(gamma0.var, t_lo) + ou.integral_noise_var(tau);
    Ok((alpha * mean + 0.5 * alpha * alpha * var).exp())
}

/// dMSM forecast: each labelled kernel follows MSM with its frozen rate.
pub fn dmsm_predict(
    prior: &GaussianMixture<Gaussian1>,
    gamma_plus: f64,
    gamma_minus: f64,
    sigma_u: f64,
    t: f64,
) -> Result<GaussianMixture<Gaussian1>> {
    prior.try_map(|k| {
        let gamma = match k.mode {
            Some(Mode::Plus) => gamma_plus,
            Some(Mode::Minus) => gamma_minus,
            None => return Err(Error::StateMismatch("dMSM kernels need mode labels".into())),
        };
        msm_predict(&k.dist, gamma, sigma_u, t)
    })
}

/// dDSM forecast: each labelled kernel follows SPEKF with its mode's `Θ`.
pub fn ddsm_predict(
    prior: &GaussianMixture<Gaussian2>,
    theta: &ThetaDdsm,
    sigma_u: f64,
    epsilon: f64,
    t: f64,
    quad_nodes: usize,
) -> Result<GaussianMixture<Gaussian2>> {
    prior.try_map(|k| {
        let mode = k
            .mode
            .ok_or_else(|| Error::StateMismatch("dDSM kernels need mode labels".into()))?;
        spekf_predict(&k.dist, theta.mode(mode), sigma_u, epsilon, t, quad_nodes)
    })
}

/// How each dDSM kernel's `γ̂` marginal is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DdsmGammaInit {
    /// `γ̂ ~ N(γ±, variance)`, independent of `û`, reset before every forecast.
    ModeValue { variance: f64 },
    /// `γ̂ ~ N(μ±, σ±²/(2ν±))` at the first step only; afterwards the
    /// filtered joint state is carried forward.
    PerModeStationary,
}

impl Default for DdsmGammaInit {
    fn default() -> Self {
        DdsmGammaInit::ModeValue { variance: 0.0 }
    }
}

/// A reduced model with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum ReducedModel {
    Msm {
        gamma_bar: f64,
    },
    Dsm {
        theta: ThetaDsm,
    },
    Dmsm {
        gamma_plus: f64,
        gamma_minus: f64,
    },
    Ddsm {
        theta: ThetaDdsm,
        gamma_plus: f64,
        gamma_minus: f64,
        gamma_init: DdsmGammaInit,
    },
}

/// Settings shared by the reduced filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedContext {
    pub sigma_u: f64,
    pub epsilon: f64,
    pub quad_nodes: usize,
    pub reduction: ReductionPolicy,
}

/// Filter state of a reduced model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducedState {
    Msm(Gaussian1),
    Dsm(Gaussian2),
    Dmsm(GaussianMixture<Gaussian1>),
    Ddsm(GaussianMixture<Gaussian2>),
}

impl ReducedState {
    /// Moment-matched `u` marginal.
    pub fn u_marginal(&self) -> Gaussian1 {
        match self {
            ReducedState::Msm(g) => *g,
            ReducedState::Dsm(g) => g.u_marginal(),
            ReducedState::Dmsm(m) => moment_match(m),
            ReducedState::Ddsm(m) => m.u_moment_match(),
        }
    }

    /// Initial dual-mode state: one kernel per mode carrying `u0`, weighted by
    /// `rho_plus`.
    pub fn dual<G: KernelState>(u0: G, minus: G, rho_plus: f64) -> Result<GaussianMixture<G>> {
        GaussianMixture::from_unnormalized(vec![
            MixtureKernel {
                weight: rho_plus,
                dist: u0,
                mode: Some(Mode::Plus),
            },
            MixtureKernel {
                weight: 1.0 - rho_plus,
                dist: minus,
                mode: Some(Mode::Minus),
            },
        ])
    }
}

/// `u`-marginal mixture of a joint mixture.
pub fn u_marginal_mixture<G: KernelState>(mix: &GaussianMixture<G>) -> GaussianMixture<Gaussian1> {
    GaussianMixture::new(
        mix.kernels()
            .iter()
            .map(|k| MixtureKernel {
                weight: k.weight,
                dist: k.dist.u_marginal(),
                mode: k.mode,
            })
            .collect(),
    )
    .expect("weights already normalized")
}

/// Projects the `u` marginal of every kernel onto the moment-matched
/// marginal `merged`, keeping weights and labels.
fn collapse_u<G: KernelState>(
    mix: &GaussianMixture<G>,
    mut set: impl FnMut(&G) -> G,
) -> Result<GaussianMixture<G>> {
    GaussianMixture::new(
        mix.kernels()
            .iter()
            .map(|k| MixtureKernel {
                weight: k.weight,
                dist: set(&k.dist),
                mode: k.mode,
            })
            .collect(),
    )
}

/// Applies the reduction policy to a frozen-mode mixture.
///
/// With [`ReductionPolicy::SingleGaussian`] the `u` law is merged to one
/// Gaussian while each mode keeps its posterior weight; for joint kernels
/// the `γ̂ | û` regression of each kernel is preserved.
fn reduce_dual<G: KernelState + DualReduce>(
    post: &GaussianMixture<G>,
    policy: ReductionPolicy,
) -> Result<GaussianMixture<G>> {
    match policy {
        ReductionPolicy::SingleGaussian => {
            let merged = moment_match(&u_marginal_mixture(post));
            collapse_u(post, |g| g.with_u_marginal(&merged))
        }
        ReductionPolicy::MaxKernels(k) if k >= post.len() => Ok(post.clone()),
        other => reduce(post, other),
    }
}

/// Replacement of the `u` marginal of a kernel.
pub trait DualReduce {
    fn with_u_marginal(&self, u: &Gaussian1) -> Self;
}

impl DualReduce for Gaussian1 {
    fn with_u_marginal(&self, u: &Gaussian1) -> Self {
        *u
    }
}

impl DualReduce for Gaussian2 {
    fn with_u_marginal(&self, u: &Gaussian1) -> Self {
        let p = self.cov;
        let beta = if p[0][0] > 0.0 {
            p[0][1] / p[0][0]
        } else {
            0.0
        };
        let resid = (p[1][1] - beta * p[0][1]).max(0.0);
        let cross = beta * u.var;
        Gaussian2 {
            mean: [u.mean, self.mean[1] + beta * (u.mean - self.mean[0])],
            cov: [[u.var, cross], [cross, resid + beta * beta * u.var]],
        }
    }
}

fn reinit_gamma(
    mix: &GaussianMixture<Gaussian2>,
    gamma_plus: f64,
    gamma_minus: f64,
    variance: f64,
) -> Result<GaussianMixture<Gaussian2>> {
    mix.try_map(|k| {
        let g = match k.mode {
            Some(Mode::Plus) => gamma_plus,
            Some(Mode::Minus) => gamma_minus,
            None => return Err(Error::StateMismatch("dDSM kernels need mode labels".into())),
        };
        Ok(Gaussian2 {
            mean: [k.dist.mean[0], g],
            cov: [[k.dist.cov[0][0], 0.0], [0.0, variance]],
        })
    })
}

/// Forecast of a reduced model over `t`.
pub fn reduced_predict(
    state: &ReducedState,
    model: &ReducedModel,
    ctx: &ReducedContext,
    t: f64,
) -> Result<ReducedState> {
    match (state, model) {
        (ReducedState::Msm(g), ReducedModel::Msm { gamma_bar }) => Ok(ReducedState::Msm(
            msm_predict(g, *gamma_bar, ctx.sigma_u, t)?,
        )),
        (ReducedState::Dsm(g), ReducedModel::Dsm { theta }) => Ok(ReducedState::Dsm(
            spekf_predict(g, theta, ctx.sigma_u, ctx.epsilon, t, ctx.quad_nodes)?,
        )),
        (
            ReducedState::Dmsm(m),
            ReducedModel::Dmsm {
                gamma_plus,
                gamma_minus,
            },
        ) => Ok(ReducedState::Dmsm(dmsm_predict(
            m,
            *gamma_plus,
            *gamma_minus,
            ctx.sigma_u,
            t,
        )?)),
        (
            ReducedState::Ddsm(m),
            ReducedModel::Ddsm {
                theta,
                gamma_plus,
                gamma_minus,
                gamma_init,
            },
        ) => {
            let start = match gamma_init {
                DdsmGammaInit::ModeValue { variance } => {
                    reinit_gamma(m, *gamma_plus, *gamma_minus, *variance)?
                }
                DdsmGammaInit::PerModeStationary => m.clone(),
            };
            Ok(ReducedState::Ddsm(ddsm_predict(
                &start,
                theta,
                ctx.sigma_u,
                ctx.epsilon,
                t,
                ctx.quad_nodes,
            )?))
        }
        _ => Err(Error::StateMismatch(
            "filter state does not match the reduced model".into(),
        )),
    }
}

/// Analysis of a forecast state; returns the reduced posterior, the
/// unreduced posterior `u` mixture (mixture models only) and the weights.
fn reduced_analyze(
    forecast: &ReducedState,
    ctx: &ReducedContext,
    y: f64,
    r: f64,
) -> Result<(ReducedState, Option<GaussianMixture<Gaussian1>>, Vec<f64>)> {
    match forecast {
        ReducedState::Msm(g) => Ok((
            ReducedState::Msm(kalman_update(g, y, r)?.0),
            None,
            Vec::new(),
        )),
        ReducedState::Dsm(g) => Ok((
            ReducedState::Dsm(joint_kalman_update(g, y, r)?),
            None,
            Vec::new(),
        )),
        ReducedState::Dmsm(m) => {
            let post = mixture_update(m, y, r)?;
            let w = post.weights();
            let red = reduce_dual(&post, ctx.reduction)?;
            Ok((ReducedState::Dmsm(red), Some(post), w))
        }
        ReducedState::Ddsm(m) => {
            let post = mixture_update(m, y, r)?;
            let w = post.weights();
            let u_mix = u_marginal_mixture(&post);
            let red = reduce_dual(&post, ctx.reduction)?;
            Ok((ReducedState::Ddsm(red), Some(u_mix), w))
        }
    }
}

fn prior_u_mixture(state: &ReducedState) -> Option<GaussianMixture<Gaussian1>> {
    match state {
        ReducedState::Dmsm(m) => Some(m.clone()),
        ReducedState::Ddsm(m) => Some(u_marginal_mixture(m)),
        _ => None,
    }
}

/// One forecast/analysis cycle of a reduced filter.
pub fn reduced_filter_step(
    state: &ReducedState,
    model: &ReducedModel,
    ctx: &ReducedContext,
    obs: &ObservationModel,
    y: f64,
    n: usize,
) -> Result<(ReducedState, StepRecord)> {
    let forecast = reduced_predict(state, model, ctx, obs.interval)?;
    reduced_analyze_step(&forecast, ctx, obs, y, n)
}

/// Analysis half of [`reduced_filter_step`] for an existing forecast.
pub fn reduced_analyze_step(
    forecast: &ReducedState,
    ctx: &ReducedContext,
    obs: &ObservationModel,
    y: f64,
    n: usize,
) -> Result<(ReducedState, StepRecord)> {
    let (post, post_mix, weights) = reduced_analyze(forecast, ctx, y, obs.r)?;
    let record = StepRecord {
        n,
        y,
        prior: forecast.u_marginal(),
        posterior: match &post_mix {
            Some(m) => moment_match(m),
            None => post.u_marginal(),
        },
        weights,
        prior_mixture: prior_u_mixture(forecast),
        posterior_mixture: post_mix,
    };
    Ok((post, record))
}
