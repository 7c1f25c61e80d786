//! Batch driver: truth generation, every filter side by side on the same
//! observations, error metrics and serialized outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    static_calibration, static_calibration_ddsm, theta_naive, theta_prime_naive, CalibrationConfig,
    DdsmCalibrator, DynamicCalibrator,
};
use crate::error::{Error, Result};
use crate::gaussian::{
    density_l1_distance, moment_match, Gaussian1, Gaussian2, GaussianMixture, ReductionPolicy,
};
use crate::quadrature::trapezoid_weights;
use crate::reduced::{
    reduced_analyze_step, reduced_predict, DdsmGammaInit, ReducedContext, ReducedModel,
    ReducedState, ThetaDdsm, ThetaDsm,
};
use crate::ssm::{
    mode_moments, ssm_filter_step_with, ModeHandoff, ModeMoments, SsmConfig, SsmFilterKind,
    SsmFilterState,
};
use crate::switching::{stationary_mode_stats, MgfEngine, Mode, SwitchingParams};
use crate::trace::StepRecord;
use crate::truth::{observe, path_rng, sample_path, ObservationModel, TruthPath};

/// Denominator floor of [`relative_error`].
pub const RELATIVE_FLOOR: f64 = 1e-12;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "SWITCHFILTER_THREADS";

/// `|a − r| / max(|r|, 10⁻¹²)` and whether the floor was active.
pub fn relative_error(approx: f64, reference: f64) -> (f64, bool) {
    let floored = reference.abs() < RELATIVE_FLOOR;
    (
        (approx - reference).abs() / reference.abs().max(RELATIVE_FLOOR),
        floored,
    )
}

/// Which filter serves as the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    Gaussian,
    Mixture,
    /// Gaussian for `ε ≤ 1`, mixture-with-merge otherwise.
    #[default]
    Auto,
}

impl ReferenceMode {
    pub fn resolve(self, epsilon: f64) -> SsmFilterKind {
        match self {
            ReferenceMode::Gaussian => SsmFilterKind::Gaussian,
            ReferenceMode::Mixture => SsmFilterKind::Mixture,
            ReferenceMode::Auto if epsilon <= 1.0 => SsmFilterKind::Gaussian,
            ReferenceMode::Auto => SsmFilterKind::Mixture,
        }
    }
}

/// Approximate filters run against the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Msm,
    DsmNaive,
    DsmStatic,
    DsmDynamic,
    /// DSM with `μ = γ̄∞`, `ν = 0.1γ̄∞`, `σ = 5σ_u`.
    DsmComparison,
    Dmsm,
    DdsmNaive,
    DdsmStatic,
    DdsmDynamic,
}

impl ModelId {
    pub const ALL: [ModelId; 9] = [
        ModelId::Msm,
        ModelId::DsmNaive,
        ModelId::DsmStatic,
        ModelId::DsmDynamic,
        ModelId::DsmComparison,
        ModelId::Dmsm,
        ModelId::DdsmNaive,
        ModelId::DdsmStatic,
        ModelId::DdsmDynamic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Msm => "msm",
            ModelId::DsmNaive => "dsm_naive",
            ModelId::DsmStatic => "dsm_static",
            ModelId::DsmDynamic => "dsm_dynamic",
            ModelId::DsmComparison => "dsm_comparison",
            ModelId::Dmsm => "dmsm",
            ModelId::DdsmNaive => "ddsm_naive",
            ModelId::DdsmStatic => "ddsm_static",
            ModelId::DdsmDynamic => "ddsm_dynamic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

/// Full description of a batch run; every field has the benchmark default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub sigma_u: f64,
    /// `R = obs_ratio · E` with `E = σ_u²/(2γ̄∞)`.
    pub obs_ratio: f64,
    pub obs_interval: f64,
    pub u0_mean: f64,
    pub u0_var: f64,
    /// DSM `γ̂₀` mean; `None` means `1.2γ̄∞`.
    pub dsm_gamma0_mean: Option<f64>,
    /// DSM `γ̂₀` variance; `None` means `Var(γ∞)`.
    pub dsm_gamma0_var: Option<f64>,
    pub epsilons: Vec<f64>,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub mgf: MgfEngine,
    pub quad_nodes: usize,
    pub handoff: ModeHandoff,
    pub calibration: CalibrationConfig,
    pub reference: ReferenceMode,
    pub models: Vec<ModelId>,
    pub ddsm_gamma_init: DdsmGammaInit,
    /// Parameters of [`ModelId::DsmComparison`]; `None` derives them.
    pub comparison_theta: Option<ThetaDsm>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = SwitchingParams::benchmark(1.0);
        Self {
            gamma_plus: p.gamma_plus,
            gamma_minus: p.gamma_minus,
            lambda_plus: p.lambda_plus,
            lambda_minus: p.lambda_minus,
            sigma_u: p.sigma_u,
            obs_ratio: 0.25,
            obs_interval: 1.0,
            u0_mean: 0.1,
            u0_var: 0.0016,
            dsm_gamma0_mean: None,
            dsm_gamma0_var: None,
            epsilons: vec![0.1, 1.0, 10.0, 100.0],
            steps: 50,
            seeds: vec![1],
            mgf: MgfEngine::default(),
            quad_nodes: 65,
            handoff: ModeHandoff::default(),
            calibration: CalibrationConfig::default(),
            reference: ReferenceMode::Auto,
            models: ModelId::ALL.to_vec(),
            ddsm_gamma_init: DdsmGammaInit::default(),
            comparison_theta: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.epsilons.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("epsilons and seeds must be nonempty".into()));
        }
        for &e in &self.epsilons {
            self.params(e)?;
        }
        if !(self.obs_ratio > 0.0) {
            return Err(Error::Config("obs_ratio must be > 0".into()));
        }
        self.observation_model()?;
        Gaussian1::new(self.u0_mean, self.u0_var)?;
        self.dsm_gamma0()?;
        if self.quad_nodes < 2 {
            return Err(Error::Config("quad_nodes must be >= 2".into()));
        }
        if let Some(t) = &self.comparison_theta {
            t.validate()?;
        }
        if let DdsmGammaInit::ModeValue { variance } = self.ddsm_gamma_init {
            if !(variance >= 0.0) {
                return Err(Error::Config("ddsm gamma variance must be >= 0".into()));
            }
        }
        self.calibration.validate()
    }

    pub fn params(&self, epsilon: f64) -> Result<SwitchingParams> {
        SwitchingParams::new(
            self.gamma_plus,
            self.gamma_minus,
            self.lambda_plus,
            self.lambda_minus,
            epsilon,
            self.sigma_u,
        )
    }

    /// `E = σ_u²/(2γ̄∞)`.
    pub fn energy(&self) -> f64 {
        let (mean, _) =
            stationary_mode_stats(&self.params(1.0).unwrap_or(SwitchingParams::benchmark(1.0)));
        self.sigma_u * self.sigma_u / (2.0 * mean)
    }

    pub fn observation_model(&self) -> Result<ObservationModel> {
        ObservationModel::new(self.obs_ratio * self.energy(), self.obs_interval)
    }

    pub fn u0(&self) -> Result<Gaussian1> {
        Gaussian1::new(self.u0_mean, self.u0_var)
    }

    pub fn dsm_gamma0(&self) -> Result<Gaussian1> {
        let (mean, var) = stationary_mode_stats(&self.params(1.0)?);
        Gaussian1::new(
            self.dsm_gamma0_mean.unwrap_or(1.2 * mean),
            self.dsm_gamma0_var.unwrap_or(var),
        )
    }

    pub fn comparison(&self) -> Result<ThetaDsm> {
        match self.comparison_theta {
            Some(t) => Ok(t),
            None => {
                let (mean, _) = stationary_mode_stats(&self.params(1.0)?);
                ThetaDsm::new(mean, 0.1 * mean, 5.0 * self.sigma_u)
            }
        }
    }

    pub fn ssm_config(&self) -> SsmConfig {
        SsmConfig {
            engine: self.mgf,
            quad_nodes: self.quad_nodes,
            handoff: self.handoff,
        }
    }

    fn context(&self, epsilon: f64) -> ReducedContext {
        ReducedContext {
            sigma_u: self.sigma_u,
            epsilon,
            quad_nodes: self.quad_nodes,
            reduction: ReductionPolicy::SingleGaussian,
        }
    }
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
}

/// Relative errors of one step against the reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepErrors {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub post_mean: f64,
    pub post_var: f64,
    /// Some reference value was below the relative-error floor.
    pub floored: bool,
}

impl StepErrors {
    pub fn between(approx: &StepRecord, reference: &StepRecord) -> Self {
        let (pm, f1) = relative_error(approx.prior.mean, reference.prior.mean);
        let (pv, f2) = relative_error(approx.prior.var, reference.prior.var);
        let (qm, f3) = relative_error(approx.posterior.mean, reference.posterior.mean);
        let (qv, f4) = relative_error(approx.posterior.var, reference.posterior.var);
        Self {
            prior_mean: pm,
            prior_var: pv,
            post_mean: qm,
            post_var: qv,
            floored: f1 || f2 || f3 || f4,
        }
    }

    /// Combined posterior error: mean plus variance relative error.
    pub fn posterior_total(&self) -> f64 {
        self.post_mean + self.post_var
    }
}

/// Calibrated parameter sequence of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family", content = "values")]
pub enum ThetaTrace {
    Dsm(Vec<ThetaDsm>),
    Ddsm(Vec<ThetaDdsm>),
}

/// Everything one approximate filter produced in a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTrace {
    pub model: ModelId,
    pub records: Vec<StepRecord>,
    pub errors: Vec<StepErrors>,
    /// Parameters used at each step (calibrated models only).
    pub thetas: Option<ThetaTrace>,
    /// Forecast state at each step, for replaying analyses.
    #[serde(skip)]
    pub forecasts: Vec<ReducedState>,
}

/// Reference filter output of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrace {
    pub kind: SsmFilterKind,
    pub records: Vec<StepRecord>,
    /// State entering each step, for replaying analyses.
    #[serde(skip)]
    pub starts: Vec<SsmFilterState>,
    #[serde(skip)]
    pub mode_moments: Option<[ModeMoments; 2]>,
}

/// One `(ε, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub epsilon: f64,
    pub seed: u64,
    pub truth: TruthPath,
    pub observations: Vec<f64>,
    pub reference: ReferenceTrace,
    pub models: Vec<FilterTrace>,
}

impl CellResult {
    pub fn model(&self, id: ModelId) -> Option<&FilterTrace> {
        self.models.iter().find(|m| m.model == id)
    }
}

/// Truth path and observations of a cell.
pub fn simulate_cell(
    config: &ExperimentConfig,
    epsilon: f64,
    seed: u64,
) -> Result<(TruthPath, Vec<f64>)> {
    let params = config.params(epsilon)?;
    let obs = config.observation_model()?;
    let u0 = config.u0()?;
    let mut init = path_rng(seed, u64::MAX);
    let z: f64 = StandardNormal.sample(&mut init);
    let mode0 = if init.random::<f64>() < params.stationary().p_plus {
        Mode::Plus
    } else {
        Mode::Minus
    };
    let times: Vec<f64> = (0..=config.steps)
        .map(|k| k as f64 * obs.interval)
        .collect();
    let horizon = config.steps as f64 * obs.interval;
    let path = sample_path(
        &params,
        u0.mean + u0.std_dev() * z,
        mode0,
        horizon,
        &times,
        seed,
    )?;
    let ys = (1..=config.steps)
        .map(|n| observe(&path, &obs, n, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok((path, ys))
}

/// Runs the reference filter of kind `kind` over `ys`.
pub fn run_reference(
    config: &ExperimentConfig,
    params: &SwitchingParams,
    obs: &ObservationModel,
    ys: &[f64],
    kind: SsmFilterKind,
) -> Result<ReferenceTrace> {
    let ssm = config.ssm_config();
    let mm = mode_moments(params, obs.interval, &ssm)?;
    let mut state = SsmFilterState::new(config.u0()?, params.stationary());
    let mut records = Vec::with_capacity(ys.len());
    let mut starts = Vec::with_capacity(ys.len());
    for &y in ys {
        starts.push(state.clone());
        let (next, rec) = ssm_filter_step_with(&state, params, obs, y, kind, &ssm, &mm)?;
        records.push(rec);
        state = next;
    }
    Ok(ReferenceTrace {
        kind,
        records,
        starts,
        mode_moments: Some(mm),
    })
}

/// How a model's parameters are chosen at each step.
enum Schedule {
    Fixed(ReducedModel),
    DsmDynamic(Box<DynamicCalibrator>),
    DdsmDynamic(Box<DdsmCalibrator>, ReducedModel),
}

fn ddsm_starts(
    state: &GaussianMixture<Gaussian2>,
    model: &ReducedModel,
) -> Result<(Gaussian2, Gaussian2)> {
    let ReducedModel::Ddsm {
        gamma_plus,
        gamma_minus,
        gamma_init,
        ..
    } = model
    else {
        return Err(Error::StateMismatch("expected a dDSM model".into()));
    };
    let kernel = |mode: Mode, g: f64| -> Result<Gaussian2> {
        let k = state
            .kernel_for(mode)
            .ok_or_else(|| Error::StateMismatch("dDSM state lacks a mode kernel".into()))?;
        Ok(match gamma_init {
            DdsmGammaInit::ModeValue { variance } => Gaussian2 {
                mean: [k.dist.mean[0], g],
                cov: [[k.dist.cov[0][0], 0.0], [0.0, *variance]],
            },
            DdsmGammaInit::PerModeStationary => k.dist,
        })
    };
    Ok((
        kernel(Mode::Plus, *gamma_plus)?,
        kernel(Mode::Minus, *gamma_minus)?,
    ))
}

fn run_schedule(
    config: &ExperimentConfig,
    params: &SwitchingParams,
    obs: &ObservationModel,
    ys: &[f64],
    id: ModelId,
    init: ReducedState,
    mut schedule: Schedule,
) -> Result<FilterTrace> {
    let ctx = config.context(params.epsilon);
    let mut state = init;
    let mut records = Vec::with_capacity(ys.len());
    let mut forecasts = Vec::with_capacity(ys.len());
    let mut dsm_thetas = Vec::new();
    let mut ddsm_thetas = Vec::new();
    for (i, &y) in ys.iter().enumerate() {
        let model = match &mut schedule {
            Schedule::Fixed(m) => *m,
            Schedule::DsmDynamic(cal) => {
                let ReducedState::Dsm(g) = &state else {
                    return Err(Error::StateMismatch(
                        "DSM calibration needs a DSM state".into(),
                    ));
                };
                let theta = cal.step(g)?.theta;
                dsm_thetas.push(theta);
                ReducedModel::Dsm { theta }
            }
            Schedule::DdsmDynamic(cal, template) => {
                let ReducedState::Ddsm(m) = &state else {
                    return Err(Error::StateMismatch(
                        "dDSM calibration needs a dDSM state".into(),
                    ));
                };
                let (plus, minus) = ddsm_starts(m, template)?;
                let theta = cal.step(&plus, &minus)?;
                ddsm_thetas.push(theta);
                let ReducedModel::Ddsm {
                    gamma_plus,
                    gamma_minus,
                    gamma_init,
                    ..
                } = *template
                else {
                    unreachable!("template is a dDSM model");
                };
                ReducedModel::Ddsm {
                    theta,
                    gamma_plus,
                    gamma_minus,
                    gamma_init,
                }
            }
        };
        let forecast = reduced_predict(&state, &model, &ctx, obs.interval)?;
        let (post, rec) = reduced_analyze_step(&forecast, &ctx, obs, y, i + 1)?;
        forecasts.push(forecast);
        records.push(rec);
        state = post;
    }
    let thetas = match schedule {
        Schedule::Fixed(ReducedModel::Dsm { theta }) => {
            Some(ThetaTrace::Dsm(vec![theta; ys.len()]))
        }
        Schedule::Fixed(ReducedModel::Ddsm { theta, .. }) => {
            Some(ThetaTrace::Ddsm(vec![theta; ys.len()]))
        }
        Schedule::Fixed(_) => None,
        Schedule::DsmDynamic(_) => Some(ThetaTrace::Dsm(dsm_thetas)),
        Schedule::DdsmDynamic(..) => Some(ThetaTrace::Ddsm(ddsm_thetas)),
    };
    Ok(FilterTrace {
        model: id,
        records,
        errors: Vec::new(),
        thetas,
        forecasts,
    })
}

fn ddsm_init(
    config: &ExperimentConfig,
    theta: &ThetaDdsm,
    params: &SwitchingParams,
) -> Result<ReducedState> {
    let u0 = config.u0()?;
    let kernel = |mode: Mode| -> Result<Gaussian2> {
        let gamma = match config.ddsm_gamma_init {
            DdsmGammaInit::ModeValue { variance } => Gaussian1::new(params.gamma(mode), variance)?,
            DdsmGammaInit::PerModeStationary => {
                let t = theta.mode(mode);
                Gaussian1::new(t.mu, t.stationary_variance())?
            }
        };
        Ok(Gaussian2::independent(u0, gamma))
    };
    Ok(ReducedState::Ddsm(ReducedState::dual(
        kernel(Mode::Plus)?,
        kernel(Mode::Minus)?,
        theta.rho_plus,
    )?))
}

fn ddsm_model(
    config: &ExperimentConfig,
    params: &SwitchingParams,
    theta: ThetaDdsm,
) -> ReducedModel {
    ReducedModel::Ddsm {
        theta,
        gamma_plus: params.gamma_plus,
        gamma_minus: params.gamma_minus,
        gamma_init: config.ddsm_gamma_init,
    }
}

/// Runs the approximate filter `id` over `ys`, with calibration when needed.
pub fn run_model(
    config: &ExperimentConfig,
    params: &SwitchingParams,
    obs: &ObservationModel,
    ys: &[f64],
    id: ModelId,
) -> Result<FilterTrace> {
    let u0 = config.u0()?;
    let dsm_init = || -> Result<ReducedState> {
        Ok(ReducedState::Dsm(Gaussian2::independent(
            u0,
            config.dsm_gamma0()?,
        )))
    };
    let ssm = config.ssm_config();
    let t = obs.interval;
    let window = config.calibration.averaging_window;
    match id {
        ModelId::Msm => {
            let (gamma_bar, _) = stationary_mode_stats(params);
            run_schedule(
                config,
                params,
                obs,
                ys,
                id,
                ReducedState::Msm(u0),
                Schedule::Fixed(ReducedModel::Msm { gamma_bar }),
            )
        }
        ModelId::DsmNaive => run_schedule(
            config,
            params,
            obs,
            ys,
            id,
            dsm_init()?,
            Schedule::Fixed(ReducedModel::Dsm {
                theta: theta_naive(params),
            }),
        ),
        ModelId::DsmComparison => run_schedule(
            config,
            params,
            obs,
            ys,
            id,
            dsm_init()?,
            Schedule::Fixed(ReducedModel::Dsm {
                theta: config.comparison()?,
            }),
        ),
        ModelId::DsmDynamic => {
            let cal = DynamicCalibrator::new(params, t, config.calibration.clone(), ssm)?;
            run_schedule(
                config,
                params,
                obs,
                ys,
                id,
                dsm_init()?,
                Schedule::DsmDynamic(Box::new(cal)),
            )
        }
        ModelId::DsmStatic => {
            let dynamic = run_model(config, params, obs, ys, ModelId::DsmDynamic)?;
            let Some(ThetaTrace::Dsm(seq)) = &dynamic.thetas else {
                return Err(Error::Numerical(
                    "dynamic DSM run produced no parameters".into(),
                ));
            };
            let theta = static_calibration(seq, window)?;
            run_schedule(
                config,
                params,
                obs,
                ys,
                id,
                dsm_init()?,
                Schedule::Fixed(ReducedModel::Dsm { theta }),
            )
        }
        ModelId::Dmsm => {
            let rho = params.stationary().p_plus;
            let init = ReducedState::Dmsm(ReducedState::dual(u0, u0, rho)?);
            run_schedule(
                config,
                params,
                obs,
                ys,
                id,
                init,
                Schedule::Fixed(ReducedModel::Dmsm {
                    gamma_plus: params.gamma_plus,
                    gamma_minus: params.gamma_minus,
                }),
            )
        }
        ModelId::DdsmNaive => {
            let theta = theta_prime_naive(params, t)?;
            let init = ddsm_init(config, &theta, params)?;
            run_schedule(
                config,
                params,
                obs,
                ys,
                id,
                init,
                Schedule::Fixed(ddsm_model(config, params, theta)),
            )
        }
        ModelId::DdsmDynamic => {
            let naive = theta_prime_naive(params, t)?;
            let init = ddsm_init(config, &naive, params)?;
            let cal = DdsmCalibrator::new(params, t, config.calibration.clone(), ssm)?;
            run_schedule(
                config,
                params,
                obs,
                ys,
                id,
                init,
                Schedule::DdsmDynamic(Box::new(cal), ddsm_model(config, params, naive)),
            )
        }
        ModelId::DdsmStatic => {
            let dynamic = run_model(config, params, obs, ys, ModelId::DdsmDynamic)?;
            let Some(ThetaTrace::Ddsm(seq)) = &dynamic.thetas else {
                return Err(Error::Numerical(
                    "dynamic dDSM run produced no parameters".into(),
                ));
            };
            let theta = static_calibration_ddsm(seq, window)?;
            let init = ddsm_init(config, &theta, params)?;
            run_schedule(
                config,
                params,
                obs,
                ys,
                id,
                init,
                Schedule::Fixed(ddsm_model(config, params, theta)),
            )
        }
    }
}

fn attach_errors(trace: &mut FilterTrace, reference: &ReferenceTrace) {
    trace.errors = trace
        .records
        .iter()
        .zip(&reference.records)
        .map(|(a, r)| StepErrors::between(a, r))
        .collect();
}

/// Simulates, filters and scores one `(ε, seed)` cell.
pub fn run_cell(config: &ExperimentConfig, epsilon: f64, seed: u64) -> Result<CellResult> {
    let params = config.params(epsilon)?;
    let obs = config.observation_model()?;
    let (truth, ys) = simulate_cell(config, epsilon, seed)?;
    let reference = run_reference(
        config,
        &params,
        &obs,
        &ys,
        config.reference.resolve(epsilon),
    )?;
    let mut models = Vec::with_capacity(config.models.len());
    let mut dynamic: BTreeMap<ModelId, FilterTrace> = BTreeMap::new();
    for &id in &config.models {
        let mut trace = match id {
            // Reuse dynamic runs for the static averages.
            ModelId::DsmStatic | ModelId::DdsmStatic => {
                let dyn_id = if id == ModelId::DsmStatic {
                    ModelId::DsmDynamic
                } else {
                    ModelId::DdsmDynamic
                };
                if let std::collections::btree_map::Entry::Vacant(e) = dynamic.entry(dyn_id) {
                    e.insert(run_model(config, &params, &obs, &ys, dyn_id)?);
                }
                static_from_dynamic(config, &params, &obs, &ys, id, &dynamic[&dyn_id])?
            }
            ModelId::DsmDynamic | ModelId::DdsmDynamic => {
                if let std::collections::btree_map::Entry::Vacant(e) = dynamic.entry(id) {
                    e.insert(run_model(config, &params, &obs, &ys, id)?);
                }
                dynamic[&id].clone()
            }
            _ => run_model(config, &params, &obs, &ys, id)?,
        };
        attach_errors(&mut trace, &reference);
        models.push(trace);
    }
    Ok(CellResult {
        epsilon,
        seed,
        truth,
        observations: ys,
        reference,
        models,
    })
}

fn static_from_dynamic(
    config: &ExperimentConfig,
    params: &SwitchingParams,
    obs: &ObservationModel,
    ys: &[f64],
    id: ModelId,
    dynamic: &FilterTrace,
) -> Result<FilterTrace> {
    let window = config.calibration.averaging_window;
    let u0 = config.u0()?;
    match (&dynamic.thetas, id) {
        (Some(ThetaTrace::Dsm(seq)), ModelId::DsmStatic) => {
            let theta = static_calibration(seq, window)?;
            let init = ReducedState::Dsm(Gaussian2::independent(u0, config.dsm_gamma0()?));
            run_schedule(
                config,
                params,
                obs,
                ys,
                id,
                init,
                Schedule::Fixed(ReducedModel::Dsm { theta }),
            )
        }
        (Some(ThetaTrace::Ddsm(seq)), ModelId::DdsmStatic) => {
            let theta = static_calibration_ddsm(seq, window)?;
            let init = ddsm_init(config, &theta, params)?;
            run_schedule(
                config,
                params,
                obs,
                ys,
                id,
                init,
                Schedule::Fixed(ddsm_model(config, params, theta)),
            )
        }
        _ => Err(Error::StateMismatch(
            "static model needs its dynamic counterpart".into(),
        )),
    }
}

/// Runs every `(ε, seed)` cell in parallel; results are ordered by
/// `(ε, seed)` as listed in the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<CellResult>> {
    config.validate()?;
    let cells: Vec<(f64, u64)> = config
        .epsilons
        .iter()
        .flat_map(|&e| config.seeds.iter().map(move |&s| (e, s)))
        .collect();
    let run = || {
        cells
            .par_iter()
            .map(|&(e, s)| {
                run_cell(config, e, s).map_err(|err| err.labeled(&format!("cell eps={e} seed={s}")))
            })
            .collect::<Result<Vec<_>>>()
    };
    match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Posterior errors of every model for observation values on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsSweep {
    pub n: usize,
    pub ys: Vec<f64>,
    /// Reference posterior at each `y`.
    pub reference: Vec<Gaussian1>,
    /// Per model: posterior at each `y` and its errors.
    pub models: Vec<SweepCurve>,
}

/// One model's curve in an [`ObsSweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub model: ModelId,
    pub posterior: Vec<Gaussian1>,
    pub errors: Vec<StepErrors>,
}

/// Predictive law of `y_n` under the reference: `N(m, v + R)`.
fn predictive(cell: &CellResult, n: usize, obs: &ObservationModel) -> Result<Gaussian1> {
    let rec = cell
        .reference
        .records
        .get(n.wrapping_sub(1))
        .ok_or_else(|| Error::InvalidInput(format!("step {n} is outside the trace")))?;
    Gaussian1::new(rec.prior.mean, rec.prior.var + obs.r)
}

/// Reference and model analyses at step `n` for a hypothetical `y`.
fn replay(
    config: &ExperimentConfig,
    cell: &CellResult,
    n: usize,
    y: f64,
) -> Result<(StepRecord, Vec<(ModelId, StepRecord)>)> {
    let params = config.params(cell.epsilon)?;
    let obs = config.observation_model()?;
    let ssm = config.ssm_config();
    let start = &cell.reference.starts[n - 1];
    let mm = match &cell.reference.mode_moments {
        Some(mm) => *mm,
        None => mode_moments(&params, obs.interval, &ssm)?,
    };
    let (_, reference) =
        ssm_filter_step_with(start, &params, &obs, y, cell.reference.kind, &ssm, &mm)?;
    let ctx = config.context(cell.epsilon);
    let models = cell
        .models
        .iter()
        .map(|m| {
            Ok((
                m.model,
                reduced_analyze_step(&m.forecasts[n - 1], &ctx, &obs, y, n)?.1,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((reference, models))
}

fn check_step(cell: &CellResult, n: usize) -> Result<()> {
    let len = cell.reference.records.len();
    if n == 0
        || n > len
        || cell.reference.starts.len() < n
        || cell.models.iter().any(|m| m.forecasts.len() < n)
    {
        return Err(Error::InvalidInput(format!(
            "step {n} cannot be replayed (trace has {len} steps)"
        )));
    }
    Ok(())
}

/// Errors at step `n` over `points` values of `y` spanning the reference
/// predictive mean `± 4` standard deviations.
pub fn obs_sweep(
    config: &ExperimentConfig,
    cell: &CellResult,
    n: usize,
    points: usize,
) -> Result<ObsSweep> {
    check_step(cell, n)?;
    if points < 2 {
        return Err(Error::param("points", "must be >= 2"));
    }
    let obs = config.observation_model()?;
    let law = predictive(cell, n, &obs)?;
    let half = 4.0 * law.std_dev();
    let ys: Vec<f64> = (0..points)
        .map(|i| law.mean - half + 2.0 * half * i as f64 / (points - 1) as f64)
        .collect();
    let mut reference = Vec::with_capacity(points);
    let mut models: Vec<SweepCurve> = cell
        .models
        .iter()
        .map(|m| SweepCurve {
            model: m.model,
            posterior: Vec::with_capacity(points),
            errors: Vec::with_capacity(points),
        })
        .collect();
    for &y in &ys {
        let (r, recs) = replay(config, cell, n, y)?;
        for (curve, (_, rec)) in models.iter_mut().zip(&recs) {
            curve.posterior.push(rec.posterior);
            curve.errors.push(StepErrors::between(rec, &r));
        }
        reference.push(r.posterior);
    }
    Ok(ObsSweep {
        n,
        ys,
        reference,
        models,
    })
}

/// `Σ wᵢ fᵢ / Σ wᵢ`.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
}

/// Observation-averaged errors at step `n` under the reference predictive
/// law of `y_n`, by a `nodes`-point trapezoid rule on `± 4` standard
/// deviations (201 nodes by default).
///
/// Variance errors are expectations of the relative errors. The mean error
/// is `E|a − r| / E|r|`: the reference posterior mean is affine in `y` and
/// crosses zero, so the expectation of `|a − r|/|r|` diverges. Prior errors
/// do not depend on `y`.
pub fn averaged_posterior_error(
    config: &ExperimentConfig,
    cell: &CellResult,
    n: usize,
    nodes: usize,
) -> Result<Vec<(ModelId, StepErrors)>> {
    let sweep = obs_sweep(config, cell, n, nodes)?;
    let obs = config.observation_model()?;
    let law = predictive(cell, n, &obs)?;
    let (lo, hi) = (sweep.ys[0], sweep.ys[nodes - 1]);
    let w: Vec<f64> = trapezoid_weights(lo, hi, nodes)
        .iter()
        .zip(&sweep.ys)
        .map(|(w, &y)| w * law.pdf(y))
        .collect();
    let ref_abs: Vec<f64> = sweep.reference.iter().map(|g| g.mean.abs()).collect();
    let ref_scale = weighted_mean(&ref_abs, &w);
    Ok(sweep
        .models
        .iter()
        .map(|c| {
            let diff: Vec<f64> = c
                .posterior
                .iter()
                .zip(&sweep.reference)
                .map(|(a, r)| (a.mean - r.mean).abs())
                .collect();
            let post_mean = weighted_mean(&diff, &w) / ref_scale.max(RELATIVE_FLOOR);
            let var: Vec<f64> = c.errors.iter().map(|e| e.post_var).collect();
            let first = c.errors[0];
            (
                c.model,
                StepErrors {
                    prior_mean: first.prior_mean,
                    prior_var: first.prior_var,
                    post_mean,
                    post_var: weighted_mean(&var, &w),
                    floored: ref_scale < RELATIVE_FLOOR || first.floored,
                },
            )
        })
        .collect())
}

/// Root mean square differences from the reference over all steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub model: ModelId,
    pub epsilon: f64,
    pub seed: u64,
    pub prior_mean: f64,
    pub prior_var: f64,
    pub post_mean: f64,
    pub post_var: f64,
    /// RMS of the reference posterior mean, for scale-free comparison.
    pub ref_post_mean_rms: f64,
    /// RMS of the reference posterior variance.
    pub ref_post_var_rms: f64,
}

impl RmseRow {
    /// Posterior mean and variance RMSE, each relative to the reference RMS.
    pub fn posterior_score(&self) -> f64 {
        self.post_mean / self.ref_post_mean_rms.max(RELATIVE_FLOOR)
            + self.post_var / self.ref_post_var_rms.max(RELATIVE_FLOOR)
    }
}

/// RMS of `approx − reference` for each moment.
pub fn rms_difference(approx: &[f64], reference: &[f64]) -> f64 {
    if approx.is_empty() {
        return 0.0;
    }
    (approx
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).powi(2))
        .sum::<f64>()
        / approx.len() as f64)
        .sqrt()
}

pub fn rmse_summary(cell: &CellResult) -> Vec<RmseRow> {
    let r = &cell.reference.records;
    let col =
        |recs: &[StepRecord], f: fn(&StepRecord) -> f64| recs.iter().map(f).collect::<Vec<f64>>();
    let zeros = vec![0.0; r.len()];
    cell.models
        .iter()
        .map(|m| {
            let a = &m.records;
            let d = |f: fn(&StepRecord) -> f64| rms_difference(&col(a, f), &col(r, f));
            RmseRow {
                model: m.model,
                epsilon: cell.epsilon,
                seed: cell.seed,
                prior_mean: d(|s| s.prior.mean),
                prior_var: d(|s| s.prior.var),
                post_mean: d(|s| s.posterior.mean),
                post_var: d(|s| s.posterior.var),
                ref_post_mean_rms: rms_difference(&col(r, |s| s.posterior.mean), &zeros),
                ref_post_var_rms: rms_difference(&col(r, |s| s.posterior.var), &zeros),
            }
        })
        .collect()
}

/// Time average of the combined posterior error over all steps.
pub fn time_averaged_posterior_error(trace: &FilterTrace) -> f64 {
    if trace.errors.is_empty() {
        return 0.0;
    }
    trace
        .errors
        .iter()
        .map(StepErrors::posterior_total)
        .sum::<f64>()
        / trace.errors.len() as f64
}

/// Relation between consecutive models of an accuracy ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `a < b`.
    Less,
    /// `a ≲ b`: `a ≤ (1 + tol) b`.
    LessApprox,
    /// `a ≃ b`: `|a − b| ≤ tol · max(a, b)`.
    Approx,
}

impl Relation {
    pub fn holds(self, a: f64, b: f64, tol: f64) -> bool {
        match self {
            Relation::Less => a < b,
            Relation::LessApprox => a <= (1.0 + tol) * b,
            Relation::Approx => (a - b).abs() <= tol * a.max(b),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Less => "<",
            Relation::LessApprox => "≲",
            Relation::Approx => "≃",
        }
    }
}

/// An expected accuracy ranking `m₀ r₀ m₁ r₁ m₂ …` at one `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub epsilon: f64,
    pub models: Vec<ModelId>,
    /// `relations[i]` links `models[i]` and `models[i + 1]`.
    pub relations: Vec<Relation>,
}

impl Ranking {
    /// Whether every consecutive relation holds for `score`.
    pub fn holds(&self, score: impl Fn(ModelId) -> Option<f64>, tol: f64) -> Result<bool> {
        let mut ok = true;
        for (i, rel) in self.relations.iter().enumerate() {
            let get = |m: ModelId| {
                score(m).ok_or_else(|| Error::InvalidInput(format!("no score for `{}`", m.name())))
            };
            let (a, b) = (get(self.models[i])?, get(self.models[i + 1])?);
            ok &= rel.holds(a, b, tol);
        }
        Ok(ok)
    }

    pub fn describe(&self) -> String {
        let mut s = self.models[0].name().to_string();
        for (rel, m) in self.relations.iter().zip(&self.models[1..]) {
            s += &format!(" {} {}", rel.symbol(), m.name());
        }
        s
    }
}

/// Tolerance of the `≲` and `≃` relations.
pub const RANKING_TOLERANCE: f64 = 0.1;

/// Accuracy rankings of the benchmark study, one per `ε`.
pub fn benchmark_rankings() -> Vec<Ranking> {
    use ModelId::*;
    use Relation::*;
    vec![
        Ranking {
            epsilon: 0.1,
            models: vec![DsmDynamic, DsmStatic, DsmNaive, Msm],
            relations: vec![LessApprox, Less, Less],
        },
        Ranking {
            epsilon: 1.0,
            models: vec![DsmDynamic, DsmStatic, Msm, DsmNaive],
            relations: vec![LessApprox, Less, Less],
        },
        Ranking {
            epsilon: 10.0,
            models: vec![DdsmDynamic, DdsmStatic, Dmsm, DdsmNaive, DsmComparison],
            relations: vec![LessApprox, Less, LessApprox, Less],
        },
        Ranking {
            epsilon: 100.0,
            models: vec![DdsmDynamic, Dmsm, DdsmStatic, DdsmNaive],
            relations: vec![Approx, Less, Less],
        },
    ]
}

/// Densities on a common grid and pairwise L1 distances at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub epsilon: f64,
    pub n: usize,
    pub grid: Vec<f64>,
    /// Prior densities by name: `msm`, `dmsm`, `ssm_gaussian`, `ssm_mixture`.
    pub priors: BTreeMap<String, Vec<f64>>,
    /// L1 distances between every pair of priors, keyed `a|b`.
    pub prior_l1: BTreeMap<String, f64>,
    /// L1 distance between the reference posterior mixture and its
    /// moment-matched Gaussian, by observation-noise ratio.
    pub posterior_mixture_l1: Vec<(f64, f64)>,
}

/// Grid points of the density comparisons.
pub const DENSITY_POINTS: usize = 2001;

fn mixture_posterior_l1(
    config: &ExperimentConfig,
    epsilon: f64,
    seed: u64,
    n: usize,
    ratio: f64,
) -> Result<f64> {
    let cfg = ExperimentConfig {
        obs_ratio: ratio,
        steps: n,
        ..config.clone()
    };
    let params = cfg.params(epsilon)?;
    let obs = cfg.observation_model()?;
    let (_, ys) = simulate_cell(&cfg, epsilon, seed)?;
    let reference = run_reference(&cfg, &params, &obs, &ys, SsmFilterKind::Mixture)?;
    let rec = &reference.records[n - 1];
    let mix = rec.posterior_mixture.as_ref().ok_or_else(|| {
        Error::Numerical("mixture reference produced no posterior mixture".into())
    })?;
    let g = moment_match(mix);
    let half = 10.0 * g.std_dev();
    density_l1_distance(
        |x| mix.u_pdf(x),
        |x| g.pdf(x),
        g.mean - half,
        g.mean + half,
        DENSITY_POINTS,
    )
}

/// Prior densities of MSM, dMSM and both reference filters at step `n`,
/// plus the posterior-mixture diagnostic for each ratio in `ratios`.
pub fn density_compare(
    config: &ExperimentConfig,
    epsilon: f64,
    seed: u64,
    n: usize,
    ratios: &[f64],
) -> Result<DensityReport> {
    if n == 0 {
        return Err(Error::param("n", "must be >= 1"));
    }
    let cfg = ExperimentConfig {
        steps: n.max(config.steps),
        ..config.clone()
    };
    let params = cfg.params(epsilon)?;
    let obs = cfg.observation_model()?;
    let (_, ys) = simulate_cell(&cfg, epsilon, seed)?;
    let ys = &ys[..n];
    let gauss = run_reference(&cfg, &params, &obs, ys, SsmFilterKind::Gaussian)?;
    let mixture = run_reference(&cfg, &params, &obs, ys, SsmFilterKind::Mixture)?;
    let msm = run_model(&cfg, &params, &obs, ys, ModelId::Msm)?;
    let dmsm = run_model(&cfg, &params, &obs, ys, ModelId::Dmsm)?;

    let as_mix = |rec: &StepRecord| -> GaussianMixture<Gaussian1> {
        rec.prior_mixture
            .clone()
            .unwrap_or_else(|| GaussianMixture::single(rec.prior, None))
    };
    let densities: Vec<(&str, GaussianMixture<Gaussian1>)> = vec![
        ("msm", as_mix(&msm.records[n - 1])),
        ("dmsm", as_mix(&dmsm.records[n - 1])),
        ("ssm_gaussian", as_mix(&gauss.records[n - 1])),
        ("ssm_mixture", as_mix(&mixture.records[n - 1])),
    ];
    let (lo, hi) = densities
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, m)| {
            m.kernels().iter().fold((lo, hi), |(lo, hi), k| {
                let s = 10.0 * k.dist.std_dev();
                (lo.min(k.dist.mean - s), hi.max(k.dist.mean + s))
            })
        });
    let grid: Vec<f64> = (0..DENSITY_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (DENSITY_POINTS - 1) as f64)
        .collect();
    let mut priors = BTreeMap::new();
    for (name, m) in &densities {
        priors.insert(name.to_string(), grid.iter().map(|&x| m.u_pdf(x)).collect());
    }
    let mut prior_l1 = BTreeMap::new();
    for (i, (a, ma)) in densities.iter().enumerate() {
        for (b, mb) in &densities[i + 1..] {
            let d = density_l1_distance(|x| ma.u_pdf(x), |x| mb.u_pdf(x), lo, hi, DENSITY_POINTS)?;
            prior_l1.insert(format!("{a}|{b}"), d);
        }
    }
    let posterior_mixture_l1 = ratios
        .iter()
        .map(|&r| Ok((r, mixture_posterior_l1(config, epsilon, seed, n, r)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityReport {
        epsilon,
        n,
        grid,
        priors,
        prior_l1,
        posterior_mixture_l1,
    })
}

/// Header of the per-model CSV files.
pub const TRACE_HEADER: &str =
    "n,prior_mean,prior_var,post_mean,post_var,rel_err_prior_mean,rel_err_prior_var,rel_err_post_mean,rel_err_post_var";

/// Writes the per-step CSV of one model.
pub fn write_trace_csv(trace: &FilterTrace, mut out: impl Write) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for (r, e) in trace.records.iter().zip(&trace.errors) {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.n,
            r.prior.mean,
            r.prior.var,
            r.posterior.mean,
            r.posterior.var,
            e.prior_mean,
            e.prior_var,
            e.post_mean,
            e.post_var
        )?;
    }
    Ok(())
}

fn write_reference_csv(reference: &ReferenceTrace, ys: &[f64], mut out: impl Write) -> Result<()> {
    writeln!(out, "n,y,prior_mean,prior_var,post_mean,post_var")?;
    for (r, y) in reference.records.iter().zip(ys) {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n, y, r.prior.mean, r.prior.var, r.posterior.mean, r.posterior.var
        )?;
    }
    Ok(())
}

/// Writes the per-step parameters of a calibrated model as CSV.
pub fn write_theta_csv(thetas: &ThetaTrace, mut out: impl Write) -> Result<()> {
    match thetas {
        ThetaTrace::Dsm(seq) => {
            writeln!(out, "n,mu,nu,sigma")?;
            for (i, t) in seq.iter().enumerate() {
                writeln!(out, "{},{},{},{}", i + 1, t.mu, t.nu, t.sigma)?;
            }
        }
        ThetaTrace::Ddsm(seq) => {
            writeln!(
                out,
                "n,rho_plus,mu_plus,nu_plus,sigma_plus,mu_minus,nu_minus,sigma_minus"
            )?;
            for (i, t) in seq.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    i + 1,
                    t.rho_plus,
                    t.plus.mu,
                    t.plus.nu,
                    t.plus.sigma,
                    t.minus.mu,
                    t.minus.nu,
                    t.minus.sigma
                )?;
            }
        }
    }
    Ok(())
}

/// File-name stem of a cell.
pub fn cell_stem(epsilon: f64, seed: u64) -> String {
    format!("eps{epsilon}_seed{seed}")
}

/// Record of one written run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
    /// Files containing relative errors computed with the floor active.
    pub floored: Vec<String>,
}

fn create(dir: &Path, name: &str, files: &mut Vec<String>) -> Result<std::io::BufWriter<fs::File>> {
    files.push(name.to_string());
    Ok(std::io::BufWriter::new(fs::File::create(dir.join(name))?))
}

/// Writes per-(ε, seed, model) CSVs, reference and truth CSVs, the
/// long-format CSV and the manifest into `dir`. Returns the manifest path.
pub fn write_outputs(
    config: &ExperimentConfig,
    cells: &[CellResult],
    dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut floored = Vec::new();
    let mut long = create(dir, "long.csv", &mut files)?;
    writeln!(long, "epsilon,seed,model,n,quantity,value")?;
    for cell in cells {
        let stem = cell_stem(cell.epsilon, cell.seed);
        cell.truth
            .write_csv(create(dir, &format!("{stem}_truth.csv"), &mut files)?)?;
        write_reference_csv(
            &cell.reference,
            &cell.observations,
            create(dir, &format!("{stem}_reference.csv"), &mut files)?,
        )?;
        for m in &cell.models {
            let name = format!("{stem}_{}.csv", m.model.name());
            write_trace_csv(m, create(dir, &name, &mut files)?)?;
            if m.errors.iter().any(|e| e.floored) {
                floored.push(name);
            }
            if let Some(th) = &m.thetas {
                write_theta_csv(
                    th,
                    create(
                        dir,
                        &format!("{stem}_{}_theta.csv", m.model.name()),
                        &mut files,
                    )?,
                )?;
            }
            for (r, e) in m.records.iter().zip(&m.errors) {
                let rows = [
                    ("prior_mean", r.prior.mean),
                    ("prior_var", r.prior.var),
                    ("post_mean", r.posterior.mean),
                    ("post_var", r.posterior.var),
                    ("rel_err_prior_mean", e.prior_mean),
                    ("rel_err_prior_var", e.prior_var),
                    ("rel_err_post_mean", e.post_mean),
                    ("rel_err_post_var", e.post_var),
                ];
                for (q, v) in rows {
                    writeln!(
                        long,
                        "{},{},{},{},{q},{v}",
                        cell.epsilon,
                        cell.seed,
                        m.model.name(),
                        r.n
                    )?;
                }
            }
        }
    }
    long.flush()?;
    drop(long);
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        files,
        floored,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(eps: f64, models: Vec<ModelId>) -> ExperimentConfig {
        ExperimentConfig {
            epsilons: vec![eps],
            steps: 6,
            models,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(1.0, 1.0), (0.0, false));
        assert!((relative_error(1.1, 1.0).0 - 0.1).abs() < 1e-12);
        let (e, f) = relative_error(1e-6, 0.0);
        assert!((e - 1e6).abs() < 1e-3);
        assert!(f);
    }

    #[test]
    fn auto_reference_rule() {
        assert_eq!(ReferenceMode::Auto.resolve(0.1), SsmFilterKind::Gaussian);
        assert_eq!(ReferenceMode::Auto.resolve(1.0), SsmFilterKind::Gaussian);
        assert_eq!(ReferenceMode::Auto.resolve(1.0001), SsmFilterKind::Mixture);
        assert_eq!(
            ReferenceMode::Gaussian.resolve(100.0),
            SsmFilterKind::Gaussian
        );
        assert_eq!(ReferenceMode::Mixture.resolve(0.1), SsmFilterKind::Mixture);
    }

    #[test]
    fn default_config_values() {
        let c = ExperimentConfig::default();
        assert!((c.energy() - 0.1549f64.powi(2) / 3.0).abs() < 1e-15);
        let g = c.dsm_gamma0().unwrap();
        assert!((g.mean - 1.8).abs() < 1e-12);
        assert!((g.var - 1.1858).abs() < 1e-12);
        let th = c.comparison().unwrap();
        assert!((th.nu - 0.15).abs() < 1e-12);
        assert!((th.sigma - 5.0 * 0.1549).abs() < 1e-12);
        c.validate().unwrap();
    }

    #[test]
    fn zero_steps_rejected() {
        let c = ExperimentConfig {
            steps: 0,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"steps": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"unknown": 1}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = ExperimentConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn cell_runs_and_errors_are_finite() {
        let c = small(1.0, vec![ModelId::Msm, ModelId::DsmNaive, ModelId::Dmsm]);
        let cell = run_cell(&c, 1.0, 3).unwrap();
        assert_eq!(cell.models.len(), 3);
        for m in &cell.models {
            assert_eq!(m.records.len(), 6);
            for e in &m.errors {
                for v in [e.prior_mean, e.prior_var, e.post_mean, e.post_var] {
                    assert!(v.is_finite() && v >= 0.0);
                }
            }
        }
    }

    #[test]
    fn gaussian_filters_have_flat_variance_sweep() {
        let c = small(0.1, vec![ModelId::Msm, ModelId::DsmNaive]);
        let cell = run_cell(&c, 0.1, 5).unwrap();
        let sweep = obs_sweep(&c, &cell, 3, 41).unwrap();
        for c in &sweep.models {
            let v0 = c.errors[0].post_var;
            assert!(c.errors.iter().all(|e| (e.post_var - v0).abs() < 1e-12));
            assert!(c.errors.iter().all(|e| e.post_mean.is_finite()));
        }
    }

    #[test]
    fn averaged_error_quadrature_is_stable() {
        let c = small(0.1, vec![ModelId::Msm]);
        let cell = run_cell(&c, 0.1, 7).unwrap();
        let a = averaged_posterior_error(&c, &cell, 4, 201).unwrap();
        let b = averaged_posterior_error(&c, &cell, 4, 401).unwrap();
        assert!((a[0].1.post_mean - b[0].1.post_mean).abs() < 1e-6);
        assert!((a[0].1.post_var - b[0].1.post_var).abs() < 1e-12);
        assert!(obs_sweep(&c, &cell, 0, 11).is_err());
        assert!(obs_sweep(&c, &cell, 7, 11).is_err());
    }

    #[test]
    fn weighted_mean_of_constant() {
        assert!((weighted_mean(&[0.3; 5], &[0.1, 0.4, 0.2, 0.2, 0.1]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn relations() {
        assert!(Relation::Less.holds(1.0, 2.0, 0.1));
        assert!(!Relation::Less.holds(2.0, 2.0, 0.1));
        assert!(Relation::LessApprox.holds(1.09, 1.0, 0.1));
        assert!(!Relation::LessApprox.holds(1.11, 1.0, 0.1));
        assert!(Relation::Approx.holds(1.0, 0.91, 0.1));
        assert!(!Relation::Approx.holds(1.0, 0.89, 0.1));
        let r = &benchmark_rankings()[0];
        assert_eq!(r.describe(), "dsm_dynamic ≲ dsm_static < dsm_naive < msm");
        let scores = [
            (ModelId::DsmDynamic, 1.0),
            (ModelId::DsmStatic, 1.05),
            (ModelId::DsmNaive, 2.0),
            (ModelId::Msm, 3.0),
        ];
        let f = |m: ModelId| scores.iter().find(|(k, _)| *k == m).map(|(_, v)| *v);
        assert!(r.holds(f, 0.1).unwrap());
        assert!(!r.holds(|m| f(m).map(|v| -v), 0.1).unwrap());
        assert!(benchmark_rankings()[2].holds(f, 0.1).is_err());
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rms_difference(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((rms_difference(&[1.5, 2.5, 0.5], &[1.0, 2.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn outputs_are_deterministic() {
        let c = small(0.1, vec![ModelId::Msm, ModelId::DsmDynamic]);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_outputs(&c, &run_experiment(&c).unwrap(), dir_a.path()).unwrap();
        write_outputs(&c, &run_experiment(&c).unwrap(), dir_b.path()).unwrap();
        let m: Manifest =
            serde_json::from_str(&fs::read_to_string(dir_a.path().join("manifest.json")).unwrap())
                .unwrap();
        assert!(m.files.iter().any(|f| f.ends_with("_msm.csv")));
        for f in &m.files {
            assert_eq!(
                fs::read(dir_a.path().join(f)).unwrap(),
                fs::read(dir_b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let text = fs::read_to_string(dir_a.path().join("eps0.1_seed1_msm.csv")).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER);
        assert_eq!(text.lines().count(), 7);
    }
}
