//! Parameter determination for the DSM and dDSM filters.
//!
//! The naive sets come from matching asymptotic MGF expansions: small `ε`
//! for the DSM, large `ε` (fixed prediction time) for the dDSM. Calibrated
//! sets minimize the forecast moment discrepancy
//!
//! ```text
//! J(Θ) = κ |⟨u_T⟩ − ⟨û_T⟩|² + |Var(u_T) − Var(û_T)|²
//! ```
//!
//! between the switching model and the reduced model from the same `u₀`,
//! using Nelder–Mead on `(μ, ln ν, ln σ)` so `ν, σ > 0` by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian1, Gaussian2};
use crate::reduced::{spekf_predict, ThetaDdsm, ThetaDsm};
use crate::ssm::{mode_moments, ModeMoments, SsmConfig};
use crate::switching::{stationary_mode_stats, Mode, SwitchingParams};

/// Settings of the calibration drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Weight `κ ≥ 0` of the mean discrepancy.
    pub kappa: f64,
    /// Simplex-diameter tolerance in `(μ, ln ν, ln σ)` coordinates.
    pub tol: f64,
    pub max_iter: usize,
    /// Explicit `ε` ladder for the first step; `None` uses the default
    /// geometric ladder of `continuation_steps` levels.
    pub continuation_eps: Option<Vec<f64>>,
    /// Levels of the default ladder; `0` disables continuation.
    pub continuation_steps: usize,
    /// Steps averaged by static calibration.
    pub averaging_window: usize,
    /// Nodes of the Simpson rule inside the SPEKF forecast.
    pub quad_nodes: usize,
    /// Relative size of the initial simplex.
    pub initial_step: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            kappa: 0.0,
            tol: 1e-8,
            max_iter: 500,
            continuation_eps: None,
            continuation_steps: 5,
            averaging_window: 50,
            quad_nodes: 65,
            initial_step: 0.02,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::Config("kappa must be finite and >= 0".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        if self.averaging_window == 0 {
            return Err(Error::Config("averaging_window must be >= 1".into()));
        }
        if self.quad_nodes < 2 {
            return Err(Error::Config("quad_nodes must be >= 2".into()));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::Config("initial_step must be > 0".into()));
        }
        if let Some(l) = &self.continuation_eps {
            if l.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
                return Err(Error::Config("continuation_eps entries must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Small-`ε` naive DSM set: `μ = γ̄∞`,
/// `ν = (8/3)λ−²λ+²/((λ−+λ+)(λ+²+λ−²))`,
/// `σ² = (16/3)λ−³λ+³(γ−−γ+)²/((λ−+λ+)³(λ+²+λ−²))`.
pub fn theta_naive(params: &SwitchingParams) -> ThetaDsm {
    let (lp, lm) = (params.lambda_plus, params.lambda_minus);
    let total = lp + lm;
    let squares = lp * lp + lm * lm;
    let dg = params.gamma_minus - params.gamma_plus;
    let (mu, _) = stationary_mode_stats(params);
    let nu = 8.0 / 3.0 * lm * lm * lp * lp / (total * squares);
    let sigma2 = 16.0 / 3.0 * lm.powi(3) * lp.powi(3) * dg * dg / (total.powi(3) * squares);
    ThetaDsm {
        mu,
        nu,
        sigma: sigma2.sqrt(),
    }
}

/// Large-`ε` naive dDSM set for prediction time `t`:
/// `ρ̂± = λ∓/(λ−+λ+)`, `μ± = 2t·Var(γ∞) + γ±`,
/// `ν± = 3λ±/(2t² Var(γ∞))`, `σ±² = 3λ±/t²`.
pub fn theta_prime_naive(params: &SwitchingParams, t: f64) -> Result<ThetaDdsm> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param("T", "must be finite and > 0"));
    }
    let (_, var) = stationary_mode_stats(params);
    let per_mode = |mode: Mode| {
        let l = params.intensity(mode);
        ThetaDsm {
            mu: 2.0 * t * var + params.gamma(mode),
            nu: 3.0 * l / (2.0 * t * t * var),
            sigma: (3.0 * l / (t * t)).sqrt(),
        }
    };
    Ok(ThetaDdsm {
        rho_plus: params.stationary().p_plus,
        plus: per_mode(Mode::Plus),
        minus: per_mode(Mode::Minus),
    })
}

/// `J(Θ)` for a fixed starting state and fixed switching-model target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveJ {
    /// Switching-model forecast of `u_T`.
    pub target: Gaussian1,
    /// Reduced-model state at the start of the window.
    pub start: Gaussian2,
    pub sigma_u: f64,
    pub epsilon: f64,
    pub t: f64,
    pub kappa: f64,
    pub quad_nodes: usize,
}

impl ObjectiveJ {
    /// Objective for the DSM: the switching side starts from the `u`
    /// marginal of `start` with `γ₀` stationary and independent of `u₀`.
    pub fn dsm(
        start: &Gaussian2,
        params: &SwitchingParams,
        t: f64,
        kappa: f64,
        ssm: &SsmConfig,
        quad_nodes: usize,
    ) -> Result<Self> {
        let mm = mode_moments(params, t, ssm)?;
        Ok(Self::dsm_with(start, params, t, kappa, &mm, quad_nodes))
    }

    /// As [`ObjectiveJ::dsm`] with precomputed [`mode_moments`].
    pub fn dsm_with(
        start: &Gaussian2,
        params: &SwitchingParams,
        t: f64,
        kappa: f64,
        mm: &[ModeMoments; 2],
        quad_nodes: usize,
    ) -> Self {
        let law = params.stationary();
        let u0 = start.u_marginal();
        let plus = mm[0].forecast(&u0);
        let minus = mm[1].forecast(&u0);
        // Law of total variance over the initial mode.
        let mean = law.p_plus * plus.mean + law.p_minus * minus.mean;
        let second = law.p_plus * (plus.var + plus.mean * plus.mean)
            + law.p_minus * (minus.var + minus.mean * minus.mean);
        Self {
            target: Gaussian1 {
                mean,
                var: second - mean * mean,
            },
            start: *start,
            sigma_u: params.sigma_u,
            epsilon: params.epsilon,
            t,
            kappa,
            quad_nodes,
        }
    }

    /// Per-mode objective for the dDSM: the switching side is conditioned on
    /// `γ₀ = mode`.
    pub fn ddsm_mode_with(
        start: &Gaussian2,
        params: &SwitchingParams,
        t: f64,
        kappa: f64,
        mm: &[ModeMoments; 2],
        mode: Mode,
        quad_nodes: usize,
    ) -> Self {
        Self {
            target: mm[mode.index()].forecast(&start.u_marginal()),
            start: *start,
            sigma_u: params.sigma_u,
            epsilon: params.epsilon,
            t,
            kappa,
            quad_nodes,
        }
    }

    pub fn eval(&self, theta: &ThetaDsm) -> Result<f64> {
        let f = spekf_predict(
            &self.start,
            theta,
            self.sigma_u,
            self.epsilon,
            self.t,
            self.quad_nodes,
        )?;
        let dm = self.target.mean - f.mean[0];
        let dv = self.target.var - f.cov[0][0];
        Ok(self.kappa * dm * dm + dv * dv)
    }

    /// Objective value with failures mapped to `+∞`, for the optimizer.
    pub fn eval_or_inf(&self, theta: &ThetaDsm) -> f64 {
        match self.eval(theta) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    }
}

/// `J(Θ)` for the DSM from `filter_state`, per the definition above.
pub fn objective_j(
    theta: &ThetaDsm,
    filter_state: &Gaussian2,
    params: &SwitchingParams,
    t: f64,
    kappa: f64,
    quad_nodes: usize,
) -> Result<f64> {
    let ssm = SsmConfig {
        quad_nodes,
        ..SsmConfig::default()
    };
    ObjectiveJ::dsm(filter_state, params, t, kappa, &ssm, quad_nodes)?.eval(theta)
}

/// Result of a Nelder–Mead run.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// `false` when `max_iter` was reached before the diameter test passed.
    pub converged: bool,
}

/// Nelder–Mead with standard coefficients (reflection 1, expansion 2,
/// contraction ½, shrink ½). Stops when every vertex lies within `tol` of
/// the best one, or after `max_iter` iterations.
pub fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    start: &[f64],
    steps: &[f64],
    tol: f64,
    max_iter: usize,
) -> Minimum {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut iterations = 0;
    let diameter = |s: &[Vec<f64>], best: usize| {
        s.iter()
            .map(|v| {
                v.iter()
                    .zip(&s[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if diameter(&simplex, 0) < tol {
            return Minimum {
                x: simplex[0].clone(),
                value: values[0],
                iterations,
                converged: true,
            };
        }
        if iterations >= max_iter {
            return Minimum {
                x: simplex[0].clone(),
                value: values[0],
                iterations,
                converged: false,
            };
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };
        let reflected = along(1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(0.5);
            let fc = f(&c);
            (c, fc)
        } else {
            let c = along(-0.5);
            let fc = f(&c);
            (c, fc)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            let v: Vec<f64> = simplex[i]
                .iter()
                .zip(&simplex[0])
                .map(|(x, b)| b + 0.5 * (x - b))
                .collect();
            values[i] = f(&v);
            simplex[i] = v;
        }
    }
}

fn to_coords(theta: &ThetaDsm) -> [f64; 3] {
    [theta.mu, theta.nu.ln(), theta.sigma.ln()]
}

fn from_coords(x: &[f64]) -> ThetaDsm {
    ThetaDsm {
        mu: x[0],
        nu: x[1].exp(),
        sigma: x[2].exp(),
    }
}

/// A calibrated parameter set with optimizer diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibrated {
    pub theta: ThetaDsm,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Local minimizer of `objective` from `start`.
pub fn minimize_theta(
    start: &ThetaDsm,
    objective: impl Fn(&ThetaDsm) -> f64,
    config: &CalibrationConfig,
) -> Result<Calibrated> {
    start.validate()?;
    config.validate()?;
    let x0 = to_coords(start);
    let s = config.initial_step;
    let steps = [s * start.mu.abs().max(0.1), s, s];
    let m = nelder_mead(
        |x| objective(&from_coords(x)),
        &x0,
        &steps,
        config.tol,
        config.max_iter,
    );
    let theta = from_coords(&m.x);
    if !theta.mu.is_finite()
        || !(theta.nu > 0.0)
        || !(theta.sigma > 0.0)
        || !theta.nu.is_finite()
        || !theta.sigma.is_finite()
    {
        return Err(Error::Numerical(format!(
            "optimizer left the feasible region: {theta:?}"
        )));
    }
    Ok(Calibrated {
        theta,
        objective: m.value,
        iterations: m.iterations,
        converged: m.converged,
    })
}

/// Geometric ladder of `steps` levels from `from` to `to` (inclusive).
pub fn continuation_ladder(from: f64, to: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 || from == to {
        return vec![to];
    }
    let (a, b) = (from.ln(), to.ln());
    let mut l: Vec<f64> = (0..steps)
        .map(|i| (a + (b - a) * i as f64 / (steps - 1) as f64).exp())
        .collect();
    l[0] = from;
    l[steps - 1] = to;
    l
}

/// Componentwise mean of the first `window` entries (all, if fewer).
pub fn static_calibration(sequence: &[ThetaDsm], window: usize) -> Result<ThetaDsm> {
    if sequence.is_empty() {
        return Err(Error::InvalidInput(
            "static calibration needs a nonempty sequence".into(),
        ));
    }
    if window == 0 {
        return Err(Error::param("window", "must be >= 1"));
    }
    let s = &sequence[..window.min(sequence.len())];
    let k = s.len() as f64;
    Ok(ThetaDsm {
        mu: s.iter().map(|t| t.mu).sum::<f64>() / k,
        nu: s.iter().map(|t| t.nu).sum::<f64>() / k,
        sigma: s.iter().map(|t| t.sigma).sum::<f64>() / k,
    })
}

/// Per-mode static calibration of a dDSM sequence; weights are kept from
/// the first entry.
pub fn static_calibration_ddsm(sequence: &[ThetaDdsm], window: usize) -> Result<ThetaDdsm> {
    let first = sequence.first().ok_or_else(|| {
        Error::InvalidInput("static calibration needs a nonempty sequence".into())
    })?;
    let plus: Vec<ThetaDsm> = sequence.iter().map(|t| t.plus).collect();
    let minus: Vec<ThetaDsm> = sequence.iter().map(|t| t.minus).collect();
    Ok(ThetaDdsm {
        rho_plus: first.rho_plus,
        plus: static_calibration(&plus, window)?,
        minus: static_calibration(&minus, window)?,
    })
}

/// How the `ε` ladder of the first step is oriented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LadderOrigin {
    /// Start at `min(ε, 0.01)` and move up (DSM; naive set is small-`ε`).
    Small,
    /// Start at `max(ε, 1e4)` and move down (dDSM; naive set is large-`ε`).
    Large,
}

fn first_step_ladder(config: &CalibrationConfig, eps: f64, origin: LadderOrigin) -> Vec<f64> {
    if let Some(l) = &config.continuation_eps {
        let mut l = l.clone();
        if l.last() != Some(&eps) {
            l.push(eps);
        }
        return l;
    }
    let from = match origin {
        LadderOrigin::Small => eps.min(0.01),
        LadderOrigin::Large => eps.max(1e4),
    };
    continuation_ladder(from, eps, config.continuation_steps)
}

/// Minimizes from the better of `warm` and `naive`; the result is never
/// worse than either start.
fn minimize_from_best(
    warm: &ThetaDsm,
    naive: &ThetaDsm,
    objective: impl Fn(&ThetaDsm) -> f64,
    config: &CalibrationConfig,
) -> Result<Calibrated> {
    let start = if objective(naive) < objective(warm) {
        naive
    } else {
        warm
    };
    minimize_theta(start, objective, config)
}

/// Per-step DSM calibration with warm starts.
#[derive(Debug, Clone)]
pub struct DynamicCalibrator {
    config: CalibrationConfig,
    ssm: SsmConfig,
    params: SwitchingParams,
    t: f64,
    naive: ThetaDsm,
    current: ThetaDsm,
    history: Vec<Calibrated>,
}

impl DynamicCalibrator {
    pub fn new(
        params: &SwitchingParams,
        t: f64,
        config: CalibrationConfig,
        ssm: SsmConfig,
    ) -> Result<Self> {
        config.validate()?;
        let naive = theta_naive(params);
        Ok(Self {
            config,
            ssm,
            params: *params,
            t,
            naive,
            current: naive,
            history: Vec::new(),
        })
    }

    /// Calibrates `Θ` for the forecast starting from `state`.
    pub fn step(&mut self, state: &Gaussian2) -> Result<Calibrated> {
        let eps = self.params.epsilon;
        let cfg = &self.config;
        if self.history.is_empty() {
            let ladder = first_step_ladder(cfg, eps, LadderOrigin::Small);
            for &e in &ladder[..ladder.len() - 1] {
                let p = self.params.with_epsilon(e)?;
                let obj = ObjectiveJ::dsm(state, &p, self.t, cfg.kappa, &self.ssm, cfg.quad_nodes)?;
                self.current = minimize_theta(&self.current, |th| obj.eval_or_inf(th), cfg)?.theta;
            }
        }
        let obj = ObjectiveJ::dsm(
            state,
            &self.params,
            self.t,
            cfg.kappa,
            &self.ssm,
            cfg.quad_nodes,
        )?;
        let previous = if self.history.is_empty() {
            self.naive
        } else {
            self.current
        };
        let warm = self.current;
        let mut best = minimize_from_best(&warm, &self.naive, |th| obj.eval_or_inf(th), cfg)?;
        let prev_value = obj.eval_or_inf(&previous);
        if best.objective > prev_value {
            best = Calibrated {
                theta: previous,
                objective: prev_value,
                iterations: best.iterations,
                converged: best.converged,
            };
        }
        self.current = best.theta;
        self.history.push(best);
        Ok(best)
    }

    pub fn history(&self) -> &[Calibrated] {
        &self.history
    }

    pub fn thetas(&self) -> Vec<ThetaDsm> {
        self.history.iter().map(|c| c.theta).collect()
    }
}

/// Per-step, per-mode dDSM calibration; `ρ̂±` stay at their naive values.
#[derive(Debug, Clone)]
pub struct DdsmCalibrator {
    config: CalibrationConfig,
    ssm: SsmConfig,
    params: SwitchingParams,
    t: f64,
    naive: ThetaDdsm,
    current: ThetaDdsm,
    history: Vec<ThetaDdsm>,
}

impl DdsmCalibrator {
    pub fn new(
        params: &SwitchingParams,
        t: f64,
        config: CalibrationConfig,
        ssm: SsmConfig,
    ) -> Result<Self> {
        config.validate()?;
        let naive = theta_prime_naive(params, t)?;
        Ok(Self {
            config,
            ssm,
            params: *params,
            t,
            naive,
            current: naive,
            history: Vec::new(),
        })
    }

    /// Calibrates both modes for forecasts starting from the given kernels.
    pub fn step(&mut self, plus: &Gaussian2, minus: &Gaussian2) -> Result<ThetaDdsm> {
        let eps = self.params.epsilon;
        let cfg = self.config.clone();
        let kernels = [(Mode::Plus, plus), (Mode::Minus, minus)];
        if self.history.is_empty() {
            let ladder = first_step_ladder(&cfg, eps, LadderOrigin::Large);
            for &e in &ladder[..ladder.len() - 1] {
                let p = self.params.with_epsilon(e)?;
                let mm = mode_moments(&p, self.t, &self.ssm)?;
                for (mode, k) in kernels {
                    let obj = ObjectiveJ::ddsm_mode_with(
                        k,
                        &p,
                        self.t,
                        cfg.kappa,
                        &mm,
                        mode,
                        cfg.quad_nodes,
                    );
                    let th =
                        minimize_theta(self.current.mode(mode), |th| obj.eval_or_inf(th), &cfg)?
                            .theta;
                    *self.current.mode_mut(mode) = th;
                }
            }
        }
        let mm = mode_moments(&self.params, self.t, &self.ssm)?;
        let first = self.history.is_empty();
        for (mode, k) in kernels {
            let obj = ObjectiveJ::ddsm_mode_with(
                k,
                &self.params,
                self.t,
                cfg.kappa,
                &mm,
                mode,
                cfg.quad_nodes,
            );
            let previous = if first {
                *self.naive.mode(mode)
            } else {
                *self.current.mode(mode)
            };
            let mut best = minimize_from_best(
                self.current.mode(mode),
                self.naive.mode(mode),
                |th| obj.eval_or_inf(th),
                &cfg,
            )?;
            let prev_value = obj.eval_or_inf(&previous);
            if best.objective > prev_value {
                best.theta = previous;
            }
            *self.current.mode_mut(mode) = best.theta;
        }
        self.history.push(self.current);
        Ok(self.current)
    }

    pub fn history(&self) -> &[ThetaDdsm] {
        &self.history
    }
}
