//! Analytic machinery for the two-state jump process `γ(t)`.
//!
//! `γ` alternates between a stable value `γ+ > 0` and an unstable value
//! `γ− < 0`; holding times are exponential with intensities `λ±/ε`. Every
//! routine here applies the `1/ε` rescaling itself, so callers always pass
//! the unscaled `λ±` inside [`SwitchingParams`].
//!
//! The central objects are moment generating functions of the integral
//! process `Γ_t = ∫₀ᵗ γ(s) ds`, which fix the first two moments of `u` via
//! variation of constants. Three evaluation routes are provided:
//!
//! * [`mgf_closed_equal_rates`]: the cosh/sinh closed form for `λ+ = λ−`.
//! * [`mgf_series_distinct_rates`]: a sum over the number of transitions
//!   `n`, each term being a convolution of exponential holding densities
//!   evaluated through Kummer's `1F1`, with a certified tail bound.
//! * [`mgf_spectral`]: the exact Feynman–Kac value
//!   `exp(t (L + α diag γ)) 1` for the 2×2 generator, used as a fallback
//!   when the series cannot be certified at the requested truncation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_factorial, ln_hyp1f1};

/// One of the two values of the switching process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Stable mode, `γ = γ+ > 0`.
    Plus,
    /// Unstable mode, `γ = γ− < 0`.
    Minus,
}

impl Mode {
    pub const BOTH: [Mode; 2] = [Mode::Plus, Mode::Minus];

    pub fn other(self) -> Mode {
        match self {
            Mode::Plus => Mode::Minus,
            Mode::Minus => Mode::Plus,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Mode::Plus => 0,
            Mode::Minus => 1,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Mode::Plus => "+",
            Mode::Minus => "-",
        }
    }
}

/// Constants of the switching truth model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchingParams {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub epsilon: f64,
    pub sigma_u: f64,
}

impl SwitchingParams {
    pub fn new(
        gamma_plus: f64,
        gamma_minus: f64,
        lambda_plus: f64,
        lambda_minus: f64,
        epsilon: f64,
        sigma_u: f64,
    ) -> Result<Self> {
        let p = Self {
            gamma_plus,
            gamma_minus,
            lambda_plus,
            lambda_minus,
            epsilon,
            sigma_u,
        };
        p.validate()?;
        Ok(p)
    }

    /// The constants used throughout the benchmark study
    /// (`σ_u = 0.1549, γ± = 2.27 / −0.04, λ± = 1 / 2`) at the given `ε`.
    pub fn benchmark(epsilon: f64) -> Self {
        Self {
            gamma_plus: 2.27,
            gamma_minus: -0.04,
            lambda_plus: 1.0,
            lambda_minus: 2.0,
            epsilon,
            sigma_u: 0.1549,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.gamma_plus,
            self.gamma_minus,
            self.lambda_plus,
            self.lambda_minus,
            self.epsilon,
            self.sigma_u,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::param("switching", "all constants must be finite"));
        }
        if self.gamma_plus <= 0.0 {
            return Err(Error::param("gamma_plus", "must be > 0"));
        }
        if self.gamma_minus >= 0.0 {
            return Err(Error::param("gamma_minus", "must be < 0"));
        }
        if self.lambda_plus <= 0.0 {
            return Err(Error::param("lambda_plus", "must be > 0"));
        }
        if self.lambda_minus <= 0.0 {
            return Err(Error::param("lambda_minus", "must be > 0"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::param("epsilon", "must be > 0"));
        }
        if self.sigma_u <= 0.0 {
            return Err(Error::param("sigma_u", "must be > 0"));
        }
        Ok(())
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        self.epsilon = epsilon;
        self.validate()?;
        Ok(self)
    }

    pub fn gamma(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Plus => self.gamma_plus,
            Mode::Minus => self.gamma_minus,
        }
    }

    /// Unscaled switching intensity `λ±`.
    pub fn intensity(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Plus => self.lambda_plus,
            Mode::Minus => self.lambda_minus,
        }
    }

    /// Effective rate of leaving `mode`, `λ±/ε`.
    pub fn rate(&self, mode: Mode) -> f64 {
        self.intensity(mode) / self.epsilon
    }

    pub fn has_equal_rates(&self) -> bool {
        self.lambda_plus == self.lambda_minus
    }

    /// Stationary law `(λ−, λ+)/(λ− + λ+)` of the mode.
    pub fn stationary(&self) -> ModeDistribution {
        let total = self.lambda_plus + self.lambda_minus;
        ModeDistribution {
            p_plus: self.lambda_minus / total,
            p_minus: self.lambda_plus / total,
        }
    }

    /// Informational only: the interval of `α` on which the
    /// unconditioned-holding-time expansion has convergent geometric factors.
    /// The evaluators in this module do not require it.
    pub fn naive_alpha_window(&self) -> (f64, f64) {
        let d = self.gamma_plus - self.gamma_minus;
        (-self.rate(Mode::Minus) / d, self.rate(Mode::Plus) / d)
    }
}

/// Probability law of the mode at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDistribution {
    pub p_plus: f64,
    pub p_minus: f64,
}

impl ModeDistribution {
    pub fn new(p_plus: f64, p_minus: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_plus) || !(0.0..=1.0).contains(&p_minus) {
            return Err(Error::param(
                "mode_distribution",
                "probabilities must lie in [0, 1]",
            ));
        }
        if (p_plus + p_minus - 1.0).abs() > 1e-12 {
            return Err(Error::param(
                "mode_distribution",
                "probabilities must sum to 1",
            ));
        }
        Ok(Self { p_plus, p_minus })
    }

    /// Builds a distribution from nonnegative weights, normalizing them.
    pub fn from_weights(w_plus: f64, w_minus: f64) -> Result<Self> {
        let total = w_plus + w_minus;
        if !(total > 0.0) || w_plus < 0.0 || w_minus < 0.0 {
            return Err(Error::param(
                "mode_distribution",
                "weights must be nonnegative with positive sum",
            ));
        }
        let p_plus = w_plus / total;
        Ok(Self {
            p_plus,
            p_minus: 1.0 - p_plus,
        })
    }

    pub fn pure(mode: Mode) -> Self {
        match mode {
            Mode::Plus => Self {
                p_plus: 1.0,
                p_minus: 0.0,
            },
            Mode::Minus => Self {
                p_plus: 0.0,
                p_minus: 1.0,
            },
        }
    }

    pub fn prob(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Plus => self.p_plus,
            Mode::Minus => self.p_minus,
        }
    }
}

/// What the expectation `⟨e^{α(Γ_hi − Γ_lo)}⟩` is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// `γ₀` drawn from the given law.
    Unconditioned(ModeDistribution),
    /// `γ₀` fixed to one mode.
    Given(Mode),
}

impl Conditioning {
    pub fn initial_law(&self) -> ModeDistribution {
        match *self {
            Conditioning::Unconditioned(d) => d,
            Conditioning::Given(m) => ModeDistribution::pure(m),
        }
    }
}

/// A request for `⟨e^{α(Γ_{t_hi} − Γ_{t_lo})} | γ₀⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfRequest {
    pub alpha: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub conditioning: Conditioning,
}

impl MgfRequest {
    /// `⟨e^{αΓ_t} | γ₀ = mode⟩`.
    pub fn given(alpha: f64, t: f64, mode: Mode) -> Self {
        Self {
            alpha,
            t_lo: 0.0,
            t_hi: t,
            conditioning: Conditioning::Given(mode),
        }
    }

    /// `⟨e^{αΓ_t}⟩` with `γ₀ ~ init`.
    pub fn unconditioned(alpha: f64, t: f64, init: ModeDistribution) -> Self {
        Self {
            alpha,
            t_lo: 0.0,
            t_hi: t,
            conditioning: Conditioning::Unconditioned(init),
        }
    }

    pub fn increment(alpha: f64, t_lo: f64, t_hi: f64, conditioning: Conditioning) -> Self {
        Self {
            alpha,
            t_lo,
            t_hi,
            conditioning,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::param("alpha", "must be finite"));
        }
        if !(self.t_lo >= 0.0) || !self.t_lo.is_finite() {
            return Err(Error::param("t_lo", "must be finite and >= 0"));
        }
        if !(self.t_hi >= self.t_lo) || !self.t_hi.is_finite() {
            return Err(Error::param("t_hi", "must be finite and >= t_lo"));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.t_hi - self.t_lo
    }
}

/// Row-stochastic transition matrix `P(t)[from][to]`.
pub fn transition_matrix(params: &SwitchingParams, t: f64) -> [[f64; 2]; 2] {
    let lp = params.rate(Mode::Plus);
    let lm = params.rate(Mode::Minus);
    let total = lp + lm;
    // 1 - e^{-(λ+ + λ−)t}, without cancellation for small t.
    let decay = -(-total * t).exp_m1();
    let plus_leaves = lp / total * decay;
    let minus_leaves = lm / total * decay;
    [
        [1.0 - plus_leaves, plus_leaves],
        [minus_leaves, 1.0 - minus_leaves],
    ]
}

/// Law of `γ_t` given the law of `γ₀`.
pub fn transition_probs(
    params: &SwitchingParams,
    init: ModeDistribution,
    t: f64,
) -> Result<ModeDistribution> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::param("t", "must be finite and >= 0"));
    }
    let p = transition_matrix(params, t);
    let p_plus = init.p_plus * p[0][0] + init.p_minus * p[1][0];
    let p_minus = init.p_plus * p[0][1] + init.p_minus * p[1][1];
    let total = p_plus + p_minus;
    Ok(ModeDistribution {
        p_plus: p_plus / total,
        p_minus: p_minus / total,
    })
}

/// `(γ̄∞, Var(γ∞))` for the stationary two-point law.
pub fn stationary_mode_stats(params: &SwitchingParams) -> (f64, f64) {
    let (lp, lm) = (params.lambda_plus, params.lambda_minus);
    let total = lp + lm;
    let mean = (lm * params.gamma_plus + lp * params.gamma_minus) / total;
    let d = params.gamma_plus - params.gamma_minus;
    let var = lp * lm * d * d / (total * total);
    (mean, var)
}

/// Weight of the paths with exactly `n` transitions on `[0, t]`, starting in
/// the first mode, under exponential "killing" rates `decay_first`,
/// `decay_second` and jump intensities `rate_first`, `rate_second`.
///
/// With zero tilt (`decay = rate`) this is `P(N_t = n)`. With
/// `decay_i = rate_i − α γ_i` it is `⟨e^{αΓ_t}; N_t = n⟩`.
///
/// For `n ≥ 1` the first mode is occupied `P = ⌊n/2⌋ + 1` times and the
/// second `M = ⌈n/2⌉` times; the occupation-time convolution reduces to
/// `t^n/n! · e^{−d₂t} · 1F1(P; P+M; (d₂ − d₁)t)`.
fn path_weight(
    rate_first: f64,
    rate_second: f64,
    decay_first: f64,
    decay_second: f64,
    n: usize,
    t: f64,
) -> f64 {
    if n == 0 {
        return (-decay_first * t).exp();
    }
    if t == 0.0 {
        return 0.0;
    }
    let visits_first = n / 2 + 1;
    let visits_second = n.div_ceil(2);
    let jumps_first = n.div_ceil(2);
    let jumps_second = n / 2;
    let ln_rates = jumps_first as f64 * rate_first.ln() + jumps_second as f64 * rate_second.ln();
    let ln_conv = -decay_second * t + n as f64 * t.ln() - ln_factorial(n)
        + ln_hyp1f1(
            visits_first,
            visits_first + visits_second,
            (decay_second - decay_first) * t,
        );
    (ln_rates + ln_conv).exp()
}

/// `P(N_t = n | γ₀ = from)`, the law of the number of transitions on `(0, t]`.
pub fn prob_num_transitions(params: &SwitchingParams, n: usize, t: f64, from: Mode) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::param("t", "must be finite and >= 0"));
    }
    let r1 = params.rate(from);
    let r2 = params.rate(from.other());
    if params.has_equal_rates() {
        let x = r1 * t;
        if t == 0.0 {
            return Ok(if n == 0 { 1.0 } else { 0.0 });
        }
        return Ok((-x + n as f64 * x.ln() - ln_factorial(n)).exp());
    }
    Ok(path_weight(r1, r2, r1, r2, n, t))
}

/// Termwise bound on `P(N_t = n | γ₀ = from)` from the uniform-convergence
/// argument: for even `n` (starting in `+`)
/// `(λ−/λ+)^{n/2}(λ+t)^n/n! + (λ+/λ−)^{n/2+1}(λ−t)^{n+1}/(n+1)!`,
/// with the analogous odd-`n` form and the mode-swapped version for `from = −`.
pub fn transition_count_term_bound(params: &SwitchingParams, n: usize, t: f64, from: Mode) -> f64 {
    let l1 = params.rate(from);
    let l2 = params.rate(from.other());
    // n transitions: ⌈n/2⌉ completed first-mode sojourns, ⌊n/2⌋ second-mode.
    let second = (n / 2) as f64;
    let first_next = (n / 2 + 1) as f64;
    let nf = n as f64;
    let a = second * (l2 / l1).ln() + nf * (l1 * t).ln() - ln_factorial(n);
    let b = first_next * (l1 / l2).ln() + (nf + 1.0) * (l2 * t).ln() - ln_factorial(n + 1);
    if t == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    a.exp() + b.exp()
}

/// A truncated series value with its certified truncation bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesMgf {
    pub value: f64,
    /// Rigorous upper bound on the neglected tail.
    pub tail_bound: f64,
    pub terms: usize,
}

/// Conditional MGF `⟨e^{αΓ_τ} | γ₀ = mode⟩` summed over `n < n_terms`.
fn series_kernel(
    params: &SwitchingParams,
    alpha: f64,
    tau: f64,
    mode: Mode,
    n_terms: usize,
) -> SeriesMgf {
    let r1 = params.rate(mode);
    let r2 = params.rate(mode.other());
    let d1 = r1 - alpha * params.gamma(mode);
    let d2 = r2 - alpha * params.gamma(mode.other());
    let value: f64 = (0..n_terms)
        .map(|n| path_weight(r1, r2, d1, d2, n, tau))
        .sum();
    SeriesMgf {
        value,
        tail_bound: series_tail_bound(r1, r2, d1.min(d2), tau, n_terms),
        terms: n_terms,
    }
}

/// Bound on `Σ_{n ≥ terms}` of the tilted path weights: each term is at most
/// `c · e^{−d_min τ} (√(r₁r₂) τ)^n / n!` with `c = max(1, √(r₁/r₂))`.
fn series_tail_bound(r1: f64, r2: f64, decay_min: f64, tau: f64, terms: usize) -> f64 {
    if tau == 0.0 {
        return 0.0;
    }
    let x = (r1 * r2).sqrt() * tau;
    let ln_c = (0.5 * (r1 / r2).ln()).max(0.0) - decay_min * tau;
    let n = terms as f64;
    let ln_tail = if n + 1.0 > x {
        n * x.ln() - ln_factorial(terms) + ((n + 1.0) / (n + 1.0 - x)).ln()
    } else {
        x
    };
    (ln_c + ln_tail).exp()
}

/// Closed-form conditional MGF for `λ+ = λ− = λ`:
/// `e^{cτ}(cosh Dτ + (±δ + l) sinh(Dτ)/D)` with `l = λ/ε`,
/// `δ = α(γ+ − γ−)/2`, `c = α(γ+ + γ−)/2 − l`, `D = √(δ² + l²)`.
fn closed_kernel(params: &SwitchingParams, alpha: f64, tau: f64, mode: Mode) -> f64 {
    let l = params.rate(Mode::Plus);
    let delta = 0.5 * alpha * (params.gamma_plus - params.gamma_minus);
    let c = 0.5 * alpha * (params.gamma_plus + params.gamma_minus) - l;
    let d = (delta * delta + l * l).sqrt();
    let k = match mode {
        Mode::Plus => delta + l,
        Mode::Minus => -delta + l,
    };
    let dt = d * tau;
    if dt < 700.0 {
        (c * tau).exp() * (dt.cosh() + k / d * dt.sinh())
    } else {
        0.5 * ((c + d) * tau).exp() * (1.0 + k / d)
    }
}

/// Exact conditional MGF from the 2×2 Feynman–Kac exponential.
fn spectral_kernel(params: &SwitchingParams, alpha: f64, tau: f64, mode: Mode) -> f64 {
    let rp = params.rate(Mode::Plus);
    let rm = params.rate(Mode::Minus);
    let a11 = alpha * params.gamma_plus - rp;
    let a22 = alpha * params.gamma_minus - rm;
    let c = 0.5 * (a11 + a22);
    let h = 0.5 * (a11 - a22);
    let d = (h * h + rp * rm).sqrt();
    let k = match mode {
        Mode::Plus => h + rp,
        Mode::Minus => -h + rm,
    };
    let r = k / d;
    0.5 * ((c + d) * tau).exp() * ((1.0 + r) + (1.0 - r) * (-2.0 * d * tau).exp())
}

/// Mixes mode-conditioned kernels over the law of `γ_{t_lo}`.
fn mix_over_start(
    params: &SwitchingParams,
    req: &MgfRequest,
    mut kernel: impl FnMut(Mode, f64) -> Result<f64>,
) -> Result<f64> {
    req.validate()?;
    let tau = req.duration();
    if tau == 0.0 {
        return Ok(1.0);
    }
    let start = transition_probs(params, req.conditioning.initial_law(), req.t_lo)?;
    let mut acc = 0.0;
    for mode in Mode::BOTH {
        let p = start.prob(mode);
        if p > 0.0 {
            acc += p * kernel(mode, tau)?;
        }
    }
    Ok(acc)
}

/// Closed-form MGF; requires `λ+ = λ−` exactly.
///
/// For `t_lo > 0` the mode at `t_lo` is obtained from [`transition_probs`]
/// and the kernel is applied over the remaining duration.
pub fn mgf_closed_equal_rates(params: &SwitchingParams, req: &MgfRequest) -> Result<f64> {
    if !params.has_equal_rates() {
        return Err(Error::param(
            "lambda",
            "closed form requires lambda_plus == lambda_minus",
        ));
    }
    mix_over_start(params, req, |mode, tau| {
        Ok(closed_kernel(params, req.alpha, tau, mode))
    })
}

/// Series MGF truncated to `n_terms` transition counts, with its tail bound.
pub fn mgf_series_distinct_rates(
    params: &SwitchingParams,
    req: &MgfRequest,
    n_terms: usize,
) -> Result<SeriesMgf> {
    if n_terms == 0 {
        return Err(Error::param("n_terms", "must be >= 1"));
    }
    let mut bound = 0.0;
    let value = mix_over_start(params, req, |mode, tau| {
        let s = series_kernel(params, req.alpha, tau, mode, n_terms);
        bound += s.tail_bound;
        Ok(s.value)
    })?;
    Ok(SeriesMgf {
        value,
        tail_bound: bound,
        terms: n_terms,
    })
}

/// Like [`mgf_series_distinct_rates`] but fails with
/// [`Error::TruncationNotCertified`] when the tail bound exceeds `tolerance`.
pub fn mgf_series_certified(
    params: &SwitchingParams,
    req: &MgfRequest,
    n_terms: usize,
    tolerance: f64,
) -> Result<SeriesMgf> {
    let s = mgf_series_distinct_rates(params, req, n_terms)?;
    if s.tail_bound > tolerance {
        return Err(Error::TruncationNotCertified {
            bound: s.tail_bound,
            tolerance,
            terms: n_terms,
        });
    }
    Ok(s)
}

/// Exact MGF via the 2×2 matrix exponential.
pub fn mgf_spectral(params: &SwitchingParams, req: &MgfRequest) -> Result<f64> {
    mix_over_start(params, req, |mode, tau| {
        Ok(spectral_kernel(params, req.alpha, tau, mode))
    })
}

/// Evaluation route for the switching-process MGFs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MgfEngine {
    /// Closed form for equal rates; otherwise the series, grown from
    /// `n_terms` until its tail bound is below `1e-12` of the value, with the
    /// spectral form as fallback when that would need too many terms.
    Auto { n_terms: usize },
    /// Fixed-length series, no certification.
    Series { n_terms: usize },
    /// Exact spectral form.
    Spectral,
}

impl Default for MgfEngine {
    fn default() -> Self {
        MgfEngine::Auto { n_terms: 30 }
    }
}

const AUTO_RELATIVE_TOL: f64 = 1e-12;
const AUTO_MAX_TERMS: usize = 400;

/// `⟨e^{αΓ_τ} | γ₀ = mode⟩` through the chosen engine.
pub fn conditional_mgf(
    params: &SwitchingParams,
    alpha: f64,
    tau: f64,
    mode: Mode,
    engine: MgfEngine,
) -> f64 {
    if tau == 0.0 {
        return 1.0;
    }
    match engine {
        MgfEngine::Spectral => spectral_kernel(params, alpha, tau, mode),
        MgfEngine::Series { n_terms } => series_kernel(params, alpha, tau, mode, n_terms).value,
        MgfEngine::Auto { n_terms } => {
            if params.has_equal_rates() {
                return closed_kernel(params, alpha, tau, mode);
            }
            let x = (params.rate(Mode::Plus) * params.rate(Mode::Minus)).sqrt() * tau;
            if x > 60.0 {
                return spectral_kernel(params, alpha, tau, mode);
            }
            let mut terms = n_terms.max(1);
            loop {
                let s = series_kernel(params, alpha, tau, mode, terms);
                if s.tail_bound <= AUTO_RELATIVE_TOL * s.value {
                    return s.value;
                }
                if terms >= AUTO_MAX_TERMS {
                    return spectral_kernel(params, alpha, tau, mode);
                }
                terms = (terms + terms / 2).min(AUTO_MAX_TERMS);
            }
        }
    }
}

/// `⟨e^{α(Γ_{t_hi} − Γ_{t_lo})}⟩`, conditioned as requested, combining the
/// law of `γ_{t_lo}` with mode-conditioned MGFs over `t_hi − t_lo`.
pub fn mgf_increment(params: &SwitchingParams, req: &MgfRequest, engine: MgfEngine) -> Result<f64> {
    mix_over_start(params, req, |mode, tau| {
        Ok(conditional_mgf(params, req.alpha, tau, mode, engine))
    })
}

/// Which asymptotic expansion to use in [`mgf_asymptotic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsymptoticRegime {
    /// Rapid switching, `ε ≪ 1`.
    SmallEps,
    /// Rare switching, `ε ≫ 1`.
    LargeEps,
}

/// Asymptotic MGF of the increment over `[t_lo, t_hi]`.
///
/// Small `ε`: `exp(αγ̄∞τ + α²Kτε + α(p₊(γ+−γ−)/(4λ+) + p₋(γ−−γ+)/(4λ−))ε)`
/// with `K = (3/8)(γ−−γ+)²(λ−²+λ+²)/(λ−λ+(λ++λ−))` and `p±` the law of `γ₀`.
///
/// Large `ε`: only the no-transition term, `Σ± P(γ_{t_lo}=±) e^{αγ±τ − λ±τ/ε}`.
pub fn mgf_asymptotic(
    params: &SwitchingParams,
    req: &MgfRequest,
    regime: AsymptoticRegime,
) -> Result<f64> {
    req.validate()?;
    let tau = req.duration();
    let alpha = req.alpha;
    let eps = params.epsilon;
    let init = req.conditioning.initial_law();
    match regime {
        AsymptoticRegime::SmallEps => {
            let (lp, lm) = (params.lambda_plus, params.lambda_minus);
            let (gp, gm) = (params.gamma_plus, params.gamma_minus);
            let (mean, _) = stationary_mode_stats(params);
            let k = 3.0 / 8.0 * (gm - gp).powi(2) * (lm * lm + lp * lp) / (lm * lp * (lp + lm));
            let initial =
                init.p_plus * (gp - gm) / (4.0 * lp) + init.p_minus * (gm - gp) / (4.0 * lm);
            Ok((alpha * mean * tau + alpha * alpha * k * tau * eps + alpha * initial * eps).exp())
        }
        AsymptoticRegime::LargeEps => {
            let start = transition_probs(params, init, req.t_lo)?;
            Ok(Mode::BOTH
                .iter()
                .map(|&m| {
                    start.prob(m) * (alpha * params.gamma(m) * tau - params.rate(m) * tau).exp()
                })
                .sum())
        }
    }
}
