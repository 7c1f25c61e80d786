//! Exact simulation of the switching truth model and its observations.
//!
//! Mode switches are drawn from their exponential holding laws and `u` is
//! advanced between events with the exact Ornstein–Uhlenbeck transition, so
//! no time-discretization bias enters any Monte Carlo estimate.
//!
//! Every path owns an independent ChaCha stream keyed by `(seed, index)`, and
//! Monte Carlo sums are reduced over fixed-size chunks in index order, so
//! results do not depend on the number of worker threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::Gaussian1;
use crate::special::one_minus_exp_neg_over;
use crate::switching::{Conditioning, Mode, ModeDistribution, SwitchingParams};

/// Paths per reduction chunk; fixed so reductions are thread-count independent.
const CHUNK: usize = 4096;

/// Independent random stream for path `index` under master `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Observation noise and schedule: `y_n = u(nT) + η_n`, `η_n ~ N(0, R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    /// Noise variance `R`.
    pub r: f64,
    /// Time between observations `T`.
    pub interval: f64,
}

impl ObservationModel {
    pub fn new(r: f64, interval: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::param("r", "observation noise variance must be > 0"));
        }
        if !(interval > 0.0) || !interval.is_finite() {
            return Err(Error::param("interval", "observation interval must be > 0"));
        }
        Ok(Self { r, interval })
    }
}

/// One simulated truth trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPath {
    /// Event times in `(0, horizon]`, strictly increasing.
    pub switch_times: Vec<f64>,
    /// Mode on each inter-event interval; `modes.len() == switch_times.len() + 1`.
    pub modes: Vec<Mode>,
    pub sample_times: Vec<f64>,
    pub u_samples: Vec<f64>,
    pub horizon: f64,
    pub seed: u64,
}

impl TruthPath {
    /// Mode in force at time `t` (right-continuous).
    pub fn mode_at(&self, t: f64) -> Mode {
        let k = self.switch_times.partition_point(|&s| s <= t);
        self.modes[k]
    }

    /// `u` at a recorded sample time.
    pub fn u_at(&self, t: f64) -> Option<f64> {
        let tol = 1e-12 * t.abs().max(1.0);
        self.sample_times
            .iter()
            .position(|&s| (s - t).abs() <= tol)
            .map(|i| self.u_samples[i])
    }

    /// Writes `t,u,mode` rows for every sample time.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "t,u,mode")?;
        for (t, u) in self.sample_times.iter().zip(&self.u_samples) {
            writeln!(out, "{t},{u},{}", self.mode_at(*t).symbol())?;
        }
        Ok(())
    }
}

fn check_dynamics(params: &SwitchingParams) -> Result<()> {
    let ok = params.lambda_plus > 0.0
        && params.lambda_minus > 0.0
        && params.epsilon > 0.0
        && params.sigma_u >= 0.0
        && params.gamma_plus.is_finite()
        && params.gamma_minus.is_finite();
    if ok {
        Ok(())
    } else {
        Err(Error::param(
            "switching",
            "rates and epsilon must be > 0, sigma_u >= 0",
        ))
    }
}

/// Exact OU transition over `dt` with constant rate `gamma`.
fn ou_step(u: f64, gamma: f64, sigma: f64, dt: f64, rng: &mut impl Rng) -> f64 {
    if dt <= 0.0 {
        return u;
    }
    let mean = u * (-gamma * dt).exp();
    if sigma == 0.0 {
        return mean;
    }
    // σ²(1 − e^{−2γΔ})/(2γ) with the γ → 0 limit σ²Δ handled by the helper.
    let var = sigma * sigma * dt * one_minus_exp_neg_over(2.0 * gamma * dt);
    let z: f64 = StandardNormal.sample(rng);
    mean + var.sqrt() * z
}

fn holding_time(params: &SwitchingParams, mode: Mode, rng: &mut impl Rng) -> f64 {
    let e: f64 = Exp1.sample(rng);
    e / params.rate(mode)
}

fn draw_mode(dist: ModeDistribution, rng: &mut impl Rng) -> Mode {
    if rng.random::<f64>() < dist.p_plus {
        Mode::Plus
    } else {
        Mode::Minus
    }
}

/// Simulates one path from `(u0, mode0)` and records `u` at `sample_times`.
pub fn sample_path(
    params: &SwitchingParams,
    u0: f64,
    mode0: Mode,
    horizon: f64,
    sample_times: &[f64],
    seed: u64,
) -> Result<TruthPath> {
    check_dynamics(params)?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::param("horizon", "must be finite and > 0"));
    }
    if sample_times.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
        return Err(Error::param("sample_times", "must lie in [0, horizon]"));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("sample_times", "must be sorted"));
    }
    let mut rng = path_rng(seed, 0);
    let mut switch_times = Vec::new();
    let mut modes = vec![mode0];
    let mut u_samples = Vec::with_capacity(sample_times.len());
    let (mut t, mut u, mut mode) = (0.0, u0, mode0);
    let mut next_switch = holding_time(params, mode, &mut rng);
    for &s in sample_times {
        while next_switch <= s {
            u = ou_step(
                u,
                params.gamma(mode),
                params.sigma_u,
                next_switch - t,
                &mut rng,
            );
            t = next_switch;
            mode = mode.other();
            switch_times.push(t);
            modes.push(mode);
            next_switch = t + holding_time(params, mode, &mut rng);
        }
        u = ou_step(u, params.gamma(mode), params.sigma_u, s - t, &mut rng);
        t = s;
        u_samples.push(u);
    }
    while next_switch <= horizon {
        mode = mode.other();
        switch_times.push(next_switch);
        modes.push(mode);
        next_switch += holding_time(params, mode, &mut rng);
    }
    Ok(TruthPath {
        switch_times,
        modes,
        sample_times: sample_times.to_vec(),
        u_samples,
        horizon,
        seed,
    })
}

/// Observation `y_n = u(nT) + η_n`; the noise draw depends only on `(seed, n)`.
pub fn observe(path: &TruthPath, obs: &ObservationModel, n: usize, seed: u64) -> Result<f64> {
    let t = n as f64 * obs.interval;
    let u = path
        .u_at(t)
        .ok_or_else(|| Error::InvalidInput(format!("no sample recorded at t = {t}")))?;
    let mut rng = path_rng(seed, n as u64);
    let z: f64 = StandardNormal.sample(&mut rng);
    Ok(u + obs.r.sqrt() * z)
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// Whether `x` lies within `k` standard errors of the estimate.
    pub fn brackets(&self, x: f64, k: f64) -> bool {
        (x - self.value).abs() <= k * self.se
    }
}

/// Running power sums for mean/variance estimates with standard errors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentAccumulator {
    n: f64,
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
    shift: f64,
}

impl MomentAccumulator {
    /// Accumulates `x − shift`; a shift near the mean limits cancellation.
    pub fn with_shift(shift: f64) -> Self {
        Self {
            shift,
            ..Self::default()
        }
    }

    pub fn push(&mut self, x: f64) {
        let d = x - self.shift;
        let d2 = d * d;
        self.n += 1.0;
        self.s1 += d;
        self.s2 += d2;
        self.s3 += d2 * d;
        self.s4 += d2 * d2;
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.shift, other.shift);
        self.n += other.n;
        self.s1 += other.s1;
        self.s2 += other.s2;
        self.s3 += other.s3;
        self.s4 += other.s4;
    }

    pub fn count(&self) -> f64 {
        self.n
    }

    pub fn mean(&self) -> Estimate {
        let n = self.n;
        let m = self.s1 / n;
        let var = (self.s2 / n - m * m) * n / (n - 1.0);
        Estimate {
            value: m + self.shift,
            se: (var / n).sqrt(),
        }
    }

    /// Unbiased sample variance; the SE uses the fourth central moment.
    pub fn variance(&self) -> Estimate {
        let n = self.n;
        let m = self.s1 / n;
        let c2 = self.s2 / n - m * m;
        let c4 = self.s4 / n - 4.0 * m * self.s3 / n + 6.0 * m * m * self.s2 / n - 3.0 * m.powi(4);
        Estimate {
            value: c2 * n / (n - 1.0),
            se: ((c4 - c2 * c2).max(0.0) / n).sqrt(),
        }
    }
}

/// Sums `per_path` over `n_paths` independent streams with a deterministic
/// chunked reduction.
pub fn reduce_paths<A, F>(n_paths: usize, seed: u64, init: A, per_path: F) -> A
where
    A: Clone + Send + Sync + Merge,
    F: Fn(&mut ChaCha8Rng, &mut A) + Sync,
{
    let chunks = n_paths.div_ceil(CHUNK);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init.clone();
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_paths);
            for i in lo..hi {
                let mut rng = path_rng(seed, i as u64);
                per_path(&mut rng, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = init;
    for p in &parts {
        total.merge_from(p);
    }
    total
}

/// Combination of partial Monte Carlo sums.
pub trait Merge {
    fn merge_from(&mut self, other: &Self);
}

impl Merge for MomentAccumulator {
    fn merge_from(&mut self, other: &Self) {
        self.merge(other);
    }
}

impl<const N: usize> Merge for [MomentAccumulator; N] {
    fn merge_from(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            a.merge(b);
        }
    }
}

/// Monte Carlo moments of `u_T`, overall and conditioned on `γ₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McMoments {
    pub mean: Estimate,
    pub variance: Estimate,
    /// `(⟨u_T|γ₀=+⟩, Var(u_T|γ₀=+))`; `None` when no path started in `+`.
    pub plus: Option<(Estimate, Estimate)>,
    pub minus: Option<(Estimate, Estimate)>,
    pub n_paths: usize,
}

/// Advances `(u, mode)` over `[0, t]` by exact event-driven simulation.
fn evolve(
    params: &SwitchingParams,
    mut u: f64,
    mut mode: Mode,
    t: f64,
    rng: &mut impl Rng,
) -> (f64, Mode) {
    let mut now = 0.0;
    loop {
        let next = now + holding_time(params, mode, rng);
        if next >= t {
            return (
                ou_step(u, params.gamma(mode), params.sigma_u, t - now, rng),
                mode,
            );
        }
        u = ou_step(u, params.gamma(mode), params.sigma_u, next - now, rng);
        now = next;
        mode = mode.other();
    }
}

/// Monte Carlo moments of `u_T` with `u₀ ~ u0`, `γ₀ ~ mode0` independent.
pub fn mc_moments(
    params: &SwitchingParams,
    u0: Gaussian1,
    mode0: ModeDistribution,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McMoments> {
    check_dynamics(params)?;
    if n_paths < 1000 {
        return Err(Error::param("n_paths", "must be >= 1000"));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::param("t", "must be finite and >= 0"));
    }
    let init = [MomentAccumulator::with_shift(u0.mean); 3];
    let acc = reduce_paths(n_paths, seed, init, |rng, acc| {
        let mode = draw_mode(mode0, rng);
        let z: f64 = StandardNormal.sample(rng);
        let u = u0.mean + u0.var.sqrt() * z;
        let (ut, _) = evolve(params, u, mode, t, rng);
        acc[0].push(ut);
        acc[1 + mode.index()].push(ut);
    });
    let cond = |a: &MomentAccumulator| (a.count() >= 2.0).then(|| (a.mean(), a.variance()));
    Ok(McMoments {
        mean: acc[0].mean(),
        variance: acc[0].variance(),
        plus: cond(&acc[1]),
        minus: cond(&acc[2]),
        n_paths,
    })
}

/// Monte Carlo estimate of `⟨e^{α(Γ_{t_hi} − Γ_{t_lo})}⟩` for each `α`,
/// sharing one set of simulated mode paths.
pub fn mc_gamma_integral_mgf(
    params: &SwitchingParams,
    alphas: &[f64],
    t_lo: f64,
    t_hi: f64,
    conditioning: Conditioning,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    check_dynamics(params)?;
    if !(t_lo >= 0.0) || !(t_hi >= t_lo) || !t_hi.is_finite() {
        return Err(Error::param("t", "requires 0 <= t_lo <= t_hi"));
    }
    if n_paths < 2 {
        return Err(Error::param("n_paths", "must be >= 2"));
    }
    let law = conditioning.initial_law();
    let init = vec![MomentAccumulator::default(); alphas.len()];
    let acc = reduce_paths(n_paths, seed, AccVec(init), |rng, acc| {
        let mut mode = draw_mode(law, rng);
        let mut now = 0.0;
        let mut integral = 0.0;
        while now < t_hi {
            let next = (now + holding_time(params, mode, rng)).min(t_hi);
            let overlap = (next.min(t_hi) - now.max(t_lo)).max(0.0);
            integral += params.gamma(mode) * overlap;
            now = next;
            mode = mode.other();
        }
        for (a, &alpha) in acc.0.iter_mut().zip(alphas) {
            a.push((alpha * integral).exp());
        }
    });
    Ok(acc.0.iter().map(|a| a.mean()).collect())
}

/// Vector of accumulators with elementwise merging.
#[derive(Debug, Clone)]
pub struct AccVec(pub Vec<MomentAccumulator>);

impl Merge for AccVec {
    fn merge_from(&mut self, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.merge(b);
        }
    }
}
