//! Gaussian and Gaussian-mixture beliefs with Kalman analysis.
//!
//! Scalar beliefs ([`Gaussian1`]) describe `u`; bivariate beliefs
//! ([`Gaussian2`]) describe the joint `(u, γ)` state of the DSM filters. The
//! observation operator always picks the `u` component.

use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::trapezoid;
use crate::switching::Mode;

fn check_noise(r: f64) -> Result<()> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::param(
            "R",
            "observation noise variance must be finite and > 0",
        ));
    }
    Ok(())
}

fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

/// Scalar Gaussian `N(mean, var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian1 {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian1 {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite mean {mean}")));
        }
        if !(var >= 0.0) || !var.is_finite() {
            return Err(Error::InvalidInput(format!(
                "variance must be finite and >= 0, got {var}"
            )));
        }
        Ok(Self { mean, var })
    }

    /// Density at `x`; a point mass has density zero away from its mean.
    pub fn pdf(&self, x: f64) -> f64 {
        if self.var == 0.0 {
            return if x == self.mean { f64::INFINITY } else { 0.0 };
        }
        normal_ln_pdf(x, self.mean, self.var).exp()
    }

    pub fn std_dev(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Bivariate Gaussian over `(u, γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian2 {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl Gaussian2 {
    /// Validates and, if needed, repairs the covariance (see [`repair_psd`]).
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        if !mean.iter().all(|m| m.is_finite()) {
            return Err(Error::InvalidInput("non-finite mean".into()));
        }
        Ok(Self {
            mean,
            cov: repair_psd(cov)?,
        })
    }

    /// Independent `u` and `γ` marginals.
    pub fn independent(u: Gaussian1, gamma: Gaussian1) -> Self {
        Self {
            mean: [u.mean, gamma.mean],
            cov: [[u.var, 0.0], [0.0, gamma.var]],
        }
    }

    pub fn u_marginal(&self) -> Gaussian1 {
        Gaussian1 {
            mean: self.mean[0],
            var: self.cov[0][0],
        }
    }

    pub fn gamma_marginal(&self) -> Gaussian1 {
        Gaussian1 {
            mean: self.mean[1],
            var: self.cov[1][1],
        }
    }

    pub fn cross_cov(&self) -> f64 {
        self.cov[0][1]
    }
}

/// Symmetrizes a 2×2 covariance and clips slightly negative eigenvalues.
///
/// Eigenvalues below `−1e-12 · trace` are rejected.
pub fn repair_psd(cov: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let a = cov[0][0];
    let d = cov[1][1];
    let b = 0.5 * (cov[0][1] + cov[1][0]);
    if ![a, b, d].iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite covariance".into()));
    }
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let lo = half_tr - disc;
    let hi = half_tr + disc;
    let scale = (a.abs() + d.abs()).max(f64::MIN_POSITIVE);
    if lo < -1e-12 * scale {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lo });
    }
    if lo >= 0.0 && a >= 0.0 && d >= 0.0 {
        return Ok([[a, b], [b, d]]);
    }
    // Rebuild with the small negative eigenvalue set to zero: the matrix
    // becomes hi · v vᵀ for the leading unit eigenvector v.
    let hi = hi.max(0.0);
    let (vx, vy) = if b != 0.0 {
        let (x, y) = (hi - d, b);
        let n = (x * x + y * y).sqrt();
        (x / n, y / n)
    } else if a >= d {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let off = hi * vx * vy;
    Ok([[hi * vx * vx, off], [off, hi * vy * vy]])
}

/// Scalar Kalman analysis. Returns the posterior and the marginal likelihood
/// `N(y; m, v + R)`.
pub fn kalman_update(prior: &Gaussian1, y: f64, r: f64) -> Result<(Gaussian1, f64)> {
    let (post, ln_lik) = kalman_update_ln(prior, y, r)?;
    Ok((post, ln_lik.exp()))
}

/// As [`kalman_update`], with the log marginal likelihood.
pub fn kalman_update_ln(prior: &Gaussian1, y: f64, r: f64) -> Result<(Gaussian1, f64)> {
    check_noise(r)?;
    let s = prior.var + r;
    let gain = prior.var / s;
    let post = Gaussian1 {
        mean: prior.mean + gain * (y - prior.mean),
        var: prior.var * r / s,
    };
    Ok((post, normal_ln_pdf(y, prior.mean, s)))
}

/// Joint Kalman analysis of `(u, γ)` with `H = (1, 0)`.
pub fn joint_kalman_update(prior: &Gaussian2, y: f64, r: f64) -> Result<Gaussian2> {
    Ok(joint_kalman_update_ln(prior, y, r)?.0)
}

/// As [`joint_kalman_update`], with the log marginal likelihood of `y`.
pub fn joint_kalman_update_ln(prior: &Gaussian2, y: f64, r: f64) -> Result<(Gaussian2, f64)> {
    check_noise(r)?;
    let p = prior.cov;
    let s = p[0][0] + r;
    let k = [p[0][0] / s, p[1][0] / s];
    let innov = y - prior.mean[0];
    let mean = [prior.mean[0] + k[0] * innov, prior.mean[1] + k[1] * innov];
    let cov = [
        [p[0][0] - k[0] * p[0][0], p[0][1] - k[0] * p[0][1]],
        [p[1][0] - k[1] * p[0][0], p[1][1] - k[1] * p[0][1]],
    ];
    let post = Gaussian2 {
        mean,
        cov: repair_psd(cov)?,
    };
    Ok((post, normal_ln_pdf(y, prior.mean[0], s)))
}

/// Operations shared by scalar and joint kernels.
pub trait KernelState: Clone + std::fmt::Debug {
    /// Kalman analysis returning the posterior and the log marginal likelihood.
    fn analyze(&self, y: f64, r: f64) -> Result<(Self, f64)>;
    fn u_marginal(&self) -> Gaussian1;
    /// Single kernel with the exact first two moments of the weighted set.
    fn moment_match(parts: &[(f64, &Self)]) -> Self;
}

impl KernelState for Gaussian1 {
    fn analyze(&self, y: f64, r: f64) -> Result<(Self, f64)> {
        kalman_update_ln(self, y, r)
    }

    fn u_marginal(&self) -> Gaussian1 {
        *self
    }

    fn moment_match(parts: &[(f64, &Self)]) -> Self {
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        let mean = parts.iter().map(|(w, g)| w * g.mean).sum::<f64>() / total;
        // Law of total variance written around the mixture mean.
        let var = parts
            .iter()
            .map(|(w, g)| w * (g.var + (g.mean - mean).powi(2)))
            .sum::<f64>()
            / total;
        Gaussian1 { mean, var }
    }
}

impl KernelState for Gaussian2 {
    fn analyze(&self, y: f64, r: f64) -> Result<(Self, f64)> {
        joint_kalman_update_ln(self, y, r)
    }

    fn u_marginal(&self) -> Gaussian1 {
        Gaussian2::u_marginal(self)
    }

    fn moment_match(parts: &[(f64, &Self)]) -> Self {
        let total: f64 = parts.iter().map(|(w, _)| w).sum();
        let mut mean = [0.0; 2];
        for (w, g) in parts {
            for (m, gm) in mean.iter_mut().zip(g.mean) {
                *m += w * gm / total;
            }
        }
        let mut cov = [[0.0; 2]; 2];
        for (w, g) in parts {
            let d = [g.mean[0] - mean[0], g.mean[1] - mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += w * (g.cov[i][j] + d[i] * d[j]) / total;
                }
            }
        }
        cov[1][0] = cov[0][1];
        Gaussian2 { mean, cov }
    }
}

/// One weighted component of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureKernel<G> {
    pub weight: f64,
    pub dist: G,
    pub mode: Option<Mode>,
}

/// Weighted sum of Gaussian kernels, optionally labelled by mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture<G> {
    kernels: Vec<MixtureKernel<G>>,
}

impl<G: KernelState> GaussianMixture<G> {
    /// Validates weights (nonnegative, summing to one within `1e-12`).
    pub fn new(kernels: Vec<MixtureKernel<G>>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::InvalidInput(
                "mixture needs at least one kernel".into(),
            ));
        }
        if kernels
            .iter()
            .any(|k| !(k.weight >= 0.0) || !k.weight.is_finite())
        {
            return Err(Error::InvalidInput(
                "mixture weights must be finite and >= 0".into(),
            ));
        }
        let total: f64 = kernels.iter().map(|k| k.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(Self { kernels })
    }

    /// Builds a mixture from unnormalized weights.
    pub fn from_unnormalized(mut kernels: Vec<MixtureKernel<G>>) -> Result<Self> {
        let total: f64 = kernels.iter().map(|k| k.weight).sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidInput(
                "mixture weights must have a positive finite sum".into(),
            ));
        }
        for k in &mut kernels {
            k.weight /= total;
        }
        Self::new(kernels)
    }

    pub fn single(dist: G, mode: Option<Mode>) -> Self {
        Self {
            kernels: vec![MixtureKernel {
                weight: 1.0,
                dist,
                mode,
            }],
        }
    }

    pub fn kernels(&self) -> &[MixtureKernel<G>] {
        &self.kernels
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.kernels.iter().map(|k| k.weight).collect()
    }

    /// Kernel carrying `mode`, if any.
    pub fn kernel_for(&self, mode: Mode) -> Option<&MixtureKernel<G>> {
        self.kernels.iter().find(|k| k.mode == Some(mode))
    }

    /// Total weight of kernels labelled `mode`.
    pub fn mode_weight(&self, mode: Mode) -> f64 {
        self.kernels
            .iter()
            .filter(|k| k.mode == Some(mode))
            .map(|k| k.weight)
            .sum()
    }

    /// Applies `f` to every kernel's distribution, keeping weights and labels.
    pub fn try_map(&self, mut f: impl FnMut(&MixtureKernel<G>) -> Result<G>) -> Result<Self> {
        let kernels = self
            .kernels
            .iter()
            .map(|k| {
                Ok(MixtureKernel {
                    weight: k.weight,
                    dist: f(k)?,
                    mode: k.mode,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kernels })
    }

    /// Density of the `u` marginal at `x`.
    pub fn u_pdf(&self, x: f64) -> f64 {
        self.kernels
            .iter()
            .filter(|k| k.weight > 0.0)
            .map(|k| k.weight * k.dist.u_marginal().pdf(x))
            .sum()
    }

    pub fn u_moment_match(&self) -> Gaussian1 {
        moment_match(self).u_marginal()
    }
}

/// Parallel Kalman analysis of every kernel with likelihood reweighting.
///
/// Weights are updated in log space. If every likelihood underflows the
/// weights fall back to uniform over the kernels that had positive weight.
pub fn mixture_update<G: KernelState>(
    prior: &GaussianMixture<G>,
    y: f64,
    r: f64,
) -> Result<GaussianMixture<G>> {
    check_noise(r)?;
    let mut posts = Vec::with_capacity(prior.len());
    let mut ln_w = Vec::with_capacity(prior.len());
    for k in prior.kernels() {
        let (post, ln_lik) = k.dist.analyze(y, r)?;
        posts.push(post);
        ln_w.push(if k.weight > 0.0 {
            k.weight.ln() + ln_lik
        } else {
            f64::NEG_INFINITY
        });
    }
    let max = ln_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = if max.is_finite() {
        let raw: Vec<f64> = ln_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    } else {
        warn!("all mixture likelihoods underflowed at y = {y}; reweighting uniformly");
        let live = prior
            .kernels()
            .iter()
            .filter(|k| k.weight > 0.0)
            .count()
            .max(1);
        prior
            .kernels()
            .iter()
            .map(|k| {
                if k.weight > 0.0 || prior.len() == 1 {
                    1.0 / live as f64
                } else {
                    0.0
                }
            })
            .collect()
    };
    let kernels = prior
        .kernels()
        .iter()
        .zip(posts)
        .zip(weights)
        .map(|((k, dist), weight)| MixtureKernel {
            weight,
            dist,
            mode: k.mode,
        })
        .collect();
    Ok(GaussianMixture { kernels })
}

/// Single Gaussian with the mixture's exact mean and covariance.
pub fn moment_match<G: KernelState>(mix: &GaussianMixture<G>) -> G {
    let parts: Vec<(f64, &G)> = mix.kernels().iter().map(|k| (k.weight, &k.dist)).collect();
    G::moment_match(&parts)
}

/// How many kernels survive an analysis step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "max")]
pub enum ReductionPolicy {
    /// Project onto one Gaussian after every analysis.
    #[default]
    SingleGaussian,
    /// Keep at most this many kernels, merging the two lightest repeatedly.
    MaxKernels(usize),
}

/// Applies a reduction policy. Merged kernels keep a mode label only when
/// both parts agree on it.
pub fn reduce<G: KernelState>(
    mix: &GaussianMixture<G>,
    policy: ReductionPolicy,
) -> Result<GaussianMixture<G>> {
    let max = match policy {
        ReductionPolicy::SingleGaussian => 1,
        ReductionPolicy::MaxKernels(0) => {
            return Err(Error::Config("max_kernels must be >= 1".into()));
        }
        ReductionPolicy::MaxKernels(k) => k,
    };
    let mut kernels = mix.kernels().to_vec();
    while kernels.len() > max {
        let mut order: Vec<usize> = (0..kernels.len()).collect();
        order.sort_by(|&a, &b| {
            kernels[a]
                .weight
                .total_cmp(&kernels[b].weight)
                .then(a.cmp(&b))
        });
        let (i, j) = (order[0].min(order[1]), order[0].max(order[1]));
        let b = kernels.remove(j);
        let a = &kernels[i];
        let weight = a.weight + b.weight;
        let dist = if weight > 0.0 {
            G::moment_match(&[(a.weight, &a.dist), (b.weight, &b.dist)])
        } else {
            G::moment_match(&[(1.0, &a.dist), (1.0, &b.dist)])
        };
        let mode = if a.mode == b.mode { a.mode } else { None };
        kernels[i] = MixtureKernel { weight, dist, mode };
    }
    Ok(GaussianMixture { kernels })
}

/// Trapezoid approximation of `∫|p_a − p_b|` on `n` nodes over `[lo, hi]`.
pub fn density_l1_distance(
    a: impl Fn(f64) -> f64,
    b: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<f64> {
    if n < 2 {
        return Err(Error::param("n", "grid needs at least 2 nodes"));
    }
    if !(lo < hi) {
        return Err(Error::param("grid", "requires lo < hi"));
    }
    Ok(trapezoid(|x| (a(x) - b(x)).abs(), lo, hi, n))
}
