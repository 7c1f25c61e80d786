//! Invariant suite shared by the `properties` and `acceptance` test targets.
//!
//! Randomized checks run a deterministic proptest runner with [`CASES`] draws
//! in the documented validity window of each invariant. Statistical checks
//! compare against fixed-seed Monte Carlo at three standard errors.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use switchfilter::calibration::{minimize_theta, theta_naive, CalibrationConfig, ObjectiveJ};
use switchfilter::experiment::{run_cell, ExperimentConfig, ModelId, ReferenceMode};
use switchfilter::gaussian::{
    joint_kalman_update, kalman_update, mixture_update, moment_match, Gaussian1, Gaussian2,
    GaussianMixture, MixtureKernel,
};
use switchfilter::reduced::{
    dmsm_predict, msm_predict, ou_integral_mgf, spekf_noise_integral, spekf_predict, ReducedState,
    ThetaDsm,
};
use switchfilter::ssm::SsmFilterKind;
use switchfilter::ssm::{
    mode_moments, ssm_gaussian_predict, ssm_mixture_predict, SsmConfig, SsmFilterState, UBelief,
};
use switchfilter::switching::{
    mgf_closed_equal_rates, mgf_increment, mgf_series_distinct_rates, mgf_spectral,
    prob_num_transitions, transition_count_term_bound, transition_matrix, Conditioning, MgfEngine,
    MgfRequest, Mode, ModeDistribution, SwitchingParams,
};
use switchfilter::truth::{observe, sample_path, MomentAccumulator, ObservationModel};

/// Random draws per randomized invariant.
pub const CASES: u32 = 1000;

/// A named invariant check.
pub struct Check {
    pub name: &'static str,
    pub run: fn() -> Result<(), String>,
}

/// Every randomized invariant.
pub fn randomized() -> Vec<Check> {
    macro_rules! checks {
        ($($f:ident),* $(,)?) => { vec![$(Check { name: stringify!($f), run: $f }),*] };
    }
    checks![
        mgf_is_one_at_zero_alpha,
        series_terms_obey_count_bound,
        transition_matrix_is_a_semigroup,
        transition_counts_carry_full_mass,
        mgf_engines_agree,
        small_epsilon_limit,
        large_epsilon_limit,
        paths_are_reproducible,
        kalman_variance_shrinks,
        mixture_update_normalizes,
        joint_kalman_stays_psd,
        ssm_forecast_variance_positive,
        mixture_forecast_matches_gaussian_forecast,
        ssm_kernels_merge_into_dmsm,
        spekf_reduces_to_msm,
        ou_integral_mgf_empty_window,
        spekf_cross_covariance_vanishes_for_frozen_gamma,
        spekf_variances_positive,
        spekf_quadrature_converges,
        calibration_is_feasible_and_monotone,
        auto_reference_rule,
        emitted_errors_are_finite_and_deterministic,
    ]
}

/// Every fixed-seed statistical invariant.
pub fn statistical() -> Vec<Check> {
    vec![
        Check {
            name: "holding_times_are_exponential",
            run: holding_times_are_exponential,
        },
        Check {
            name: "exact_ou_matches_euler_maruyama",
            run: exact_ou_matches_euler_maruyama,
        },
        Check {
            name: "moment_match_matches_mixture_draws",
            run: moment_match_matches_mixture_draws,
        },
        Check {
            name: "series_mgf_matches_monte_carlo",
            run: series_mgf_matches_monte_carlo,
        },
    ]
}

fn run_cases<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner =
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn run<S: Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    run_cases(CASES, strategy, test)
}

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

fn ok<T>(r: switchfilter::Result<T>) -> Result<T, TestCaseError> {
    r.map_err(|e| fail(e.to_string()))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// General window: `γ+ ∈ [0.5, 4]`, `γ− ∈ [−1, −0.01]`, `λ± ∈ [0.5, 4]`,
/// `σ_u ∈ [0.05, 0.5]`, `ε` from the given strategy.
fn params(eps: impl Strategy<Value = f64>) -> impl Strategy<Value = SwitchingParams> {
    (
        0.5..4.0f64,
        -1.0..-0.01f64,
        0.5..4.0f64,
        0.5..4.0f64,
        eps,
        0.05..0.5f64,
    )
        .prop_map(|(gp, gm, lp, lm, e, s)| SwitchingParams::new(gp, gm, lp, lm, e, s).unwrap())
}

/// Narrower window for the asymptotic limits: `γ+ ∈ [0.5, 2.5]`,
/// `γ− ∈ [−0.5, −0.01]`, `λ± ∈ [1, 2]`.
fn limit_params(eps: f64) -> impl Strategy<Value = SwitchingParams> {
    (
        0.5..2.5f64,
        -0.5..-0.01f64,
        1.0..2.0f64,
        1.0..2.0f64,
        0.05..0.5f64,
    )
        .prop_map(move |(gp, gm, lp, lm, s)| SwitchingParams::new(gp, gm, lp, lm, eps, s).unwrap())
}

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Plus), Just(Mode::Minus)]
}

fn conditioning() -> impl Strategy<Value = Conditioning> {
    prop_oneof![
        mode().prop_map(Conditioning::Given),
        (0.0..=1.0f64)
            .prop_map(|p| Conditioning::Unconditioned(ModeDistribution::new(p, 1.0 - p).unwrap())),
    ]
}

fn gauss(
    mean: std::ops::Range<f64>,
    var: std::ops::Range<f64>,
) -> impl Strategy<Value = Gaussian1> {
    (mean, var).prop_map(|(m, v)| Gaussian1::new(m, v).unwrap())
}

fn theta() -> impl Strategy<Value = ThetaDsm> {
    (-0.5..3.0f64, 0.05..3.0f64, 0.05..2.0f64)
        .prop_map(|(mu, nu, sigma)| ThetaDsm::new(mu, nu, sigma).unwrap())
}

/// Joint prior with correlation in `(−0.9, 0.9)`.
fn joint_prior() -> impl Strategy<Value = Gaussian2> {
    (
        -1.0..1.0f64,
        -0.5..3.0f64,
        1e-4..0.1f64,
        1e-3..2.0f64,
        -0.9..0.9f64,
    )
        .prop_map(|(mu, mg, vu, vg, rho)| {
            let c = rho * (vu * vg).sqrt();
            Gaussian2::new([mu, mg], [[vu, c], [c, vg]]).unwrap()
        })
}

// ---------------------------------------------------------------- switching

fn mgf_is_one_at_zero_alpha() -> Result<(), String> {
    run(
        (
            params(0.1..10.0f64),
            0.0..1.0f64,
            0.0..2.0f64,
            conditioning(),
        ),
        |(p, lo, len, c)| {
            let req = MgfRequest::increment(0.0, lo, lo + len, c);
            let spectral = ok(mgf_spectral(&p, &req))?;
            prop_assert!((spectral - 1.0).abs() <= 1e-12, "spectral {spectral}");
            let s = ok(mgf_series_distinct_rates(&p, &req, 30))?;
            prop_assert!(
                (s.value - 1.0).abs() <= s.tail_bound + 1e-12,
                "series {} bound {}",
                s.value,
                s.tail_bound
            );
            let auto = ok(mgf_increment(&p, &req, MgfEngine::default()))?;
            prop_assert!((auto - 1.0).abs() <= 1e-12, "auto {auto}");
            let equal = SwitchingParams {
                lambda_minus: p.lambda_plus,
                ..p
            };
            let closed = ok(mgf_closed_equal_rates(&equal, &req))?;
            prop_assert!((closed - 1.0).abs() <= 1e-12, "closed {closed}");
            Ok(())
        },
    )
}

fn series_terms_obey_count_bound() -> Result<(), String> {
    run(
        (
            params(0.1..10.0f64),
            0.05..2.0f64,
            -2.0..0.0f64,
            mode(),
            0usize..40,
        ),
        |(p, tau, alpha, m, n)| {
            let req = MgfRequest::given(alpha, tau, m);
            let a = if n == 0 {
                0.0
            } else {
                ok(mgf_series_distinct_rates(&p, &req, n))?.value
            };
            let b = ok(mgf_series_distinct_rates(&p, &req, n + 1))?.value;
            let cap = (tau * (alpha * p.gamma_plus).max(alpha * p.gamma_minus)).exp();
            let bound = cap * transition_count_term_bound(&p, n, tau, m);
            prop_assert!(
                (b - a).abs() <= bound * (1.0 + 1e-9) + 1e-300,
                "term {} > bound {bound}",
                b - a
            );
            Ok(())
        },
    )
}

fn transition_matrix_is_a_semigroup() -> Result<(), String> {
    run(
        (params(0.01..100.0f64), 0.0..3.0f64, 0.0..3.0f64),
        |(p, t, s)| {
            let a = transition_matrix(&p, t);
            let b = transition_matrix(&p, s);
            let ab = transition_matrix(&p, t + s);
            for i in 0..2 {
                prop_assert!((a[i][0] + a[i][1] - 1.0).abs() <= 1e-12);
                for j in 0..2 {
                    prop_assert!(a[i][j] >= 0.0);
                    let prod = a[i][0] * b[0][j] + a[i][1] * b[1][j];
                    prop_assert!(
                        (prod - ab[i][j]).abs() <= 1e-12,
                        "P(t)P(s) {prod} vs P(t+s) {}",
                        ab[i][j]
                    );
                }
            }
            Ok(())
        },
    )
}

/// `Σ_{n ≤ 60} P(N_t = n) ≥ 1 − 10⁻⁸` whenever `max(λ±)t/ε ≤ 5`.
fn transition_counts_carry_full_mass() -> Result<(), String> {
    run(
        (params(0.01..100.0f64), 0.0..5.0f64, mode()),
        |(p, x, m)| {
            let t = x * p.epsilon / p.lambda_plus.max(p.lambda_minus);
            let mut total = 0.0;
            for n in 0..=60 {
                let q = ok(prob_num_transitions(&p, n, t, m))?;
                prop_assert!((0.0..=1.0 + 1e-12).contains(&q));
                total += q;
            }
            prop_assert!((1.0 - 1e-8..=1.0 + 1e-10).contains(&total), "mass {total}");
            Ok(())
        },
    )
}

/// Certified series and spectral forms agree where the series tail is tiny.
fn mgf_engines_agree() -> Result<(), String> {
    run(
        (
            params(0.5..10.0f64),
            0.05..2.0f64,
            -2.0..1.0f64,
            conditioning(),
        ),
        |(p, t, alpha, c)| {
            let req = MgfRequest::increment(alpha, 0.0, t, c);
            let spectral = ok(mgf_spectral(&p, &req))?;
            let s = ok(mgf_series_distinct_rates(&p, &req, 60))?;
            prop_assume!(s.tail_bound <= 1e-12 * s.value);
            prop_assert!(
                rel(s.value, spectral) <= 1e-10,
                "series {} spectral {spectral}",
                s.value
            );
            Ok(())
        },
    )
}

/// At `ε = 10⁻⁴` the MGF approaches `e^{αγ̄∞τ}`. With `Λ = λ+ + λ−` the
/// leading corrections `|α|εΔγ/Λ + α²ετλ+λ−Δγ²/Λ³` stay below `7.5·10⁻⁴` in
/// the limit window with `τ ≤ 1`.
fn small_epsilon_limit() -> Result<(), String> {
    run(
        (
            limit_params(1e-4),
            0.0..1.0f64,
            0.1..1.0f64,
            prop_oneof![Just(-1.0), Just(-2.0)],
            conditioning(),
        ),
        |(p, lo, tau, alpha, c)| {
            let (gbar, _) = switchfilter::switching::stationary_mode_stats(&p);
            let req = MgfRequest::increment(alpha, lo, lo + tau, c);
            let m = ok(mgf_increment(&p, &req, MgfEngine::default()))?;
            let limit = (alpha * gbar * tau).exp();
            prop_assert!(rel(m, limit) <= 1e-3, "M {m} limit {limit}");
            Ok(())
        },
    )
}

/// At `ε = 10⁴` the mode-conditioned MGF approaches `e^{αγ±τ}`. The first
/// correction is about `(λτ/ε)((e^x − 1)/x − 1)` with `x = |α|Δγτ`, which stays
/// below `6·10⁻⁴` in the limit window with `τ ≤ 0.5`.
fn large_epsilon_limit() -> Result<(), String> {
    run(
        (
            limit_params(1e4),
            0.05..0.5f64,
            prop_oneof![Just(-1.0), Just(-2.0)],
            mode(),
        ),
        |(p, tau, alpha, m)| {
            let v = ok(mgf_increment(
                &p,
                &MgfRequest::given(alpha, tau, m),
                MgfEngine::default(),
            ))?;
            let limit = (alpha * p.gamma(m) * tau).exp();
            prop_assert!(rel(v, limit) <= 1e-3, "M {v} limit {limit}");
            Ok(())
        },
    )
}

// -------------------------------------------------------------------- truth

fn paths_are_reproducible() -> Result<(), String> {
    run_cases(
        CASES,
        (
            params(0.1..10.0f64),
            -1.0..1.0f64,
            mode(),
            any::<u64>(),
            1usize..6,
        ),
        |(p, u0, m, seed, n)| {
            let times: Vec<f64> = (0..=n).map(|k| k as f64).collect();
            let a = ok(sample_path(&p, u0, m, n as f64, &times, seed))?;
            let b = ok(sample_path(&p, u0, m, n as f64, &times, seed))?;
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.modes.len(), a.switch_times.len() + 1);
            prop_assert!(a.switch_times.windows(2).all(|w| w[0] < w[1]));
            let obs = ObservationModel::new(0.01, 1.0).unwrap();
            for k in 1..=n {
                prop_assert_eq!(
                    ok(observe(&a, &obs, k, seed))?,
                    ok(observe(&b, &obs, k, seed))?
                );
            }
            Ok(())
        },
    )
}

// ----------------------------------------------------------------- gaussian

fn kalman_variance_shrinks() -> Result<(), String> {
    run(
        (
            gauss(-10.0..10.0, 1e-8..10.0),
            1e-8..10.0f64,
            -10.0..10.0f64,
        ),
        |(prior, r, y)| {
            let (post, lik) = ok(kalman_update(&prior, y, r))?;
            prop_assert!(post.var > 0.0 && post.var <= prior.var.min(r) * (1.0 + 1e-12));
            prop_assert!(lik >= 0.0 && lik.is_finite());
            Ok(())
        },
    )
}

fn mixture_update_normalizes() -> Result<(), String> {
    let kernels = prop::collection::vec((1e-3..1.0f64, gauss(-2.0..2.0, 1e-4..1.0)), 1..6);
    run((kernels, 1e-4..1.0f64, -3.0..3.0f64), |(ks, r, y)| {
        let prior = ok(GaussianMixture::from_unnormalized(
            ks.iter()
                .map(|&(weight, dist)| MixtureKernel {
                    weight,
                    dist,
                    mode: None,
                })
                .collect(),
        ))?;
        let post = ok(mixture_update(&prior, y, r))?;
        prop_assert_eq!(post.len(), prior.len());
        let total: f64 = post.weights().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12, "weights sum {total}");
        prop_assert!(post.weights().iter().all(|w| (0.0..=1.0).contains(w)));
        Ok(())
    })
}

fn joint_kalman_stays_psd() -> Result<(), String> {
    run(
        (joint_prior(), 1e-6..1.0f64, -3.0..3.0f64),
        |(prior, r, y)| {
            let post = ok(joint_kalman_update(&prior, y, r))?;
            let c = post.cov;
            prop_assert_eq!(c[0][1], c[1][0]);
            prop_assert!(c[0][0] >= 0.0 && c[1][1] >= 0.0);
            let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
            prop_assert!(det >= -1e-15 * (c[0][0] * c[1][1]).max(1e-300), "det {det}");
            prop_assert!(c[0][0] <= prior.cov[0][0] && c[1][1] <= prior.cov[1][1] * (1.0 + 1e-12));
            Ok(())
        },
    )
}

// ---------------------------------------------------------------------- ssm

fn ssm_state() -> impl Strategy<Value = SsmFilterState> {
    (gauss(-1.0..1.0, 1e-6..0.1), 0.0..=1.0f64)
        .prop_map(|(u, p)| SsmFilterState::new(u, ModeDistribution::new(p, 1.0 - p).unwrap()))
}

fn ssm_forecast_variance_positive() -> Result<(), String> {
    run(
        (params(0.2..10.0f64), 0.1..2.0f64, ssm_state()),
        |(p, t, s)| {
            let f = ok(ssm_gaussian_predict(&s, &p, t, &SsmConfig::default()))?;
            let g = f.u.collapsed();
            prop_assert!(
                g.var > 0.0 && g.var.is_finite() && g.mean.is_finite(),
                "{g:?}"
            );
            Ok(())
        },
    )
}

fn mixture_forecast_matches_gaussian_forecast() -> Result<(), String> {
    run(
        (params(0.2..10.0f64), 0.1..2.0f64, ssm_state()),
        |(p, t, s)| {
            let config = SsmConfig::default();
            let g = ok(ssm_gaussian_predict(&s, &p, t, &config))?.u.collapsed();
            let mix = ok(ssm_mixture_predict(&s, &p, t, &config))?;
            let m = mix.u.collapsed();
            prop_assert!((m.mean - g.mean).abs() <= 1e-12 * (1.0 + g.mean.abs()));
            prop_assert!(rel(m.var, g.var) <= 1e-10, "mixture {m:?} gaussian {g:?}");
            Ok(())
        },
    )
}

/// At `ε = 10⁴` the mixture forecast kernels approach the dMSM kernels from
/// the same start. Rare switches add about `(λτ/ε)(1 − e^{−x})²m²` to a kernel
/// variance, so the window also bounds `m²/v ≤ 9` for the prior `N(m, v)`.
fn ssm_kernels_merge_into_dmsm() -> Result<(), String> {
    run(
        (
            limit_params(1e4),
            0.05..0.5f64,
            gauss(0.05..0.3, 0.01..0.05),
            0.0..=1.0f64,
        ),
        |(p, t, u, rho)| {
            let s = SsmFilterState::new(u, ModeDistribution::new(rho, 1.0 - rho).unwrap());
            let mix = ok(ssm_mixture_predict(&s, &p, t, &SsmConfig::default()))?;
            let UBelief::Mixture(kernels) = &mix.u else {
                return Err(fail("mixture forecast expected".into()));
            };
            let dual = ok(ReducedState::dual(u, u, rho))?;
            let d = ok(dmsm_predict(
                &dual,
                p.gamma_plus,
                p.gamma_minus,
                p.sigma_u,
                t,
            ))?;
            for m in Mode::BOTH {
                if let (Some(a), Some(b)) = (kernels.kernel_for(m), d.kernel_for(m)) {
                    prop_assert!(
                        rel(a.dist.mean, b.dist.mean) <= 1e-3,
                        "{m:?} means {a:?} {b:?}"
                    );
                    prop_assert!(
                        rel(a.dist.var, b.dist.var) <= 1e-3,
                        "{m:?} vars {a:?} {b:?}"
                    );
                }
            }
            let (a, b) = (moment_match(kernels), moment_match(&d));
            prop_assert!(rel(a.mean, b.mean) <= 1e-3 && rel(a.var, b.var) <= 1e-3);
            Ok(())
        },
    )
}

// ------------------------------------------------------------------ reduced

fn frozen(gamma: f64) -> ThetaDsm {
    ThetaDsm {
        mu: gamma,
        nu: 1.0,
        sigma: 0.0,
    }
}

fn spekf_reduces_to_msm() -> Result<(), String> {
    run(
        (
            gauss(-1.0..1.0, 1e-6..0.1),
            -0.5..3.0f64,
            0.05..0.5f64,
            0.1..10.0f64,
            0.1..2.0f64,
        ),
        |(u, gamma, su, eps, t)| {
            let prior = Gaussian2::independent(
                u,
                Gaussian1 {
                    mean: gamma,
                    var: 0.0,
                },
            );
            let f = ok(spekf_predict(&prior, &frozen(gamma), su, eps, t, 65))?;
            let m = ok(msm_predict(&u, gamma, su, t))?;
            prop_assert!((f.mean[0] - m.mean).abs() <= 1e-12 * (1.0 + m.mean.abs()));
            prop_assert!(
                rel(f.cov[0][0], m.var) <= 1e-10,
                "spekf {} msm {}",
                f.cov[0][0],
                m.var
            );
            Ok(())
        },
    )
}

fn ou_integral_mgf_empty_window() -> Result<(), String> {
    run(
        (
            theta(),
            gauss(-1.0..3.0, 0.0..2.0),
            -3.0..3.0f64,
            0.0..5.0f64,
            0.01..100.0f64,
        ),
        |(th, g, alpha, t, eps)| {
            prop_assert_eq!(ok(ou_integral_mgf(&th, &g, alpha, t, t, eps))?, 1.0);
            Ok(())
        },
    )
}

fn spekf_cross_covariance_vanishes_for_frozen_gamma() -> Result<(), String> {
    run(
        (
            gauss(-1.0..1.0, 1e-6..0.1),
            -0.5..3.0f64,
            0.05..0.5f64,
            0.1..10.0f64,
            0.1..2.0f64,
        ),
        |(u, gamma, su, eps, t)| {
            let prior = Gaussian2::independent(
                u,
                Gaussian1 {
                    mean: gamma,
                    var: 0.0,
                },
            );
            let f = ok(spekf_predict(&prior, &frozen(gamma), su, eps, t, 65))?;
            let scale = (f.cov[0][0] * 1e-30).sqrt().max(1e-300);
            prop_assert!(
                f.cross_cov().abs() <= 1e-15 * (1.0 + f.mean[0].abs()) + scale,
                "cov {}",
                f.cross_cov()
            );
            prop_assert_eq!(f.cov[1][1], 0.0);
            Ok(())
        },
    )
}

fn spekf_variances_positive() -> Result<(), String> {
    run(
        (
            joint_prior(),
            theta(),
            0.05..0.5f64,
            0.1..10.0f64,
            0.1..2.0f64,
        ),
        |(prior, th, su, eps, t)| {
            let f = ok(spekf_predict(&prior, &th, su, eps, t, 65))?;
            prop_assert!(f.cov[0][0] > 0.0 && f.cov[1][1] > 0.0, "{f:?}");
            let det = f.cov[0][0] * f.cov[1][1] - f.cov[0][1] * f.cov[1][0];
            prop_assert!(det >= -1e-12 * f.cov[0][0] * f.cov[1][1]);
            Ok(())
        },
    )
}

/// Doubling the quadrature nodes moves `⟨B_T²⟩` by less than `10⁻⁸` for
/// parameters within a factor of two of the benchmark naive set.
fn spekf_quadrature_converges() -> Result<(), String> {
    run(
        (
            0.1..10.0f64,
            0.5..2.0f64,
            0.5..2.0f64,
            0.5..2.0f64,
            gauss(0.5..2.5, 0.0..1.5),
        ),
        |(eps, fm, fn_, fs, g)| {
            let base = theta_naive(&SwitchingParams::benchmark(eps));
            let th = ThetaDsm::new(base.mu * fm, base.nu * fn_, base.sigma * fs).unwrap();
            let coarse = ok(spekf_noise_integral(&g, &th, 0.1549, eps, 1.0, 65))?;
            let fine = ok(spekf_noise_integral(&g, &th, 0.1549, eps, 1.0, 129))?;
            prop_assert!(
                (coarse - fine).abs() < 1e-8,
                "65 nodes {coarse} 129 nodes {fine}"
            );
            Ok(())
        },
    )
}

// -------------------------------------------------------------- calibration

/// Minimizing `J` from any admissible start returns an admissible `Θ` whose
/// objective does not exceed the starting value.
fn calibration_is_feasible_and_monotone() -> Result<(), String> {
    let config = SsmConfig::default();
    let eps_grid = [0.1, 1.0, 10.0];
    let moments: Vec<_> = eps_grid
        .iter()
        .map(|&e| mode_moments(&SwitchingParams::benchmark(e), 1.0, &config).unwrap())
        .collect();
    let cal = CalibrationConfig {
        max_iter: 150,
        ..CalibrationConfig::default()
    };
    run(
        (
            0usize..3,
            joint_prior(),
            0.5..2.0f64,
            0.5..2.0f64,
            0.5..2.0f64,
        ),
        |(i, start, fm, fn_, fs)| {
            let params = SwitchingParams::benchmark(eps_grid[i]);
            let start = Gaussian2 {
                mean: [start.mean[0], start.mean[1].abs()],
                ..start
            };
            let j = ObjectiveJ::dsm_with(&start, &params, 1.0, 0.0, &moments[i], 33);
            let base = theta_naive(&params);
            let th0 = ThetaDsm::new(base.mu * fm, base.nu * fn_, base.sigma * fs).unwrap();
            let j0 = j.eval_or_inf(&th0);
            let out = ok(minimize_theta(&th0, |t| j.eval_or_inf(t), &cal))?;
            prop_assert!(out.theta.mu.is_finite() && out.theta.nu > 0.0 && out.theta.sigma > 0.0);
            prop_assert!(out.theta.nu.is_finite() && out.theta.sigma.is_finite());
            prop_assert!(out.objective <= j0, "J {} > start {j0}", out.objective);
            prop_assert!(
                (j.eval_or_inf(&out.theta) - out.objective).abs() <= 1e-12 * (1.0 + out.objective)
            );
            Ok(())
        },
    )
}

// --------------------------------------------------------------- experiment

fn auto_reference_rule() -> Result<(), String> {
    run(-6.0..6.0f64, |x| {
        let eps = 10f64.powf(x);
        let expected = if eps <= 1.0 {
            SsmFilterKind::Gaussian
        } else {
            SsmFilterKind::Mixture
        };
        prop_assert_eq!(ReferenceMode::Auto.resolve(eps), expected);
        prop_assert_eq!(
            ReferenceMode::Gaussian.resolve(eps),
            SsmFilterKind::Gaussian
        );
        prop_assert_eq!(ReferenceMode::Mixture.resolve(eps), SsmFilterKind::Mixture);
        Ok(())
    })
}

/// Every emitted error is finite and nonnegative, and reruns are identical.
fn emitted_errors_are_finite_and_deterministic() -> Result<(), String> {
    run((-1.0..2.0f64, 0u64..1_000_000), |(x, seed)| {
        let config = ExperimentConfig {
            steps: 3,
            models: vec![
                ModelId::Msm,
                ModelId::DsmNaive,
                ModelId::Dmsm,
                ModelId::DdsmNaive,
            ],
            ..ExperimentConfig::default()
        };
        let eps = 10f64.powf(x);
        let a = ok(run_cell(&config, eps, seed))?;
        let b = ok(run_cell(&config, eps, seed))?;
        for (ta, tb) in a.models.iter().zip(&b.models) {
            prop_assert_eq!(&ta.records, &tb.records);
            for e in &ta.errors {
                for v in [e.prior_mean, e.prior_var, e.post_mean, e.post_var] {
                    prop_assert!(v.is_finite() && v >= 0.0, "{:?} error {v}", ta.model);
                }
            }
        }
        prop_assert_eq!(&a.reference.records, &b.reference.records);
        Ok(())
    })
}

// -------------------------------------------------------------- statistical

fn within(label: &str, a: f64, b: f64, se: f64) -> Result<(), String> {
    if (a - b).abs() <= 3.0 * se {
        Ok(())
    } else {
        Err(format!(
            "{label}: {a} vs {b} differ by {:.2} SE",
            (a - b).abs() / se
        ))
    }
}

/// Mean holding time per mode equals `ε/λ±` within 3 SE over ~10⁵ events.
fn holding_times_are_exponential() -> Result<(), String> {
    let p = SwitchingParams::benchmark(1.0);
    let horizon = 80_000.0;
    let path =
        sample_path(&p, 0.0, Mode::Plus, horizon, &[horizon], 7).map_err(|e| e.to_string())?;
    let mut acc = [MomentAccumulator::default(), MomentAccumulator::default()];
    for (k, w) in path.switch_times.windows(2).enumerate() {
        acc[path.modes[k + 1].index()].push(w[1] - w[0]);
    }
    let events = acc[0].count() + acc[1].count();
    if events < 1e5 {
        return Err(format!("only {events} holding times"));
    }
    for m in Mode::BOTH {
        let est = acc[m.index()].mean();
        within(
            &format!("holding time {m:?}"),
            est.value,
            1.0 / p.rate(m),
            est.se,
        )?;
    }
    Ok(())
}

/// Exact OU sampling against Euler–Maruyama with step `10⁻⁴`: moments of
/// `u(1)` agree within 3 SE over 10⁴ paths per mode.
fn exact_ou_matches_euler_maruyama() -> Result<(), String> {
    let n_paths = 10_000;
    for m in Mode::BOTH {
        let p = SwitchingParams::benchmark(1e12);
        let gamma = p.gamma(m);
        let mut exact = MomentAccumulator::default();
        let mut exact_sq = MomentAccumulator::default();
        for i in 0..n_paths {
            let path = sample_path(&p, 0.5, m, 1.0, &[1.0], 1000 + i).map_err(|e| e.to_string())?;
            if !path.switch_times.is_empty() {
                return Err("unexpected switch at epsilon = 1e12".into());
            }
            exact.push(path.u_samples[0]);
            exact_sq.push(path.u_samples[0].powi(2));
        }
        let mut rng = SmallRng::seed_from_u64(11 + m.index() as u64);
        let dt: f64 = 1e-4;
        let kick = p.sigma_u * dt.sqrt();
        let mut em = MomentAccumulator::default();
        let mut em_sq = MomentAccumulator::default();
        for _ in 0..n_paths {
            let mut u = 0.5;
            for _ in 0..10_000 {
                let z: f64 = StandardNormal.sample(&mut rng);
                u += -gamma * u * dt + kick * z;
            }
            em.push(u);
            em_sq.push(u * u);
        }
        for (label, a, b) in [("mean", &exact, &em), ("second moment", &exact_sq, &em_sq)] {
            let (ea, eb) = (a.mean(), b.mean());
            within(
                &format!("{m:?} {label}"),
                ea.value,
                eb.value,
                ea.se.hypot(eb.se),
            )?;
        }
    }
    Ok(())
}

/// `moment_match` reproduces the mean and variance of 10⁶ mixture draws.
fn moment_match_matches_mixture_draws() -> Result<(), String> {
    let parts = [(0.2, 0.3, 0.01), (0.5, -0.1, 0.04), (0.3, 0.05, 0.002)];
    let mix = GaussianMixture::new(
        parts
            .iter()
            .map(|&(weight, mean, var)| MixtureKernel {
                weight,
                dist: Gaussian1 { mean, var },
                mode: None,
            })
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let g = moment_match(&mix);
    let mut rng = SmallRng::seed_from_u64(3);
    let mut acc = MomentAccumulator::default();
    for _ in 0..1_000_000 {
        let x: f64 = rng.random();
        let mut k = 0;
        let mut c = parts[0].0;
        while x > c && k + 1 < parts.len() {
            k += 1;
            c += parts[k].0;
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        acc.push(parts[k].1 + parts[k].2.sqrt() * z);
    }
    let (mean, var) = (acc.mean(), acc.variance());
    within("mixture mean", mean.value, g.mean, mean.se)?;
    within("mixture variance", var.value, g.var, var.se)
}

/// Series MGF against a 10⁶-path exact-switching Monte Carlo estimate on a
/// grid of scales, windows and conditionings.
fn series_mgf_matches_monte_carlo() -> Result<(), String> {
    let stationary = Conditioning::Unconditioned(SwitchingParams::benchmark(1.0).stationary());
    let mut seed = 100;
    for eps in [0.5, 2.0] {
        let p = SwitchingParams::benchmark(eps);
        for (lo, hi) in [(0.0, 0.5), (0.5, 1.5)] {
            for c in [
                Conditioning::Given(Mode::Plus),
                Conditioning::Given(Mode::Minus),
                stationary,
            ] {
                seed += 1;
                let alphas = [-1.0, -2.0];
                let mc = switchfilter::truth::mc_gamma_integral_mgf(
                    &p, &alphas, lo, hi, c, 1_000_000, seed,
                )
                .map_err(|e| e.to_string())?;
                for (alpha, est) in alphas.iter().zip(mc) {
                    let req = MgfRequest::increment(*alpha, lo, hi, c);
                    let s = mgf_series_distinct_rates(&p, &req, 30).map_err(|e| e.to_string())?;
                    within(
                        &format!("eps {eps} [{lo}, {hi}] {c:?} alpha {alpha}"),
                        est.value,
                        s.value,
                        est.se,
                    )?;
                }
            }
        }
    }
    Ok(())
}
