//! Dynamic and static calibration along simulated filter runs.

use switchfilter::calibration::{objective_j, theta_naive, DdsmCalibrator, DynamicCalibrator};
use switchfilter::experiment::{run_cell, simulate_cell, time_averaged_posterior_error};
use switchfilter::gaussian::{joint_kalman_update, Gaussian1, Gaussian2};
use switchfilter::reduced::{msm_predict, spekf_predict};
use switchfilter::switching::Mode;
use switchfilter::{CalibrationConfig, ExperimentConfig, ModelId, SsmConfig, ThetaDsm};

/// Runs the dynamically calibrated DSM filter and returns each step's start
/// state with its calibrated `Θ` and objective value.
fn dynamic_run(eps: f64, steps: usize, seed: u64) -> Vec<(Gaussian2, ThetaDsm, f64)> {
    let config = ExperimentConfig {
        steps,
        ..ExperimentConfig::default()
    };
    let params = config.params(eps).unwrap();
    let obs = config.observation_model().unwrap();
    let (_, ys) = simulate_cell(&config, eps, seed).unwrap();
    let mut cal = DynamicCalibrator::new(
        &params,
        obs.interval,
        CalibrationConfig::default(),
        SsmConfig::default(),
    )
    .unwrap();
    let mut state = Gaussian2::independent(config.u0().unwrap(), config.dsm_gamma0().unwrap());
    let mut out = Vec::new();
    for y in ys {
        let c = cal.step(&state).unwrap();
        out.push((state, c.theta, c.objective));
        let f = spekf_predict(
            &state,
            &c.theta,
            params.sigma_u,
            eps,
            obs.interval,
            config.quad_nodes,
        )
        .unwrap();
        state = joint_kalman_update(&f, y, obs.r).unwrap();
    }
    out
}

#[test]
fn dynamic_objective_never_exceeds_naive_or_previous() {
    let eps = 0.1;
    let params = ExperimentConfig::default().params(eps).unwrap();
    let naive = theta_naive(&params);
    let run = dynamic_run(eps, 50, 1);
    assert_eq!(run.len(), 50);
    let tol = CalibrationConfig::default().tol;
    let mut previous = naive;
    for (n, (state, theta, value)) in run.iter().enumerate() {
        let j = |th: &ThetaDsm| objective_j(th, state, &params, 1.0, 0.0, 65).unwrap();
        assert!(
            (j(theta) - value).abs() <= 1e-12 * (1.0 + value),
            "step {n}"
        );
        assert!(
            *value <= j(&naive),
            "step {n}: J(dynamic) {value} > J(naive) {}",
            j(&naive)
        );
        assert!(
            *value <= j(&previous) + tol,
            "step {n}: J rose above the warm start"
        );
        previous = *theta;
    }
}

#[test]
fn dynamic_set_stays_near_naive_at_tiny_epsilon() {
    let eps = 1e-4;
    let naive = theta_naive(&ExperimentConfig::default().params(eps).unwrap());
    for (n, (_, theta, _)) in dynamic_run(eps, 5, 1).iter().enumerate() {
        for (a, b) in [
            (theta.mu, naive.mu),
            (theta.nu, naive.nu),
            (theta.sigma, naive.sigma),
        ] {
            assert!(
                (a - b).abs() <= 0.05 * b.abs(),
                "step {n}: {theta:?} vs naive {naive:?}"
            );
        }
    }
}

#[test]
fn dynamic_replay_is_identical() {
    let a: Vec<ThetaDsm> = dynamic_run(1.0, 8, 4).into_iter().map(|r| r.1).collect();
    let b: Vec<ThetaDsm> = dynamic_run(1.0, 8, 4).into_iter().map(|r| r.1).collect();
    assert_eq!(a, b);
}

#[test]
fn dynamic_beats_naive_at_unit_epsilon() {
    let config = ExperimentConfig {
        models: vec![ModelId::DsmNaive, ModelId::DsmDynamic],
        ..ExperimentConfig::default()
    };
    let cell = run_cell(&config, 1.0, 1).unwrap();
    let err = |m| time_averaged_posterior_error(cell.model(m).unwrap());
    assert!(err(ModelId::DsmDynamic) <= err(ModelId::DsmNaive));
}

#[test]
fn static_error_lies_between_dynamic_and_naive() {
    let config = ExperimentConfig {
        models: vec![ModelId::DsmNaive, ModelId::DsmStatic, ModelId::DsmDynamic],
        ..ExperimentConfig::default()
    };
    let cell = run_cell(&config, 0.1, 1).unwrap();
    let err = |m| time_averaged_posterior_error(cell.model(m).unwrap());
    let (d, s, n) = (
        err(ModelId::DsmDynamic),
        err(ModelId::DsmStatic),
        err(ModelId::DsmNaive),
    );
    assert!(d <= s * 1.1 && s < n, "dynamic {d} static {s} naive {n}");
}

/// At `ε = 10⁴` each calibrated mode forecasts like the frozen-rate model.
#[test]
fn dual_optima_match_frozen_rates_at_large_epsilon() {
    let eps = 1e4;
    let config = ExperimentConfig::default();
    let params = config.params(eps).unwrap();
    let u0 = config.u0().unwrap();
    let kernel =
        |m: Mode| Gaussian2::independent(u0, Gaussian1::new(params.gamma(m), 0.0).unwrap());
    let (plus, minus) = (kernel(Mode::Plus), kernel(Mode::Minus));
    let mut cal = DdsmCalibrator::new(
        &params,
        1.0,
        CalibrationConfig::default(),
        SsmConfig::default(),
    )
    .unwrap();
    let theta = cal.step(&plus, &minus).unwrap();
    for (m, k) in [(Mode::Plus, &plus), (Mode::Minus, &minus)] {
        let f = spekf_predict(k, theta.mode(m), params.sigma_u, eps, 1.0, 65).unwrap();
        let frozen = msm_predict(&u0, params.gamma(m), params.sigma_u, 1.0).unwrap();
        let rate = -(f.mean[0] / u0.mean).ln();
        assert!(
            (rate - params.gamma(m)).abs() <= 0.1 * params.gamma(m).abs(),
            "{m:?}: effective rate {rate}"
        );
        assert!(
            (f.mean[0] - frozen.mean).abs() <= 0.1 * frozen.mean.abs(),
            "{m:?}: mean {f:?} vs {frozen:?}"
        );
        assert!(
            (f.cov[0][0] - frozen.var).abs() <= 0.1 * frozen.var,
            "{m:?}: var {f:?} vs {frozen:?}"
        );
    }
}
