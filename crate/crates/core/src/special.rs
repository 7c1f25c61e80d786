//! Small special-function kernels shared by the analytic moment code.

/// `ln(n!)` for small integer `n`, summed directly.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Natural log of Kummer's confluent hypergeometric function `1F1(a; b; z)`
/// for positive integers `a < b`.
///
/// Negative arguments go through the Kummer transformation
/// `1F1(a; b; z) = e^z 1F1(b - a; b; -z)` so the summed series always has
/// nonnegative terms.
pub fn ln_hyp1f1(a: usize, b: usize, z: f64) -> f64 {
    debug_assert!(a >= 1 && b > a);
    if z < 0.0 {
        return z + ln_hyp1f1_nonneg(b - a, b, -z);
    }
    ln_hyp1f1_nonneg(a, b, z)
}

fn ln_hyp1f1_nonneg(a: usize, b: usize, z: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    const RESCALE: f64 = 1e250;
    let (a, b) = (a as f64, b as f64);
    let mut sum = 1.0_f64;
    let mut term = 1.0_f64;
    let mut log_scale = 0.0_f64;
    // Terms peak near k ~ z; stop once well past the peak and negligible.
    let max_terms = (z + 40.0 * z.sqrt() + 200.0) as usize;
    for k in 0..max_terms {
        let kf = k as f64;
        term *= (a + kf) / (b + kf) * z / (kf + 1.0);
        sum += term;
        if sum > RESCALE {
            sum /= RESCALE;
            term /= RESCALE;
            log_scale += RESCALE.ln();
        }
        if kf > z && term <= sum * 1e-17 {
            break;
        }
    }
    sum.ln() + log_scale
}

/// `(1 - e^{-x}) / x`, accurate for small `x` and well defined at 0.
pub fn one_minus_exp_neg_over(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// `(2x - 3 + 4e^{-x} - e^{-2x}) / (2x^3)`, the normalized variance of the
/// doubly-integrated OU noise. Tends to 1/3 as `x -> 0`.
pub fn ou_double_integral_factor(x: f64) -> f64 {
    if x < 0.5 {
        // Taylor coefficients c_k = (4(-1)^k - (-2)^k) / k!, k >= 3.
        let mut acc = 0.0;
        let mut fact = 6.0;
        let mut xp = 1.0;
        for k in 3..30 {
            if k > 3 {
                fact *= k as f64;
                xp *= x;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let c = (4.0 * sign - sign * 2f64.powi(k)) / fact;
            acc += c * xp;
            if xp * 2f64.powi(k) / fact < 1e-18 {
                break;
            }
        }
        acc / 2.0
    } else {
        (2.0 * x - 3.0 + 4.0 * (-x).exp() - (-2.0 * x).exp()) / (2.0 * x * x * x)
    }
}
