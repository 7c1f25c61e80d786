//! Composite Newton–Cotes rules on uniform grids.

/// Composite trapezoid rule for `f` on `[lo, hi]` with `nodes` points.
pub fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, nodes: usize) -> f64 {
    assert!(nodes >= 2, "trapezoid needs at least two nodes");
    let n = nodes - 1;
    let h = (hi - lo) / n as f64;
    let mut acc = 0.5 * (f(lo) + f(hi));
    for i in 1..n {
        acc += f(lo + i as f64 * h);
    }
    acc * h
}

/// Trapezoid weights for `nodes` points on `[lo, hi]`.
pub fn trapezoid_weights(lo: f64, hi: f64, nodes: usize) -> Vec<f64> {
    assert!(nodes >= 2);
    let h = (hi - lo) / (nodes - 1) as f64;
    let mut w = vec![h; nodes];
    w[0] *= 0.5;
    w[nodes - 1] *= 0.5;
    w
}

/// Composite Simpson weights on `nodes` uniform points.
///
/// An odd interval count is closed with Simpson's 3/8 rule on the last three
/// intervals, so any `nodes >= 2` is accepted (two nodes fall back to the
/// trapezoid rule).
pub fn simpson_weights(lo: f64, hi: f64, nodes: usize) -> Vec<f64> {
    assert!(nodes >= 2);
    let intervals = nodes - 1;
    let h = (hi - lo) / intervals as f64;
    let mut w = vec![0.0; nodes];
    if intervals == 1 {
        w[0] = 0.5 * h;
        w[1] = 0.5 * h;
        return w;
    }
    let (simpson_intervals, tail) = if intervals.is_multiple_of(2) {
        (intervals, false)
    } else {
        (intervals - 3, true)
    };
    let mut i = 0;
    while i < simpson_intervals {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if tail {
        let s = simpson_intervals;
        let c = 3.0 * h / 8.0;
        w[s] += c;
        w[s + 1] += 3.0 * c;
        w[s + 2] += 3.0 * c;
        w[s + 3] += c;
    }
    w
}

/// Composite Simpson rule for `f` on `[lo, hi]`.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, nodes: usize) -> f64 {
    let w = simpson_weights(lo, hi, nodes);
    let h = (hi - lo) / (nodes - 1) as f64;
    w.iter()
        .enumerate()
        .map(|(i, wi)| wi * f(lo + i as f64 * h))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_on_cubics_for_both_parities() {
        let f = |x: f64| 2.0 * x * x * x - x + 0.5;
        let exact = 0.5 * 16.0 - 2.0 + 1.0; // on [0, 2]
        for nodes in [3, 4, 5, 8, 65] {
            assert!(
                (simpson(f, 0.0, 2.0, nodes) - exact).abs() < 1e-12,
                "{nodes}"
            );
        }
    }

    #[test]
    fn trapezoid_is_exact_on_lines() {
        assert!((trapezoid(|x| 3.0 * x + 1.0, -1.0, 1.0, 2) - 2.0).abs() < 1e-15);
        let w = trapezoid_weights(0.0, 1.0, 11);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
