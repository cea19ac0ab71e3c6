//! Special functions used by the topic models.

/// Below this argument the recurrence `psi(x) = psi(x + 1) - 1/x` is applied
/// before switching to the asymptotic series.
const ASYMPTOTIC_CUTOFF: f64 = 10.0;

/// Digamma function, `d/dx ln Gamma(x)`, for `x > 0`.
///
/// Shifts the argument above [`ASYMPTOTIC_CUTOFF`] and evaluates the
/// Bernoulli asymptotic series. Absolute error is below `1e-12` for
/// `x >= 1e-6`.
pub fn digamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_CUTOFF {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
    acc + x.ln() - 0.5 * inv - series
}

/// Trigamma function, the derivative of [`digamma`], for `x > 0`.
pub fn trigamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_CUTOFF {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + sum_k B_2k / x^(2k+1)
    let series = inv
        * (1.0
            + inv * 0.5
            + inv2
                * (1.0 / 6.0
                    - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0))))));
    acc + series
}

/// Inverse of [`digamma`] by Newton iteration from Minka's initial guess.
pub fn inv_digamma(y: f64) -> f64 {
    let mut x = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        -1.0 / (y + EULER_GAMMA)
    };
    for _ in 0..50 {
        let step = (digamma(x) - y) / trigamma(x);
        let mut next = x - step;
        // Newton can overshoot below zero for very negative targets.
        if next <= 0.0 {
            next = x / 2.0;
        }
        let done = (next - x).abs() <= 1e-14 * x.max(1e-300);
        x = next;
        if done {
            break;
        }
    }
    x
}

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Natural log of the gamma function.
pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// `log(sum(exp(xs)))` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn digamma_known_values() {
        assert_abs_diff_eq!(digamma(1.0), -EULER_GAMMA, epsilon = 1e-13);
        assert_abs_diff_eq!(digamma(0.5), -EULER_GAMMA - 2.0 * 2f64.ln(), epsilon = 1e-13);
        // psi(n) = H_{n-1} - gamma
        let h: f64 = (1..10).map(|k| 1.0 / k as f64).sum();
        assert_abs_diff_eq!(digamma(10.0), h - EULER_GAMMA, epsilon = 1e-13);
    }

    #[test]
    fn digamma_matches_statrs() {
        for &x in &[1e-6, 1e-3, 0.1, 0.7, 1.3, 2.5, 9.99, 10.0, 57.0, 1e4] {
            let ours = digamma(x);
            let reference = statrs::function::gamma::digamma(x);
            let tol = 1e-12 * reference.abs().max(1.0);
            assert!((ours - reference).abs() < tol, "x={x}: {ours} vs {reference}");
        }
    }

    #[test]
    fn trigamma_matches_finite_difference() {
        for &x in &[0.05f64, 0.5, 1.0, 3.3, 12.0, 200.0] {
            let h = 1e-5 * x.max(1.0);
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((trigamma(x) - fd).abs() < 1e-5 * fd.abs().max(1.0), "x={x}");
        }
        assert_abs_diff_eq!(trigamma(1.0), std::f64::consts::PI.powi(2) / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn inv_digamma_round_trips() {
        for &x in &[1e-4f64, 0.01, 0.3, 1.0, 4.2, 80.0, 9000.0] {
            let back = inv_digamma(digamma(x));
            assert!((back - x).abs() < 1e-9 * x.max(1.0), "x={x} back={back}");
        }
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert_abs_diff_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
