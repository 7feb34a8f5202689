//! Numeric kernels shared across the crate.
//!
//! The response-time moments involve `tanh(u)/u`-style ratios that are 0/0 at
//! the origin; the guards here switch to series expansions below a cutoff so
//! the evaluations stay accurate through `u = 0`.

/// Logistic sigmoid, overflow-free on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(u))`, computed as `log1p(exp(-|u|)) + max(u, 0)`.
pub fn log1p_exp(u: f64) -> f64 {
    (-u.abs()).exp().ln_1p() + u.max(0.0)
}

/// Softplus and its derivative (the sigmoid).
pub fn softplus(x: f64) -> f64 {
    log1p_exp(x)
}

/// `tanh(u)/u`, extended by its limit 1 at the origin.
///
/// Below |u| = 1e-4 the Taylor expansion `1 - u^2/3 + 2u^4/15` agrees with
/// the ratio to machine precision and avoids the 0/0.
pub fn tanhc(u: f64) -> f64 {
    if u.abs() < 1e-4 {
        let u2 = u * u;
        1.0 - u2 / 3.0 + 2.0 * u2 * u2 / 15.0
    } else {
        u.tanh() / u
    }
}

/// Shape function of the decision-time variance:
/// `(e^{4u} - 1 - 4u e^{2u}) / (u^3 (e^{2u} + 1)^2)`, extended by 2/3 at 0.
///
/// The raw expression loses all significant digits near the origin
/// (numerator ~ (8/3)u^3 against terms of size 1), so below |u| = 1e-3 the
/// series `2/3 - 8u^2/15 + 34u^4/105` is used instead. Away from 0 the
/// expression is rescaled by `e^{-4u}` so it never overflows.
pub fn time_var_shape(u: f64) -> f64 {
    let v = u.abs(); // even function
    if v < 1e-3 {
        let u2 = v * v;
        2.0 / 3.0 - 8.0 * u2 / 15.0 + 34.0 * u2 * u2 / 105.0
    } else {
        let e2 = (-2.0 * v).exp();
        let e4 = e2 * e2;
        let num = 1.0 - e4 - 4.0 * v * e2;
        let den = v * v * v * (1.0 + e2) * (1.0 + e2);
        num / den
    }
}

/// Sums `values` with a fixed pairwise (tree) reduction.
///
/// The reduction order depends only on the slice length, so accumulations
/// are reproducible regardless of how the values were produced.
pub fn tree_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            tree_sum(&values[..mid]) + tree_sum(&values[mid..])
        }
    }
}

/// Mean via [`tree_sum`]; 0 on an empty slice.
pub fn tree_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        tree_sum(values) / values.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigmoid_tails_and_symmetry() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(800.0) > 0.999);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        for &x in &[0.1, 1.0, 5.0, 30.0] {
            assert_relative_eq!(sigmoid(x) + sigmoid(-x), 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn log1p_exp_matches_naive_in_safe_range() {
        for &u in &[-30.0, -2.0, 0.0, 1.5, 20.0] {
            assert_relative_eq!(log1p_exp(u), (1.0 + u.exp()).ln(), max_relative = 1e-14);
        }
        // Far tails do not overflow.
        assert_eq!(log1p_exp(1e4), 1e4);
        assert!(log1p_exp(-800.0) >= 0.0);
    }

    #[test]
    fn tanhc_branches_agree_at_cutoff() {
        for &u in &[9.9e-5, 1.01e-4, -9.9e-5, -1.01e-4] {
            let series = {
                let u2: f64 = u * u;
                1.0 - u2 / 3.0 + 2.0 * u2 * u2 / 15.0
            };
            assert_relative_eq!(u.tanh() / u, series, max_relative = 1e-13);
        }
        assert_eq!(tanhc(0.0), 1.0);
        assert_relative_eq!(tanhc(1.0), (1.0f64).tanh(), max_relative = 1e-15);
    }

    #[test]
    fn time_var_shape_branches_agree_at_cutoff() {
        // The closed form cancels ~9 digits near the cutoff (numerator
        // ~ (8/3)u^3 against terms of size 1), so branch agreement there is
        // limited to ~1e-6 relative; that cancellation is the reason for
        // the series guard.
        for &u in &[8e-4, 1.05e-3, 2e-3] {
            let u2: f64 = u * u;
            let series = 2.0 / 3.0 - 8.0 * u2 / 15.0 + 34.0 * u2 * u2 / 105.0;
            let e2 = (-2.0f64 * u).exp();
            let e4 = e2 * e2;
            let closed = (1.0 - e4 - 4.0 * u * e2) / (u * u * u * (1.0 + e2) * (1.0 + e2));
            assert_relative_eq!(series, closed, max_relative = 2e-6);
        }
        // 30-digit reference value at u = 5e-4
        assert_relative_eq!(time_var_shape(5e-4), 0.666_666_533_333_353_6, max_relative = 1e-15);
        assert_eq!(time_var_shape(0.0), 2.0 / 3.0);
        // Spot value at u = 1: a(e^4 - 1 - 4e^2)/( (e^2+1)^2 ) with a = 1.
        let e2 = std::f64::consts::E * std::f64::consts::E;
        let expect = (e2 * e2 - 1.0 - 4.0 * e2) / ((e2 + 1.0) * (e2 + 1.0));
        assert_relative_eq!(time_var_shape(1.0), expect, max_relative = 1e-12);
    }

    #[test]
    fn tree_sum_matches_sequential() {
        let xs: Vec<f64> = (0..1001).map(|i| (i as f64).sin()).collect();
        let seq: f64 = xs.iter().sum();
        assert_relative_eq!(tree_sum(&xs), seq, max_relative = 1e-12);
        assert_eq!(tree_sum(&[]), 0.0);
        assert_eq!(tree_mean(&[]), 0.0);
    }
}
