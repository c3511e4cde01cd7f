//! Stage-dependent learning rates and cumulative exploration bonuses.
//!
//! The whole module is built around the rate family `eta_t = (H+1)/(H+t)` and
//! its products over a visit-count window `(N_lo, N_hi]`: the per-visit
//! weights `eta_i^t`, the complement product `eta^c`, the aggregate rate
//! `eta_alpha = 1 - eta^c(N_lo+1, N_hi)`, the Hoeffding-type cumulative bonus
//! and the reference-advantage cumulative bonus. Windows are short (visit
//! counts grow geometrically across rounds), so plain running products are
//! numerically stable.

use serde::{Deserialize, Serialize};

/// `eta_t = (H+1)/(H+t)` for `t >= 1`.
pub fn eta(t: u64, h: usize) -> f64 {
    assert!(t >= 1, "eta is defined for t >= 1");
    (h as f64 + 1.0) / (h as f64 + t as f64)
}

/// The weight `eta_i^t = eta_i * prod_{j=i+1}^t (1 - eta_j)`, with the
/// boundary cases `eta_0^0 = 1` and `eta_0^t = 0` for `t >= 1`.
pub fn eta_weight(i: u64, t: u64, h: usize) -> f64 {
    assert!(i <= t, "eta_weight requires i <= t");
    if i == 0 {
        return if t == 0 { 1.0 } else { 0.0 };
    }
    let mut value = eta(i, h);
    for j in (i + 1)..=t {
        value *= 1.0 - eta(j, h);
    }
    value
}

/// The complement product `eta^c(n1, n2) = prod_{t=n1}^{n2} (1 - eta_t)`
/// over an inclusive window with `1 <= n1 <= n2`.
pub fn eta_complement(n1: u64, n2: u64, h: usize) -> f64 {
    assert!(n1 >= 1 && n1 <= n2, "eta_complement requires 1 <= n1 <= n2");
    let mut value = 1.0;
    for t in n1..=n2 {
        value *= 1.0 - eta(t, h);
    }
    value
}

/// A visit-count window for one `(s, a, h)` entry across one round: the count
/// before the round, the count after it, and the log factor `iota`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateWindow {
    pub h: usize,
    pub n_lo: u64,
    pub n_hi: u64,
    pub iota: f64,
}

impl RateWindow {
    pub fn new(h: usize, n_lo: u64, n_hi: u64, iota: f64) -> Self {
        assert!(n_lo < n_hi, "window must contain at least one visit");
        assert!(iota > 0.0, "iota must be positive");
        Self {
            h,
            n_lo,
            n_hi,
            iota,
        }
    }

    /// Number of visits in the window.
    pub fn num_visits(&self) -> usize {
        (self.n_hi - self.n_lo) as usize
    }
}

/// The aggregate learning rate `eta_alpha = 1 - eta^c(N_lo + 1, N_hi)`.
///
/// Telescoping gives `eta_alpha = sum_{t=N_lo+1}^{N_hi} eta_t^{N_hi}`; the
/// identity is covered by tests rather than relied on here.
pub fn alpha_rate(w: &RateWindow) -> f64 {
    1.0 - eta_complement(w.n_lo + 1, w.n_hi, w.h)
}

/// All weights `eta_t^{N_hi}` for `t` in `(N_lo, N_hi]`, in ascending `t`.
pub fn eta_weights(w: &RateWindow) -> Vec<f64> {
    let len = w.num_visits();
    let mut weights = vec![0.0; len];
    // Walk t downward keeping the running product prod_{j=t+1}^{N_hi}(1-eta_j).
    let mut tail = 1.0;
    for offset in (0..len).rev() {
        let t = w.n_lo + 1 + offset as u64;
        weights[offset] = eta(t, w.h) * tail;
        tail *= 1.0 - eta(t, w.h);
    }
    weights
}

/// Constants for the exploration bonuses plus the settlement threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonusConstants {
    pub c_b: f64,
    pub c_b_r: f64,
    pub c_b_r2: f64,
    pub beta: f64,
}

impl Default for BonusConstants {
    /// The experimental settings: `c_b = sqrt(2)`, `c_b_r = 2`,
    /// `c_b_r2 = 1`, `beta = 0.05`.
    fn default() -> Self {
        Self {
            c_b: std::f64::consts::SQRT_2,
            c_b_r: 2.0,
            c_b_r2: 1.0,
            beta: 0.05,
        }
    }
}

impl BonusConstants {
    /// Positivity of every constant; `beta <= H` is checked where the horizon
    /// is known.
    pub fn validate(&self) -> Result<(), String> {
        if self.c_b <= 0.0 || self.c_b_r <= 0.0 || self.c_b_r2 <= 0.0 || self.beta <= 0.0 {
            return Err(format!(
                "bonus constants must be strictly positive: {self:?}"
            ));
        }
        Ok(())
    }
}

/// Hoeffding-type cumulative bonus
/// `B = sum_{t=N_lo+1}^{N_hi} eta_t^{N_hi} * c_b * sqrt(H^3 iota / t)`.
pub fn hoeffding_bonus(w: &RateWindow, c: &BonusConstants) -> f64 {
    let h3iota = (w.h as f64).powi(3) * w.iota;
    let weights = eta_weights(w);
    let mut total = 0.0;
    for (offset, &weight) in weights.iter().enumerate() {
        let t = (w.n_lo + 1 + offset as u64) as f64;
        total += weight * c.c_b * (h3iota / t).sqrt();
    }
    total
}

/// Reference-bonus scale
/// `beta_R = c_b_r * sqrt(iota / N) * (sqrt(sigma_R - mu_R^2) + sqrt(H (sigma_A - mu_A^2)))`.
///
/// The empirical variances are clamped at zero before the square roots;
/// negative values only arise from rounding.
#[allow(clippy::too_many_arguments)]
pub fn beta_r(
    mu_r: f64,
    sigma_r: f64,
    mu_a: f64,
    sigma_a: f64,
    n: u64,
    h: usize,
    iota: f64,
    c_b_r: f64,
) -> f64 {
    assert!(n >= 1);
    let var_r = (sigma_r - mu_r * mu_r).max(0.0);
    let var_a = (sigma_a - mu_a * mu_a).max(0.0);
    c_b_r * (iota / n as f64).sqrt() * (var_r.sqrt() + (h as f64 * var_a).sqrt())
}

/// Reference-advantage cumulative bonus over a window.
///
/// Interior indices `t` in `(N_lo, N_hi)` contribute
/// `beta_prev + c_b_r2 * H^2 iota / t`; the final index `t = N_hi` instead
/// contributes `(1 - 1/eta_{N_hi}) beta_prev + beta_new / eta_{N_hi} +
/// c_b_r2 * H^2 iota / N_hi`. The total may be negative through the
/// telescoping final term and is not clamped.
pub fn reference_bonus(w: &RateWindow, beta_prev: f64, beta_new: f64, c: &BonusConstants) -> f64 {
    let h2iota = (w.h as f64).powi(2) * w.iota;
    let weights = eta_weights(w);
    let mut total = 0.0;
    for (offset, &weight) in weights.iter().enumerate() {
        let t = w.n_lo + 1 + offset as u64;
        let decay = c.c_b_r2 * h2iota / t as f64;
        let b = if t == w.n_hi {
            let eta_last = eta(w.n_hi, w.h);
            (1.0 - 1.0 / eta_last) * beta_prev + beta_new / eta_last + decay
        } else {
            beta_prev + decay
        };
        total += weight * b;
    }
    total
}

/// The theory-mode log factor `iota = ln(28 * S * A * T1 / p)`.
pub fn iota_theory(s: usize, a: usize, t1: u64, p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "failure rate must lie in (0,1)");
    assert!(t1 >= 1);
    (28.0 * s as f64 * a as f64 * t1 as f64 / p).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eta_examples() {
        assert_eq!(eta(1, 5), 1.0);
        assert_eq!(eta(1, 1), 1.0);
        assert_eq!(eta(5, 5), 0.6);
        assert_eq!(eta(95, 5), 0.06);
    }

    #[test]
    #[should_panic]
    fn eta_rejects_zero() {
        eta(0, 3);
    }

    #[test]
    fn eta_weight_boundaries() {
        assert_eq!(eta_weight(0, 0, 4), 1.0);
        assert_eq!(eta_weight(0, 3, 4), 0.0);
        assert_eq!(eta_weight(7, 7, 4), eta(7, 4));
    }

    #[test]
    fn eta_weight_hand_values_h1() {
        // H = 1: eta_t = 2/(1+t); eta_1^2 = 1 * (1 - 2/3) = 1/3, eta_2^2 = 2/3.
        assert!((eta_weight(1, 2, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((eta_weight(2, 2, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((eta_weight(1, 2, 1) + eta_weight(2, 2, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    #[should_panic]
    fn eta_weight_rejects_i_above_t() {
        eta_weight(3, 2, 1);
    }

    #[test]
    fn eta_complement_examples() {
        // Any window containing t = 1 vanishes because eta_1 = 1.
        assert_eq!(eta_complement(1, 5, 3), 0.0);
        // Single factor.
        assert_eq!(eta_complement(4, 4, 2), 1.0 - eta(4, 2));
        // H = 1: (1 - 2/3)(1 - 1/2) = 1/6.
        assert!((eta_complement(2, 3, 1) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    #[should_panic]
    fn eta_complement_rejects_zero_start() {
        eta_complement(0, 3, 1);
    }

    #[test]
    fn alpha_rate_examples() {
        let w = RateWindow::new(3, 0, 1, 1.0);
        assert_eq!(alpha_rate(&w), 1.0);
        let w = RateWindow::new(1, 1, 2, 1.0);
        assert!((alpha_rate(&w) - 2.0 / 3.0).abs() < 1e-15);
        for (lo, hi) in [(0, 4), (3, 9), (100, 120)] {
            let w = RateWindow::new(5, lo, hi, 1.0);
            let a = alpha_rate(&w);
            assert!(a > 0.0 && a <= 1.0);
        }
    }

    #[test]
    fn hoeffding_bonus_single_visit() {
        let c = BonusConstants::default();
        let w = RateWindow::new(5, 0, 1, 1.0);
        let expected = c.c_b * (125.0_f64).sqrt();
        assert!((hoeffding_bonus(&w, &c) - expected).abs() < 1e-12);
    }

    #[test]
    fn hoeffding_bonus_unit_argument() {
        // H = 5, iota = 1, t = 125: b_t = c_b * sqrt(125/125) = sqrt(2).
        let c = BonusConstants::default();
        let w = RateWindow::new(5, 124, 125, 1.0);
        let weight = eta_weight(125, 125, 5);
        assert!((hoeffding_bonus(&w, &c) - weight * std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn hoeffding_bonus_decreases_in_window_position() {
        let c = BonusConstants::default();
        let mut prev = f64::INFINITY;
        for n in 0..200u64 {
            let b = hoeffding_bonus(&RateWindow::new(4, n, n + 1, 1.0), &c);
            assert!(b > 0.0 && b < prev);
            prev = b;
        }
    }

    #[test]
    fn beta_r_zero_for_constant_reference() {
        let v = 3.25;
        assert_eq!(beta_r(v, v * v, 0.0, 0.0, 10, 4, 1.0, 2.0), 0.0);
    }

    #[test]
    fn beta_r_collapses_to_constant() {
        // sigma_R - mu_R^2 = 1, advantage variance 0, N = iota: result c_b_r.
        let got = beta_r(0.0, 1.0, 0.0, 0.0, 5, 3, 5.0, 2.0);
        assert!((got - 2.0).abs() < 1e-15);
    }

    #[test]
    fn beta_r_clamps_negative_variance() {
        let got = beta_r(1.0, 0.5, 1.0, 0.5, 4, 3, 1.0, 2.0);
        assert_eq!(got, 0.0);
    }

    #[test]
    fn reference_bonus_first_visit() {
        // Window (0,1]: eta_1 = 1, so the final-index formula reduces to
        // beta_new + c_b_r2 * H^2 iota, with weight 1.
        let c = BonusConstants {
            c_b: 1.0,
            c_b_r: 1.0,
            c_b_r2: 1.0,
            beta: 0.05,
        };
        let w = RateWindow::new(3, 0, 1, 2.0);
        let beta_prev = 7.0;
        let beta_new = 0.25;
        let expected = beta_new + 9.0 * 2.0;
        assert!((reference_bonus(&w, beta_prev, beta_new, &c) - expected).abs() < 1e-12);
    }

    #[test]
    fn reference_bonus_single_visit_window_has_no_interior() {
        let c = BonusConstants::default();
        let w = RateWindow::new(2, 5, 6, 1.0);
        let eta_last = eta(6, 2);
        let expected = eta_weight(6, 6, 2)
            * ((1.0 - 1.0 / eta_last) * 0.4 + 0.3 / eta_last + c.c_b_r2 * 4.0 / 6.0);
        assert!((reference_bonus(&w, 0.4, 0.3, &c) - expected).abs() < 1e-12);
    }

    #[test]
    fn reference_bonus_hand_case() {
        // H = 1, iota = 1, c_b_r2 = 1, window (1,3], both betas zero:
        // B_R = eta_2^3 * (1/2) + eta_3^3 * (1/3) = 1/6 + 1/6 = 1/3.
        let c = BonusConstants {
            c_b: 1.0,
            c_b_r: 1.0,
            c_b_r2: 1.0,
            beta: 0.05,
        };
        let w = RateWindow::new(1, 1, 3, 1.0);
        assert!((reference_bonus(&w, 0.0, 0.0, &c) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iota_theory_examples() {
        let v = iota_theory(3, 2, 100_000, 0.01);
        assert!((v - 21.242_059_f64).abs() < 1e-4);
        assert_eq!(v, (28.0 * 3.0 * 2.0 * 1.0e5 / 0.01_f64).ln());
        // Monotone decreasing in p.
        let mut prev = f64::INFINITY;
        for &p in &[0.001, 0.01, 0.1, 0.5, 0.9] {
            let v = iota_theory(1, 1, 1, p);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    #[should_panic]
    fn iota_theory_rejects_bad_p() {
        iota_theory(1, 1, 1, 1.0);
    }

    proptest! {
        #[test]
        fn weights_normalize_to_one(t in 1u64..1000, h_idx in 0usize..4) {
            let h = [1usize, 2, 5, 7][h_idx];
            let w = RateWindow::new(h, 0, t, 1.0);
            let sum: f64 = eta_weights(&w).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "sum {sum} at t={t}, H={h}");
        }

        #[test]
        fn alpha_rate_telescopes(n_lo in 0u64..5000, len in 1u64..64, h_idx in 0usize..4) {
            let h = [1usize, 2, 5, 7][h_idx];
            let w = RateWindow::new(h, n_lo, n_lo + len, 1.0);
            let direct = alpha_rate(&w);
            let summed: f64 = eta_weights(&w).iter().sum();
            prop_assert!((direct - summed).abs() < 1e-12);
        }

        #[test]
        fn window_weights_match_definition(n_lo in 0u64..200, len in 1u64..32, h_idx in 0usize..4) {
            let h = [1usize, 2, 5, 7][h_idx];
            let w = RateWindow::new(h, n_lo, n_lo + len, 1.0);
            let weights = eta_weights(&w);
            for (offset, &weight) in weights.iter().enumerate() {
                let t = n_lo + 1 + offset as u64;
                prop_assert!((weight - eta_weight(t, w.n_hi, h)).abs() < 1e-14);
            }
        }

        #[test]
        fn reference_bonus_is_finite(n_lo in 0u64..2000, len in 1u64..64, bp in 0.0f64..10.0, bn in 0.0f64..10.0) {
            let w = RateWindow::new(3, n_lo, n_lo + len, 1.0);
            let b = reference_bonus(&w, bp, bn, &BonusConstants::default());
            prop_assert!(b.is_finite());
        }
    }
}
