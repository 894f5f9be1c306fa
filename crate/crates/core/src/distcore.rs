//! Quantile-distribution mathematics shared by every agent.
//!
//! A return distribution is represented by `N` quantile estimates at the
//! midpoint levels `(2i - 1) / 2N`. Estimates are trained with the
//! quantile-Huber loss, and quantile options score actions by the mean of a
//! window of consecutive estimates.

use crate::{Error, Result};

/// Midpoint quantile levels for `N` estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileLevels {
    midpoints: Vec<f64>,
}

impl QuantileLevels {
    pub fn new(n_quantiles: usize) -> Result<Self> {
        if n_quantiles == 0 {
            return Err(Error::invalid("number of quantiles must be at least 1"));
        }
        let n = n_quantiles as f64;
        let midpoints = (1..=n_quantiles)
            .map(|i| (2 * i - 1) as f64 / (2.0 * n))
            .collect();
        Ok(Self { midpoints })
    }

    pub fn len(&self) -> usize {
        self.midpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.midpoints.is_empty()
    }

    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }
}

pub fn quantile_midpoints(n: usize) -> Result<QuantileLevels> {
    QuantileLevels::new(n)
}

/// Huber threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberConfig {
    kappa: f64,
}

impl HuberConfig {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must be positive, got {kappa}")));
        }
        Ok(Self { kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

impl Default for HuberConfig {
    fn default() -> Self {
        Self { kappa: 1.0 }
    }
}

pub fn huber(x: f64, cfg: HuberConfig) -> f64 {
    let k = cfg.kappa;
    let a = x.abs();
    if a <= k {
        0.5 * x * x
    } else {
        k * (a - 0.5 * k)
    }
}

/// Derivative of [`huber`]; the quadratic branch owns the boundary `|x| = kappa`.
pub fn huber_derivative(x: f64, cfg: HuberConfig) -> f64 {
    let k = cfg.kappa;
    if x.abs() <= k {
        x
    } else {
        k * x.signum()
    }
}

#[inline]
fn asymmetry(u: f64, tau_hat: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau_hat
    } else {
        tau_hat
    }
}

/// Quantile-Huber loss `|tau - 1{u < 0}| * huber(u)`.
pub fn quantile_huber(u: f64, tau_hat: f64, cfg: HuberConfig) -> f64 {
    asymmetry(u, tau_hat) * huber(u, cfg)
}

/// Quantile-regression loss of `pred` against the target sample set
/// `targets`, and its gradient with respect to `pred`.
///
/// `loss = (1/N) * sum_i sum_j rho_{tau_i}(targets[j] - pred[i])`. The inner
/// sum is not averaged.
pub fn qr_loss_and_grad(
    pred: &[f64],
    targets: &[f64],
    levels: &QuantileLevels,
    cfg: HuberConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; pred.len()];
    let loss = qr_loss_grad_into(pred, targets, levels, cfg, &mut grad)?;
    Ok((loss, grad))
}

/// Allocation-free form of [`qr_loss_and_grad`]; `grad` is overwritten.
pub fn qr_loss_grad_into(
    pred: &[f64],
    targets: &[f64],
    levels: &QuantileLevels,
    cfg: HuberConfig,
    grad: &mut [f64],
) -> Result<f64> {
    let n = levels.len();
    if pred.len() != n || targets.len() != n || grad.len() != n {
        return Err(Error::invalid(format!(
            "length mismatch: pred {}, targets {}, levels {}, grad {}",
            pred.len(),
            targets.len(),
            n,
            grad.len()
        )));
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    for (i, (&q, &tau)) in pred.iter().zip(levels.midpoints()).enumerate() {
        let mut g = 0.0;
        for &y in targets {
            let u = y - q;
            let w = asymmetry(u, tau);
            loss += w * huber(u, cfg);
            g -= w * huber_derivative(u, cfg);
        }
        grad[i] = g * scale;
    }
    Ok(loss * scale)
}

/// Mean of the `j`-th window (1-based) of `k` consecutive estimates.
pub fn window_mean(q: &[f64], j: usize, k: usize) -> Result<f64> {
    if k == 0 || j == 0 || j * k > q.len() {
        return Err(Error::invalid(format!(
            "window {j} of size {k} out of range for {} quantiles",
            q.len()
        )));
    }
    let start = (j - 1) * k;
    Ok(q[start..start + k].iter().sum::<f64>() / k as f64)
}

pub fn mean(q: &[f64]) -> f64 {
    q.iter().sum::<f64>() / q.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn k1() -> HuberConfig {
        HuberConfig::new(1.0).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn midpoints_match_formula() {
        let l = quantile_midpoints(3).unwrap();
        assert!(close(l.midpoints()[0], 1.0 / 6.0));
        assert!(close(l.midpoints()[1], 0.5));
        assert!(close(l.midpoints()[2], 5.0 / 6.0));
        assert_eq!(quantile_midpoints(1).unwrap().midpoints(), &[0.5]);
        assert_eq!(
            quantile_midpoints(4).unwrap().midpoints(),
            &[0.125, 0.375, 0.625, 0.875]
        );
        assert!(quantile_midpoints(0).is_err());
    }

    #[test]
    fn kappa_must_be_positive() {
        assert!(HuberConfig::new(0.0).is_err());
        assert!(HuberConfig::new(-1.0).is_err());
        assert!(HuberConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn huber_branches() {
        assert!(close(huber(0.5, k1()), 0.125));
        assert!(close(huber(-2.0, k1()), 1.5));
        assert!(close(huber(1.0, k1()), 0.5));
        // negative side uses |x|, so the loss stays continuous there
        assert!(close(huber(-1.0, k1()), 0.5));
        assert!(close(huber(-1.0 - 1e-12, k1()), 0.5 + 1e-12));
    }

    #[test]
    fn quantile_huber_examples() {
        assert!(close(quantile_huber(-1.0, 5.0 / 6.0, k1()), 1.0 / 12.0));
        assert!(close(quantile_huber(2.0, 0.5, k1()), 0.75));
        assert!(close(quantile_huber(0.3, 1.0 / 6.0, k1()), 0.0075));
    }

    #[test]
    fn qr_loss_single_term() {
        let l = quantile_midpoints(1).unwrap();
        let (loss, grad) = qr_loss_and_grad(&[0.0], &[1.0], &l, k1()).unwrap();
        assert!(close(loss, 0.25));
        assert!(close(grad[0], -0.5));
        let (loss, grad) = qr_loss_and_grad(&[3.7], &[3.7], &l, k1()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad[0], 0.0);
    }

    #[test]
    fn qr_loss_rejects_mismatch() {
        let l = quantile_midpoints(3).unwrap();
        assert!(qr_loss_and_grad(&[0.0; 2], &[0.0; 3], &l, k1()).is_err());
        assert!(qr_loss_and_grad(&[0.0; 3], &[0.0; 2], &l, k1()).is_err());
    }

    fn fd_grad(pred: &[f64], targets: &[f64], l: &QuantileLevels, cfg: HuberConfig, h: f64) -> Vec<f64> {
        let loss = |p: &[f64]| -> f64 {
            // direct double sum, independent of qr_loss_grad_into
            let n = p.len() as f64;
            let mut s = 0.0;
            for (i, &q) in p.iter().enumerate() {
                for &y in targets {
                    s += quantile_huber(y - q, l.midpoints()[i], cfg);
                }
            }
            s / n
        };
        (0..pred.len())
            .map(|i| {
                let mut a = pred.to_vec();
                let mut b = pred.to_vec();
                a[i] += h;
                b[i] -= h;
                (loss(&a) - loss(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn qr_grad_matches_finite_differences_n3() {
        let l = quantile_midpoints(3).unwrap();
        let pred = [0.0, 0.0, 0.0];
        let targets = [-1.0, 0.0, 1.0];
        let (_, grad) = qr_loss_and_grad(&pred, &targets, &l, k1()).unwrap();
        let fd = fd_grad(&pred, &targets, &l, k1(), 1e-6);
        for (g, f) in grad.iter().zip(&fd) {
            assert!((g - f).abs() < 1e-6, "{g} vs {f}");
        }
    }

    #[test]
    fn window_mean_examples() {
        let q = [1.0, 2.0, 3.0, 4.0];
        assert!(close(window_mean(&q, 1, 2).unwrap(), 1.5));
        assert!(close(window_mean(&q, 2, 2).unwrap(), 3.5));
        assert!(close(window_mean(&q, 1, 4).unwrap(), 2.5));
        assert!(window_mean(&q, 3, 2).is_err());
        assert!(window_mean(&q, 1, 0).is_err());
        assert!(window_mean(&q, 0, 1).is_err());
    }

    fn residuals_safe(pred: &[f64], targets: &[f64], kappa: f64) -> bool {
        pred.iter().all(|&q| {
            targets.iter().all(|&y| {
                let u = (y - q).abs();
                u > 1e-4 && (u - kappa).abs() > 1e-4
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn analytic_grad_matches_fd(
            n in 1usize..8,
            raw in proptest::collection::vec(-3.0f64..3.0, 16),
            kappa in 0.2f64..2.0,
        ) {
            let pred = &raw[..n];
            let targets = &raw[8..8 + n];
            prop_assume!(residuals_safe(pred, targets, kappa));
            let l = quantile_midpoints(n).unwrap();
            let cfg = HuberConfig::new(kappa).unwrap();
            let (_, grad) = qr_loss_and_grad(pred, targets, &l, cfg).unwrap();
            let fd = fd_grad(pred, targets, &l, cfg, 1e-6);
            for (g, f) in grad.iter().zip(&fd) {
                let rel = (g - f).abs() / g.abs().max(f.abs()).max(1e-8);
                prop_assert!(rel < 1e-5 || (g - f).abs() < 1e-9, "grad {} fd {}", g, f);
            }
        }

        #[test]
        fn windows_partition_the_mean(
            m in 1usize..6,
            k in 1usize..6,
            seed in proptest::collection::vec(-100.0f64..100.0, 36),
        ) {
            let q = &seed[..m * k];
            let avg: f64 = (1..=m).map(|j| window_mean(q, j, k).unwrap()).sum::<f64>() / m as f64;
            prop_assert!((avg - mean(q)).abs() < 1e-12);
        }

        #[test]
        fn quantile_huber_nonnegative(u in -10.0f64..10.0, tau in 0.001f64..0.999, kappa in 0.01f64..5.0) {
            let cfg = HuberConfig::new(kappa).unwrap();
            let v = quantile_huber(u, tau, cfg);
            prop_assert!(v >= 0.0);
            prop_assert_eq!(v == 0.0, u == 0.0);
            prop_assert!((quantile_huber(u, 0.5, cfg) - 0.5 * huber(u, cfg)).abs() < 1e-15);
        }

        #[test]
        fn unit_windows_are_single_quantiles(q in proptest::collection::vec(-5.0f64..5.0, 1..10)) {
            for j in 1..=q.len() {
                prop_assert_eq!(window_mean(&q, j, 1).unwrap(), q[j - 1]);
            }
        }
    }
}
