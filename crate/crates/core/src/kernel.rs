//! Geometric memory kernel and causal convolutions.
//!
//! The kernel is the pmf `f(t) = θ(1-θ)^(t-1)` on `t = 1, 2, ...`. Every
//! convolution here is strictly causal: the value at bin `t` only sees
//! entries at bins `s < t`. Whole-series variants use the exact recurrence
//! `c(t+1) = (1-θ)·c(t) + θ·x(t)`, which costs O(T).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{OmmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    theta: f64,
}

impl Kernel {
    /// `theta` must lie in `(0, 1]`; `theta = 1` keeps only the previous bin.
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta.is_finite() && theta > 0.0 && theta <= 1.0) {
            return Err(OmmError::InvalidParameter(format!(
                "kernel memory theta must lie in (0, 1], got {theta}"
            )));
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Kernel mass at a positive lag; zero at lag 0.
    pub fn pmf(&self, lag: usize) -> f64 {
        if lag == 0 {
            return 0.0;
        }
        self.theta * (1.0 - self.theta).powi((lag - 1) as i32)
    }

    /// `Σ_{s<t} f(t-s)·series[s]` at the 1-based bin `t`, over the full history.
    pub fn convolve_at(&self, series: &[f64], t: usize) -> Result<f64> {
        self.convolve_window_at(series, t, None)
    }

    /// As [`Kernel::convolve_at`], keeping at most `window` lags when given.
    pub fn convolve_window_at(&self, series: &[f64], t: usize, window: Option<usize>) -> Result<f64> {
        if t == 0 || t > series.len() + 1 {
            return Err(OmmError::TimeOutOfRange {
                t,
                bins: series.len(),
            });
        }
        let max_lag = window.map_or(t - 1, |w| w.min(t - 1));
        let decay = 1.0 - self.theta;
        let mut weight = self.theta;
        let mut acc = 0.0;
        for lag in 1..=max_lag {
            acc += weight * series[t - 1 - lag];
            weight *= decay;
        }
        Ok(acc)
    }

    /// Causal convolution for every bin: `out[i]` is the value at bin `i+1`.
    pub fn causal_series(&self, series: &[f64]) -> Vec<f64> {
        let decay = 1.0 - self.theta;
        let mut out = Vec::with_capacity(series.len());
        let mut c = 0.0;
        for &x in series {
            out.push(c);
            c = decay * c + self.theta * x;
        }
        out
    }

    /// Windowed causal convolution using the truncated recurrence
    /// `c(t+1) = (1-θ)·(c(t) - f(W)·x(t-W)) + θ·x(t)`.
    pub fn causal_series_windowed(&self, series: &[f64], window: Option<usize>) -> Vec<f64> {
        let Some(w) = window else {
            return self.causal_series(series);
        };
        if w == 0 {
            return vec![0.0; series.len()];
        }
        let decay = 1.0 - self.theta;
        let tail = self.pmf(w);
        let mut out = Vec::with_capacity(series.len());
        let mut c = 0.0;
        for (i, &x) in series.iter().enumerate() {
            out.push(c);
            let dropped = if i >= w { tail * series[i - w] } else { 0.0 };
            c = decay * (c - dropped) + self.theta * x;
        }
        out
    }

    /// Causal convolution together with its derivative in `theta`.
    pub fn causal_series_with_derivative(&self, series: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let decay = 1.0 - self.theta;
        let mut conv = Vec::with_capacity(series.len());
        let mut deriv = Vec::with_capacity(series.len());
        let (mut c, mut d) = (0.0, 0.0);
        for &x in series {
            conv.push(c);
            deriv.push(d);
            // d/dθ [(1-θ)c + θx] = -c + (1-θ)c' + x
            d = -c + decay * d + x;
            c = decay * c + self.theta * x;
        }
        (conv, deriv)
    }
}

/// Geometric pmf `θ(1-θ)^(t-1)` at the 1-based lag `t`.
pub fn kernel_pmf(theta: f64, t: i64) -> Result<f64> {
    let kernel = Kernel::new(theta)?;
    if t <= 0 {
        return Err(OmmError::InvalidParameter(format!(
            "kernel lag must be positive, got {t}"
        )));
    }
    Ok(kernel.pmf(t as usize))
}

/// Causal kernel convolution of `series` at the 1-based bin `t`.
pub fn kernel_convolve(series: &[f64], theta: f64, t: usize) -> Result<f64> {
    if series.iter().any(|x| !x.is_finite()) {
        return Err(OmmError::NonFinite("series passed to kernel_convolve".into()));
    }
    Kernel::new(theta)?.convolve_at(series, t)
}

/// Kernel-smoothed interventions, one row per intervention series.
pub fn build_smoothed_interventions(interventions: &Array2<f64>, theta: f64) -> Result<Array2<f64>> {
    let kernel = Kernel::new(theta)?;
    if interventions.iter().any(|x| !x.is_finite()) {
        return Err(OmmError::NonFinite("intervention series".into()));
    }
    let mut out = Array2::zeros(interventions.raw_dim());
    for (k, row) in interventions.outer_iter().enumerate() {
        let smoothed = kernel.causal_series(&row.to_vec());
        out.row_mut(k).assign(&ndarray::Array1::from(smoothed));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn naive(series: &[f64], theta: f64, t: usize) -> f64 {
        let mut acc = 0.0;
        for s in 1..t {
            acc += theta * (1.0 - theta).powi((t - s - 1) as i32) * series[s - 1];
        }
        acc
    }

    #[test]
    fn pmf_values() {
        assert_eq!(kernel_pmf(0.5, 1).unwrap(), 0.5);
        assert_eq!(kernel_pmf(1.0, 1).unwrap(), 1.0);
        assert_eq!(kernel_pmf(1.0, 2).unwrap(), 0.0);
        assert_abs_diff_eq!(kernel_pmf(0.3, 4).unwrap(), 0.1029, epsilon = 1e-12);
    }

    #[test]
    fn pmf_rejects_bad_inputs() {
        assert!(kernel_pmf(0.5, 0).is_err());
        assert!(kernel_pmf(0.5, -3).is_err());
        assert!(kernel_pmf(0.0, 1).is_err());
        assert!(kernel_pmf(1.2, 1).is_err());
        assert!(kernel_pmf(f64::NAN, 1).is_err());
    }

    #[test]
    fn convolve_examples() {
        assert_eq!(kernel_convolve(&[3.0, 1.0, 4.0], 0.4, 1).unwrap(), 0.0);
        assert_abs_diff_eq!(kernel_convolve(&[1.0, 0.0, 0.0], 0.5, 3).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(kernel_convolve(&[2.0, 3.0], 1.0, 3).unwrap(), 3.0);
        assert!(kernel_convolve(&[2.0, 3.0], 0.5, 4).is_err());
        assert!(kernel_convolve(&[2.0, 3.0], 0.5, 0).is_err());
    }

    #[test]
    fn smoothed_interventions_by_hand() {
        let x = array![[4.0, 0.0, 0.0]];
        let xbar = build_smoothed_interventions(&x, 0.5).unwrap();
        assert_eq!(xbar, array![[0.0, 2.0, 1.0]]);
        let zeros = Array2::<f64>::zeros((2, 10));
        assert_eq!(build_smoothed_interventions(&zeros, 0.3).unwrap(), zeros);
    }

    #[test]
    fn paper_sinusoid_matches_double_loop() {
        let t_len = 300;
        let x: Vec<f64> = (1..=t_len).map(|t| 5.0 * (0.1 * t as f64).sin() + 5.0).collect();
        let xbar = build_smoothed_interventions(&Array2::from_shape_vec((1, t_len), x.clone()).unwrap(), 0.5).unwrap();
        for t in 1..=t_len {
            assert_abs_diff_eq!(xbar[[0, t - 1]], naive(&x, 0.5, t), epsilon = 1e-10);
        }
    }

    #[test]
    fn windowed_matches_truncated_sum() {
        let kernel = Kernel::new(0.3).unwrap();
        let x: Vec<f64> = (0..60).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        let out = kernel.causal_series_windowed(&x, Some(5));
        for t in 1..=x.len() {
            let direct = kernel.convolve_window_at(&x, t, Some(5)).unwrap();
            assert_abs_diff_eq!(out[t - 1], direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn theta_derivative_matches_finite_difference() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 5) % 7) as f64).collect();
        let theta = 0.37;
        let h = 1e-6;
        let (_, d) = Kernel::new(theta).unwrap().causal_series_with_derivative(&x);
        let up = Kernel::new(theta + h).unwrap().causal_series(&x);
        let dn = Kernel::new(theta - h).unwrap().causal_series(&x);
        for i in 0..x.len() {
            assert_abs_diff_eq!(d[i], (up[i] - dn[i]) / (2.0 * h), epsilon = 1e-6);
        }
    }

    proptest! {
        #[test]
        fn pmf_partial_sums(theta in 0.01f64..=1.0, n in 1usize..200) {
            let sum: f64 = (1..=n as i64).map(|t| kernel_pmf(theta, t).unwrap()).sum();
            prop_assert!((sum - (1.0 - (1.0 - theta).powi(n as i32))).abs() < 1e-12);
        }

        #[test]
        fn convolution_is_linear(
            theta in 0.05f64..=1.0,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            xs in prop::collection::vec(-10.0f64..10.0, 30),
            ys in prop::collection::vec(-10.0f64..10.0, 30),
            t in 1usize..=30,
        ) {
            let mix: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| a * x + b * y).collect();
            let lhs = kernel_convolve(&mix, theta, t).unwrap();
            let rhs = a * kernel_convolve(&xs, theta, t).unwrap() + b * kernel_convolve(&ys, theta, t).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn recurrence_matches_double_loop(theta in 0.01f64..=1.0, xs in prop::collection::vec(0.0f64..50.0, 200)) {
            let fast = Kernel::new(theta).unwrap().causal_series(&xs);
            for t in 1..=xs.len() {
                prop_assert!((fast[t - 1] - naive(&xs, theta, t)).abs() < 1e-10);
            }
        }

        #[test]
        fn smoothing_is_shift_causal(
            theta in 0.05f64..=1.0,
            xs in prop::collection::vec(-5.0f64..5.0, 25),
            t in 1usize..=25,
            bump in -5.0f64..5.0,
        ) {
            let base = Array2::from_shape_vec((1, 25), xs.clone()).unwrap();
            let mut changed = base.clone();
            for s in (t - 1)..25 {
                changed[[0, s]] += bump;
            }
            let a = build_smoothed_interventions(&base, theta).unwrap();
            let b = build_smoothed_interventions(&changed, theta).unwrap();
            prop_assert_eq!(a[[0, t - 1]], b[[0, t - 1]]);
        }
    }
}
