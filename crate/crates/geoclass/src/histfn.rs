//! Piecewise-linear histogram functions over the radius set.
//!
//! Radius-pooled context features are computed at a discrete set of radii.
//! Fitting a piecewise-linear function through those values turns the
//! pooling radius into a continuous input: the radius learning layer
//! evaluates these functions at its learnable radii and backpropagates
//! through their segment slopes.

use serde::{Deserialize, Serialize};

use crate::features::RadiiSet;
use crate::{Error, Result};

/// Linear interpolation through (knot, value) pairs, clamped outside the
/// knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearFn {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinearFn {
    /// Requires at least two strictly increasing knots and finite values.
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::DimMismatch {
                context: "piecewise-linear fit".to_string(),
                expected: knots.len(),
                actual: values.len(),
            });
        }
        if knots.len() < 2 {
            return Err(Error::invalid(
                "piecewise-linear function",
                format!("{} knots (need >= 2)", knots.len()),
            ));
        }
        for pair in knots.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::invalid(
                    "piecewise-linear function",
                    format!("knots not strictly increasing: {} then {}", pair[0], pair[1]),
                ));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("piecewise-linear function", "non-finite value".to_string()));
        }
        Ok(PiecewiseLinearFn { knots, values })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `rho`: linear between bracketing knots, clamped to the first
    /// and last values outside the knot range.
    pub fn eval(&self, rho: f64) -> f64 {
        let k = &self.knots;
        let v = &self.values;
        if rho <= k[0] {
            return v[0];
        }
        if rho >= k[k.len() - 1] {
            return v[v.len() - 1];
        }
        // First knot strictly greater than rho; rho is interior, so seg >= 1.
        let seg = k.partition_point(|&knot| knot <= rho);
        let (x0, x1) = (k[seg - 1], k[seg]);
        let (y0, y1) = (v[seg - 1], v[seg]);
        y0 + (rho - x0) * (y1 - y0) / (x1 - x0)
    }

    /// Slope of the segment containing `rho`. At a knot the right segment's
    /// slope applies; outside [first, last) the clamped extension has slope 0.
    pub fn deriv(&self, rho: f64) -> f64 {
        let k = &self.knots;
        if rho < k[0] || rho >= k[k.len() - 1] {
            return 0.0;
        }
        let seg = k.partition_point(|&knot| knot <= rho);
        (self.values[seg] - self.values[seg - 1]) / (k[seg] - k[seg - 1])
    }
}

/// Fit exactly through the histogram values computed over the radius set.
pub fn fit(values_over_r: &[f64], radii: &RadiiSet) -> Result<PiecewiseLinearFn> {
    if values_over_r.len() != radii.len() {
        return Err(Error::DimMismatch {
            context: "piecewise-linear fit".to_string(),
            expected: radii.len(),
            actual: values_over_r.len(),
        });
    }
    PiecewiseLinearFn::new(radii.as_slice().to_vec(), values_over_r.to_vec())
}

/// All histogram functions for one record, in the key order of the feature
/// it was built from: normalization (a) functions for keys 0..K-1, then
/// normalization (b) functions for keys 0..K-1.
#[derive(Debug, Clone, PartialEq)]
pub struct HistFnBank {
    fns: Vec<PiecewiseLinearFn>,
}

impl HistFnBank {
    pub fn new(fns: Vec<PiecewiseLinearFn>) -> Result<Self> {
        if fns.is_empty() {
            return Err(Error::invalid("histogram bank", "no functions".to_string()));
        }
        Ok(HistFnBank { fns })
    }

    /// Build from per-function value rows sharing one knot set.
    pub fn from_values(rows: &[Vec<f64>], radii: &RadiiSet) -> Result<Self> {
        let fns = rows
            .iter()
            .map(|row| fit(row, radii))
            .collect::<Result<Vec<_>>>()?;
        HistFnBank::new(fns)
    }

    pub fn len(&self) -> usize {
        self.fns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fns.is_empty()
    }

    pub fn fns(&self) -> &[PiecewiseLinearFn] {
        &self.fns
    }

    pub fn get(&self, i: usize) -> &PiecewiseLinearFn {
        &self.fns[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radii_1k_to_10k() -> RadiiSet {
        RadiiSet::paper_default()
    }

    #[test]
    fn fit_zero_values_is_zero_function() {
        let r = radii_1k_to_10k();
        let f = fit(&vec![0.0; r.len()], &r).unwrap();
        for rho in [0.0, 1500.0, 9999.0, 20_000.0] {
            assert_eq!(f.eval(rho), 0.0);
        }
    }

    #[test]
    fn fit_is_identity_at_knots() {
        let r = radii_1k_to_10k();
        let values: Vec<f64> = (0..r.len()).map(|i| (i as f64).sin()).collect();
        let f = fit(&values, &r).unwrap();
        for (knot, v) in r.as_slice().iter().zip(&values) {
            assert_eq!(f.eval(*knot), *v);
        }
    }

    #[test]
    fn fit_rejects_length_mismatch() {
        let r = radii_1k_to_10k();
        assert!(fit(&[1.0, 2.0], &r).is_err());
    }

    #[test]
    fn eval_midpoint_of_scaled_knots() {
        let r = radii_1k_to_10k();
        let values: Vec<f64> = r.as_slice().iter().map(|k| k * 1e-4).collect();
        let f = fit(&values, &r).unwrap();
        // 5500 m sits midway between the 5000 and 6000 knots.
        assert!((f.eval(5500.0) - 0.55).abs() < 1e-12);
    }

    #[test]
    fn eval_constant_and_clamp() {
        let f = PiecewiseLinearFn::new(vec![1000.0, 2000.0, 3000.0], vec![4.0, 4.0, 4.0]).unwrap();
        for rho in [-5.0, 50.0, 1000.0, 2500.0, 99_999.0] {
            assert_eq!(f.eval(rho), 4.0);
        }
        let g = PiecewiseLinearFn::new(vec![1000.0, 2000.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(g.eval(1500.0), 0.5);
        assert_eq!(g.eval(50.0), 0.0);
        assert_eq!(g.eval(3000.0), 1.0);
    }

    #[test]
    fn deriv_constant_is_zero() {
        let f = PiecewiseLinearFn::new(vec![1000.0, 2000.0], vec![3.0, 3.0]).unwrap();
        for rho in [500.0, 1000.0, 1500.0, 2500.0] {
            assert_eq!(f.deriv(rho), 0.0);
        }
    }

    #[test]
    fn deriv_hand_slope() {
        let f = PiecewiseLinearFn::new(vec![1000.0, 2000.0], vec![0.0, 1.0]).unwrap();
        assert_eq!(f.deriv(1500.0), 1e-3);
        // Right-segment convention at the first knot; zero past the last.
        assert_eq!(f.deriv(1000.0), 1e-3);
        assert_eq!(f.deriv(2000.0), 0.0);
        assert_eq!(f.deriv(999.0), 0.0);
    }

    #[test]
    fn deriv_matches_central_differences() {
        let r = radii_1k_to_10k();
        let mut rng = crate::rng::stream_rng(61, crate::rng::Stream::Synth);
        use rand::Rng;
        let values: Vec<f64> = (0..r.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let f = fit(&values, &r).unwrap();
        let eps = 1e-3;
        for _ in 0..1000 {
            // Sample far enough from knots that [rho-eps, rho+eps] stays
            // inside one segment.
            let seg = rng.random_range(0..r.len() - 1);
            let lo = r.as_slice()[seg] + 10.0 * eps;
            let hi = r.as_slice()[seg + 1] - 10.0 * eps;
            let rho = rng.random_range(lo..hi);
            let numeric = (f.eval(rho + eps) - f.eval(rho - eps)) / (2.0 * eps);
            let analytic = f.deriv(rho);
            let denom = analytic.abs().max(1e-12);
            assert!(
                (numeric - analytic).abs() / denom < 1e-8,
                "rho {rho}: analytic {analytic}, numeric {numeric}"
            );
        }
    }

    #[test]
    fn eval_is_continuous_at_knots() {
        let r = radii_1k_to_10k();
        let values: Vec<f64> = (0..r.len()).map(|i| ((i * i) % 7) as f64).collect();
        let f = fit(&values, &r).unwrap();
        for &knot in r.as_slice() {
            let at = f.eval(knot);
            assert!((f.eval(knot - 1e-7) - at).abs() < 1e-9);
            assert!((f.eval(knot + 1e-7) - at).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_bounded_by_value_range() {
        let r = radii_1k_to_10k();
        let values: Vec<f64> = (0..r.len()).map(|i| ((i * 13) % 5) as f64 - 2.0).collect();
        let f = fit(&values, &r).unwrap();
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(62, crate::rng::Stream::Synth);
        for _ in 0..500 {
            let rho = rng.random_range(-1000.0..15_000.0);
            let y = f.eval(rho);
            assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }
    }

    #[test]
    fn bank_count_formula() {
        // 2 * (H + concepts) functions when both context features are banked.
        let r = radii_1k_to_10k();
        let h = 7;
        let concepts = 9;
        let rows = vec![vec![0.5; r.len()]; 2 * (h + concepts)];
        let bank = HistFnBank::from_values(&rows, &r).unwrap();
        assert_eq!(bank.len(), 2 * (h + concepts));
    }
}
