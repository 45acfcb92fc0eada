//! Uniform time grid and the L1 discretization of the Caputo derivative.
//!
//! On the grid `t_n = n·dt` the L1 scheme approximates
//!
//! ```text
//! ∂_t^α u(t_n) ≈ dt^{-α}/Γ(2-α) · Σ_{k=0}^{n-1} b_k (u^{n-k} - u^{n-k-1}),
//! b_k = (k+1)^{1-α} - k^{1-α}.
//! ```
//!
//! The scheme is exact on data that is piecewise linear in time.

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::forward::Field;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    n_steps: usize,
    dt: f64,
    t_final: f64,
    alpha: f64,
    weights: Vec<f64>,
    scale: f64,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize, alpha: f64) -> Result<Self> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidParameter(format!("final time must be positive, got {t_final}")));
        }
        if n_steps < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 time steps, got {n_steps}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "fractional order must lie in (0, 1), got {alpha}"
            )));
        }
        let dt = t_final / n_steps as f64;
        let p = 1.0 - alpha;
        let weights = (0..n_steps)
            .map(|k| {
                let k = k as f64;
                (k + 1.0).powf(p) - k.powf(p)
            })
            .collect();
        let scale = dt.powf(-alpha) / gamma(2.0 - alpha);
        Ok(Self { n_steps, dt, t_final, alpha, weights, scale })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of time nodes, `n_steps + 1`.
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|n| self.time(n))
    }

    /// L1 weights `b_0 .. b_{n_steps-1}`.
    pub fn l1_weights(&self) -> &[f64] {
        &self.weights
    }

    /// `dt^{-α} / Γ(2-α)`.
    pub fn l1_scale(&self) -> f64 {
        self.scale
    }

    /// Coefficient of `u^{n-m}` in the L1 sum at step `n`:
    /// `scale·b_0` for `m = 0`, `scale·(b_m - b_{m-1})` otherwise (negative).
    pub fn memory_coefficient(&self, m: usize) -> f64 {
        if m == 0 {
            self.scale * self.weights[0]
        } else {
            self.scale * (self.weights[m] - self.weights[m - 1])
        }
    }

    /// L1 approximation of the Caputo derivative at `t_n` from `u^0..u^n`.
    pub fn caputo_apply(&self, history: &[f64], n: usize) -> f64 {
        assert!(n >= 1 && n <= self.n_steps, "step {n} outside 1..={}", self.n_steps);
        assert!(history.len() > n, "history needs {} entries, got {}", n + 1, history.len());
        let sum: f64 = (0..n)
            .map(|k| self.weights[k] * (history[n - k] - history[n - k - 1]))
            .sum();
        self.scale * sum
    }

    /// Composite trapezoid weights on the time nodes.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.n_nodes()];
        w[0] *= 0.5;
        w[self.n_steps] *= 0.5;
        w
    }

    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.n_nodes());
        values.iter().zip(self.trapezoid_weights()).map(|(v, w)| v * w).sum()
    }
}

/// Reverses the time axis of a field, mapping node `n` to `n_steps - n`.
pub fn time_reverse(field: &Field) -> Field {
    let mut values = field.values().to_owned();
    values.invert_axis(ndarray::Axis(0));
    Field::from_array(values.as_standard_layout().to_owned())
}
