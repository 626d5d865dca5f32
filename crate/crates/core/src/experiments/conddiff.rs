//! Euler–Maruyama discretization of `du = f(u) dt + dB`, `u_0 = 0`, mapping
//! the standard-normal increments `x` to the path `u_1, …, u_n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::Model;

pub fn drift(u: f64) -> f64 {
    u * (1.0 - u * u) / (1.0 + u * u)
}

pub fn drift_derivative(u: f64) -> f64 {
    let u2 = u * u;
    let q = 1.0 + u2;
    (1.0 - 4.0 * u2 - u2 * u2) / (q * q)
}

/// Conditioned-diffusion forward model with `d = m = steps`.
///
/// Increments enter as `√Δt · x_k`, so a standard-normal `x` reproduces
/// Wiener increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionedDiffusion {
    steps: usize,
    dt: f64,
}

impl ConditionedDiffusion {
    pub fn new(steps: usize, dt: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("conditioned diffusion needs at least one step".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { steps, dt })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// States `u_0, …, u_{n−1}` preceding each step, i.e. the points where
    /// the drift is linearized.
    fn pre_step_states(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        check_dim("conditioned diffusion input", self.steps, x.len())?;
        let sq = self.dt.sqrt();
        let mut states = Vec::with_capacity(self.steps);
        let mut u = 0.0;
        for k in 0..self.steps {
            states.push(u);
            u += drift(u) * self.dt + sq * x[k];
        }
        Ok(states)
    }

    /// Step multipliers `1 + f'(u_k) Δt`.
    fn multipliers(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        Ok(self
            .pre_step_states(x)?
            .into_iter()
            .map(|u| 1.0 + drift_derivative(u) * self.dt)
            .collect())
    }
}

impl Model for ConditionedDiffusion {
    fn input_dim(&self) -> usize {
        self.steps
    }

    fn output_dim(&self) -> usize {
        self.steps
    }

    fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let states = self.pre_step_states(x)?;
        let sq = self.dt.sqrt();
        Ok(DVector::from_fn(self.steps, |k, _| {
            let u = states[k];
            u + drift(u) * self.dt + sq * x[k]
        }))
    }

    fn tangent(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("tangent direction", self.steps, v.len())?;
        let a = self.multipliers(x)?;
        let sq = self.dt.sqrt();
        let mut out = DVector::zeros(self.steps);
        let mut du = 0.0;
        for k in 0..self.steps {
            du = a[k] * du + sq * v[k];
            out[k] = du;
        }
        Ok(out)
    }

    fn adjoint(&self, x: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("adjoint direction", self.steps, w.len())?;
        let a = self.multipliers(x)?;
        let sq = self.dt.sqrt();
        let mut out = DVector::zeros(self.steps);
        let mut lambda = 0.0;
        for k in (0..self.steps).rev() {
            lambda += w[k];
            out[k] = sq * lambda;
            lambda *= a[k];
        }
        Ok(out)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let a = self.multipliers(x)?;
        let n = self.steps;
        let sq = self.dt.sqrt();
        let mut j = DMatrix::zeros(n, n);
        for row in 0..n {
            if row > 0 {
                for col in 0..row {
                    j[(row, col)] = a[row] * j[(row - 1, col)];
                }
            }
            j[(row, row)] = sq;
        }
        Ok(j)
    }
}
