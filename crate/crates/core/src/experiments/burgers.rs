//! Viscous Burgers equation `u_t + u u_x = D u_xx` on a periodic grid of
//! `[0, 1)`, mapping the initial state to the state at time `T`.
//!
//! Space: finite volumes with a local Lax–Friedrichs flux for `u²/2`, whose
//! wave speed `max(|a|, |b|)` is replaced by the smooth `√(a² + b² + ε²)` so
//! the discrete map is differentiable everywhere, plus central second
//! differences for diffusion. Time: classical RK4 with a fixed step. The
//! tangent and adjoint are exact derivatives of this discrete map.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::Model;

/// Regularization of the Lax–Friedrichs wave speed.
pub const WAVE_SPEED_EPS: f64 = 1e-8;
/// Largest admissible `max|u| δt / Δx`.
pub const CFL_LIMIT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurgersModel {
    grid: usize,
    viscosity: f64,
    final_time: f64,
    steps: usize,
    dt: f64,
}

/// Scratch buffers for one RK4 step.
struct Stages {
    s: [Vec<f64>; 4],
    k: [Vec<f64>; 4],
    flux: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Self {
            s: std::array::from_fn(|_| vec![0.0; n]),
            k: std::array::from_fn(|_| vec![0.0; n]),
            flux: vec![0.0; n],
        }
    }
}

/// Per-face flux derivatives `(∂F/∂a, ∂F/∂b)` at one stage state.
struct Linearization {
    fa: Vec<f64>,
    fb: Vec<f64>,
}

impl BurgersModel {
    /// The time step is shortened if needed so that an integer number of
    /// steps lands exactly on `final_time`.
    pub fn new(grid: usize, viscosity: f64, final_time: f64, max_time_step: f64) -> Result<Self> {
        if grid < 3 {
            return Err(Error::InvalidArgument(format!("Burgers grid needs at least 3 points, got {grid}")));
        }
        for (name, v) in [("final time", final_time), ("time step", max_time_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(viscosity >= 0.0 && viscosity.is_finite()) {
            return Err(Error::InvalidArgument(format!("viscosity must be non-negative, got {viscosity}")));
        }
        let steps = ((final_time / max_time_step) - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            grid,
            viscosity,
            final_time,
            steps,
            dt: final_time / steps as f64,
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.grid as f64
    }

    pub fn time_step(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn viscosity(&self) -> f64 {
        self.viscosity
    }

    /// Cell centres `i / N`.
    pub fn grid_points(&self) -> Vec<f64> {
        (0..self.grid).map(|i| i as f64 / self.grid as f64).collect()
    }

    fn next(&self, i: usize) -> usize {
        if i + 1 == self.grid {
            0
        } else {
            i + 1
        }
    }

    fn prev(&self, i: usize) -> usize {
        if i == 0 {
            self.grid - 1
        } else {
            i - 1
        }
    }

    fn rhs(&self, u: &[f64], flux: &mut [f64], out: &mut [f64]) {
        let n = self.grid;
        let dx = self.dx();
        let nu = self.viscosity / (dx * dx);
        for i in 0..n {
            let (a, b) = (u[i], u[self.next(i)]);
            let alpha = (a * a + b * b + WAVE_SPEED_EPS * WAVE_SPEED_EPS).sqrt();
            flux[i] = 0.25 * (a * a + b * b) - 0.5 * alpha * (b - a);
        }
        for i in 0..n {
            let (l, r) = (self.prev(i), self.next(i));
            out[i] = -(flux[i] - flux[l]) / dx + nu * ((u[r] - u[i]) - (u[i] - u[l]));
        }
    }

    fn linearize(&self, u: &[f64]) -> Linearization {
        let n = self.grid;
        let mut fa = vec![0.0; n];
        let mut fb = vec![0.0; n];
        for i in 0..n {
            let (a, b) = (u[i], u[self.next(i)]);
            let alpha = (a * a + b * b + WAVE_SPEED_EPS * WAVE_SPEED_EPS).sqrt();
            fa[i] = 0.5 * a - 0.5 * (a / alpha) * (b - a) + 0.5 * alpha;
            fb[i] = 0.5 * b - 0.5 * (b / alpha) * (b - a) - 0.5 * alpha;
        }
        Linearization { fa, fb }
    }

    /// `out = R'(s) v` for each column of the column-major `n × k` block.
    fn apply_tangent(&self, lin: &Linearization, v: &[f64], out: &mut [f64]) {
        let n = self.grid;
        let dx = self.dx();
        let nu = self.viscosity / (dx * dx);
        for (vc, oc) in v.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            for i in 0..n {
                let (l, r) = (self.prev(i), self.next(i));
                let right = lin.fa[i] * vc[i] + lin.fb[i] * vc[r];
                let left = lin.fa[l] * vc[l] + lin.fb[l] * vc[i];
                oc[i] = -(right - left) / dx + nu * ((vc[r] - vc[i]) - (vc[i] - vc[l]));
            }
        }
    }

    /// `out += R'(s)^T w` for each column.
    fn add_adjoint(&self, lin: &Linearization, w: &[f64], out: &mut [f64]) {
        let n = self.grid;
        let dx = self.dx();
        let nu = self.viscosity / (dx * dx);
        for (wc, oc) in w.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            for f in 0..n {
                let r = self.next(f);
                let phi = (wc[r] - wc[f]) / dx;
                oc[f] += lin.fa[f] * phi;
                oc[r] += lin.fb[f] * phi;
            }
            for i in 0..n {
                let (l, r) = (self.prev(i), self.next(i));
                oc[i] += nu * ((wc[r] - wc[i]) - (wc[i] - wc[l]));
            }
        }
    }

    fn check_cfl(&self, u: &[f64], step: usize) -> Result<()> {
        let umax = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let cfl = umax * self.dt / self.dx();
        if !cfl.is_finite() || cfl > CFL_LIMIT {
            return Err(Error::CflViolation {
                cfl,
                limit: CFL_LIMIT,
                step,
            });
        }
        Ok(())
    }

    /// Fills the stage states `s1..s4` and slopes `k1..k4` of one RK4 step
    /// from `u`.
    fn stages(&self, u: &[f64], w: &mut Stages) {
        let h = self.dt;
        w.s[0].copy_from_slice(u);
        self.rhs(&w.s[0], &mut w.flux, &mut w.k[0]);
        for (stage, c) in [(1, 0.5 * h), (2, 0.5 * h), (3, h)] {
            let (prev, cur) = w.k.split_at_mut(stage);
            for ((s, &ui), &ki) in w.s[stage].iter_mut().zip(u).zip(&prev[stage - 1]) {
                *s = ui + c * ki;
            }
            self.rhs(&w.s[stage], &mut w.flux, &mut cur[0]);
        }
    }

    fn combine(&self, u: &mut [f64], k: &[Vec<f64>; 4]) {
        let w = self.dt / 6.0;
        for i in 0..u.len() {
            u[i] += w * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
    }

    /// Forward trajectory `u^0, …, u^{N−1}` (states before each step) and
    /// the final state.
    fn trajectory(&self, u0: &DVector<f64>) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        check_dim("Burgers initial state", self.grid, u0.len())?;
        let mut u = u0.as_slice().to_vec();
        let mut states = Vec::with_capacity(self.steps);
        let mut work = Stages::new(self.grid);
        for step in 0..self.steps {
            self.check_cfl(&u, step)?;
            states.push(u.clone());
            self.stages(&u, &mut work);
            self.combine(&mut u, &work.k);
        }
        Ok((states, u))
    }

    fn tangent_block(&self, u0: &DVector<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("Burgers initial state", self.grid, u0.len())?;
        check_dim("tangent block rows", self.grid, v.nrows())?;
        let n = self.grid;
        let len = v.len();
        let h = self.dt;
        let mut u = u0.as_slice().to_vec();
        let mut dv = v.as_slice().to_vec();
        let mut dk: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; len]);
        let mut arg = vec![0.0; len];
        let mut work = Stages::new(n);
        for step in 0..self.steps {
            self.check_cfl(&u, step)?;
            self.stages(&u, &mut work);
            for stage in 0..4 {
                let lin = self.linearize(&work.s[stage]);
                if stage == 0 {
                    arg.copy_from_slice(&dv);
                } else {
                    let c = if stage == 3 { h } else { 0.5 * h };
                    for (a, (x, y)) in arg.iter_mut().zip(dv.iter().zip(&dk[stage - 1])) {
                        *a = x + c * y;
                    }
                }
                self.apply_tangent(&lin, &arg, &mut dk[stage]);
            }
            let w = h / 6.0;
            for i in 0..len {
                dv[i] += w * (dk[0][i] + 2.0 * dk[1][i] + 2.0 * dk[2][i] + dk[3][i]);
            }
            self.combine(&mut u, &work.k);
        }
        Ok(DMatrix::from_vec(n, v.ncols(), dv))
    }

    fn adjoint_block(&self, u0: &DVector<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("adjoint block rows", self.grid, w.nrows())?;
        let (states, _) = self.trajectory(u0)?;
        let n = self.grid;
        let len = w.len();
        let h = self.dt;
        let mut lam = w.as_slice().to_vec();
        let mut lk: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; len]);
        let mut ls = vec![0.0; len];
        let mut work = Stages::new(n);
        for u in states.iter().rev() {
            self.stages(u, &mut work);
            let s = &work.s;
            for (stage, weight) in [(0, h / 6.0), (1, h / 3.0), (2, h / 3.0), (3, h / 6.0)] {
                for (a, b) in lk[stage].iter_mut().zip(&lam) {
                    *a = weight * b;
                }
            }
            // Reverse through s4 = u + h k3, s3 = u + h/2 k2, s2 = u + h/2 k1.
            for stage in (0..4).rev() {
                let lin = self.linearize(&s[stage]);
                ls.iter_mut().for_each(|v| *v = 0.0);
                self.add_adjoint(&lin, &lk[stage], &mut ls);
                for (a, b) in lam.iter_mut().zip(&ls) {
                    *a += b;
                }
                if stage > 0 {
                    let c = if stage == 3 { h } else { 0.5 * h };
                    for (a, b) in lk[stage - 1].iter_mut().zip(&ls) {
                        *a += c * b;
                    }
                }
            }
        }
        Ok(DMatrix::from_vec(n, w.ncols(), lam))
    }
}

impl Model for BurgersModel {
    fn input_dim(&self) -> usize {
        self.grid
    }

    fn output_dim(&self) -> usize {
        self.grid
    }

    fn forward(&self, u0: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("Burgers initial state", self.grid, u0.len())?;
        let mut u = u0.as_slice().to_vec();
        let mut work = Stages::new(self.grid);
        for step in 0..self.steps {
            self.check_cfl(&u, step)?;
            self.stages(&u, &mut work);
            self.combine(&mut u, &work.k);
        }
        Ok(DVector::from_vec(u))
    }

    fn tangent(&self, u0: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        let block = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        Ok(self.tangent_block(u0, &block)?.column(0).into_owned())
    }

    fn adjoint(&self, u0: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let block = DMatrix::from_column_slice(w.len(), 1, w.as_slice());
        Ok(self.adjoint_block(u0, &block)?.column(0).into_owned())
    }

    fn tangent_many(&self, u0: &DVector<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.tangent_block(u0, v)
    }

    fn adjoint_many(&self, u0: &DVector<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.adjoint_block(u0, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::standard_normal_vector;
    use crate::samples::seeded_rng;

    fn smooth_state(n: usize) -> DVector<f64> {
        DVector::from_fn(n, |i, _| {
            let x = i as f64 / n as f64;
            0.4 + 0.5 * (2.0 * std::f64::consts::PI * x).sin() + 0.2 * (6.0 * std::f64::consts::PI * x).cos()
        })
    }

    #[test]
    fn constant_state_is_fixed() {
        let model = BurgersModel::new(40, 1e-3, 0.05, 1e-3).unwrap();
        let u0 = DVector::from_element(40, 0.37);
        let u = model.forward(&u0).unwrap();
        assert!((u - u0).amax() <= 1e-12);
    }

    #[test]
    fn adjoint_is_transpose_of_tangent() {
        let model = BurgersModel::new(24, 1e-3, 0.02, 1e-3).unwrap();
        let mut rng = seeded_rng(1, 0);
        let u0 = smooth_state(24);
        let v = standard_normal_vector(&mut rng, 24);
        let w = standard_normal_vector(&mut rng, 24);
        let jv = model.tangent(&u0, &v).unwrap();
        let jtw = model.adjoint(&u0, &w).unwrap();
        let (lhs, rhs) = (jv.dot(&w), v.dot(&jtw));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn tangent_matches_finite_differences() {
        let model = BurgersModel::new(20, 1e-3, 0.02, 1e-3).unwrap();
        let u0 = smooth_state(20);
        let v = standard_normal_vector(&mut seeded_rng(2, 0), 20);
        let h = 1e-6;
        let fd = (model.forward(&(&u0 + &v * h)).unwrap() - model.forward(&(&u0 - &v * h)).unwrap()) / (2.0 * h);
        let jv = model.tangent(&u0, &v).unwrap();
        assert!((fd - &jv).norm() <= 1e-6 * jv.norm());
    }

    #[test]
    fn block_and_single_actions_agree() {
        let model = BurgersModel::new(12, 1e-3, 0.01, 1e-3).unwrap();
        let u0 = smooth_state(12);
        let j = model.jacobian(&u0).unwrap();
        let e3 = DVector::from_fn(12, |i, _| if i == 3 { 1.0 } else { 0.0 });
        assert!((model.tangent(&u0, &e3).unwrap() - j.column(3)).norm() < 1e-13);
        let jt = model.adjoint_many(&u0, &DMatrix::identity(12, 12)).unwrap();
        assert!((jt - j.transpose()).amax() < 1e-12);
    }

    #[test]
    fn time_stepping_is_fourth_order() {
        let u0 = smooth_state(50);
        let run = |dt: f64| BurgersModel::new(50, 1e-3, 0.1, dt).unwrap().forward(&u0).unwrap();
        let (a, b, c) = (run(4e-3), run(2e-3), run(1e-3));
        let order = ((&a - &b).norm() / (&b - &c).norm()).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn cfl_violation_is_reported() {
        let model = BurgersModel::new(20, 1e-3, 0.1, 0.05).unwrap();
        let err = model.forward(&DVector::from_element(20, 1.0)).unwrap_err();
        assert!(matches!(err, Error::CflViolation { .. }));
    }
}
