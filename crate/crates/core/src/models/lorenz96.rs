use nalgebra::{DMatrix, DVector};

use super::{check_input, ForwardModel, Locality};
use crate::error::{Error, Result};

/// Lorenz'96 initial-condition recovery: the parameter is `x(0)`, the
/// output is `x(obs_time)` integrated with explicit Euler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz96Config {
    pub dim: usize,
    pub forcing: f64,
    pub obs_time: f64,
    pub inner_dt: f64,
}

impl Default for Lorenz96Config {
    fn default() -> Self {
        Self {
            dim: 40,
            forcing: 8.0,
            obs_time: 0.2,
            inner_dt: 0.05,
        }
    }
}

impl Lorenz96Config {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    /// Number of Euler steps; fails unless `inner_dt` divides `obs_time`.
    pub fn steps(&self) -> Result<usize> {
        if self.dim < 4 {
            return Err(Error::config(format!("Lorenz'96 needs dimension >= 4, got {}", self.dim)));
        }
        if !(self.inner_dt > 0.0) || !(self.obs_time >= 0.0) {
            return Err(Error::config("Lorenz'96 needs inner_dt > 0 and obs_time >= 0"));
        }
        let n = (self.obs_time / self.inner_dt).round();
        if (n * self.inner_dt - self.obs_time).abs() > 1e-9 * self.obs_time.max(1.0) {
            return Err(Error::config(format!(
                "inner_dt {} does not divide obs_time {}",
                self.inner_dt, self.obs_time
            )));
        }
        Ok(n as usize)
    }
}

/// `dx_k/dt = -x_k - x_{k-1}(x_{k-2} - x_{k+1}) + F` on a periodic ring.
pub fn l96_rhs(x: &DVector<f64>, forcing: f64) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(n, |k, _| {
        let km1 = (k + n - 1) % n;
        let km2 = (k + n - 2) % n;
        let kp1 = (k + 1) % n;
        -x[k] - x[km1] * (x[km2] - x[kp1]) + forcing
    })
}

fn rhs_jacobian(x: &DVector<f64>) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for k in 0..n {
        let km1 = (k + n - 1) % n;
        let km2 = (k + n - 2) % n;
        let kp1 = (k + 1) % n;
        jac[(k, k)] -= 1.0;
        jac[(k, km1)] -= x[km2] - x[kp1];
        jac[(k, km2)] -= x[km1];
        jac[(k, kp1)] += x[km1];
    }
    jac
}

/// Explicit Euler from `u` for `obs_time / inner_dt` steps.
pub fn l96_forward(u: &DVector<f64>, cfg: &Lorenz96Config) -> Result<DVector<f64>> {
    let steps = cfg.steps()?;
    if u.len() != cfg.dim {
        return Err(Error::config(format!("expected {} states, got {}", cfg.dim, u.len())));
    }
    let mut x = u.clone();
    for _ in 0..steps {
        let f = l96_rhs(&x, cfg.forcing);
        x.axpy(cfg.inner_dt, &f, 1.0);
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("Lorenz'96 state became non-finite"));
    }
    Ok(x)
}

/// Integrates the ring with classical RK4 for `duration` time units.
/// Used to place truths on the attractor.
pub fn l96_spinup(x0: &DVector<f64>, forcing: f64, dt: f64, duration: f64) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::config("spin-up step must be positive"));
    }
    let steps = (duration / dt).round() as usize;
    let mut x = x0.clone();
    for _ in 0..steps {
        let k1 = l96_rhs(&x, forcing);
        let k2 = l96_rhs(&(&x + &k1 * (0.5 * dt)), forcing);
        let k3 = l96_rhs(&(&x + &k2 * (0.5 * dt)), forcing);
        let k4 = l96_rhs(&(&x + &k3 * dt), forcing);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("Lorenz'96 spin-up diverged"));
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy)]
pub struct Lorenz96Model {
    cfg: Lorenz96Config,
    steps: usize,
}

impl Lorenz96Model {
    pub fn new(cfg: Lorenz96Config) -> Result<Self> {
        let steps = cfg.steps()?;
        Ok(Self { cfg, steps })
    }

    pub fn config(&self) -> &Lorenz96Config {
        &self.cfg
    }
}

impl ForwardModel for Lorenz96Model {
    fn param_dim(&self) -> usize {
        self.cfg.dim
    }

    fn output_dim(&self) -> usize {
        self.cfg.dim
    }

    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(self, u)?;
        l96_forward(u, &self.cfg)
    }

    /// Product of the Euler step Jacobians `I + dt·Df(x_n)`.
    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        if u.len() != self.cfg.dim {
            return None;
        }
        let n = self.cfg.dim;
        let mut x = u.clone();
        let mut jac = DMatrix::identity(n, n);
        for _ in 0..self.steps {
            let step = DMatrix::identity(n, n) + rhs_jacobian(&x) * self.cfg.inner_dt;
            jac = step * jac;
            let f = l96_rhs(&x, self.cfg.forcing);
            x.axpy(self.cfg.inner_dt, &f, 1.0);
        }
        Some(jac)
    }

    fn locality(&self) -> Option<Locality> {
        let n = self.cfg.dim;
        // each Euler step reaches two sites back and one forward
        let back = 2 * self.steps;
        let fwd = self.steps;
        let footprints = (0..n)
            .map(|k| {
                let mut idx: Vec<usize> = (0..=back + fwd)
                    .map(|o| (k + n * (back + 1) + o - back) % n)
                    .collect();
                idx.sort_unstable();
                idx.dedup();
                idx
            })
            .collect();
        Some(Locality {
            centers: (0..n).collect(),
            footprints: Some(footprints),
        })
    }
}
