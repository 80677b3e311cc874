use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prediction, control and constraint horizons with the per-step durations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonSpec {
    pub n: usize,
    pub nu: usize,
    pub nc: usize,
    pub dt_schedule: Vec<f64>,
}

impl HorizonSpec {
    pub fn new(dt: f64, n: usize, nu: usize, nc: usize, t_total: f64) -> Result<Self> {
        if nu == 0 || nu > n || nc > n {
            return Err(Error::Config(format!("horizons must satisfy 1 <= Nu <= N and Nc <= N (N={n}, Nu={nu}, Nc={nc})")));
        }
        Ok(Self { n, nu, nc, dt_schedule: nonuniform_schedule(dt, n, nc, t_total)? })
    }

    pub fn t_total(&self) -> f64 {
        self.dt_schedule.iter().sum()
    }

    /// Offsets of the step boundaries from the start of the horizon, `N + 1` entries.
    pub fn knot_offsets(&self) -> Vec<f64> {
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.n + 1);
        out.push(0.0);
        for dt in &self.dt_schedule {
            t += dt;
            out.push(t);
        }
        out
    }
}

/// `nc` steps of `dt`, then `n - nc` steps growing geometrically so the
/// durations sum to `t_total`.
pub fn nonuniform_schedule(dt: f64, n: usize, nc: usize, t_total: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0 && t_total.is_finite()) || n == 0 {
        return Err(Error::InfeasibleSchedule(format!("need dt > 0 and N > 0 (dt={dt}, N={n})")));
    }
    let uniform_total = n as f64 * dt;
    let tol = 1e-9;
    if t_total < uniform_total - tol {
        return Err(Error::InfeasibleSchedule(format!("T_total {t_total} is shorter than N*dt = {uniform_total}")));
    }
    if t_total - uniform_total <= tol {
        return Ok(vec![dt; n]);
    }
    if nc >= n {
        return Err(Error::InfeasibleSchedule(format!("no steps after Nc={nc} to stretch to T_total {t_total}")));
    }

    let tail = n - nc;
    let remaining = t_total - nc as f64 * dt;
    let tail_sum = |r: f64| (1..=tail).map(|j| dt * r.powi(j as i32)).sum::<f64>();
    let (mut lo, mut hi) = (1.0, 2.0);
    while tail_sum(hi) < remaining {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::InfeasibleSchedule("geometric ratio diverged".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail_sum(mid) < remaining {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ratio = 0.5 * (lo + hi);
    let mut out = vec![dt; nc];
    out.extend((1..tail).map(|j| dt * ratio.powi(j as i32)));
    // the last step absorbs rounding so the total is exact
    let last = t_total - out.iter().sum::<f64>();
    if !(last > 0.0) {
        return Err(Error::InfeasibleSchedule("rounding left no time for the last step".into()));
    }
    out.push(last);
    Ok(out)
}

/// `(n_steps m) x (nu m)` map holding the last input block past `nu`.
pub fn move_blocking_expand(nu: usize, n_steps: usize, m: usize) -> DMatrix<f64> {
    assert!(nu >= 1 && nu <= n_steps, "need 1 <= Nu <= N");
    let mut e = DMatrix::zeros(n_steps * m, nu * m);
    for k in 0..n_steps {
        let b = k.min(nu - 1);
        e.view_mut((k * m, b * m), (m, m)).fill_with_identity();
    }
    e
}
