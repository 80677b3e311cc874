//! Dense convex QP solver for
//!
//! ```text
//!     minimize  0.5 mu^T H mu + F^T mu   subject to  G mu <= w
//! ```
//!
//! Both methods run on a Ruiz-equilibrated copy of the problem. The default
//! is a dual active-set method; operator splitting (ADMM) is the alternative
//! and the fallback. Either way an active-set polish solves the KKT system
//! for the final set, and a solution is reported optimal only when the
//! unscaled KKT residuals meet the tolerance relative to the problem's size.

mod active_set;
mod admm;
mod dump;
mod polish;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dump::{parse_qp_dump, write_qp_dump};

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
}

impl QpProblem {
    /// Checks shapes and symmetry of `H`. Non-finite entries are accepted
    /// here and reported by [`solve`] as a numerical fault.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>, g: DMatrix<f64>, w: DVector<f64>) -> Result<Self> {
        let n = f.len();
        let dims = [("H rows", h.nrows(), n), ("H cols", h.ncols(), n), ("G cols", g.ncols(), n), ("G rows", g.nrows(), w.len())];
        for (context, got, expected) in dims {
            if got != expected {
                return Err(Error::DimensionMismatch { context, expected, got });
            }
        }
        let scale = h.amax().max(1.0);
        if h.iter().all(|x| x.is_finite()) && (&h - h.transpose()).amax() > 1e-9 * scale {
            return Err(Error::Config("QP Hessian is not symmetric".into()));
        }
        Ok(Self { h, f, g, w })
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn m(&self) -> usize {
        self.w.len()
    }

    pub fn objective(&self, mu: &DVector<f64>) -> f64 {
        0.5 * mu.dot(&(&self.h * mu)) + self.f.dot(mu)
    }

    fn is_finite(&self) -> bool {
        self.h.iter().chain(self.f.iter()).chain(self.g.iter()).chain(self.w.iter()).all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpMethod {
    ActiveSet,
    Admm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    pub method: QpMethod,
    /// Tolerance on each KKT residual, relative to `1 + ` the size of the
    /// terms it is made of.
    pub eps: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    pub scaling_iters: usize,
    /// Added to `H` when its smallest pivot suggests it is only semidefinite.
    pub regularization: f64,
    pub check_every: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            method: QpMethod::ActiveSet,
            eps: 1e-6,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            polish: true,
            scaling_iters: 10,
            regularization: 1e-8,
            check_every: 25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    NumericalFault,
}

/// KKT residuals of a primal-dual pair.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `|H mu + F + G^T lambda|_inf`
    pub stationarity: f64,
    /// `max(G mu - w)_+`
    pub primal: f64,
    /// `|lambda^T (G mu - w)|`
    pub complementarity: f64,
    /// `min(lambda)`, or 0 without constraints.
    pub min_multiplier: f64,
}

impl KktResiduals {
    pub fn within(&self, eps: f64) -> bool {
        self.stationarity < eps && self.primal < eps && self.complementarity < eps && self.min_multiplier >= -1e-9
    }
}

/// Residuals divided by `1 + ` the magnitude of their terms, so that the
/// same tolerance applies to problems of any scale.
pub fn relative_kkt_residuals(p: &QpProblem, mu: &DVector<f64>, lambda: &DVector<f64>) -> Result<KktResiduals> {
    let abs = kkt_residuals(p, mu, lambda)?;
    let dual = (&p.h * mu).amax().max(p.f.amax()).max((p.g.transpose() * lambda).amax());
    let primal = (&p.g * mu).amax().max(p.w.amax());
    let lam = lambda.amax();
    Ok(KktResiduals {
        stationarity: abs.stationarity / (1.0 + dual),
        primal: abs.primal / (1.0 + primal),
        complementarity: abs.complementarity / (1.0 + lam * primal),
        min_multiplier: abs.min_multiplier / (1.0 + lam),
    })
}

pub fn kkt_residuals(p: &QpProblem, mu: &DVector<f64>, lambda: &DVector<f64>) -> Result<KktResiduals> {
    if mu.len() != p.n() {
        return Err(Error::DimensionMismatch { context: "kkt mu", expected: p.n(), got: mu.len() });
    }
    if lambda.len() != p.m() {
        return Err(Error::DimensionMismatch { context: "kkt lambda", expected: p.m(), got: lambda.len() });
    }
    let slack = &p.g * mu - &p.w;
    let grad = &p.h * mu + &p.f + p.g.transpose() * lambda;
    Ok(KktResiduals {
        stationarity: grad.amax(),
        primal: slack.iter().fold(0.0, |a, &s| a.max(s)),
        complementarity: lambda.dot(&slack).abs(),
        min_multiplier: lambda.iter().copied().fold(0.0, f64::min),
    })
}

/// Previous primal-dual solution used to seed a solve.
#[derive(Clone, Debug, PartialEq)]
pub struct WarmStart {
    pub mu: DVector<f64>,
    pub lambda: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub mu: DVector<f64>,
    pub lambda: DVector<f64>,
    pub status: QpStatus,
    /// ADMM iterations plus active-set polish steps.
    pub iterations: usize,
    pub residuals: KktResiduals,
    pub polished: bool,
    pub regularized: bool,
    /// Wall-clock seconds spent in [`solve`].
    pub solve_time: f64,
}

impl QpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart { mu: self.mu.clone(), lambda: self.lambda.clone() }
    }

    fn fault(n: usize, m: usize, iterations: usize, started: Instant) -> Self {
        Self {
            mu: DVector::zeros(n),
            lambda: DVector::zeros(m),
            status: QpStatus::NumericalFault,
            iterations,
            residuals: KktResiduals::default(),
            polished: false,
            regularized: false,
            solve_time: started.elapsed().as_secs_f64(),
        }
    }
}

/// Smallest Cholesky pivot squared, a cheap lower estimate of the spectrum's
/// bottom for the near-singular test.
fn smallest_pivot(h: &DMatrix<f64>) -> f64 {
    match h.clone().cholesky() {
        Some(c) => c.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min),
        None => f64::NEG_INFINITY,
    }
}

pub fn solve(problem: &QpProblem, settings: &QpSettings, warm: Option<&WarmStart>) -> QpSolution {
    let started = Instant::now();
    let (n, m) = (problem.n(), problem.m());
    if !problem.is_finite() {
        return QpSolution::fault(n, m, 0, started);
    }

    let mut regularized = false;
    let mut reg_problem;
    let mut p = problem;
    if n > 0 && smallest_pivot(&problem.h) < 1e-10 {
        reg_problem = problem.clone();
        for i in 0..n {
            reg_problem.h[(i, i)] += settings.regularization;
        }
        p = &reg_problem;
        regularized = true;
    }
    let warm = warm.filter(|w| w.mu.len() == n && w.lambda.len() == m && w.mu.iter().chain(w.lambda.iter()).all(|x| x.is_finite()));

    let finish = |mu: DVector<f64>, lambda: DVector<f64>, iterations: usize, polished: bool| {
        // certificates are always against the caller's problem
        let residuals = kkt_residuals(problem, &mu, &lambda).expect("dimensions fixed above");
        let finite = mu.iter().chain(lambda.iter()).all(|x| x.is_finite());
        let relative = relative_kkt_residuals(problem, &mu, &lambda).expect("dimensions fixed above");
        let status = if !finite {
            QpStatus::NumericalFault
        } else if relative.within(settings.eps) {
            QpStatus::Optimal
        } else {
            QpStatus::MaxIter
        };
        QpSolution { mu, lambda, status, iterations, residuals, polished, regularized, solve_time: started.elapsed().as_secs_f64() }
    };

    if m == 0 {
        return match p.h.clone().cholesky() {
            Some(c) => {
                let mu = -c.solve(&p.f);
                finish(mu, DVector::zeros(0), 0, false)
            }
            None => QpSolution::fault(n, m, 0, started),
        };
    }

    let scaled = admm::Scaled::new(p, settings.scaling_iters);
    let accept = |mu: &DVector<f64>, lambda: &DVector<f64>| {
        relative_kkt_residuals(problem, mu, lambda).map(|r| r.within(settings.eps)).unwrap_or(false)
    };

    let mut polish_steps = 0;
    if let (Some(ws), true) = (warm, settings.polish) {
        let slack = &p.g * &ws.mu - &p.w;
        let guess: Vec<bool> = (0..m).map(|i| ws.lambda[i] > 0.0 || slack[i] > -1e-9).collect();
        let out = polish::polish(&scaled, &guess);
        polish_steps += out.steps;
        if let Some((mu, lambda)) = out.solution {
            if accept(&mu, &lambda) {
                return finish(mu, lambda, polish_steps, true);
            }
        }
    }

    if settings.method == QpMethod::ActiveSet {
        if let Some(out) = active_set::solve(&scaled, settings.max_iter) {
            polish_steps += out.steps;
            let refined = polish::polish(&scaled, &out.active);
            polish_steps += refined.steps;
            if let Some((mu, lambda)) = refined.solution {
                if accept(&mu, &lambda) {
                    return finish(mu, lambda, polish_steps, true);
                }
            }
        }
    }

    let mut solver = match admm::Admm::new(&scaled, settings, warm) {
        Some(s) => s,
        None => return QpSolution::fault(n, m, polish_steps, started),
    };
    let mut last_polished_set: Option<Vec<bool>> = None;
    let mut best: Option<(DVector<f64>, DVector<f64>)> = None;
    while solver.iterations() < settings.max_iter {
        if !solver.run(settings.check_every.max(1)) {
            return QpSolution::fault(n, m, solver.iterations() + polish_steps, started);
        }
        let (mu, lambda) = solver.unscaled();
        if accept(&mu, &lambda) {
            // the polished point is exact for its active set, so prefer it
            if settings.polish {
                let out = polish::polish(&scaled, &solver.active_guess());
                polish_steps += out.steps;
                if let Some((pm, pl)) = out.solution {
                    if accept(&pm, &pl) {
                        return finish(pm, pl, solver.iterations() + polish_steps, true);
                    }
                }
            }
            return finish(mu, lambda, solver.iterations() + polish_steps, false);
        }
        if settings.polish && solver.near_converged(1e-3) {
            let guess = solver.active_guess();
            if last_polished_set.as_ref() != Some(&guess) {
                let out = polish::polish(&scaled, &guess);
                polish_steps += out.steps;
                if let Some((pm, pl)) = out.solution {
                    if accept(&pm, &pl) {
                        return finish(pm, pl, solver.iterations() + polish_steps, true);
                    }
                }
                last_polished_set = Some(guess);
            }
        }
        best = Some((mu, lambda));
        if settings.adaptive_rho {
            solver.adapt_rho();
        }
    }

    if settings.polish {
        let out = polish::polish(&scaled, &solver.active_guess());
        polish_steps += out.steps;
        if let Some((pm, pl)) = out.solution {
            if accept(&pm, &pl) {
                return finish(pm, pl, solver.iterations() + polish_steps, true);
            }
        }
    }
    let (mu, lambda) = best.unwrap_or_else(|| solver.unscaled());
    finish(mu, lambda, solver.iterations() + polish_steps, false)
}
