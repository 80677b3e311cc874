use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{QpProblem, QpSettings, WarmStart};

/// Ruiz-equilibrated copy of a problem: `H_s = c D H D`, `F_s = c D F`,
/// `G_s = E G D`, `w_s = E w`.
pub(super) struct Scaled {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn inv_sqrt_norm(norm: f64) -> f64 {
    if norm < 1e-4 {
        1.0
    } else {
        1.0 / norm.min(1e4).sqrt()
    }
}

impl Scaled {
    pub fn new(p: &QpProblem, iters: usize) -> Self {
        let (n, m) = (p.n(), p.m());
        let mut h = p.h.clone();
        let mut g = p.g.clone();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);
        for _ in 0..iters {
            let dd = DVector::from_fn(n, |j, _| inv_sqrt_norm(h.column(j).amax().max(g.column(j).amax())));
            let de = DVector::from_fn(m, |i, _| inv_sqrt_norm(g.row(i).amax()));
            for j in 0..n {
                for i in 0..n {
                    h[(i, j)] *= dd[i] * dd[j];
                }
                for i in 0..m {
                    g[(i, j)] *= de[i] * dd[j];
                }
            }
            d.component_mul_assign(&dd);
            e.component_mul_assign(&de);
        }
        let mut f = p.f.component_mul(&d);
        let mean_col = if n > 0 { (0..n).map(|j| h.column(j).amax()).sum::<f64>() / n as f64 } else { 1.0 };
        let size = mean_col.max(f.amax());
        let c = if size > 0.0 { (1.0 / size).clamp(1e-4, 1e4) } else { 1.0 };
        h *= c;
        f *= c;
        let w = p.w.component_mul(&e);
        Self { h, f, g, w, d, e, c }
    }

    pub fn unscale_primal(&self, x: &DVector<f64>) -> DVector<f64> {
        x.component_mul(&self.d)
    }

    pub fn unscale_dual(&self, y: &DVector<f64>) -> DVector<f64> {
        y.component_mul(&self.e) / self.c
    }

    pub fn scale_primal(&self, mu: &DVector<f64>) -> DVector<f64> {
        mu.component_div(&self.d)
    }

    pub fn scale_dual(&self, lambda: &DVector<f64>) -> DVector<f64> {
        lambda.component_div(&self.e) * self.c
    }
}

pub(super) struct Admm<'a> {
    s: &'a Scaled,
    sigma: f64,
    alpha: f64,
    rho: f64,
    gtg: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
    iter: usize,
    r_prim: f64,
    r_dual: f64,
    prim_scale: f64,
    dual_scale: f64,
}

fn factor(s: &Scaled, gtg: &DMatrix<f64>, sigma: f64, rho: f64) -> Option<Cholesky<f64, Dyn>> {
    let n = s.h.nrows();
    (&s.h + DMatrix::identity(n, n) * sigma + gtg * rho).cholesky()
}

impl<'a> Admm<'a> {
    pub fn new(s: &'a Scaled, settings: &QpSettings, warm: Option<&WarmStart>) -> Option<Self> {
        let gtg = s.g.transpose() * &s.g;
        let chol = factor(s, &gtg, settings.sigma, settings.rho)?;
        let (x, y) = match warm {
            Some(ws) => (s.scale_primal(&ws.mu), s.scale_dual(&ws.lambda).map(|v| v.max(0.0))),
            None => (DVector::zeros(s.h.nrows()), DVector::zeros(s.w.len())),
        };
        let z = (&s.g * &x).zip_map(&s.w, |a, b| a.min(b));
        Some(Self {
            s,
            sigma: settings.sigma,
            alpha: settings.alpha,
            rho: settings.rho,
            gtg,
            chol,
            x,
            z,
            y,
            iter: 0,
            r_prim: f64::INFINITY,
            r_dual: f64::INFINITY,
            prim_scale: 1.0,
            dual_scale: 1.0,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    /// Runs `k` iterations; false if the iterates stop being finite.
    pub fn run(&mut self, k: usize) -> bool {
        let s = self.s;
        for _ in 0..k {
            let rhs = &self.x * self.sigma - &s.f + s.g.transpose() * (&self.z * self.rho - &self.y);
            let x_tilde = self.chol.solve(&rhs);
            let z_tilde = &s.g * &x_tilde;
            self.x = &x_tilde * self.alpha + &self.x * (1.0 - self.alpha);
            let z_relaxed = &z_tilde * self.alpha + &self.z * (1.0 - self.alpha);
            let z_new = (&z_relaxed + &self.y / self.rho).zip_map(&s.w, |a, b| a.min(b));
            self.y += (&z_relaxed - &z_new) * self.rho;
            self.z = z_new;
            self.iter += 1;
        }
        let gx = &s.g * &self.x;
        let hx = &s.h * &self.x;
        let gty = s.g.transpose() * &self.y;
        self.r_prim = (&gx - &self.z).amax();
        self.r_dual = (&hx + &s.f + &gty).amax();
        self.prim_scale = gx.amax().max(self.z.amax());
        self.dual_scale = hx.amax().max(gty.amax()).max(s.f.amax());
        self.x.iter().chain(self.y.iter()).chain(self.z.iter()).all(|v| v.is_finite())
    }

    pub fn near_converged(&self, tol: f64) -> bool {
        self.r_prim <= tol * (1.0 + self.prim_scale) && self.r_dual <= tol * (1.0 + self.dual_scale)
    }

    pub fn unscaled(&self) -> (DVector<f64>, DVector<f64>) {
        (self.s.unscale_primal(&self.x), self.s.unscale_dual(&self.y.map(|v| v.max(0.0))))
    }

    /// Rows whose projection is currently binding.
    pub fn active_guess(&self) -> Vec<bool> {
        (0..self.y.len()).map(|i| self.s.w[i] - self.z[i] < self.y[i]).collect()
    }

    pub fn adapt_rho(&mut self) {
        let prim = self.r_prim / self.prim_scale.max(1e-12);
        let dual = self.r_dual / self.dual_scale.max(1e-12);
        if !(prim.is_finite() && dual.is_finite()) || dual == 0.0 {
            return;
        }
        let proposed = (self.rho * (prim / dual).sqrt()).clamp(1e-6, 1e6);
        if proposed > 5.0 * self.rho || proposed < 0.2 * self.rho {
            if let Some(c) = factor(self.s, &self.gtg, self.sigma, proposed) {
                self.rho = proposed;
                self.chol = c;
            }
        }
    }
}
