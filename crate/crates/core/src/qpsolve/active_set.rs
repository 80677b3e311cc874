//! Dual active-set method for strictly convex QPs.
//!
//! Starts from the unconstrained minimizer and adds the most violated row
//! each major step, dropping rows whose multipliers would turn negative.
//! Every iterate is dual feasible, so the method stops at the first primal
//! feasible point. Works on the equilibrated problem.

use nalgebra::{DMatrix, DVector};

use super::admm::Scaled;

pub(super) struct Outcome {
    pub active: Vec<bool>,
    /// Primal steps taken (each add or drop counts once).
    pub steps: usize,
}

/// Returns the optimal active set, or `None` if the rows are infeasible or
/// the step limit is hit.
pub(super) fn solve(s: &Scaled, max_steps: usize) -> Option<Outcome> {
    let (n, m) = (s.h.nrows(), s.w.len());
    let chol = s.h.clone().cholesky()?;
    let mut x = -chol.solve(&s.f);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut in_set = vec![false; m];
    let tol = 1e-11 * (1.0 + s.w.amax());
    let mut steps = 0;

    loop {
        let viol = &s.g * &x - &s.w;
        let Some(p) = (0..m).filter(|&i| !in_set[i] && viol[i] > tol).max_by(|&a, &b| viol[a].total_cmp(&viol[b])) else {
            return Some(Outcome { active: in_set, steps });
        };
        let np: DVector<f64> = -s.g.row(p).transpose();
        let hinv_np = chol.solve(&np);
        let mut u_p = 0.0;
        loop {
            steps += 1;
            if steps > max_steps {
                return None;
            }
            let (z, r) = if active.is_empty() {
                (hinv_np.clone(), DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_fn(n, active.len(), |i, j| -s.g[(active[j], i)]);
                let hinv_n = chol.solve(&nmat);
                let gram = nmat.transpose() * &hinv_n;
                let rhs = nmat.transpose() * &hinv_np;
                let r = match gram.clone().cholesky() {
                    Some(c) => c.solve(&rhs),
                    None => gram.lu().solve(&rhs)?,
                };
                (&hinv_np - &hinv_n * &r, r)
            };

            // largest step keeping the active multipliers nonnegative
            let mut t1 = f64::INFINITY;
            let mut block = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 0.0 && u[j] / rj < t1 {
                    t1 = u[j] / rj;
                    block = Some(j);
                }
            }
            let zn = z.dot(&np);
            let degenerate = zn <= 1e-14 * hinv_np.dot(&np).max(f64::MIN_POSITIVE);
            let t2 = if degenerate { f64::INFINITY } else { (s.g.row(p).transpose().dot(&x) - s.w[p]) / zn };

            if t1.is_infinite() && t2.is_infinite() {
                return None;
            }
            let t = t1.min(t2);
            if !degenerate {
                x += &z * t;
            }
            for (uj, rj) in u.iter_mut().zip(r.iter()) {
                *uj -= t * rj;
            }
            u_p += t;
            if t2 <= t1 {
                active.push(p);
                u.push(u_p);
                in_set[p] = true;
                break;
            }
            let k = block.expect("finite t1 has a blocking row");
            in_set[active[k]] = false;
            active.remove(k);
            u.remove(k);
        }
    }
}
