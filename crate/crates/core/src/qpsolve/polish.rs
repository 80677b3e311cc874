use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use super::admm::Scaled;

const KKT_REG: f64 = 1e-9;
const REFINE_STEPS: usize = 4;
const MAX_STEPS: usize = 200;

pub(super) struct PolishOutcome {
    /// Unscaled `(mu, lambda)` once the active set is consistent.
    pub solution: Option<(DVector<f64>, DVector<f64>)>,
    /// KKT solves performed.
    pub steps: usize,
}

/// Solves the equality-constrained problem for `active`, returning scaled
/// `x` and the full multiplier vector.
fn kkt_solve(s: &Scaled, active: &[bool]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = s.h.nrows();
    let rows: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
    let k = rows.len();
    let mut exact = DMatrix::zeros(n + k, n + k);
    exact.view_mut((0, 0), (n, n)).copy_from(&s.h);
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..n {
            exact[(n + r, j)] = s.g[(i, j)];
            exact[(j, n + r)] = s.g[(i, j)];
        }
    }
    let mut reg = exact.clone();
    for i in 0..n {
        reg[(i, i)] += KKT_REG;
    }
    for i in n..n + k {
        reg[(i, i)] -= KKT_REG;
    }
    let lu = reg.lu();
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&s.f));
    for (r, &i) in rows.iter().enumerate() {
        rhs[n + r] = s.w[i];
    }
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..REFINE_STEPS {
        let resid = &rhs - &exact * &sol;
        sol += lu.solve(&resid)?;
    }
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut y = DVector::zeros(active.len());
    for (r, &i) in rows.iter().enumerate() {
        y[i] = sol[n + r];
    }
    Some((x, y))
}

/// Active-set refinement starting from `guess`.
///
/// Primal-dual updates of the whole set are tried first; if they revisit a
/// set, single add/drop moves take over.
pub(super) fn polish(s: &Scaled, guess: &[bool]) -> PolishOutcome {
    let m = guess.len();
    let tol = 1e-11 * (1.0 + s.w.amax());
    let mut active = guess.to_vec();
    let mut seen = HashSet::new();
    let mut single_moves = false;
    let mut steps = 0;

    while steps < MAX_STEPS {
        steps += 1;
        let Some((x, y)) = kkt_solve(s, &active) else {
            return PolishOutcome { solution: None, steps };
        };
        let slack = &s.g * &x - &s.w;
        let worst_multiplier = (0..m).filter(|&i| active[i]).min_by(|&a, &b| y[a].total_cmp(&y[b]));
        let worst_violation = (0..m).filter(|&i| !active[i]).max_by(|&a, &b| slack[a].total_cmp(&slack[b]));
        let dual_ok = worst_multiplier.is_none_or(|i| y[i] >= -tol);
        let primal_ok = worst_violation.is_none_or(|i| slack[i] <= tol);
        if dual_ok && primal_ok {
            return PolishOutcome { solution: Some((s.unscale_primal(&x), s.unscale_dual(&y))), steps };
        }

        if !single_moves {
            seen.insert(active.clone());
            let next: Vec<bool> = (0..m).map(|i| y[i] + slack[i] > tol).collect();
            if seen.contains(&next) {
                single_moves = true;
            } else {
                active = next;
                continue;
            }
        }
        if !dual_ok {
            active[worst_multiplier.expect("checked above")] = false;
        } else {
            active[worst_violation.expect("checked above")] = true;
        }
    }
    PolishOutcome { solution: None, steps }
}
