use nalgebra::DMatrix;

use super::horizon::move_blocking_expand;
use crate::error::{Error, Result};
use crate::linmodel::LinearModel;

/// Stacked predictions `X = S mu + M dx0`, where row block `i` of `X` is the
/// state after step `i + 1` and `mu` holds `nu` input blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMatrices {
    pub s: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub nx: usize,
    pub nu_dim: usize,
    pub steps: usize,
    pub nu: usize,
}

impl PredictionMatrices {
    /// Applies move blocking to a full (`nu == steps`) prediction.
    pub fn with_blocking(&self, nu: usize) -> Self {
        assert_eq!(self.nu, self.steps, "prediction is already blocked");
        let e = move_blocking_expand(nu, self.steps, self.nu_dim);
        Self { s: &self.s * e, nu, ..self.clone() }
    }

    /// Row block `i` of `S` (state after step `i + 1`).
    pub fn s_block(&self, i: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.s.rows(i * self.nx, self.nx)
    }

    pub fn m_block(&self, i: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.m.rows(i * self.nx, self.nx)
    }
}

fn check_models(models: &[LinearModel]) -> Result<(usize, usize)> {
    let first = models.first().ok_or_else(|| Error::Config("prediction needs at least one model".into()))?;
    let (n, m) = (first.n(), first.m());
    for model in models {
        if model.a.shape() != (n, n) {
            return Err(Error::DimensionMismatch { context: "prediction A", expected: n, got: model.a.nrows() });
        }
        if model.b.shape() != (n, m) {
            return Err(Error::DimensionMismatch { context: "prediction B", expected: m, got: model.b.ncols() });
        }
    }
    Ok((n, m))
}

/// Time-varying prediction with `nu` input blocks, the last held to the end.
///
/// Built by the forward recursion `row_i = A_i row_{i-1} + B_i` placed in
/// block `min(i, nu - 1)`, which equals the full product form times the
/// blocking map.
pub fn prediction_matrices_ltv_blocked(models: &[LinearModel], nu: usize) -> Result<PredictionMatrices> {
    let (n, m) = check_models(models)?;
    let steps = models.len();
    if nu == 0 || nu > steps {
        return Err(Error::Config(format!("control horizon {nu} outside 1..={steps}")));
    }
    let mut s = DMatrix::zeros(steps * n, nu * m);
    let mut mm = DMatrix::zeros(steps * n, n);
    let mut prev_s = DMatrix::zeros(n, nu * m);
    let mut prev_m = DMatrix::identity(n, n);
    for (i, model) in models.iter().enumerate() {
        let mut row_s = &model.a * &prev_s;
        let block = i.min(nu - 1);
        let mut target = row_s.view_mut((0, block * m), (n, m));
        target += &model.b;
        let row_m = &model.a * &prev_m;
        s.rows_mut(i * n, n).copy_from(&row_s);
        mm.rows_mut(i * n, n).copy_from(&row_m);
        prev_s = row_s;
        prev_m = row_m;
    }
    Ok(PredictionMatrices { s, m: mm, nx: n, nu_dim: m, steps, nu })
}

/// Time-varying prediction without blocking (`nu == N`).
pub fn prediction_matrices_ltv(models: &[LinearModel]) -> Result<PredictionMatrices> {
    let (n, m) = check_models(models)?;
    let steps = models.len();
    let mut s = DMatrix::zeros(steps * n, steps * m);
    let mut mm = DMatrix::zeros(steps * n, n);
    for i in 0..steps {
        // block (i, j) = A_i ... A_{j+1} B_j
        let mut phi = DMatrix::identity(n, n);
        for j in (0..=i).rev() {
            s.view_mut((i * n, j * m), (n, m)).copy_from(&(&phi * &models[j].b));
            phi = &phi * &models[j].a;
        }
        mm.rows_mut(i * n, n).copy_from(&phi);
    }
    Ok(PredictionMatrices { s, m: mm, nx: n, nu_dim: m, steps, nu: steps })
}

/// Time-invariant prediction from powers of `A`.
pub fn prediction_matrices_lti(model: &LinearModel, steps: usize) -> Result<PredictionMatrices> {
    if steps == 0 {
        return Err(Error::Config("prediction needs at least one step".into()));
    }
    let (n, m) = (model.n(), model.m());
    let mut powers = Vec::with_capacity(steps + 1);
    powers.push(DMatrix::identity(n, n));
    for k in 1..=steps {
        powers.push(&model.a * &powers[k - 1]);
    }
    let blocks: Vec<DMatrix<f64>> = powers.iter().take(steps).map(|p| p * &model.b).collect();
    let mut s = DMatrix::zeros(steps * n, steps * m);
    let mut mm = DMatrix::zeros(steps * n, n);
    for i in 0..steps {
        for j in 0..=i {
            s.view_mut((i * n, j * m), (n, m)).copy_from(&blocks[i - j]);
        }
        mm.rows_mut(i * n, n).copy_from(&powers[i + 1]);
    }
    Ok(PredictionMatrices { s, m: mm, nx: n, nu_dim: m, steps, nu: steps })
}
